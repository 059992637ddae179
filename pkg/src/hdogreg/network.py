"""Small fully convolutional encoder/decoder with hand-written backpropagation.

Activations are kept channel-first with the batch second, ``(C, B, H, W)``,
so every convolution tap is a single matrix product.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class RegressorConfig:
    channels: tuple[int, ...] = (8, 16, 32)
    levels: int = 3
    kernel_size: int = 3
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 40
    rng_seed: int = 0
    dice_epsilon: float = 1.0
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if len(self.channels) != self.levels or self.levels < 1:
            raise ParameterError(
                f"levels ({self.levels}) must equal the number of channel widths {self.channels}"
            )
        if any(c < 1 for c in self.channels):
            raise ParameterError(f"channel widths must be positive, got {self.channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ParameterError(f"kernel_size must be a positive odd integer, got {self.kernel_size}")
        if self.learning_rate < 0:
            raise ParameterError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ParameterError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        for name in ("adam_epsilon", "dice_epsilon"):
            if not getattr(self, name) > 0:
                raise ParameterError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ParameterError("batch_size must be >= 1 and epochs >= 0")

    @property
    def multiple(self) -> int:
        """Spatial sizes must be divisible by this."""
        return 2**self.levels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


def layer_shapes(config: RegressorConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Parameter names and shapes in storage order."""
    k = config.kernel_size
    ch = config.channels
    shapes = []
    cin = 1
    for i, c in enumerate(ch):
        shapes += [(f"enc{i}.weight", (c, cin, k, k)), (f"enc{i}.bias", (c,))]
        cin = c
    for i in reversed(range(config.levels)):
        cout = ch[i]
        shapes += [(f"dec{i}.weight", (cout, cin, k, k)), (f"dec{i}.bias", (cout,))]
        cin = cout
    shapes += [("head.weight", (1, cin, k, k)), ("head.bias", (1,))]
    return shapes


@dataclass
class Model:
    config: RegressorConfig
    params: list[np.ndarray] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in layer_shapes(self.config)]

    def n_parameters(self) -> int:
        return int(sum(p.size for p in self.params))

    def copy(self) -> "Model":
        return Model(self.config, [p.copy() for p in self.params])

    def check(self):
        expected = [s for _, s in layer_shapes(self.config)]
        got = [p.shape for p in self.params]
        if got != expected:
            raise ParameterError(f"parameter shapes {got} do not match configuration {expected}")


def init_model(config: RegressorConfig, rng: np.random.Generator | None = None) -> Model:
    """He-normal weights, zero biases; values are rounded to float32 precision."""
    rng = rng if rng is not None else np.random.default_rng(config.rng_seed)
    params = []
    for name, shape in layer_shapes(config):
        if name.endswith("bias"):
            params.append(np.zeros(shape))
        else:
            fan_in = shape[1] * shape[2] * shape[3]
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
            params.append(w.astype(np.float32).astype(np.float64))
    return Model(config, params)


# --- layers ---------------------------------------------------------------


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' correlation. x: (C, B, H, W), w: (O, C, k, k)."""
    c, bs, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((o, bs * h * wd))
    for i in range(k):
        for j in range(k):
            cols = xp[:, :, i : i + h, j : j + wd].reshape(c, -1)
            out += w[:, :, i, j] @ cols
    out += b[:, None]
    return out.reshape(o, bs, h, wd)


def conv_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray):
    c, bs, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    dyf = dy.reshape(o, -1)
    dw = np.empty_like(w)
    dxp = np.zeros(xp.shape)
    for i in range(k):
        for j in range(k):
            cols = xp[:, :, i : i + h, j : j + wd].reshape(c, -1)
            dw[:, :, i, j] = dyf @ cols.T
            dxp[:, :, i : i + h, j : j + wd] += (w[:, :, i, j].T @ dyf).reshape(c, bs, h, wd)
    db = dyf.sum(axis=1)
    dx = dxp[:, :, p : p + h, p : p + wd] if p else dxp
    return dx, dw, db


def avg_pool(x: np.ndarray) -> np.ndarray:
    c, b, h, w = x.shape
    return x.reshape(c, b, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avg_pool_backward(dy: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) / 4.0


def upsample(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upsample_backward(dy: np.ndarray) -> np.ndarray:
    c, b, h, w = dy.shape
    return dy.reshape(c, b, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _relu(z):
    return np.maximum(z, 0.0), (z > 0).astype(np.float64)


def _softplus(z):
    # smooth rectifier; keeps the loss differentiable for finite-difference checks
    return np.logaddexp(0.0, z), sigmoid(z)


ACTIVATIONS = {"relu": _relu, "softplus": _softplus}


# --- network --------------------------------------------------------------


def _as_batch(images, multiple: int) -> np.ndarray:
    x = np.asarray(images, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ParameterError(f"expected (H, W) or (B, H, W) input, got shape {x.shape}")
    if x.shape[1] % multiple or x.shape[2] % multiple:
        raise ParameterError(f"spatial size {x.shape[1:]} must be divisible by {multiple}")
    return x


def forward(model: Model, images, keep_cache: bool = False):
    """Predict proximity maps in (0, 1) for a patch or a batch of patches.

    Returns an array with the input's shape; with ``keep_cache`` also the
    intermediate activations needed by :func:`backward`.
    """
    cfg = model.config
    x = _as_batch(images, cfg.multiple)
    squeeze = np.ndim(images) == 2
    params = iter(model.params)
    rect = ACTIVATIONS[cfg.activation]
    act = x[None]
    cache = {"input": act, "enc": [], "dec": []}
    skips = []
    for _ in range(cfg.levels):
        w, b = next(params), next(params)
        a, slope = rect(conv_forward(act, w, b))
        cache["enc"].append((act, slope))
        skips.append(a)
        act = avg_pool(a)
    for i in reversed(range(cfg.levels)):
        w, b = next(params), next(params)
        u = upsample(act)
        act, slope = rect(conv_forward(u, w, b) + skips[i])
        cache["dec"].append((u, slope))
    w, b = next(params), next(params)
    logits = conv_forward(act, w, b)
    cache["head"] = act
    out = sigmoid(logits[0])
    cache["out"] = out
    result = out[0] if squeeze else out
    return (result, cache) if keep_cache else result


def backward(model: Model, cache: dict, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter given dL/d(output)."""
    cfg = model.config
    p = model.params
    grads: list[np.ndarray | None] = [None] * len(p)
    out = cache["out"]
    d_logits = (np.asarray(d_out).reshape(out.shape) * out * (1.0 - out))[None]
    hw, hb = len(p) - 2, len(p) - 1
    d_act, grads[hw], grads[hb] = conv_backward(d_logits, cache["head"], p[hw])
    d_skips = [None] * cfg.levels
    # decoder parameters sit after the 2*levels encoder entries, deepest level first
    for step in reversed(range(cfg.levels)):
        i = cfg.levels - 1 - step
        u, slope = cache["dec"][step]
        wi = 2 * cfg.levels + 2 * step
        dz = d_act * slope
        d_skips[i] = dz
        du, grads[wi], grads[wi + 1] = conv_backward(dz, u, p[wi])
        d_act = upsample_backward(du)
    for i in reversed(range(cfg.levels)):
        x_in, slope = cache["enc"][i]
        da = avg_pool_backward(d_act) + d_skips[i]
        dz = da * slope
        d_act, grads[2 * i], grads[2 * i + 1] = conv_backward(dz, x_in, p[2 * i])
    return grads


# --- loss -----------------------------------------------------------------


def dice_loss(pred, target, epsilon: float = 1.0) -> float:
    """Soft Dice loss ``1 - (2 sum(PT) + eps) / (sum(P + T) + eps)``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ParameterError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    num = 2.0 * np.sum(pred * target) + epsilon
    den = np.sum(pred + target) + epsilon
    return float(1.0 - num / den)


def dice_loss_gradient(pred, target, epsilon: float = 1.0) -> np.ndarray:
    """Analytic dL/dpred for :func:`dice_loss`."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ParameterError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    num = 2.0 * np.sum(pred * target) + epsilon
    den = np.sum(pred + target) + epsilon
    return -(2.0 * target * den - num) / (den * den)


def batch_dice(pred: np.ndarray, target: np.ndarray, epsilon: float = 1.0):
    """Mean per-patch Dice loss over a batch and its gradient."""
    n = len(pred)
    losses = [dice_loss(p, t, epsilon) for p, t in zip(pred, target)]
    grad = np.stack([dice_loss_gradient(p, t, epsilon) for p, t in zip(pred, target)]) / n
    return float(np.mean(losses)), grad


def loss_and_gradients(model: Model, images, targets):
    """Mean Dice loss of a batch and the matching parameter gradients."""
    x = np.asarray(images, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if x.ndim == 2:
        x, t = x[None], t[None]
    pred, cache = forward(model, x, keep_cache=True)
    loss, d_out = batch_dice(pred, t, model.config.dice_epsilon)
    return loss, backward(model, cache, d_out)
