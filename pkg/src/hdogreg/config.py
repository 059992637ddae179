"""Flat pipeline configuration loaded from a JSON object.

Every key is optional; unknown keys are rejected and every value is checked
on load, so a bad file fails before any image is touched.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, fields, replace

from .errors import FormatError, ParameterError
from .hessian_blob import HDoGParams
from .metrics import MatchRule
from .network import ACTIVATIONS, RegressorConfig
from .proximity import ProximityParams


@dataclass(frozen=True)
class PipelineConfig:
    # candidate detection
    sigma_min: float = 1.18
    sigma_max: float = 3.1
    n_scales: int = 8
    t_dog: float = 0.006
    o_dog: float = 1.0
    h_thr: float = 1.4
    # proximity and fusion
    xi: float = 10.0
    alpha: float = 1.0
    p_thr: float | None = None
    o_thr: float = 0.3
    overlap_mode: str = "geq"
    # evaluation
    match_distance_px: float = 5.0
    match_iou: float = 0.3
    froc_thresholds: int = 101
    pauc_fp_max: float = 1.0
    bootstrap_samples: int = 100
    pixel_spacing_mm: float = 0.070
    seed: int = 0
    # regressor
    channels: tuple = (8, 16, 32)
    kernel_size: int = 3
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    batch_size: int = 8
    epochs: int = 40
    dice_epsilon: float = 1.0
    activation: str = "relu"
    patch_size: int = 512
    patch_stride: int = 480
    augment: bool = True
    tile: int = 512
    tile_overlap: int = 32
    # clustering
    optics_min_samples: int = 5
    optics_max_eps_mm: float = 10.0
    optics_eps_cut_mm: float = 5.0
    kmeans_k: int = 5
    kmeans_restarts: int = 10
    tune_trials: int = 0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "channels":
                if not isinstance(value, (list, tuple)) or not value:
                    _bad(f.name, value, "a non-empty list of integers")
                object.__setattr__(self, "channels", tuple(_int(f.name, v) for v in value))
            elif f.name == "p_thr":
                if value is not None:
                    object.__setattr__(self, "p_thr", _num(f.name, value))
            elif f.type in ("int", int):
                object.__setattr__(self, f.name, _int(f.name, value))
            elif f.type in ("float", float):
                object.__setattr__(self, f.name, _num(f.name, value))
            elif f.type in ("bool", bool):
                if not isinstance(value, bool):
                    _bad(f.name, value, "true or false")
            elif f.type in ("str", str) and not isinstance(value, str):
                _bad(f.name, value, "a string")
        self._check_ranges()
        # delegate the remaining checks to the module parameter objects
        for build in (self.hdog, self.proximity, self.match_rule, self.regressor):
            try:
                build()
            except ParameterError as exc:
                raise ParameterError(f"invalid configuration: {exc}") from None

    def _check_ranges(self):
        positive = ("sigma_min", "sigma_max", "xi", "pixel_spacing_mm", "pauc_fp_max",
                    "optics_max_eps_mm", "learning_rate")
        for name in positive:
            if not getattr(self, name) > 0:
                _bad(name, getattr(self, name), "a value > 0")
        if self.sigma_max < self.sigma_min:
            _bad("sigma_max", self.sigma_max, f">= sigma_min ({self.sigma_min})")
        if self.n_scales < 3:
            _bad("n_scales", self.n_scales, ">= 3")
        if self.t_dog < 0:
            _bad("t_dog", self.t_dog, ">= 0")
        for name in ("o_dog", "o_thr", "match_iou"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                _bad(name, getattr(self, name), "a fraction in [0, 1]")
        if self.p_thr is not None and not 0.0 <= self.p_thr <= 1.0:
            _bad("p_thr", self.p_thr, "null or a value in [0, 1]")
        if self.h_thr < 0:
            _bad("h_thr", self.h_thr, ">= 0")
        if self.overlap_mode not in ("geq", "leq"):
            _bad("overlap_mode", self.overlap_mode, '"geq" or "leq"')
        if self.activation not in ACTIVATIONS:
            _bad("activation", self.activation, f"one of {sorted(ACTIVATIONS)}")
        if self.match_distance_px < 0:
            _bad("match_distance_px", self.match_distance_px, ">= 0")
        if self.froc_thresholds < 2:
            _bad("froc_thresholds", self.froc_thresholds, ">= 2")
        for name in ("bootstrap_samples", "batch_size", "patch_stride", "kmeans_k", "kmeans_restarts"):
            if getattr(self, name) < 1:
                _bad(name, getattr(self, name), ">= 1")
        for name in ("epochs", "tune_trials", "tile_overlap", "seed"):
            if getattr(self, name) < 0:
                _bad(name, getattr(self, name), ">= 0")
        if self.optics_min_samples < 2:
            _bad("optics_min_samples", self.optics_min_samples, ">= 2")
        if self.optics_eps_cut_mm < 0:
            _bad("optics_eps_cut_mm", self.optics_eps_cut_mm, ">= 0")
        mult = 2 ** len(self.channels)
        for name in ("patch_size", "tile"):
            v = getattr(self, name)
            if v < 64 or v % mult:
                _bad(name, v, f"a multiple of {mult} that is >= 64")
        if self.tile_overlap >= self.tile:
            _bad("tile_overlap", self.tile_overlap, f"< tile ({self.tile})")

    # --- module parameter views ---

    def hdog(self) -> HDoGParams:
        return HDoGParams(self.sigma_min, self.sigma_max, self.n_scales, self.t_dog, self.o_dog, self.h_thr)

    def proximity(self) -> ProximityParams:
        return ProximityParams(self.xi, self.alpha)

    def match_rule(self) -> MatchRule:
        return MatchRule(self.match_distance_px, self.match_iou)

    def regressor(self) -> RegressorConfig:
        return RegressorConfig(
            channels=self.channels,
            levels=len(self.channels),
            kernel_size=self.kernel_size,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            adam_epsilon=self.adam_epsilon,
            batch_size=self.batch_size,
            epochs=self.epochs,
            rng_seed=self.seed,
            dice_epsilon=self.dice_epsilon,
            activation=self.activation,
        )

    # --- loading ---

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        if not isinstance(data, dict):
            raise FormatError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown configuration key(s): {', '.join(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except FileNotFoundError:
            raise FormatError(f"{path}: no such file") from None
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_dict(data)

    def with_overrides(self, items: list[str]) -> "PipelineConfig":
        """Apply ``KEY=VALUE`` strings; values are parsed as JSON, else taken as text."""
        updates = {}
        known = {f.name for f in fields(self)}
        for item in items:
            key, sep, raw = item.partition("=")
            key = key.strip()
            if not sep:
                raise ParameterError(f"override {item!r} is not of the form KEY=VALUE")
            if key not in known:
                raise ParameterError(f"unknown configuration key: {key}")
            try:
                updates[key] = json.loads(raw)
            except json.JSONDecodeError:
                updates[key] = raw
        return replace(self, **updates)


def _bad(name, value, expected):
    raise ParameterError(f"{name}: expected {expected}, got {value!r}")


def _int(name, value) -> int:
    if (
        isinstance(value, bool)
        or not isinstance(value, (int, float))
        or not math.isfinite(value)
        or value != int(value)
    ):
        _bad(name, value, "an integer")
    return int(value)


def _num(name, value) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        _bad(name, value, "a finite number")
    return float(value)
