import json

import pytest

from hdogreg.config import PipelineConfig
from hdogreg.errors import FormatError, ParameterError


def test_defaults_round_trip(tmp_path):
    cfg = PipelineConfig()
    (tmp_path / "c.json").write_text(cfg.to_json())
    assert PipelineConfig.load(tmp_path / "c.json") == cfg


def test_unknown_key():
    with pytest.raises(ParameterError, match="bogus"):
        PipelineConfig.from_dict({"bogus": 1})


def test_range_error_names_field():
    with pytest.raises(ParameterError, match="t_dog"):
        PipelineConfig(t_dog=-1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(sigma_min=4.0, sigma_max=3.0),
        dict(n_scales=2),
        dict(o_thr=1.5),
        dict(overlap_mode="gt"),
        dict(xi=0),
        dict(batch_size=0),
        dict(n_scales=True),
        dict(pauc_fp_max=float("nan")),
    ],
)
def test_invalid_values(kwargs):
    with pytest.raises(ParameterError):
        PipelineConfig(**kwargs)


def test_overrides():
    cfg = PipelineConfig().with_overrides(["t_dog=0.01", "overlap_mode=leq", "p_thr=0.4", "channels=[4,8,16]"])
    assert cfg.t_dog == 0.01 and cfg.overlap_mode == "leq" and cfg.p_thr == 0.4
    assert tuple(cfg.channels) == (4, 8, 16)
    with pytest.raises(ParameterError):
        PipelineConfig().with_overrides(["nokey"])
    with pytest.raises(ParameterError):
        PipelineConfig().with_overrides(["zzz=1"])


def test_bad_files(tmp_path):
    with pytest.raises(FormatError):
        PipelineConfig.load(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(FormatError):
        PipelineConfig.load(tmp_path / "bad.json")
    (tmp_path / "list.json").write_text(json.dumps([1]))
    with pytest.raises(FormatError):
        PipelineConfig.load(tmp_path / "list.json")


def test_views():
    cfg = PipelineConfig()
    assert cfg.hdog().t_dog == cfg.t_dog
    assert cfg.proximity().xi == cfg.xi
    assert cfg.match_rule().min_iou == cfg.match_iou
    assert cfg.regressor().learning_rate == cfg.learning_rate
