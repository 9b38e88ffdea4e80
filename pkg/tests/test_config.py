import pytest

from mmfusion import config as K
from mmfusion.tensor import ConfigError


def test_parse_text():
    d = K.parse_text("# top\nseed = 3\ntext.q = 7.5  # trailing\nfusion.init_from_towers = no\npolicy.sweep = CP-1/1/5, CP-3/2/5\n")
    assert d == {"seed": 3, "text": {"q": 7.5}, "fusion": {"init_from_towers": False},
                 "policy": {"sweep": "CP-1/1/5, CP-3/2/5"}}
    for bad in ("seed 3", " = 4", "a = 1\na.b = 2"):
        with pytest.raises(ConfigError):
            K.parse_text(bad)


def test_file_and_overrides(tmp_path):
    f = tmp_path / "run.cfg"
    f.write_text("seed = 3\nimage.conv_blocks = 1x8, 1x16\nopt.image.epochs = 2\nout = results\n")
    cfg = K.load(f, {"seed": 11, "opt.policy.learning_rate": 0.05, "out": None})
    assert cfg.seed == 11 and cfg.image.conv_blocks == ((1, 8), (1, 16))
    assert cfg.opt_image.epochs == 2 and cfg.opt_policy.learning_rate == 0.05
    assert cfg.out_path == tmp_path / "results"
    assert [p.tag for p in cfg.policies()] == ["CP-3_2l_q1", "CP-3_2l_q5"]


def test_unknown_and_invalid_keys(tmp_path):
    for text in ("colour = red", "text.width = 3", "opt.warmup.epochs = 1", "data.where = x", "policy.q = 5"):
        f = tmp_path / "bad.cfg"
        f.write_text(text + "\n")
        with pytest.raises(ConfigError):
            K.load(f)
    with pytest.raises(ConfigError):
        K.load(overrides={"data.split": "0.5, 0.1, 0.1"})
    with pytest.raises(ConfigError):
        K.load(overrides={"policy.sweep": "CP-7/2/5"})
    with pytest.raises(FileNotFoundError):
        K.load(tmp_path / "nope.cfg")


def test_dump_load_round_trip(tmp_path):
    cfg = K.load(overrides={"seed": 5, "text.filters_per_width": 16, "policy.sweep": "CP-all/1/7"})
    f = tmp_path / "dumped.cfg"
    f.write_text(K.dump(cfg))
    back = K.load(f)
    back.base_dir = cfg.base_dir
    assert back == cfg
