import pytest

from cvit.config import RunConfig, load_config, parse_pairs
from cvit.errors import ConfigurationError


def test_parse_pairs():
    values = parse_pairs(["# run", "seed = 7", "", "base_lr=3e-4  # faster", "reduced_scale = yes",
                          "stage_channels = 4, 8,16,32,64"])
    assert values == {"seed": 7, "base_lr": 3e-4, "reduced_scale": True, "stage_channels": (4, 8, 16, 32, 64)}


def test_unknown_key():
    with pytest.raises(ConfigurationError, match="unknown"):
        parse_pairs(["learning_rate = 1"])


def test_bad_value():
    with pytest.raises(ConfigurationError):
        parse_pairs(["epochs = many"])


def test_missing_equals():
    with pytest.raises(ConfigurationError, match=":1:"):
        parse_pairs(["epochs 3"])


def test_overrides_win(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 3\nseed = 1\n")
    cfg = load_config(p, {"seed": "9"})
    assert (cfg.epochs, cfg.seed) == (3, 9)


def test_defaults():
    cfg = load_config()
    assert cfg == RunConfig()
    assert cfg.model_config().image_size == 224
    assert cfg.schedule().step_size == 15


def test_reduced_model_config():
    cfg = load_config(overrides={"reduced_scale": "true", "embed_dim": "32", "encoder_depth": "1"})
    m = cfg.model_config()
    assert (m.image_size, m.vit.embed_dim, m.vit.encoder_depth) == (32, 32, 1)


@pytest.mark.parametrize("key,value", [("batch_size", "0"), ("train_ratio", "0.9"),
                                       ("probability_augmented", "1.5"), ("heads", "7"), ("base_lr", "0")])
def test_validation(key, value):
    with pytest.raises(ConfigurationError):
        load_config(overrides={key: value})


def test_unreadable(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.cfg")
