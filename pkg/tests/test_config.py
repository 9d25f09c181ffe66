import json

import pytest

from mgnflow.config import from_dict, load_config
from mgnflow.errors import InvalidConfig


def test_defaults_are_desk_scale():
    cfg = from_dict({})
    assert (cfg.data.n_train, cfg.data.n_test) == (10, 2)
    assert cfg.schedule.n_steps == 19 and cfg.train.train_steps == 11
    assert cfg.model.latent == 100 and cfg.eval.horizons == (11, 19)


@pytest.mark.parametrize("doc", [{"colour": 1}, {"train": {"epoch": 5}},
                                 {"mesh": {"n_per_side": 9, "shape": "hex"}}])
def test_unknown_keys_rejected(doc):
    with pytest.raises(InvalidConfig):
        from_dict(doc)


def test_bad_values_rejected():
    with pytest.raises(InvalidConfig):
        from_dict({"features": "all"})
    with pytest.raises(InvalidConfig):
        from_dict({"train": {"epochs": 0}})
    with pytest.raises(InvalidConfig):
        from_dict({"variable": "s_w"})


def test_presets_and_aliases():
    cfg = from_dict({"train": {"lr_preset": "text"}, "features": "+transmissibility"})
    assert (cfg.train.lr, cfg.train.lr_floor) == (1e-4, 1e-6)
    assert cfg.features == "trans"


def test_yaml_json_and_overrides(tmp_path):
    (tmp_path / "c.yaml").write_text("seed: 4\ntrain:\n  epochs: 7\n")
    cfg = load_config(tmp_path / "c.yaml", {"train.batch_size": 3, "model.latent": 8})
    assert (cfg.seed, cfg.train.epochs, cfg.train.batch_size, cfg.model.latent) == (4, 7, 3, 8)
    (tmp_path / "c.json").write_text(json.dumps({"eval": {"horizons": [2, 3]}}))
    assert load_config(tmp_path / "c.json").eval.horizons == (2, 3)


def test_to_dict_round_trip():
    cfg = from_dict({"seed": 2, "mesh": {"n_per_side": 8}, "features": "both"})
    assert from_dict(cfg.to_dict()) == cfg
