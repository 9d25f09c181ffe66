import struct

import numpy as np
import pytest

from helpers import random_sample, randomize
from mgnflow import io
from mgnflow.errors import IncompatibleArtifacts, InvalidConfig
from mgnflow.graph import detrend_fit
from mgnflow.model import ModelConfig, init_params


def test_checkpoint_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    params = randomize(init_params(ModelConfig(latent=5, layers=2, cheb_order=3)), rng)
    stats = detrend_fit([random_sample(rng, 5, 3) for _ in range(2)])
    meta = {"features": "baseline", "config_hash": "abc", "noise_std": 0.01}
    io.save_checkpoint(tmp_path / "m.mgnw", params, stats, meta)
    back, back_stats, back_meta = io.load_checkpoint(tmp_path / "m.mgnw")
    assert back.config == params.config
    assert list(back.tensors) == list(params.tensors)
    for name, t in params.items():
        assert back[name].value.tobytes() == t.value.tobytes()
    for k, v in stats.arrays().items():
        assert back_stats.arrays()[k].tobytes() == v.tobytes()
    assert back_meta == meta
    io.save_checkpoint(tmp_path / "again.mgnw", back, back_stats, back_meta)
    assert (tmp_path / "again.mgnw").read_bytes() == (tmp_path / "m.mgnw").read_bytes()


def test_container_header_layout(tmp_path):
    params = init_params(ModelConfig(latent=2, layers=1, cheb_order=1))
    stats = detrend_fit([random_sample(np.random.default_rng(k), 3, 1) for k in range(2)])
    io.save_checkpoint(tmp_path / "m.mgnw", params, stats, {})
    raw = (tmp_path / "m.mgnw").read_bytes()
    assert raw[:4] == b"MGNW"
    version, hlen = struct.unpack("<IQ", raw[4:16])
    assert version == 1 and len(raw) > 16 + hlen


def test_wrong_magic(tmp_path):
    (tmp_path / "x.mgnw").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(InvalidConfig):
        io.load_checkpoint(tmp_path / "x.mgnw")


def test_archive_round_trip_and_determinism(tmp_path, desk_realizations):
    reals = desk_realizations[:2]
    h1 = io.write_archive(tmp_path / "a.mgnl", reals, {"features": "baseline"})
    h2 = io.write_archive(tmp_path / "b.mgnl", reals, {"features": "baseline"})
    assert h1 == h2 == io.file_hash(tmp_path / "a.mgnl")
    back, meta = io.read_archive(tmp_path / "a.mgnl")
    assert meta == {"features": "baseline"}
    for r, b in zip(reals, back):
        assert r.seed == b.seed and r.geomodel.well_cell == b.geomodel.well_cell
        np.testing.assert_array_equal(b.simulation.saturation, r.simulation.saturation)
        np.testing.assert_array_equal(b.trans.values, r.trans.values)
        g1, g2 = r.graph("both"), b.graph("both")
        np.testing.assert_array_equal(g1.edge_features, g2.edge_features)
        np.testing.assert_array_equal(g1.node_static, g2.node_static)


def test_compatibility_check():
    io.check_compatible({"config_hash": "a", "features": "trans"},
                        {"config_hash": "a", "features": "trans"})
    with pytest.raises(IncompatibleArtifacts):
        io.check_compatible({"config_hash": "a", "features": "trans"},
                            {"config_hash": "b", "features": "trans"})
    with pytest.raises(IncompatibleArtifacts):
        io.check_compatible({"config_hash": "a", "features": "trans"},
                            {"config_hash": "a", "features": "baseline"})


def test_config_hash_ignores_key_order():
    assert io.config_hash({"a": 1, "b": [1, 2]}) == io.config_hash({"b": [1, 2], "a": 1})
    assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})


def test_rollout_csv(tmp_path):
    from mgnflow.metrics import RolloutResult
    res = RolloutResult(np.array([[0.1, 0.2]]), np.array([[0.15, 0.0]]), "s_g", "x")
    io.write_rollout_csv(tmp_path / "r.csv", res)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    row = dict(zip(header, lines[1].split(",")))
    assert float(row["abs_error"]) == pytest.approx(0.05)
