import json

import numpy as np
import pytest

from cardioclip.checkpoint import CheckpointError, load_checkpoint, save_checkpoint


def params_fixture():
    rng = np.random.default_rng(0)
    return {
        "vis.patch.w": rng.normal(0, 0.1, (8, 4)).astype(np.float32),
        "vis.cls": rng.normal(0, 0.1, 4).astype(np.float32),
        "txt.tok": rng.normal(0, 0.1, (11, 4)).astype(np.float32),
    }


def test_round_trip_bit_exact(tmp_path):
    params = params_fixture()
    stem = tmp_path / "ckpt"
    save_checkpoint(params, "mae", stem, config_digest="abc123")
    back, manifest = load_checkpoint(stem)
    assert manifest["stage"] == "mae"
    assert manifest["config_digest"] == "abc123"
    assert set(back) == set(params)
    for k in params:
        assert back[k].dtype == np.float32
        assert np.array_equal(back[k], params[k])


def test_save_twice_identical_bytes(tmp_path):
    params = params_fixture()
    save_checkpoint(params, "mae", tmp_path / "a")
    save_checkpoint(params, "mae", tmp_path / "b")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()
    assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()


def test_tampered_payload_length_rejected(tmp_path):
    params = params_fixture()
    stem = tmp_path / "ckpt"
    save_checkpoint(params, "mae", stem)
    payload = (tmp_path / "ckpt.bin").read_bytes()
    (tmp_path / "ckpt.bin").write_bytes(payload[:-8])
    with pytest.raises(CheckpointError, match="payload"):
        load_checkpoint(stem)


def test_non_contiguous_offsets_rejected(tmp_path):
    params = params_fixture()
    stem = tmp_path / "ckpt"
    save_checkpoint(params, "mae", stem)
    manifest = json.loads((tmp_path / "ckpt.json").read_text())
    manifest["tensors"][1]["offset"] += 4
    (tmp_path / "ckpt.json").write_text(json.dumps(manifest))
    with pytest.raises(CheckpointError, match="contiguous"):
        load_checkpoint(stem)


def test_non_finite_tensor_rejected_on_save(tmp_path):
    params = params_fixture()
    params["vis.cls"][0] = np.inf
    with pytest.raises(CheckpointError, match="finite"):
        save_checkpoint(params, "mae", tmp_path / "ckpt")


def test_manifest_is_sorted_and_self_describing(tmp_path):
    params = params_fixture()
    stem = tmp_path / "ckpt"
    save_checkpoint(params, "clip", stem)
    manifest = json.loads((tmp_path / "ckpt.json").read_text())
    names = [t["name"] for t in manifest["tensors"]]
    assert names == sorted(names)
    total = sum(4 * int(np.prod(t["shape"])) for t in manifest["tensors"])
    assert manifest["payload_bytes"] == total
