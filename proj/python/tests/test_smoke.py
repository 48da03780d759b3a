import json

import numpy as np
import pytest

import sdls


def test_hsr_examples():
    assert sdls.hsr("no interval change noted .") == pytest.approx(0.6)
    assert sdls.hsr("no prior studies available .") == 0.0
    assert sdls.hsc("stable heart . new effusion . improved edema .") == 2
    assert sdls.tokenize("Stable  Effusion.") == ["stable", "effusion", "."]
    with pytest.raises(sdls.SdlsError):
        sdls.hsr([])


def test_dictionary_json():
    d = json.loads(sdls.default_dictionary_json())
    assert set(d["categories"]) == {"stability", "comparison", "progression", "improvement"}


def test_bundle_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mcvs = rng.normal(size=(4, 6))
    path = str(tmp_path / "b.sdlsb")
    checksum = sdls.write_bundle(path, 2, 3, ["a", "a", "b", "b"], ["hist", "curr"] * 2, mcvs,
                                 backbone="exporter-test", provenance_json='{"src": "test"}')
    assert len(checksum) == 64
    b = sdls.read_bundle(path)
    assert b["backbone"] == "exporter-test"
    assert b["roles"] == ["hist", "curr", "hist", "curr"]
    # stored as float32
    np.testing.assert_allclose(b["mcvs"], mcvs.astype(np.float32), rtol=0, atol=0)
    assert json.loads(b["provenance_json"]) == {"src": "test"}


def test_bundle_corruption(tmp_path):
    path = tmp_path / "b.sdlsb"
    sdls.write_bundle(str(path), 1, 2, ["a"], ["hist"], np.ones((1, 2)))
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(sdls.SdlsError, match="checksum"):
        sdls.read_bundle(str(path))


def test_injection_preserves_norm():
    rng = np.random.default_rng(1)
    for _ in range(100):
        h = rng.normal(size=32) * 3
        v = rng.normal(size=32)
        v /= np.linalg.norm(v)
        lam = rng.uniform(-0.5, 0.5)
        out = sdls.norm_preserving_inject(h, v, lam)
        expected = np.linalg.norm(h) * (h / np.linalg.norm(h) + lam * v)
        expected /= np.linalg.norm(h / np.linalg.norm(h) + lam * v)
        np.testing.assert_allclose(out, expected, atol=1e-12)
    np.testing.assert_array_equal(sdls.norm_preserving_inject(h, v, 0.0), h)


def test_global_icv_matches_numpy():
    rng = np.random.default_rng(2)
    diffs = rng.normal(size=(6, 40))
    mu = diffs.mean(axis=1)
    centred = diffs - mu[:, None]
    w, u = np.linalg.eigh(centred @ centred.T)
    top = u[:, -2:]
    got = sdls.global_icv(diffs, 2, 2, 3)
    np.testing.assert_allclose(got["v"], top @ top.T @ mu, atol=1e-10)
    assert got["label"] == "global_icv_k2"


def test_sdiv_bisector():
    a = np.zeros((4, 3))
    a[0] = [1, 2, 3]
    b = np.zeros((4, 3))
    b[2] = [2, 1, 1]
    got = sdls.sdiv({"a": a, "b": b}, 2, 2)
    np.testing.assert_allclose(got["v"], [2 ** -0.5, 0, 2 ** -0.5, 0], atol=1e-12)
    with pytest.raises(sdls.SdlsError):
        sdls.sdiv({"a": a}, 2, 2)
