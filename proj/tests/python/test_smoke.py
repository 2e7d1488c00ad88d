import os
import json
import hashlib
from pathlib import Path

import numpy as np
import pytest

import stochbt

CONFIGS = Path(os.environ.get("STOCHBT_CONFIGS", Path(__file__).resolve().parents[2] / "configs"))


@pytest.fixture(scope="module")
def small():
    sys = stochbt.build_reaction_diffusion(n=6, nonlinearity="F2")
    g = stochbt.compute_gramians(sys)
    return sys, g


def test_system_shapes():
    sys = stochbt.build_reaction_diffusion(n=5)
    assert sys.n == 5 and sys.m == 2 and sys.p == 1
    assert sys.A.shape == (5, 5)
    assert len(sys.N) == 2
    assert np.allclose(sys.A, sys.A.T)


def test_gramians_certified(small):
    sys, g = small
    assert g["c1"] == 1.0
    assert g["cert_P"] >= -1e-7
    assert g["cert_Q"] >= -1e-7
    assert np.all(np.linalg.eigvalsh(g["P"]) > 0)


def test_balance_identities(small):
    sys, g = small
    b = stochbt.balance(sys, g["P"], g["Q"])
    sigma = b["sigma"]
    assert np.all(np.diff(sigma) <= 0)
    S = b["S"]
    assert np.allclose(S @ g["P"] @ S.T, np.diag(sigma), atol=1e-10 * sigma[0])
    assert np.allclose(stochbt.hankel_singular_values(g["P"], g["Q"]), sigma)


def test_scalar_hsv():
    assert stochbt.hankel_singular_values(np.array([[4.0]]), np.array([[9.0]]))[0] == pytest.approx(6.0)


def test_relative_errors_decrease(small):
    sys, g = small
    rows = stochbt.relative_errors(sys, g["P"], g["Q"], [1, 3, 6], n_paths=40, T=0.5)
    errs = [r["rel_error"] for r in rows]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-10
    assert all(r["excluded_paths"] == 0 for r in rows)


def test_gap_scan_fixed_q():
    Q = np.array([[0.49426, 0.58159], [0.58159, 0.68542]])
    r = stochbt.gap_scan(Q, "F2", c2=1.0, per_axis=100)
    assert r["values"].shape == (100 * 100,)
    assert r["positive_fraction"] < 0.05


def test_config_errors_raise():
    with pytest.raises(stochbt.ConfigError):
        stochbt.build_reaction_diffusion(n=1)
    with pytest.raises(stochbt.Error):
        stochbt.run_pipeline(str(CONFIGS / "singular_noise.cfg"), "/tmp/stochbt_py_singular")


def test_pipeline_manifest(tmp_path):
    files = stochbt.run_pipeline(str(CONFIGS / "smoke.cfg"), str(tmp_path), paths=20)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    listed = {f["path"]: f for f in manifest["files"]}
    assert set(listed) == set(files)
    for name, entry in listed.items():
        data = (tmp_path / name).read_bytes()
        assert hashlib.sha256(data).hexdigest() == entry["sha256"]
    assert stochbt.sha256_hex(b"abc") == hashlib.sha256(b"abc").hexdigest()
