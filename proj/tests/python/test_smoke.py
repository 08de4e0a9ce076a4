import json

import numpy as np
import pytest
import scipy.sparse as sp

import bifctl


def test_version_and_presets():
    assert bifctl.__version__.startswith("bifctl")
    assert "neumann" in bifctl.preset_names()
    assert len(bifctl.preset_names()) == 7


def test_lu_solve_matches_numpy():
    rng = np.random.default_rng(3)
    a = sp.random(40, 40, density=0.2, random_state=4, format="csr") + 5 * sp.identity(40, format="csr")
    a = a.tocsr()
    b = rng.standard_normal(40)
    x = bifctl.lu_solve(a.data, a.indices, a.indptr, a.shape, b)
    np.testing.assert_allclose(x, np.linalg.solve(a.toarray(), b), rtol=1e-10, atol=1e-12)


def test_lu_solve_singular_and_bad_shape():
    a = sp.csr_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))
    with pytest.raises(bifctl.SingularMatrixError):
        bifctl.lu_solve(a.data, a.indices, a.indptr, a.shape, np.ones(2))
    with pytest.raises(ValueError):
        bifctl.lu_solve(a.data, a.indices, a.indptr, (3, 3), np.ones(3))


def test_pod_against_svd():
    rng = np.random.default_rng(5)
    s = rng.standard_normal((30, 4)) @ rng.standard_normal((4, 12))
    modes, sigma, rank = bifctl.pod(s, 3)
    assert rank == 4
    np.testing.assert_allclose(sigma[:4], np.linalg.svd(s, compute_uv=False)[:4], rtol=1e-10)
    np.testing.assert_allclose(modes.T @ modes, np.eye(3), atol=1e-12)


def test_pod_weighted_metric():
    rng = np.random.default_rng(6)
    s = rng.standard_normal((10, 5))
    w = rng.uniform(0.5, 2.0, 10)
    modes, _, _ = bifctl.pod(s, 5, weights=w)
    np.testing.assert_allclose(modes.T @ (w[:, None] * modes), np.eye(5), atol=1e-10)


def test_mesh_info():
    info = bifctl.mesh_info("coarse")
    assert info["cells"] == 880
    assert info["area"] == pytest.approx(2.5 * 10 + 7.5 * 40)
    assert info["state_unknowns"] < info["velocity_dofs"] + info["pressure_dofs"]


def test_solve_state_symmetric():
    r = bifctl.solve_state(1.5)
    assert r["converged"]
    assert abs(r["output"]) < 1e-8
    assert r["leading_eigenvalue"] < 0
    assert r["velocity"].shape == (bifctl.mesh_info("coarse")["velocity_dofs"],)


def test_config_errors_report_lines():
    with pytest.raises(bifctl.ConfigError, match="line 3"):
        bifctl.resolve_config('{\n "mesh": "coarse",\n "grid": {"values": []}\n}')
    resolved = bifctl.resolve_config('{"preset": "channel"}')
    assert resolved["control"] == "channel"
    assert bifctl.config_hash('{"preset": "channel"}') == bifctl.config_hash(json.dumps(resolved))


def test_fnv1a():
    assert bifctl.fnv1a_hex(b"a") == "af63dc4c8601ec8c"


def test_run_and_verify(tmp_path):
    cfg = json.dumps(
        {
            "alphas": [0.1],
            "grid": {"hi": 2.0, "lo": 1.6, "n": 3},
            "branches": [{"label": "symmetric"}],
        }
    )
    r = bifctl.run(cfg, stage="ocp", out=str(tmp_path), deterministic=True)
    assert r["exit_code"] == 0
    assert "costs.csv" in r["files"]
    checks = bifctl.verify(str(tmp_path))
    assert checks and all(ok for _, ok, _ in checks)
    with pytest.raises(bifctl.InventoryError):
        bifctl.verify(str(tmp_path / "missing"))
