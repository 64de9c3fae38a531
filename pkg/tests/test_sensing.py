import numpy as np
import pytest

from matsense.exceptions import DimensionError, EmptyEnsembleError
from matsense.ground_truth import make_ground_truth
from matsense.sensing import (check_rip_consequence, ensemble_from_matrices,
                              ensemble_from_spec, estimate_rip_delta,
                              full_observation, gaussian_ensemble)


def _sym(rng, d):
    Z = rng.standard_normal((d, d))
    return (Z + Z.T) / 2.0


def test_generation_symmetrizes_exactly():
    ens = gaussian_ensemble(6, 25, seed=0)
    assert np.abs(ens.matrices - ens.matrices.transpose(0, 2, 1)).max() == 0.0


def test_generation_deterministic_per_seed():
    a = gaussian_ensemble(2, 1, seed=42)
    b = gaussian_ensemble(2, 1, seed=42)
    Z = np.array([[1.0, 0.5], [0.5, -2.0]])
    assert np.array_equal(a.apply(Z), b.apply(Z))
    assert not np.array_equal(a.apply(Z), gaussian_ensemble(2, 1, 43).apply(Z))


def test_empty_ensemble_rejected():
    with pytest.raises(EmptyEnsembleError):
        gaussian_ensemble(4, 0, seed=0)


def test_apply_zero_and_linearity():
    ens = gaussian_ensemble(5, 30, seed=1)
    assert np.array_equal(ens.apply(np.zeros((5, 5))), np.zeros(30))
    rng = np.random.default_rng(2)
    for _ in range(20):
        Z1, Z2 = _sym(rng, 5), _sym(rng, 5)
        a, b = rng.standard_normal(2)
        gap = ens.apply(a * Z1 + b * Z2) - a * ens.apply(Z1) - b * ens.apply(Z2)
        assert np.abs(gap).max() <= 1e-10 * (1 + abs(a) + abs(b))


def test_apply_hand_built_identity_measurement():
    # single measurement A_1 = I: apply(diag(1, 2)) = <I, Z> / sqrt(1) = 3
    ens = ensemble_from_matrices(np.eye(2)[None])
    np.testing.assert_allclose(ens.apply(np.diag([1.0, 2.0])), [3.0])


def test_apply_validates_input():
    ens = gaussian_ensemble(4, 10, seed=3)
    with pytest.raises(DimensionError):
        ens.apply(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        ens.apply(np.arange(16.0).reshape(4, 4))  # not symmetric


def test_adjoint_zero_and_shape_check():
    ens = gaussian_ensemble(4, 10, seed=4)
    assert np.array_equal(ens.adjoint(np.zeros(10)), np.zeros((4, 4)))
    with pytest.raises(DimensionError):
        ens.adjoint(np.zeros(9))


def test_adjointness_identity():
    rng = np.random.default_rng(5)
    ens = gaussian_ensemble(7, 40, seed=6)
    for _ in range(100):
        Z = _sym(rng, 7)
        w = rng.standard_normal(40)
        lhs = float(ens.apply(Z) @ w)
        rhs = float(np.sum(Z * ens.adjoint(w)))
        assert abs(lhs - rhs) <= 1e-10 * (1 + np.linalg.norm(Z) * np.linalg.norm(w))


def test_adjoint_always_symmetric():
    rng = np.random.default_rng(7)
    for ens in (gaussian_ensemble(6, 15, seed=8), full_observation(6)):
        for _ in range(10):
            M = ens.adjoint(rng.standard_normal(ens.m))
            assert np.linalg.norm(M - M.T) == 0.0


def test_full_observation_is_identity_superoperator():
    ens = full_observation(5)
    rng = np.random.default_rng(9)
    Z = _sym(rng, 5)
    assert np.linalg.norm(ens.apply(Z)) == pytest.approx(np.linalg.norm(Z))
    assert np.abs(ens.adjoint(ens.apply(Z)) - Z).max() <= 1e-12
    assert np.abs(ens.normal_map(Z) - Z).max() == 0.0


def test_normal_map_is_psd_quadratic_form():
    rng = np.random.default_rng(10)
    ens = gaussian_ensemble(6, 50, seed=11)
    for _ in range(50):
        Z = _sym(rng, 6)
        v = ens.apply(Z)
        energy = float(v @ v)
        quad = float(np.sum(Z * ens.normal_map(Z)))
        assert quad >= -1e-12
        assert abs(quad - energy) <= 1e-10 * (1 + energy)


def test_isometry_in_expectation_monte_carlo():
    # mean of ||apply(Z)||^2 over fresh ensembles concentrates at ||Z||_F^2
    Z = np.zeros((8, 8))
    Z[0, 0] = 1.0
    energies = []
    for i in range(60):
        ens = gaussian_ensemble(8, 200, seed=1000 + i)
        v = ens.apply(Z)
        energies.append(float(v @ v))
    assert abs(np.mean(energies) - 1.0) <= 0.1


def test_rip_delta_full_observation_is_zero():
    est = estimate_rip_delta(full_observation(6), 3, 50, seed=0)
    assert est.delta_hat <= 1e-12


def test_rip_delta_single_measurement_brute_force():
    # one measurement cannot be near-isometric on the rank-1 cone; the
    # sampled estimate must match an exhaustive grid over unit vectors
    ens = gaussian_ensemble(2, 1, seed=0)
    est = estimate_rip_delta(ens, 1, 200, seed=77)
    theta = np.linspace(0.0, np.pi, 2_000_000)
    u = np.stack([np.cos(theta), np.sin(theta)])
    quad = np.einsum("id,ij,jd->d", u, ens.matrices[0], u)
    brute = float(np.max(np.abs(quad**2 - 1.0)))
    assert est.delta_hat >= 0.5
    assert est.delta_hat <= brute + 1e-9
    assert est.delta_hat == pytest.approx(brute, rel=1e-3)


def test_rip_delta_improves_with_more_measurements():
    d_small = estimate_rip_delta(gaussian_ensemble(50, 1000, seed=3), 11, 200,
                                 seed=5).delta_hat
    d_large = estimate_rip_delta(gaussian_ensemble(50, 5000, seed=3), 11, 200,
                                 seed=5).delta_hat
    assert d_large < d_small


def test_rip_delta_rank_validation_and_witness():
    ens = gaussian_ensemble(5, 20, seed=6)
    with pytest.raises(DimensionError):
        estimate_rip_delta(ens, 6, 10, seed=0)
    est = estimate_rip_delta(ens, 2, 50, seed=1)
    Z = est.worst_case_witness
    assert np.linalg.norm(Z) == pytest.approx(1.0, rel=1e-12)
    assert np.linalg.matrix_rank(Z) <= 2
    v = ens.apply(Z)
    assert abs(float(v @ v) - 1.0) == pytest.approx(est.delta_hat, rel=1e-12)


def test_rip_consequence_full_observation_and_zero():
    ens = full_observation(5)
    rng = np.random.default_rng(12)
    rep = check_rip_consequence(ens, _sym(rng, 5), 0.0, rank_bound=3)
    assert rep.lhs == 0.0 and rep.pass_nuclear and rep.pass_spectral
    rep0 = check_rip_consequence(ens, np.zeros((5, 5)), 1.0)
    assert rep0.lhs == 0.0 and rep0.nuclear_bound == 0.0


def test_rip_consequence_monte_carlo_with_safety_factor(desk_gt, desk_ens):
    est = estimate_rip_delta(desk_ens, 2, 200, seed=5)
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(200):
        u = rng.standard_normal(desk_gt.d)
        u /= np.linalg.norm(u)
        rep = check_rip_consequence(desk_ens, np.outer(u, u),
                                    2.0 * est.delta_hat)
        failures += not rep.pass_nuclear
    # a failure would mean the doubled estimate still under-covers delta
    assert failures == 0


def test_m_eigen_perturbation_bound(desk_gt, desk_ens, desk_delta):
    M = desk_ens.normal_map(desk_gt.target())
    eigs = np.linalg.eigvalsh(M)[::-1][:desk_gt.r_star]
    gaps = np.abs(eigs - desk_gt.sigmas**2)
    assert np.all(gaps <= 2.0 * desk_delta * desk_gt.spectral_norm**2)


def test_regeneration_spec_round_trip():
    ens = gaussian_ensemble(4, 12, seed=9)
    again = ensemble_from_spec(ens.regeneration_spec())
    assert np.array_equal(ens.matrices, again.matrices)
    full = ensemble_from_spec(full_observation(4).regeneration_spec())
    assert full.kind == "full_observation" and full.d == 4
