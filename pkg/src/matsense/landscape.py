"""Best rank-s solutions, Procrustes geometry, and landscape checks.

Two losses over width-``s`` factors appear side by side here:

* the sensing loss ``f_s(U) = 1/4 ||apply(Z - U U^T)||^2`` with gradient
  ``normal_map(U U^T - Z) U``, whose global minimizer (unique modulo
  rotation) defines the best rank-``s`` solution;
* the full-observation factorization loss
  ``F_s(U) = 1/2 ||U U^T - Z||_F^2`` with gradient ``2 (U U^T - Z) U``,
  whose critical points are enumerable in closed form.

The verification routines sample neighborhoods of the minimizers and count
violations of the restricted secant inequalities; the distance modulo
rotation is always the orthogonal-Procrustes distance.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .exceptions import ConvergenceError, DimensionError, UnsupportedModeError
from .ground_truth import ORTHOGONALIZED, truncate
from .sensing import FULL_OBSERVATION


@dataclass
class ProcrustesResult:
    distance: float
    rotation: np.ndarray  # (s, s) orthogonal


def procrustes(U1, U2):
    """Closed-form solution of the orthogonal Procrustes problem.

    Returns the distance ``min_R ||U1 - U2 R||_F`` over orthogonal ``R``
    together with an optimal rotation.  With the SVD
    ``U2.T @ U1 = A S B.T`` the optimum is ``R = A @ B.T`` and
    ``distance^2 = ||U1||_F^2 + ||U2||_F^2 - 2 trace(S)``, clamped at zero
    against round-off.  When ``U2.T @ U1 = 0`` every rotation is optimal
    and the identity is returned.
    """
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    if U1.shape != U2.shape:
        raise DimensionError(f"shape mismatch: {U1.shape} vs {U2.shape}")
    s = U1.shape[1]
    C = U2.T @ U1
    if not np.any(C):
        R = np.eye(s)
        trace_sum = 0.0
    else:
        A, svals, Bt = np.linalg.svd(C)
        R = A @ Bt
        trace_sum = float(svals.sum())
    d2 = float(np.linalg.norm(U1) ** 2 + np.linalg.norm(U2) ** 2) - 2.0 * trace_sum
    return ProcrustesResult(distance=float(np.sqrt(max(d2, 0.0))), rotation=R)


@dataclass
class LowerBoundReport:
    lhs: float  # ||U1 U1^T - U2 U2^T||_F
    rhs: float  # (2 sqrt(2) - 2)^{1/2} * sigma_r(U1) * distance
    passed: bool


def procrustes_lower_bound_check(U1, U2):
    """Check the product-space lower bound on the Procrustes distance."""
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    if U1.shape != U2.shape:
        raise DimensionError(f"shape mismatch: {U1.shape} vs {U2.shape}")
    lhs = float(np.linalg.norm(U1 @ U1.T - U2 @ U2.T))
    sigma_r = float(np.linalg.svd(U1, compute_uv=False)[-1])
    dist = procrustes(U1, U2).distance
    rhs = float(np.sqrt(2.0 * np.sqrt(2.0) - 2.0) * sigma_r * dist)
    return LowerBoundReport(lhs=lhs, rhs=rhs, passed=lhs >= rhs - 1e-12 * (1 + rhs))


def sensing_loss(ens, Ztarget, U):
    v = ens.apply(Ztarget - U @ U.T)
    return 0.25 * float(v @ v)


def sensing_grad(ens, Ztarget, U):
    return ens.normal_map(U @ U.T - Ztarget) @ U


def factorization_loss(Ztarget, U):
    return 0.5 * float(np.linalg.norm(U @ U.T - Ztarget) ** 2)


def factorization_grad(Ztarget, U):
    return 2.0 * (U @ U.T - Ztarget) @ U


@dataclass
class BestRankSolution:
    """Numerically certified best rank-``s`` solution.

    ``grad_norm`` is the first-order certificate at the returned factor;
    ``restart_spread`` is the largest pairwise Procrustes distance among
    converged restarts and serves as runtime evidence for uniqueness of
    the minimizer modulo rotation.
    """

    s: int
    U_star: np.ndarray   # (d, s)
    Z_star: np.ndarray   # (d, d)
    grad_norm: float
    restart_spread: float
    f_value: float


def solve_best_rank_s(gt, ens, s, restarts=3, tol=None, max_iters=10000, seed=0):
    """Minimize the width-``s`` sensing loss from spectral initializations.

    Restart 0 starts from the top-``s`` eigenpairs of ``normal_map(Z)``
    (columns scaled by the square root of the eigenvalue); the remaining
    restarts perturb that initialization.  Gradient descent uses step
    ``0.1 / sigma_hat_1^2`` and stops at ``grad_norm <= tol`` (default
    ``1e-9 ||X||^3``) or after ``max_iters`` steps.  The lowest-loss
    converged restart is returned.

    Raises
    ------
    ConvergenceError
        If no restart reaches the tolerance; carries the best gradient
        norm seen.
    """
    if not 1 <= s <= gt.r_star:
        raise DimensionError(f"need 1 <= s <= r_star={gt.r_star}, got {s}")
    if restarts < 2:
        raise ValueError("restarts must be at least 2 for uniqueness evidence")
    Ztarget = gt.target()
    M = ens.normal_map(Ztarget)
    evals, evecs = np.linalg.eigh(M)
    sig_top = float(evals[-1])
    lam = np.maximum(evals[-s:][::-1], sig_top * 1e-12)
    U_spec = evecs[:, -s:][:, ::-1] * np.sqrt(lam)
    mu = 0.1 / sig_top
    if tol is None:
        tol = 1e-9 * gt.spectral_norm**3

    rng = np.random.default_rng(seed)
    runs = []
    for k in range(restarts):
        if k == 0:
            U = U_spec.copy()
        else:
            pert = rng.standard_normal(U_spec.shape)
            pert *= 0.05 * np.sqrt(lam[-1]) / np.linalg.norm(pert, 2)
            U = U_spec + pert
        converged = False
        grad_norm = np.inf
        for _ in range(max_iters + 1):
            direction = ens.normal_map(Ztarget - U @ U.T) @ U
            grad_norm = float(np.linalg.norm(direction))
            if grad_norm <= tol:
                converged = True
                break
            U = U + mu * direction
        runs.append((converged, grad_norm, sensing_loss(ens, Ztarget, U), U))

    converged_runs = [r for r in runs if r[0]]
    if not converged_runs:
        best = min(r[1] for r in runs)
        raise ConvergenceError(
            f"no restart reached tol={tol:.3e} within {max_iters} iterations "
            f"(best grad norm {best:.3e})", best_grad_norm=best)

    best = min(converged_runs, key=lambda r: r[2])
    spread = 0.0
    for ra, rb in itertools.combinations(converged_runs, 2):
        spread = max(spread, procrustes(ra[3], rb[3]).distance)
    return BestRankSolution(s=s, U_star=best[3], Z_star=best[3] @ best[3].T,
                            grad_norm=best[1], restart_spread=spread,
                            f_value=best[2])


def best_rank_to_json(sol):
    return {
        "s": sol.s,
        "f_value": sol.f_value,
        "grad_norm": sol.grad_norm,
        "restart_spread": sol.restart_spread,
        "U_star": sol.U_star.ravel().tolist(),  # row-major
    }


def best_rank_from_json(doc):
    s = int(doc["s"])
    flat = np.asarray(doc["U_star"], dtype=float)
    U = flat.reshape(flat.size // s, s)
    return BestRankSolution(s=s, U_star=U, Z_star=U @ U.T,
                            grad_norm=float(doc["grad_norm"]),
                            restart_spread=float(doc["restart_spread"]),
                            f_value=float(doc["f_value"]))


def save_best_rank(sol, path):
    with open(path, "w") as fh:
        json.dump(best_rank_to_json(sol), fh)


def load_best_rank(path):
    with open(path) as fh:
        return best_rank_from_json(json.load(fh))


@dataclass
class RsiReport:
    """Outcome of a restricted-secant-inequality sampling sweep.

    ``min_ratio`` is the smallest observed ``lhs / rhs``; at least 1 means
    zero violations.  ``flagged`` marks sweeps whose sampling radius
    exceeds the inequality's hypothesis, whose violations are reported but
    never asserted.
    """

    violations: int
    min_ratio: float
    n_effective: int
    radius: float
    flagged: bool


def _random_rotation(rng, s):
    q, _ = np.linalg.qr(rng.standard_normal((s, s)))
    return q


def _rsi_sweep(rng, U_ref, radius, n_samples, grad_fn, threshold, flagged):
    violations = 0
    min_ratio = np.inf
    n_effective = 0
    for _ in range(n_samples):
        R = _random_rotation(rng, U_ref.shape[1])
        direction = rng.standard_normal(U_ref.shape)
        dn = np.linalg.norm(direction)
        r = radius * rng.uniform()
        if dn == 0.0 or r == 0.0:
            continue  # zero perturbation carries no information; skipped
        U = U_ref @ R + direction * (r / dn)
        pr = procrustes(U, U_ref)
        H = U - U_ref @ pr.rotation
        hn2 = float(np.linalg.norm(H) ** 2)
        if hn2 == 0.0:
            continue
        lhs = float(np.sum(grad_fn(U) * H))
        rhs = threshold * hn2
        ratio = lhs / rhs
        n_effective += 1
        min_ratio = min(min_ratio, ratio)
        if ratio < 1.0:
            violations += 1
    return RsiReport(violations=violations, min_ratio=float(min_ratio),
                     n_effective=n_effective, radius=radius, flagged=flagged)


def verify_rsi_sensing(gt, ens, sol, n_samples, seed, radius_scale=1.0):
    """Sample the secant inequality of the sensing loss near its minimizer.

    Samples ``U = U_star R + E`` with random rotations and perturbation
    norms uniform in ``(0, radius]``; the closest minimizer is recomputed
    per sample via Procrustes alignment.  ``radius_scale > 1`` leaves the
    inequality's hypothesis and flags the report accordingly.
    """
    Ztarget = gt.target()
    radius = 1e-2 * gt.spectral_norm / gt.kappa * radius_scale
    threshold = 0.1 * gt.spectral_norm**2 / gt.kappa
    rng = np.random.default_rng(seed)
    return _rsi_sweep(rng, sol.U_star, radius, n_samples,
                      lambda U: sensing_grad(ens, Ztarget, U),
                      threshold, flagged=radius_scale > 1.0)


def verify_rsi_factorization(gt, s, n_samples, seed, radius_scale=1.0):
    """Same sweep for the factorization loss around its minimizer block."""
    Ztarget = gt.target()
    X_s = truncate(gt, s).X_s
    radius = 0.1 * gt.tau / gt.spectral_norm * radius_scale
    threshold = 0.1 * gt.tau
    rng = np.random.default_rng(seed)
    return _rsi_sweep(rng, X_s, radius, n_samples,
                      lambda U: factorization_grad(Ztarget, U),
                      threshold, flagged=radius_scale > 1.0)


@dataclass
class CriticalPoint:
    columns: tuple  # indices of the planted columns present (0-based)
    U: np.ndarray
    grad_norm: float
    f_value: float


def factorization_critical_points(gt, s):
    """Enumerate all critical points of the factorization loss.

    Every critical point is, up to rotation, a zero-padded subset of the
    scaled planted columns, so the enumeration walks all column subsets of
    size at most ``s``.  Requires orthogonalized mode, where the planted
    columns are exact.  The minimum-loss entry is the top-``s`` subset.
    """
    if gt.mode != ORTHOGONALIZED:
        raise UnsupportedModeError(
            "critical-point enumeration needs exactly representable columns; "
            "use orthogonalized mode")
    if not 1 <= s <= gt.r_star:
        raise DimensionError(f"need 1 <= s <= r_star={gt.r_star}, got {s}")
    Ztarget = gt.target()
    points = []
    for size in range(s + 1):
        for subset in itertools.combinations(range(gt.r_star), size):
            U = np.zeros((gt.d, s))
            if subset:
                U[:, :size] = gt.X[:, list(subset)]
            points.append(CriticalPoint(
                columns=subset, U=U,
                grad_norm=float(np.linalg.norm(factorization_grad(Ztarget, U))),
                f_value=factorization_loss(Ztarget, U)))
    return points


@dataclass
class Rank1ConvexityReport:
    min_eig_estimate: float
    n_in_ball: int
    n_out_of_ball: int
    out_of_ball_min_eig: float  # nan when every probe was in the ball
    max_fd_rel_err: float


def rank1_hessian(gt, ens, u):
    """Scaled Hessian of the width-1 sensing loss at ``u``.

    Uses the convention in which the full-observation Hessian reads
    ``(||u||^2 I + 2 u u^T - Z) / 2``, so its smallest eigenvalue at the
    planted top column is half the top spectral gap.
    """
    u = np.asarray(u, dtype=float)
    Ztarget = gt.target()
    if ens.kind == FULL_OBSERVATION:
        T = float(u @ u) * np.eye(gt.d) + np.outer(u, u)
        P = np.outer(u, u) - Ztarget
    else:
        B = ens.matrices @ u  # rows A_i u
        T = (2.0 / ens.m) * B.T @ B
        P = ens.normal_map(np.outer(u, u) - Ztarget)
    return 0.5 * (T + P)


def _rank1_scaled_grad(gt_target, ens, u):
    return 0.5 * ens.normal_map(np.outer(u, u) - gt_target) @ u


def rank1_strong_convexity(gt, ens, radius_frac=np.sqrt(0.1), n_probes=200,
                           seed=0, fd_checks=50, fd_step_frac=1e-5):
    """Probe local strong convexity of the width-1 sensing loss.

    Probes are sampled in the ball of radius
    ``radius_frac * min(sigma_1, sqrt(tau))`` around the planted top
    column.  For each probe the scaled Hessian's smallest eigenvalue is
    computed; the reported minimum covers in-ball probes only, with
    out-of-ball probes flagged separately.  A central finite difference of
    the matching scaled gradient cross-checks the analytic Hessian-vector
    product on a subset of probes.
    """
    trunc = truncate(gt, 1)
    u_star = trunc.X_s[:, 0]
    sigma1 = gt.spectral_norm
    ball = np.sqrt(0.1) * min(sigma1, np.sqrt(gt.tau))
    radius = radius_frac * min(sigma1, np.sqrt(gt.tau))
    Ztarget = gt.target()
    h = fd_step_frac * sigma1

    rng = np.random.default_rng(seed)
    min_in = np.inf
    min_out = np.inf
    n_in = n_out = 0
    max_fd = 0.0
    for i in range(n_probes):
        direction = rng.standard_normal(gt.d)
        direction /= np.linalg.norm(direction)
        u = u_star + direction * (radius * rng.uniform())
        H = rank1_hessian(gt, ens, u)
        low = float(np.linalg.eigvalsh(H)[0])
        if np.linalg.norm(u - u_star) <= ball:
            n_in += 1
            min_in = min(min_in, low)
        else:
            n_out += 1
            min_out = min(min_out, low)
        if i < fd_checks:
            w = rng.standard_normal(gt.d)
            w /= np.linalg.norm(w)
            analytic = H @ w
            fd = (_rank1_scaled_grad(Ztarget, ens, u + h * w)
                  - _rank1_scaled_grad(Ztarget, ens, u - h * w)) / (2.0 * h)
            rel = np.linalg.norm(analytic - fd) / max(np.linalg.norm(analytic), 1e-300)
            max_fd = max(max_fd, float(rel))
    return Rank1ConvexityReport(
        min_eig_estimate=float(min_in), n_in_ball=n_in, n_out_of_ball=n_out,
        out_of_ball_min_eig=float(min_out) if n_out else float("nan"),
        max_fd_rel_err=max_fd)


@dataclass
class InitRegularityReport:
    success_fraction: float
    trials: int
    rho: float


def random_init_regularity(d, r_hat, s, rho, trials, seed):
    """Fraction of random initial factors whose top-``s`` overlap clears ``rho``.

    Entries are drawn i.i.d. normal with variance ``1 / r_hat``; the fixed
    orthonormal reference basis is the first ``s`` coordinate directions,
    so the overlap block is simply the first ``s`` rows.
    """
    if not 1 <= s <= min(r_hat, d):
        raise DimensionError(f"need 1 <= s <= min(r_hat, d), got s={s}")
    rng = np.random.default_rng(seed)
    successes = 0
    scale = 1.0 / np.sqrt(r_hat)
    for _ in range(trials):
        block = rng.standard_normal((d, r_hat))[:s] * scale
        if np.linalg.svd(block, compute_uv=False)[-1] >= rho:
            successes += 1
    return InitRegularityReport(success_fraction=successes / trials,
                                trials=trials, rho=rho)
