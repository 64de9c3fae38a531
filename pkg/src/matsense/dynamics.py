"""Gradient descent on the factorized sensing loss, with phase detection.

A run records, at a configurable stride, the loss, the leading singular
values of the iterate, and for every rank ``s`` up to the factor width the
split of the iterate into the component parallel to the top-``s`` planted
subspace and its orthogonal remainder.  The early iterations are compared
against the matched power iteration ``(I + mu M)^t U_0`` with
``M = normal_map(X X^T)``, which is the regime the spectral-phase bound
controls; tracking stops once the comparison error overtakes the power
iterate itself, since past that point the power iterate grows without
meaning (and eventually overflows).

Phase boundaries reported per rank:

* ``T_pi`` -- first recorded step whose squared top-``s`` overlap clears
  ``0.3 ||X||^2 / kappa`` (end of the parallel-improvement phase);
* ``T_ft`` -- ``T_pi`` plus the refinement-phase length implied by the
  contraction factor ``1 - mu tau / 2``;
* ``T_hit`` -- plateau-scoped minimizer of the distance to the best
  rank-``s`` solution, restricted to steps no later than the hitting time
  of rank ``s + 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DimensionError, DivergenceError
from .ground_truth import truncate

_SP_NORM_CAP = 1e100  # stop tracking the power iterate before overflow


@dataclass
class GDConfig:
    """Run parameters; deterministic per (seed, ensemble, ground truth)."""

    alpha: float
    mu: float
    r_hat: int
    T_max: int
    record_stride: int = 10
    seed: int = 0
    track_spectral: bool = True

    def validate(self, d):
        problems = []
        if not self.alpha >= 0:
            problems.append("alpha must be nonnegative")
        if not self.mu > 0:
            problems.append("mu must be positive")
        if not 1 <= self.r_hat <= d:
            problems.append(f"r_hat must be in [1, {d}]")
        if self.T_max < 0:
            problems.append("T_max must be nonnegative")
        if self.record_stride < 1:
            problems.append("record_stride must be at least 1")
        if problems:
            raise DimensionError("; ".join(problems))


@dataclass
class StepRecord:
    t: int
    loss: float
    sing_vals: np.ndarray      # first min(r_hat, r_star + 1) singular values
    sigma_min_Vs: np.ndarray   # (s_max,) smallest singular value of V_s^T U
    orth_norm: np.ndarray      # (s_max,) spectral norm of the orthogonal part
    align: np.ndarray          # (s_max,) misalignment of the parallel part
    rel_err: np.ndarray        # (s_max,) squared relative error vs X_s X_s^T
    dist_Zs: np.ndarray        # (s_max,) Frobenius distance to Z_s^*, nan w/o ref
    degenerate: np.ndarray     # (s_max,) rank-deficient overlap flags
    sp_err: float = float("nan")   # ||U_t - (I + mu M)^t U_0||_2 while tracked
    sp_norm: float = float("nan")  # ||(I + mu M)^t U_0||_2 while tracked


@dataclass
class Trajectory:
    config: GDConfig
    steps: list[StepRecord]
    final_U: np.ndarray
    status: str               # "ok" | "diverged"
    s_max: int
    r_star: int
    sp_top: float = float("nan")  # top eigenvalue of normal_map(X X^T)


@dataclass
class RankPhases:
    T_pi: int | None = None
    T_ft: int | None = None
    T_hit: int | None = None
    hit_radius: float | None = None


@dataclass
class PhaseReport:
    T_sp: int | None = None
    ranks: dict[int, RankPhases] = field(default_factory=dict)


def initial_factor(config, d):
    """Seeded Gaussian factor normalized to unit spectral norm."""
    rng = np.random.default_rng(config.seed)
    Ubar = rng.standard_normal((d, config.r_hat))
    return Ubar / np.linalg.norm(Ubar, 2)


def gd_step(U, ens, Zstar, mu):
    """One gradient step ``U + mu * normal_map(Zstar - U U^T) U``."""
    if not np.all(np.isfinite(U)):
        raise DivergenceError("iterate contains non-finite entries")
    return U + mu * (ens.normal_map(Zstar - U @ U.T) @ U)


@dataclass
class Decomposition:
    W: np.ndarray              # (k, s) right singular vectors of V_s^T U
    W_perp: np.ndarray         # (k, k - s) orthonormal complement
    parallel_norm_min: float   # sigma_min(U W)
    orth_norm: float           # ||U W_perp||_2
    align: float               # ||V_s_perp^T V_{U W}||_2, 1.0 when degenerate
    degenerate: bool


def decompose(U, trunc):
    """Split a factor along the right singular vectors of ``V_s^T U``.

    ``W W^T + W_perp W_perp^T = I`` holds by construction.  When
    ``V_s^T U`` is rank deficient the split is ill-defined; the flag is
    set and the alignment reported as 1.
    """
    U = np.asarray(U, dtype=float)
    k = U.shape[1]
    s = trunc.s
    if s > k:
        raise DimensionError(f"need s <= factor width, got s={s}, width={k}")
    P = trunc.V_s.T @ U
    _, psv, Vt = np.linalg.svd(P, full_matrices=True)
    W = Vt[:s].T
    W_perp = Vt[s:].T
    # rank deficiency is judged against the factor's own scale: an overlap
    # block that is uniformly tiny relative to ||U|| carries no direction
    degenerate = psv[-1] <= 1e-12 * max(np.linalg.norm(U, 2), 1e-300)
    parallel = U @ W
    parallel_norm_min = float(np.linalg.svd(parallel, compute_uv=False)[-1])
    orth_norm = 0.0 if k == s else float(np.linalg.norm(U @ W_perp, 2))
    if degenerate:
        align = 1.0
    else:
        basis, _, _ = np.linalg.svd(parallel, full_matrices=False)
        align = float(np.linalg.norm(trunc.V_s_perp.T @ basis, 2))
    return Decomposition(W=W, W_perp=W_perp,
                         parallel_norm_min=parallel_norm_min,
                         orth_norm=orth_norm, align=align, degenerate=degenerate)


def _record(t, U, ens, Zstar, truncs, xs_products, xs_norms2, ref_Z,
            n_sv, sp_err, sp_norm):
    G = U @ U.T
    resid = ens.apply(Zstar - G)
    loss = 0.25 * float(resid @ resid)
    sing_vals = np.linalg.svd(U, compute_uv=False)[:n_sv]
    s_max = len(truncs)
    sigma_min_Vs = np.empty(s_max)
    orth = np.empty(s_max)
    align = np.empty(s_max)
    rel = np.empty(s_max)
    dist = np.full(s_max, np.nan)
    degen = np.zeros(s_max, dtype=bool)
    for i, trunc in enumerate(truncs):
        P = trunc.V_s.T @ U
        sigma_min_Vs[i] = np.linalg.svd(P, compute_uv=False)[-1]
        dec = decompose(U, trunc)
        orth[i] = dec.orth_norm
        align[i] = dec.align
        degen[i] = dec.degenerate
        rel[i] = np.linalg.norm(G - xs_products[i]) ** 2 / xs_norms2[i]
        if ref_Z[i] is not None:
            dist[i] = np.linalg.norm(G - ref_Z[i])
    return StepRecord(t=t, loss=loss, sing_vals=sing_vals,
                      sigma_min_Vs=sigma_min_Vs, orth_norm=orth, align=align,
                      rel_err=rel, dist_Zs=dist, degenerate=degen,
                      sp_err=sp_err, sp_norm=sp_norm)


def run_gd(config, gt, ens, refs=None):
    """Run gradient descent and record diagnostics.

    ``refs``, when given, is a list of best rank-``s`` solutions; each
    record then carries the Frobenius distance of ``U U^T`` to every
    supplied reference.  A non-finite iterate truncates the trajectory
    with ``status="diverged"`` instead of raising.
    """
    config.validate(gt.d)
    if ens.d != gt.d:
        raise DimensionError(f"ensemble dimension {ens.d} != ground truth {gt.d}")
    s_max = min(config.r_hat, gt.r_star)
    truncs = [truncate(gt, s) for s in range(1, s_max + 1)]
    xs_products = [tr.X_s @ tr.X_s.T for tr in truncs]
    xs_norms2 = [float(np.linalg.norm(p) ** 2) for p in xs_products]
    ref_Z = [None] * s_max
    for sol in refs or []:
        if 1 <= sol.s <= s_max:
            ref_Z[sol.s - 1] = sol.Z_star
    Zstar = gt.target()
    n_sv = min(config.r_hat, gt.r_star + 1)

    U = config.alpha * initial_factor(config, gt.d)
    sp_top = float("nan")
    sp_on = config.track_spectral and config.alpha > 0
    Usp = None
    if config.track_spectral:
        Msp = ens.normal_map(Zstar)
        sp_top = float(np.linalg.eigvalsh(Msp)[-1])
        Usp = U.copy()

    steps = []
    status = "ok"
    t = 0
    while True:
        if not np.all(np.isfinite(U)):
            status = "diverged"
            break
        if t % config.record_stride == 0 or t == config.T_max:
            if sp_on:
                sp_err = float(np.linalg.norm(U - Usp, 2))
                sp_norm = float(np.linalg.norm(Usp, 2))
            else:
                sp_err = sp_norm = float("nan")
            steps.append(_record(t, U, ens, Zstar, truncs, xs_products,
                                 xs_norms2, ref_Z, n_sv, sp_err, sp_norm))
            if sp_on and sp_err > steps[-1].sing_vals[0]:
                sp_on = False  # departure recorded; power iterate is done
        if t == config.T_max or status == "diverged":
            break
        with np.errstate(over="ignore", invalid="ignore"):
            # overflow surfaces as non-finite entries, handled at loop top
            U = U + config.mu * (ens.normal_map(Zstar - U @ U.T) @ U)
            if sp_on:
                Usp = Usp + config.mu * (Msp @ Usp)
                if not np.all(np.isfinite(Usp)) \
                        or np.abs(Usp).max() > _SP_NORM_CAP:
                    sp_on = False
        t += 1
    return Trajectory(config=config, steps=steps, final_U=U, status=status,
                      s_max=s_max, r_star=gt.r_star, sp_top=sp_top)


def detect_phases(traj, gt, refs=None, delta_hat=None):
    """Locate the phase boundaries of a recorded trajectory.

    Thresholds never crossed leave the corresponding field ``None`` (run
    too short), which is reported rather than raised.  ``delta_hat`` feeds
    the refinement-length constant; without it ``T_ft`` stays ``None``.
    Steps whose overlap block was rank deficient are skipped for that
    rank.
    """
    report = PhaseReport()
    recs = traj.steps
    if not recs:
        return report
    ts = np.array([r.t for r in recs])

    # The spectral phase ends when the power-iterate comparison error
    # overtakes the iterate itself.  (Normalizing by the power iterate
    # instead is numerically meaningless here: once the unmatched power
    # iterate outgrows the trajectory, that ratio saturates at 1 up to
    # float noise and never crosses cleanly.)
    sp_err = np.array([r.sp_err for r in recs])
    top_sv = np.array([r.sing_vals[0] for r in recs])
    crossed = np.isfinite(sp_err) & (sp_err > top_sv)
    if crossed.any():
        report.T_sp = int(ts[int(np.argmax(crossed))])

    sig2 = gt.spectral_norm**2
    threshold_pi = 0.3 * sig2 / gt.kappa
    mu = traj.config.mu

    limit = len(recs) - 1  # plateau scope inherited from the next rank up
    ranks = {}
    for s in range(traj.s_max, 0, -1):
        phases = RankPhases()
        smv = np.array([r.sigma_min_Vs[s - 1] for r in recs])
        ok = ~np.array([r.degenerate[s - 1] for r in recs])
        hit_pi = ok & (smv**2 > threshold_pi)
        if hit_pi.any():
            phases.T_pi = int(ts[int(np.argmax(hit_pi))])
            if delta_hat is not None:
                c3 = 1e4 * gt.kappa * np.sqrt(gt.r_star) * delta_hat
                q = 1.0 - 0.5 * mu * gt.tau
                extra = 0
                if c3 > 0 and 0.0 < q < 1.0:
                    extra = max(0, math.ceil(
                        math.log(100.0 * sig2 * gt.kappa * c3) / -math.log(q)))
                phases.T_ft = phases.T_pi + extra
        dist = np.array([r.dist_Zs[s - 1] for r in recs])
        window = dist[:limit + 1]
        if np.isfinite(window).any():
            idx = int(np.nanargmin(window))
            phases.T_hit = int(ts[idx])
            phases.hit_radius = float(dist[idx])
            limit = idx
        ranks[s] = phases
    report.ranks = dict(sorted(ranks.items()))
    return report


@dataclass
class SpectralGap:
    err: float    # ||U_t - (I + mu M)^t U_0||_2
    bound: float  # distortion-dependent growth bound at step t


def spectral_approx_error(traj, gt, ens, t, delta_hat=0.0):
    """Compare an iterate against the matched power iteration at step ``t``.

    Uses the in-run record when step ``t`` was recorded while tracking was
    still active; otherwise both iterates are replayed from the seeded
    initialization (repeated multiplication, never materializing a matrix
    power).  The bound takes the distortion as twice the supplied
    estimate, the usual safety factor for a sampled lower bound.
    """
    if not 0 <= t <= traj.config.T_max:
        raise DimensionError(f"step {t} outside the trajectory")
    cfg = traj.config
    err = None
    for rec in traj.steps:
        if rec.t == t and np.isfinite(rec.sp_err):
            err = rec.sp_err
            break
    sp_top = traj.sp_top
    if err is None or not np.isfinite(sp_top):
        Zstar = gt.target()
        Msp = ens.normal_map(Zstar)
        sp_top = float(np.linalg.eigvalsh(Msp)[-1])
        U = cfg.alpha * initial_factor(cfg, gt.d)
        Usp = U.copy()
        for _ in range(t):
            U = gd_step(U, ens, Zstar, cfg.mu)
            Usp = Usp + cfg.mu * (Msp @ Usp)
        err = float(np.linalg.norm(U - Usp, 2))
    delta = 2.0 * delta_hat
    growth = (1.0 + cfg.mu * sp_top) ** (3 * t)
    bound = 4.0 / sp_top * cfg.alpha**3 * gt.r_star * (1.0 + delta) * growth
    return SpectralGap(err=err, bound=float(bound))


@dataclass
class DivergenceBoundReport:
    max_ratio: float  # largest observed gap / bound over k <= k_max
    passed: bool


def divergence_bound_check(gt, ens, alpha, mu, r_hat, seed, eps=1e-6,
                           k_max=200, lipschitz=None):
    """Check the geometric divergence bound for two nearby trajectories.

    The runs start ``eps`` apart in Frobenius norm; the gap at step ``k``
    must stay below ``(1 + mu L)^k eps`` with ``L`` the empirical gradient
    Lipschitz constant ``20 ||X||^2`` on the bounded region.
    """
    if lipschitz is None:
        lipschitz = 20.0 * gt.spectral_norm**2
    cfg = GDConfig(alpha=alpha, mu=mu, r_hat=r_hat, T_max=0,
                   seed=seed, track_spectral=False)
    cfg.validate(gt.d)
    Zstar = gt.target()
    rng = np.random.default_rng(seed + 1)
    U = alpha * initial_factor(cfg, gt.d)
    delta0 = rng.standard_normal(U.shape)
    V = U + delta0 * (eps / np.linalg.norm(delta0))
    max_ratio = 0.0
    factor = 1.0
    for _ in range(1, k_max + 1):
        U = gd_step(U, ens, Zstar, mu)
        V = gd_step(V, ens, Zstar, mu)
        factor *= 1.0 + mu * lipschitz
        gap = float(np.linalg.norm(U - V))
        max_ratio = max(max_ratio, gap / (factor * eps))
    return DivergenceBoundReport(max_ratio=max_ratio, passed=max_ratio <= 1.0)


def csv_header(r_star):
    cols = ["t", "loss"]
    cols += [f"sv{i}" for i in range(1, r_star + 2)]
    for s in range(1, r_star + 1):
        cols += [f"sigma_min_V{s}", f"orth_norm_{s}", f"align_{s}",
                 f"rel_err_{s}", f"dist_Z{s}"]
    cols += ["sp_err", "sp_norm"]
    return cols


def _cell(value):
    v = float(value)
    return "" if math.isnan(v) else repr(v)


def trajectory_to_csv(traj):
    """Render a trajectory as CSV text with the fixed column layout.

    Singular-value columns beyond the factor width are exact zeros; per-s
    blocks beyond the factor width render empty cells, as do distance
    cells with no reference solution supplied.
    """
    lines = [",".join(csv_header(traj.r_star))]
    n_sv = traj.r_star + 1
    for rec in traj.steps:
        cells = [str(rec.t), _cell(rec.loss)]
        for i in range(n_sv):
            if i < rec.sing_vals.size:
                cells.append(_cell(rec.sing_vals[i]))
            else:
                cells.append(_cell(0.0))  # sigma_k(U) = 0 for k > r_hat
        for s in range(1, traj.r_star + 1):
            if s <= traj.s_max:
                i = s - 1
                cells += [_cell(rec.sigma_min_Vs[i]), _cell(rec.orth_norm[i]),
                          _cell(rec.align[i]), _cell(rec.rel_err[i]),
                          _cell(rec.dist_Zs[i])]
            else:
                cells += [""] * 5
        cells += [_cell(rec.sp_err), _cell(rec.sp_norm)]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj, path):
    with open(path, "w", newline="") as fh:
        fh.write(trajectory_to_csv(traj))


def read_trajectory_csv(path):
    """Parse a trajectory CSV into named float columns (nan for blanks)."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    columns = {name: [] for name in header}
    for ln in lines[1:]:
        cells = ln.split(",")
        for name, cell in zip(header, cells):
            columns[name].append(float(cell) if cell else float("nan"))
    return {name: np.asarray(vals) for name, vals in columns.items()}
