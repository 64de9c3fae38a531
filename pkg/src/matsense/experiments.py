"""Experiment harness: configs, sweep runner, verification suites.

Everything is driven by a single JSON document with explicit seeds for
every random draw, so a config re-run reproduces its outputs byte for
byte.  Two built-in profiles ship with the package: ``desk`` (d=30,
rank 4, m=1500, T=4000) finishes in minutes and is what CI exercises;
``paper`` (d=50, rank 5, m=5000, T=10^4) reproduces the full-scale
staircase figures and takes tens of minutes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dynamics as dyn
from . import landscape as lsc
from . import sensing as sns
from .exceptions import ConfigError
from .ground_truth import (GAUSSIAN, ORTHOGONALIZED, make_ground_truth,
                           save_ground_truth, truncate)
from .svgplot import plot_csvs

OUTPUT_DIR_ENV = "MATSENSE_OUTPUT_DIR"

DESK_PROFILE = {
    "ground_truth": {"d": 30, "r_star": 4, "mode": "gaussian", "seed": 9},
    "ensemble": {"kind": "gaussian", "m": 1500, "seed": 7},
    "rip": {"n_samples": 200, "seed": 5},
    "references": {"s_values": [1, 2, 3, 4], "restarts": 3,
                   "max_iters": 20000, "seed": 11},
    "runs": {"alpha": [0.001], "mu": [0.005], "r_hat": [30],
             "seeds": [1, 2, 3], "T_max": 4000, "record_stride": 10},
    "output": {"directory": "out_desk", "plots": False},
}

PAPER_PROFILE = {
    "ground_truth": {"d": 50, "r_star": 5, "mode": "gaussian", "seed": 1},
    "ensemble": {"kind": "gaussian", "m": 5000, "seed": 7},
    "rip": {"n_samples": 200, "seed": 5},
    "references": {"s_values": [1, 2, 3, 4, 5], "restarts": 3,
                   "max_iters": 30000, "seed": 11},
    "runs": {"alpha": [0.001], "mu": [0.005], "r_hat": [50],
             "seeds": [1], "T_max": 10000, "record_stride": 10},
    "output": {"directory": "out_paper", "plots": True},
}

PROFILES = {"desk": DESK_PROFILE, "paper": PAPER_PROFILE}


@dataclass
class GroundTruthSpec:
    d: int
    r_star: int
    mode: str
    seed: int
    sigmas: list | None = None


@dataclass
class EnsembleSpec:
    kind: str
    m: int
    seed: int


@dataclass
class RipSpec:
    rank: int | None = None  # defaults to 2 r_star + 1
    n_samples: int = 200
    seed: int = 5


@dataclass
class ReferenceSpec:
    s_values: list = field(default_factory=list)
    restarts: int = 3
    tol: float | None = None
    max_iters: int = 20000
    seed: int = 11


@dataclass
class RunGrid:
    alpha: list
    mu: list
    r_hat: list
    seeds: list
    T_max: int
    record_stride: int = 10


@dataclass
class OutputSpec:
    directory: str = "out"
    plots: bool = False


@dataclass
class VerifySpec:
    rsi_samples: int = 1000
    rsi_radius_scale: float = 1.0
    pairs: int = 500
    oracle_pairs: int = 100
    oracle_grid: int = 1_000_000
    rank1_probes: int = 200
    init_trials: int = 4000
    seed: int = 99


@dataclass
class ExperimentConfig:
    ground_truth: GroundTruthSpec
    ensemble: EnsembleSpec
    rip: RipSpec
    references: ReferenceSpec
    runs: RunGrid
    output: OutputSpec
    verify: VerifySpec
    raw: dict


def config_hash(doc):
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _require(problems, section, key, doc, types, pred=None, what=""):
    if key not in doc:
        problems.append(f"{section}.{key}: missing")
        return None
    value = doc[key]
    if not isinstance(value, types):
        problems.append(f"{section}.{key}: expected {what or types}, got {value!r}")
        return None
    if pred is not None and not pred(value):
        problems.append(f"{section}.{key}: invalid value {value!r} {what}")
        return None
    return value


def validate_config(doc):
    """Validate a raw config dictionary; collects every failing field."""
    problems = []
    if not isinstance(doc, dict):
        raise ConfigError(["top level: expected a JSON object"])

    gt_doc = doc.get("ground_truth")
    gt_spec = None
    if not isinstance(gt_doc, dict):
        problems.append("ground_truth: missing or not an object")
    else:
        d = _require(problems, "ground_truth", "d", gt_doc, int,
                     lambda v: v >= 1, "(positive integer)")
        r = _require(problems, "ground_truth", "r_star", gt_doc, int,
                     lambda v: v >= 1, "(positive integer)")
        mode = _require(problems, "ground_truth", "mode", gt_doc, str,
                        lambda v: v in (GAUSSIAN, ORTHOGONALIZED),
                        "(gaussian|orthogonalized)")
        seed = _require(problems, "ground_truth", "seed", gt_doc, int)
        sigmas = gt_doc.get("sigmas")
        if d is not None and r is not None and r > d:
            problems.append("ground_truth.r_star: must not exceed d")
        if mode == ORTHOGONALIZED:
            if not isinstance(sigmas, list) or not sigmas:
                problems.append("ground_truth.sigmas: required in orthogonalized mode")
            elif any(not isinstance(v, (int, float)) or v <= 0 for v in sigmas) \
                    or any(nxt >= prev for prev, nxt in zip(sigmas, sigmas[1:])):
                problems.append(
                    "ground_truth.sigmas: must be strictly decreasing positives")
            elif r is not None and len(sigmas) != r:
                problems.append("ground_truth.sigmas: length must equal r_star")
        if not problems:
            gt_spec = GroundTruthSpec(d=d, r_star=r, mode=mode, seed=seed,
                                      sigmas=sigmas)

    ens_doc = doc.get("ensemble")
    ens_spec = None
    if not isinstance(ens_doc, dict):
        problems.append("ensemble: missing or not an object")
    else:
        kind = _require(problems, "ensemble", "kind", ens_doc, str,
                        lambda v: v in (sns.GAUSSIAN, sns.FULL_OBSERVATION),
                        "(gaussian|full_observation)")
        m = ens_doc.get("m", 0)
        seed = ens_doc.get("seed", 0)
        if kind == sns.GAUSSIAN:
            m = _require(problems, "ensemble", "m", ens_doc, int,
                         lambda v: v >= 1, "(positive integer)")
            seed = _require(problems, "ensemble", "seed", ens_doc, int)
        if kind is not None and None not in (m, seed):
            ens_spec = EnsembleSpec(kind=kind, m=m or 0, seed=seed or 0)

    rip_doc = doc.get("rip", {})
    rip_spec = RipSpec(
        rank=rip_doc.get("rank"),
        n_samples=rip_doc.get("n_samples", 200),
        seed=rip_doc.get("seed", 5))
    if rip_spec.n_samples < 1:
        problems.append("rip.n_samples: must be positive")

    ref_doc = doc.get("references", {})
    ref_spec = ReferenceSpec(
        s_values=ref_doc.get("s_values", []),
        restarts=ref_doc.get("restarts", 3),
        tol=ref_doc.get("tol"),
        max_iters=ref_doc.get("max_iters", 20000),
        seed=ref_doc.get("seed", 11))
    if ref_spec.restarts < 2:
        problems.append("references.restarts: must be at least 2")
    if gt_spec is not None and any(
            not isinstance(s, int) or not 1 <= s <= gt_spec.r_star
            for s in ref_spec.s_values):
        problems.append("references.s_values: entries must lie in [1, r_star]")

    runs_doc = doc.get("runs")
    run_grid = None
    if not isinstance(runs_doc, dict):
        problems.append("runs: missing or not an object")
    else:
        ok = True
        for key, positive in (("alpha", False), ("mu", True), ("r_hat", True)):
            vals = runs_doc.get(key)
            if not isinstance(vals, list) or not vals:
                problems.append(f"runs.{key}: must be a non-empty list")
                ok = False
            elif any(not isinstance(v, (int, float)) for v in vals) or \
                    any(v <= 0 if positive else v < 0 for v in vals):
                problems.append(f"runs.{key}: entries out of range")
                ok = False
        seeds = runs_doc.get("seeds")
        if not isinstance(seeds, list) or not seeds or \
                any(not isinstance(v, int) for v in seeds):
            problems.append("runs.seeds: must be a non-empty list of integers")
            ok = False
        T_max = runs_doc.get("T_max")
        if not isinstance(T_max, int) or T_max < 1:
            problems.append("runs.T_max: must be a positive integer")
            ok = False
        stride = runs_doc.get("record_stride", 10)
        if not isinstance(stride, int) or stride < 1:
            problems.append("runs.record_stride: must be a positive integer")
            ok = False
        if ok:
            if gt_spec is not None and any(
                    r > gt_spec.d for r in runs_doc["r_hat"]):
                problems.append("runs.r_hat: entries must not exceed d")
            else:
                run_grid = RunGrid(alpha=runs_doc["alpha"], mu=runs_doc["mu"],
                                   r_hat=runs_doc["r_hat"], seeds=seeds,
                                   T_max=T_max, record_stride=stride)

    out_doc = doc.get("output", {})
    out_spec = OutputSpec(directory=out_doc.get("directory", "out"),
                          plots=bool(out_doc.get("plots", False)))

    ver_doc = doc.get("verify", {})
    ver_spec = VerifySpec(
        rsi_samples=ver_doc.get("rsi_samples", 1000),
        rsi_radius_scale=ver_doc.get("rsi_radius_scale", 1.0),
        pairs=ver_doc.get("pairs", 500),
        oracle_pairs=ver_doc.get("oracle_pairs", 100),
        oracle_grid=ver_doc.get("oracle_grid", 1_000_000),
        rank1_probes=ver_doc.get("rank1_probes", 200),
        init_trials=ver_doc.get("init_trials", 4000),
        seed=ver_doc.get("seed", 99))

    if problems:
        raise ConfigError(problems)
    return ExperimentConfig(ground_truth=gt_spec, ensemble=ens_spec,
                            rip=rip_spec, references=ref_spec, runs=run_grid,
                            output=out_spec, verify=ver_spec, raw=doc)


def load_config(path=None, profile=None):
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
    elif profile is not None:
        if profile not in PROFILES:
            raise ConfigError([f"profile: unknown profile {profile!r}"])
        doc = json.loads(json.dumps(PROFILES[profile]))  # deep copy
    else:
        raise ConfigError(["config: pass a config path or --profile"])
    return validate_config(doc)


def build_ground_truth(cfg):
    spec = cfg.ground_truth
    return make_ground_truth(spec.d, sigmas=spec.sigmas, mode=spec.mode,
                             seed=spec.seed, r_star=spec.r_star)


def build_ensemble(cfg):
    spec = cfg.ensemble
    if spec.kind == sns.FULL_OBSERVATION:
        return sns.full_observation(cfg.ground_truth.d)
    return sns.gaussian_ensemble(cfg.ground_truth.d, spec.m, spec.seed)


def estimate_delta(cfg, ens):
    rank = cfg.rip.rank or (2 * cfg.ground_truth.r_star + 1)
    est = sns.estimate_rip_delta(ens, rank, cfg.rip.n_samples, cfg.rip.seed)
    return est.delta_hat


def solve_references(cfg, gt, ens, threads=1):
    ref = cfg.references
    if not ref.s_values:
        return []

    def solve(s):
        return lsc.solve_best_rank_s(gt, ens, s, restarts=ref.restarts,
                                     tol=ref.tol, max_iters=ref.max_iters,
                                     seed=ref.seed)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(solve, sorted(ref.s_values)))


def _resolve_output_dir(cfg, override=None):
    directory = override or os.environ.get(OUTPUT_DIR_ENV) or cfg.output.directory
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_name(alpha, mu, r_hat, seed):
    return f"run_a{alpha:g}_mu{mu:g}_r{r_hat}_seed{seed}"


@dataclass
class SweepResult:
    summary: dict
    summary_path: Path
    csv_paths: list
    any_diverged: bool


def cmd_run(cfg, threads=1, output_dir=None):
    """Execute the run grid of a config; deterministic and idempotent.

    Writes one trajectory CSV per grid point, the planted ground truth,
    any reference solutions, and a single summary JSON after all runs
    join.  Divergent runs are recorded in the summary rather than raised.
    """
    out = _resolve_output_dir(cfg, output_dir)
    gt = build_ground_truth(cfg)
    save_ground_truth(gt, out / "ground_truth.json")
    ens = build_ensemble(cfg)
    delta_hat = estimate_delta(cfg, ens)
    refs = solve_references(cfg, gt, ens, threads=threads)
    for sol in refs:
        lsc.save_best_rank(sol, out / f"best_rank_{sol.s}.json")

    grid = list(itertools.product(cfg.runs.alpha, cfg.runs.mu,
                                  cfg.runs.r_hat, cfg.runs.seeds))

    def execute(point):
        alpha, mu, r_hat, seed = point
        config = dyn.GDConfig(alpha=alpha, mu=mu, r_hat=r_hat,
                              T_max=cfg.runs.T_max,
                              record_stride=cfg.runs.record_stride, seed=seed)
        traj = dyn.run_gd(config, gt, ens, refs=refs)
        name = _run_name(alpha, mu, r_hat, seed)
        csv_path = out / f"{name}.csv"
        dyn.write_trajectory_csv(traj, csv_path)
        report = dyn.detect_phases(traj, gt, refs=refs, delta_hat=delta_hat)
        s_top = min(r_hat, gt.r_star)
        entry = {
            "params": {"alpha": alpha, "mu": mu, "r_hat": r_hat, "seed": seed},
            "status": traj.status,
            "csv": csv_path.name,
            "T_hit": [report.ranks.get(s, dyn.RankPhases()).T_hit
                      for s in range(1, s_top + 1)],
            "min_rel_err": [
                float(np.nanmin([rec.rel_err[s - 1] for rec in traj.steps]))
                for s in range(1, s_top + 1)],
            "final_loss": traj.steps[-1].loss if traj.steps else None,
        }
        return csv_path, entry

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(execute, grid))

    csv_paths = [c for c, _ in outcomes]
    summary = {
        "config_hash": config_hash(cfg.raw),
        "delta_hat": delta_hat,
        "per_run": [entry for _, entry in outcomes],
    }
    summary_path = out / "summary.json"
    with open(summary_path, "w", newline="") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")

    if cfg.output.plots:
        for path in csv_paths:
            plot_csvs([path], path.with_suffix(".rel_err.svg"), "rel_err")

    any_diverged = any(e["status"] == "diverged" for _, e in outcomes)
    return SweepResult(summary=summary, summary_path=summary_path,
                       csv_paths=csv_paths, any_diverged=any_diverged)


def cmd_best_rank(cfg, s, output_dir=None):
    """Solve one best rank-``s`` reference and persist it as JSON."""
    out = _resolve_output_dir(cfg, output_dir)
    gt = build_ground_truth(cfg)
    ens = build_ensemble(cfg)
    sol = lsc.solve_best_rank_s(gt, ens, s, restarts=cfg.references.restarts,
                                tol=cfg.references.tol,
                                max_iters=cfg.references.max_iters,
                                seed=cfg.references.seed)
    path = out / f"best_rank_{s}.json"
    lsc.save_best_rank(sol, path)
    return sol, path


# ---------------------------------------------------------------------------
# verification suites
# ---------------------------------------------------------------------------

@dataclass
class CheckOutcome:
    name: str
    suite: str
    passed: bool
    asserted: bool  # flagged-only checks never affect the exit code
    detail: str


class _VerifyContext:
    """Shared lazily-built state for the verification checks."""

    def __init__(self, cfg, threads=1):
        self.cfg = cfg
        self.threads = threads
        self.gt = build_ground_truth(cfg)
        self.ens = build_ensemble(cfg)
        self.delta_hat = estimate_delta(cfg, self.ens)
        self._refs = None
        self._runs = {}
        self._lock = threading.Lock()

    @property
    def refs(self):
        with self._lock:
            if self._refs is None:
                ref = self.cfg.references
                s_values = ref.s_values or list(range(1, self.gt.r_star + 1))
                self._refs = [
                    lsc.solve_best_rank_s(self.gt, self.ens, s,
                                          restarts=ref.restarts, tol=ref.tol,
                                          max_iters=ref.max_iters, seed=ref.seed)
                    for s in sorted(s_values)]
            return self._refs

    def run(self, alpha, seed, T=None, mu=None, r_hat=None, stride=None,
            with_refs=True):
        runs = self.cfg.runs
        key = (alpha, seed, T, mu, r_hat, stride, with_refs)
        with self._lock:
            if key not in self._runs:
                config = dyn.GDConfig(
                    alpha=alpha, mu=mu or runs.mu[0],
                    r_hat=r_hat or runs.r_hat[0],
                    T_max=T or runs.T_max,
                    record_stride=stride or runs.record_stride, seed=seed)
                refs = self.refs if with_refs else None
                self._runs[key] = dyn.run_gd(config, self.gt, self.ens, refs=refs)
            return self._runs[key]


def procrustes_oracle(U1, U2, n_grid=1_000_000):
    """Brute-force Procrustes distance over a dense grid of the orthogonal
    group, for widths 1 and 2 only.

    Independent of the closed-form path: width 1 minimizes over the two
    signs, width 2 scans rotations and reflections on an angle grid.
    """
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    s = U1.shape[1]
    base = float(np.linalg.norm(U1) ** 2 + np.linalg.norm(U2) ** 2)
    if s == 1:
        return min(float(np.linalg.norm(U1 - U2)), float(np.linalg.norm(U1 + U2)))
    if s != 2:
        raise ValueError("grid oracle only supports widths 1 and 2")
    C = U2.T @ U1
    theta = np.linspace(0.0, 2.0 * np.pi, n_grid, endpoint=False)
    ct, st = np.cos(theta), np.sin(theta)
    rot = ct * (C[0, 0] + C[1, 1]) + st * (C[1, 0] - C[0, 1])
    ref = ct * (C[0, 0] - C[1, 1]) + st * (C[0, 1] + C[1, 0])
    best = max(rot.max(), ref.max())
    return float(np.sqrt(max(base - 2.0 * best, 0.0)))


def _sym(rng, d):
    Z = rng.standard_normal((d, d))
    return (Z + Z.T) / 2.0


def _checks_sensing(ctx):
    gt, ens = ctx.gt, ctx.ens
    seed = ctx.cfg.verify.seed
    checks = []

    def adjointness():
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(100):
            Z = _sym(rng, gt.d)
            w = rng.standard_normal(ens.m)
            lhs = float(ens.apply(Z) @ w)
            rhs = float(np.sum(Z * ens.adjoint(w)))
            worst = max(worst, abs(lhs - rhs)
                        / (1.0 + np.linalg.norm(Z) * np.linalg.norm(w)))
        return worst <= 1e-10, f"worst normalized residual {worst:.3e}"
    checks.append(("adjointness", True, adjointness))

    def adjoint_symmetry():
        rng = np.random.default_rng(seed + 1)
        worst = max(float(np.linalg.norm(M - M.T))
                    for M in (ens.adjoint(rng.standard_normal(ens.m))
                              for _ in range(20)))
        return worst == 0.0, f"worst asymmetry {worst:.3e}"
    checks.append(("adjoint_symmetry", True, adjoint_symmetry))

    def normal_map_psd():
        rng = np.random.default_rng(seed + 2)
        worst = 0.0
        for _ in range(50):
            Z = _sym(rng, gt.d)
            v = ens.apply(Z)
            quad = float(np.sum(Z * ens.normal_map(Z)))
            energy = float(v @ v)
            worst = max(worst, abs(quad - energy) / (1.0 + energy))
            if quad < -1e-12:
                return False, f"negative quadratic form {quad:.3e}"
        return worst <= 1e-10, f"worst relative mismatch {worst:.3e}"
    checks.append(("normal_map_psd", True, normal_map_psd))

    def linearity():
        rng = np.random.default_rng(seed + 3)
        worst = 0.0
        for _ in range(50):
            Z1, Z2 = _sym(rng, gt.d), _sym(rng, gt.d)
            a, b = rng.standard_normal(2)
            gap = np.linalg.norm(ens.apply(a * Z1 + b * Z2)
                                 - a * ens.apply(Z1) - b * ens.apply(Z2))
            worst = max(worst, float(gap)
                        / (1.0 + abs(a) * np.linalg.norm(Z1)
                           + abs(b) * np.linalg.norm(Z2)))
        return worst <= 1e-10, f"worst normalized residual {worst:.3e}"
    checks.append(("apply_linearity", True, linearity))

    def rip_consequence():
        rng = np.random.default_rng(seed + 4)
        delta = 2.0 * ctx.delta_hat
        fails_doubled = fails_raw = 0
        for _ in range(200):
            u = rng.standard_normal(gt.d)
            u /= np.linalg.norm(u)
            Z = np.outer(u, u)
            rep = sns.check_rip_consequence(ens, Z, delta)
            fails_doubled += not rep.pass_nuclear
            fails_raw += rep.lhs > ctx.delta_hat * 1.0  # ||Z||_* = 1
        return fails_doubled == 0, (
            f"nuclear-bound failures at 2*delta_hat: {fails_doubled}/200 "
            f"(raw delta_hat: {fails_raw}/200, flagged only)")
    checks.append(("rip_consequence_nuclear", True, rip_consequence))

    def m_eigen():
        M = ens.normal_map(gt.target())
        eigs = np.linalg.eigvalsh(M)[::-1][:gt.r_star]
        gaps = np.abs(eigs - gt.sigmas**2)
        bound = 2.0 * ctx.delta_hat * gt.spectral_norm**2
        raw = float(np.max(gaps)) <= ctx.delta_hat * gt.spectral_norm**2
        return bool(np.all(gaps <= bound)), (
            f"max eigenvalue shift {np.max(gaps):.3e} vs bound {bound:.3e} "
            f"(raw delta_hat would {'pass' if raw else 'fail'}, flagged only)")
    checks.append(("m_eigen_weyl", True, m_eigen))

    def isometry_mean():
        trunc = truncate(gt, 1)
        v = trunc.V_s[:, 0]
        Z = np.outer(v, v)
        m = ens.m if ens.kind == sns.GAUSSIAN else 200
        devs = []
        for i in range(50):
            fresh = sns.gaussian_ensemble(gt.d, m, seed + 100 + i)
            w = fresh.apply(Z)
            devs.append(float(w @ w))
        mean = float(np.mean(devs))
        return abs(mean - 1.0) <= 0.1, f"mean energy {mean:.4f} (target 1)"
    checks.append(("isometry_mean", True, isometry_mean))

    if ens.kind == sns.FULL_OBSERVATION:
        def full_obs_identity():
            rng = np.random.default_rng(seed + 5)
            worst = max(float(np.abs(ens.normal_map(Z) - Z).max())
                        for Z in (_sym(rng, gt.d) for _ in range(20)))
            return worst <= 1e-12 and ctx.delta_hat == 0.0, (
                f"identity residual {worst:.3e}, delta_hat {ctx.delta_hat}")
        checks.append(("full_observation_identity", True, full_obs_identity))

    return [("sensing", name, asserted, fn) for name, asserted, fn in checks]


def _checks_landscape(ctx):
    gt, ens = ctx.gt, ctx.ens
    ver = ctx.cfg.verify
    checks = []

    def pseudometric():
        rng = np.random.default_rng(ver.seed + 10)
        worst_sym = worst_tri = 0.0
        for _ in range(200):
            A, B, C = (rng.standard_normal((12, 3)) for _ in range(3))
            dab = lsc.procrustes(A, B).distance
            worst_sym = max(worst_sym, abs(dab - lsc.procrustes(B, A).distance))
            worst_tri = max(worst_tri, lsc.procrustes(A, C).distance
                            - dab - lsc.procrustes(B, C).distance)
        return worst_sym <= 1e-10 and worst_tri <= 1e-8, (
            f"symmetry gap {worst_sym:.2e}, triangle excess {worst_tri:.2e}")
    checks.append(("procrustes_pseudometric", True, pseudometric))

    def oracle():
        rng = np.random.default_rng(ver.seed + 11)
        worst = 0.0
        for s in (1, 2):
            for _ in range(ver.oracle_pairs):
                U1 = rng.standard_normal((12, s))
                U2 = rng.standard_normal((12, s))
                closed = lsc.procrustes(U1, U2).distance
                brute = procrustes_oracle(U1, U2, ver.oracle_grid)
                worst = max(worst, abs(closed - brute))
        return worst <= 1e-5, f"worst oracle gap {worst:.3e}"
    checks.append(("procrustes_oracle", True, oracle))

    def lower_bound():
        rng = np.random.default_rng(ver.seed + 12)
        violations = 0
        for _ in range(ver.pairs):
            U1 = rng.standard_normal((20, 3))
            U2 = rng.standard_normal((20, 3))
            violations += not lsc.procrustes_lower_bound_check(U1, U2).passed
        return violations == 0, f"violations {violations}/{ver.pairs}"
    checks.append(("procrustes_lower_bound", True, lower_bound))

    def references_certified():
        tol = ctx.cfg.references.tol or 1e-9 * gt.spectral_norm**3
        details = []
        ok = True
        for sol in ctx.refs:
            sig_min = float(np.linalg.svd(sol.U_star, compute_uv=False)[-1])
            floor = 0.5 * gt.sigmas[sol.s - 1]
            good = (sol.grad_norm <= tol and sig_min >= floor
                    and sol.restart_spread <= 1e-4 * gt.spectral_norm)
            ok = ok and good
            details.append(f"s={sol.s}: grad {sol.grad_norm:.1e}, "
                           f"spread {sol.restart_spread:.1e}, "
                           f"sigma_min {sig_min:.3f}>={floor:.3f}")
        return ok, "; ".join(details)
    checks.append(("best_rank_certificates", True, references_certified))

    def minima_close():
        bound = 320.0 * ctx.delta_hat * gt.kappa * np.sqrt(gt.r_star) \
            * gt.spectral_norm**2
        worst = 0.0
        ok = True
        for sol in ctx.refs:
            gap = float(np.linalg.norm(sol.Z_star - (lambda tr: tr.X_s @ tr.X_s.T)(
                truncate(gt, sol.s))))
            worst = max(worst, gap)
            ok = ok and (gap <= bound or ctx.delta_hat == 0.0 and gap <= 1e-8)
        return ok, f"worst gap {worst:.3e} vs bound {bound:.3e}"
    checks.append(("minima_closeness", True, minima_close))

    flagged = ver.rsi_radius_scale > 1.0

    def rsi_sensing():
        total = 0
        min_ratio = np.inf
        for sol in ctx.refs:
            rep = lsc.verify_rsi_sensing(gt, ens, sol, ver.rsi_samples,
                                         ver.seed + 13 + sol.s,
                                         radius_scale=ver.rsi_radius_scale)
            total += rep.violations
            min_ratio = min(min_ratio, rep.min_ratio)
        return total == 0, f"violations {total}, min ratio {min_ratio:.3f}"
    checks.append(("rsi_sensing", not flagged, rsi_sensing))

    def rsi_factorization():
        total = 0
        min_ratio = np.inf
        for s in range(1, gt.r_star + 1):
            rep = lsc.verify_rsi_factorization(gt, s, ver.rsi_samples,
                                               ver.seed + 17 + s,
                                               radius_scale=ver.rsi_radius_scale)
            total += rep.violations
            min_ratio = min(min_ratio, rep.min_ratio)
        return total == 0, f"violations {total}, min ratio {min_ratio:.3f}"
    checks.append(("rsi_factorization", not flagged, rsi_factorization))

    def critical_points():
        twin = gt if gt.mode == ORTHOGONALIZED else make_ground_truth(
            gt.d, sigmas=gt.sigmas, mode=ORTHOGONALIZED, seed=gt.seed)
        tol = 1e-10 * twin.spectral_norm**3
        sq = twin.sigmas**2
        ok = True
        worst = 0.0
        for s in {1, min(2, twin.r_star), twin.r_star}:
            points = lsc.factorization_critical_points(twin, s)
            worst = max(worst, max(p.grad_norm for p in points))
            for p in points:
                expected = 0.5 * float(
                    np.sum(sq**2) - np.sum(sq[list(p.columns)] ** 2))
                ok = ok and abs(p.f_value - expected) <= 1e-10 * (1 + expected)
            best = min(points, key=lambda p: p.f_value)
            ok = ok and best.columns == tuple(range(s))
        return ok and worst <= tol, f"worst critical gradient {worst:.3e}"
    checks.append(("factorization_critical_points", True, critical_points))

    def rank1():
        rep = lsc.rank1_strong_convexity(gt, ens, n_probes=ver.rank1_probes,
                                         seed=ver.seed + 20)
        floor = 0.2 * gt.tau - 4.0 * gt.spectral_norm**2 * (2.0 * ctx.delta_hat)
        good = rep.min_eig_estimate >= floor and rep.max_fd_rel_err <= 1e-4
        return good, (f"min eig {rep.min_eig_estimate:.4f} vs floor {floor:.4f}, "
                      f"fd mismatch {rep.max_fd_rel_err:.2e}")
    checks.append(("rank1_convexity", True, rank1))

    def init_regularity():
        eps = 0.01
        rho = eps * (np.sqrt(50) - np.sqrt(4)) / np.sqrt(50)
        rep = lsc.random_init_regularity(50, 50, 5, rho, ver.init_trials,
                                         ver.seed + 21)
        return rep.success_fraction >= 0.9, (
            f"success fraction {rep.success_fraction:.3f} at rho {rho:.4f}")
    checks.append(("random_init_regularity", True, init_regularity))

    return [("landscape", name, asserted, fn) for name, asserted, fn in checks]


def _checks_dynamics(ctx):
    gt, ens = ctx.gt, ctx.ens
    runs = ctx.cfg.runs
    ver = ctx.cfg.verify
    checks = []

    def gd_error():
        rep = dyn.divergence_bound_check(gt, ens, alpha=runs.alpha[0] or 1e-3,
                                         mu=runs.mu[0], r_hat=runs.r_hat[0],
                                         seed=ver.seed + 30)
        return rep.passed, f"max gap/bound ratio {rep.max_ratio:.3e}"
    checks.append(("gd_error_bound", True, gd_error))

    def fixed_points():
        zero = np.zeros((gt.d, runs.r_hat[0]))
        still = np.array_equal(dyn.gd_step(zero, ens, gt.target(), runs.mu[0]),
                               zero)
        sol = ctx.refs[0]
        tol = ctx.cfg.references.tol or 1e-9 * gt.spectral_norm**3
        moved = float(np.linalg.norm(
            dyn.gd_step(sol.U_star, ens, gt.target(), runs.mu[0]) - sol.U_star))
        near = moved <= runs.mu[0] * tol * 1.01
        return still and near, f"zero fixed: {still}, minimizer step {moved:.2e}"
    checks.append(("fixed_points", True, fixed_points))

    def determinism():
        T = min(runs.T_max, 200)
        a = ctx.run(runs.alpha[0], runs.seeds[0], T=T, with_refs=False)
        cfg2 = dyn.GDConfig(alpha=runs.alpha[0], mu=runs.mu[0],
                            r_hat=runs.r_hat[0], T_max=T,
                            record_stride=runs.record_stride,
                            seed=runs.seeds[0])
        b = dyn.run_gd(cfg2, gt, ens)
        same = all(ra.loss == rb.loss
                   and np.array_equal(ra.sing_vals, rb.sing_vals)
                   and np.array_equal(ra.sigma_min_Vs, rb.sigma_min_Vs)
                   for ra, rb in zip(a.steps, b.steps)) \
            and np.array_equal(a.final_U, b.final_U)
        return same, "recorded diagnostics bit-identical across replays"
    checks.append(("trajectory_determinism", True, determinism))

    def norm_bound():
        cap = 3.0 * gt.spectral_norm
        worst = 0.0
        for alpha in (1e-2, 1e-3):
            traj = ctx.run(alpha, runs.seeds[0])
            worst = max(worst, max(rec.sing_vals[0] for rec in traj.steps))
        return worst <= cap, f"max iterate norm {worst:.3f} vs cap {cap:.3f}"
    checks.append(("iterate_norm_bound", True, norm_bound))

    def spectral_window():
        traj = ctx.run(1e-3, runs.seeds[0], T=min(runs.T_max, 300), stride=1,
                       with_refs=False)
        window = 0
        worst = 0.0
        for rec in traj.steps:
            if not np.isfinite(rec.sp_err):
                break
            gap = dyn.spectral_approx_error(traj, gt, ens, rec.t,
                                            delta_hat=ctx.delta_hat)
            if gap.bound > rec.sp_norm:
                break
            window = rec.t
            worst = max(worst, gap.err / gap.bound if gap.bound > 0 else 0.0)
        return worst <= 1.0, (
            f"validity window [0, {window}], worst err/bound {worst:.3e}")
    checks.append(("spectral_phase_bound", True, spectral_window))

    def loss_monotone():
        worst = 0.0
        for seed in range(5):
            traj = ctx.run(1e-3, 1000 + seed, T=min(runs.T_max, 500),
                           with_refs=False)
            losses = np.array([rec.loss for rec in traj.steps])
            rises = np.diff(losses) / (1.0 + losses[:-1])
            worst = max(worst, float(rises.max(initial=0.0)))
        return worst <= 1e-12, f"worst relative loss increase {worst:.2e}"
    checks.append(("loss_monotone", True, loss_monotone))

    def incremental_signature():
        ok = True
        details = []
        small = ctx.run(1e-3, runs.seeds[0])
        large = ctx.run(1e-2, runs.seeds[0])
        rep_s = dyn.detect_phases(small, gt, refs=ctx.refs)
        rep_l = dyn.detect_phases(large, gt, refs=ctx.refs)
        for s in range(1, small.s_max):
            m_small = _max_next_sv(small, rep_s, s)
            m_large = _max_next_sv(large, rep_l, s)
            if m_small is None or m_large is None:
                ok = False
                details.append(f"s={s}: hitting time missing")
                continue
            ok = ok and m_small < m_large
            details.append(f"s={s}: {m_small:.2e} < {m_large:.2e}")
        return ok, "; ".join(details) or "under-parameterized run, no s < r_hat"
    checks.append(("incremental_signature", True, incremental_signature))

    return [("dynamics", name, asserted, fn) for name, asserted, fn in checks]


def _max_next_sv(traj, report, s):
    """Largest recorded sigma_{s+1}(U_t) for t up to the rank-s hitting time."""
    phases = report.ranks.get(s)
    if phases is None or phases.T_hit is None:
        return None
    vals = [rec.sing_vals[s] for rec in traj.steps
            if rec.t <= phases.T_hit and rec.sing_vals.size > s]
    return max(vals) if vals else None


def cmd_verify(cfg, suite="all", threads=1):
    """Run a verification suite; returns (exit_code, outcomes).

    Exit code 0 means zero assertion-class failures; flagged checks (for
    example sweeps outside an inequality's hypothesis radius) report but
    never fail the suite.
    """
    ctx = _VerifyContext(cfg, threads=threads)
    suites = {"sensing": _checks_sensing, "landscape": _checks_landscape,
              "dynamics": _checks_dynamics}
    if suite == "all":
        selected = [fn for name in ("sensing", "landscape", "dynamics")
                    for fn in suites[name](ctx)]
    elif suite in suites:
        selected = suites[suite](ctx)
    else:
        raise ConfigError([f"suite: unknown suite {suite!r}"])

    def execute(item):
        suite_name, name, asserted, fn = item
        passed, detail = fn()
        return CheckOutcome(name=name, suite=suite_name, passed=bool(passed),
                            asserted=asserted, detail=detail)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(execute, selected))

    failures = sum(1 for o in outcomes if o.asserted and not o.passed)
    return (2 if failures else 0), outcomes


def format_verify_report(outcomes):
    lines = []
    flagged = [o for o in outcomes if not o.asserted]
    for o in outcomes:
        if o.asserted:
            tag = "PASS" if o.passed else "FAIL"
            lines.append(f"[{tag}] {o.suite}/{o.name}: {o.detail}")
    if flagged:
        lines.append("-- flagged, not asserted --")
        for o in flagged:
            tag = "ok" if o.passed else "violations"
            lines.append(f"[FLAG:{tag}] {o.suite}/{o.name}: {o.detail}")
    return "\n".join(lines)
