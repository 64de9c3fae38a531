"""Measurement ensembles: the linear map, its adjoint, and RIP probes.

An ensemble holds ``m`` symmetric matrices ``A_i`` and exposes the map
``apply(Z)[i] = <A_i, Z> / sqrt(m)`` together with its adjoint
``adjoint(w) = sum_i w_i A_i / sqrt(m)``.  The ``full_observation`` kind is
the exact-isometry oracle: it behaves as the identity super-operator on
symmetric matrices, which makes every distortion-dependent bound hold with
zero distortion and is used throughout the analytic acceptance checks.

Gaussian ensembles draw i.i.d. standard-normal entries and are then
symmetrized as ``(A + A.T) / 2``.  For symmetric inputs the measurements
are unchanged by symmetrization; the only side effect is that off-diagonal
entries end up with variance 1/2 instead of 1, compensated exactly by
their double multiplicity, so ``E ||apply(Z)||^2 = ||Z||_F^2`` still holds
for symmetric ``Z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, EmptyEnsembleError

GAUSSIAN = "gaussian"
FULL_OBSERVATION = "full_observation"


class MeasurementEnsemble:
    """Immutable container for the sensing operator.

    Attributes
    ----------
    d : int
        Side length of the measured matrices.
    m : int
        Number of measurements (``d * d`` for ``full_observation``).
    kind : str
        ``"gaussian"`` or ``"full_observation"``.
    matrices : ndarray or None
        Stored measurement matrices, shape ``(m, d, d)``, each exactly
        symmetric.  ``None`` for ``full_observation``.
    seed : int or None
        Seed the ensemble was generated from, for regeneration specs.
    symmetrized : bool
        Whether generation symmetrized raw draws (always true for the
        gaussian kind).
    """

    def __init__(self, d, m, kind, matrices=None, seed=None, symmetrized=True):
        self.d = int(d)
        self.m = int(m)
        self.kind = kind
        self.seed = seed
        self.symmetrized = symmetrized
        self.matrices = matrices
        # (m, d*d) view used for all hot-loop inner products
        self._flat = None if matrices is None else \
            np.ascontiguousarray(matrices.reshape(self.m, self.d * self.d))
        self._scale = 1.0 / np.sqrt(self.m) if kind == GAUSSIAN else 1.0

    def _check_symmetric(self, Z):
        if Z.shape != (self.d, self.d):
            raise DimensionError(
                f"expected a {self.d}x{self.d} matrix, got {Z.shape}")
        if np.abs(Z - Z.T).max() > 1e-8 * (1.0 + np.abs(Z).max()):
            raise ValueError("input matrix is not symmetric within 1e-8")

    def apply(self, Z):
        """Measurement vector of a symmetric matrix.

        For the gaussian kind, component ``i`` is ``<A_i, Z> / sqrt(m)``.
        For ``full_observation`` the vectorized matrix is returned, so the
        Euclidean norm of the output equals the Frobenius norm of ``Z``.
        """
        Z = np.asarray(Z, dtype=float)
        self._check_symmetric(Z)
        if self.kind == FULL_OBSERVATION:
            return Z.ravel().copy()
        return self._flat @ Z.ravel() * self._scale

    def adjoint(self, w):
        """Adjoint map; always returns an exactly symmetric matrix."""
        w = np.asarray(w, dtype=float)
        if w.shape != (self.m,):
            raise DimensionError(f"expected a vector of length {self.m}, got {w.shape}")
        if self.kind == FULL_OBSERVATION:
            M = w.reshape(self.d, self.d)
        else:
            M = (w @ self._flat).reshape(self.d, self.d) * self._scale
        return (M + M.T) / 2.0

    def normal_map(self, Z):
        """The composed super-operator ``adjoint(apply(Z))``.

        Under full observation this is the identity on symmetric matrices.
        """
        if self.kind == FULL_OBSERVATION:
            Z = np.asarray(Z, dtype=float)
            self._check_symmetric(Z)
            return (Z + Z.T) / 2.0
        return self.adjoint(self.apply(Z))

    def regeneration_spec(self):
        """Parameters sufficient to rebuild this ensemble bit-exactly."""
        return {"kind": self.kind, "d": self.d, "m": self.m, "seed": self.seed}


def gaussian_ensemble(d, m, seed):
    """Ensemble of ``m`` symmetrized i.i.d. Gaussian matrices."""
    if d < 1:
        raise DimensionError(f"d must be positive, got {d}")
    if m < 1:
        raise EmptyEnsembleError("an ensemble needs at least one measurement")
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((m, d, d))
    A = (A + A.transpose(0, 2, 1)) / 2.0
    return MeasurementEnsemble(d, m, GAUSSIAN, matrices=A, seed=int(seed))


def full_observation(d):
    """Exact-isometry oracle: identity super-operator, distortion zero."""
    if d < 1:
        raise DimensionError(f"d must be positive, got {d}")
    return MeasurementEnsemble(d, d * d, FULL_OBSERVATION)


def ensemble_from_matrices(matrices):
    """Build an ensemble from explicit measurement matrices.

    Intended for hand-crafted oracles in tests; matrices are symmetrized.
    """
    A = np.asarray(matrices, dtype=float)
    if A.ndim != 3 or A.shape[1] != A.shape[2]:
        raise DimensionError(f"expected shape (m, d, d), got {A.shape}")
    if A.shape[0] < 1:
        raise EmptyEnsembleError("an ensemble needs at least one measurement")
    A = (A + A.transpose(0, 2, 1)) / 2.0
    return MeasurementEnsemble(A.shape[1], A.shape[0], GAUSSIAN, matrices=A)


def ensemble_from_spec(spec):
    """Rebuild an ensemble from a regeneration spec dictionary."""
    if spec["kind"] == FULL_OBSERVATION:
        return full_observation(spec["d"])
    return gaussian_ensemble(spec["d"], spec["m"], spec["seed"])


@dataclass
class RipEstimate:
    """Sampled lower bound on the restricted-isometry distortion.

    ``delta_hat`` is the largest observed ``| ||apply(Z)||^2 - 1 |`` over
    unit-Frobenius symmetric matrices of rank at most ``rank``.  Sampling
    plus hill climbing only ever under-estimates the true distortion, so
    callers that use the value inside an asserted bound inflate it by 2.
    """

    rank: int
    delta_hat: float
    n_samples: int
    worst_case_witness: np.ndarray | None


def _unit_low_rank(Q, lam):
    Z = (Q * lam) @ Q.T
    nrm = np.linalg.norm(Z)
    return Z / nrm


def _deviation(ens, Z):
    v = ens.apply(Z)
    return abs(float(v @ v) - 1.0)


def estimate_rip_delta(ens, rank, n_samples, seed, refine_steps=150):
    """Estimate the RIP distortion at a given rank by sampling.

    Samples are drawn as ``Q diag(lam) Q.T`` with a random orthonormal
    ``Q`` and a random signed diagonal, normalized to unit Frobenius norm;
    the worst witness is refined by a local hill climb.  The result is a
    lower bound on the true distortion (the exact value is NP-hard).
    """
    if not 1 <= rank <= ens.d:
        raise DimensionError(f"need 1 <= rank <= d={ens.d}, got {rank}")
    if n_samples < 1:
        raise DimensionError("n_samples must be positive")
    if ens.kind == FULL_OBSERVATION:
        return RipEstimate(rank=rank, delta_hat=0.0, n_samples=n_samples,
                           worst_case_witness=None)

    rng = np.random.default_rng(seed)
    best_dev = -1.0
    best_Q = best_lam = None
    for _ in range(n_samples):
        Q, _ = np.linalg.qr(rng.standard_normal((ens.d, rank)))
        lam = rng.standard_normal(rank)
        dev = _deviation(ens, _unit_low_rank(Q, lam))
        if dev > best_dev:
            best_dev, best_Q, best_lam = dev, Q, lam

    # local refinement of the worst witness
    step = 0.3
    for _ in range(refine_steps):
        Q2, _ = np.linalg.qr(best_Q + step * rng.standard_normal(best_Q.shape))
        lam2 = best_lam + step * rng.standard_normal(rank)
        dev = _deviation(ens, _unit_low_rank(Q2, lam2))
        if dev > best_dev:
            best_dev, best_Q, best_lam = dev, Q2, lam2
        else:
            step *= 0.93

    return RipEstimate(rank=rank, delta_hat=best_dev, n_samples=n_samples,
                       worst_case_witness=_unit_low_rank(best_Q, best_lam))


@dataclass
class RipConsequenceReport:
    """Near-identity bounds implied by the restricted isometry property."""

    lhs: float                    # ||normal_map(Z) - Z||_2
    nuclear_bound: float          # delta * ||Z||_*
    spectral_bound: float | None  # sqrt(r) * delta * ||Z||_2, if r supplied
    pass_nuclear: bool
    pass_spectral: bool | None


def check_rip_consequence(ens, Z, delta, rank_bound=None):
    """Check ``||(A*A - I)(Z)||_2`` against its distortion bounds.

    The nuclear-norm bound holds for every symmetric ``Z``; the sharper
    spectral bound applies when ``rank(Z) <= rank_bound - 1`` and is only
    evaluated when ``rank_bound`` is supplied.
    """
    Z = np.asarray(Z, dtype=float)
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    residual = ens.normal_map(Z) - Z
    svals = np.linalg.svd(Z, compute_uv=False)
    lhs = float(np.linalg.norm(residual, 2)) if np.any(residual) else 0.0
    nuclear_bound = float(delta * svals.sum())
    spectral_bound = None
    pass_spectral = None
    if rank_bound is not None:
        spectral_bound = float(np.sqrt(rank_bound) * delta * svals[0])
        pass_spectral = lhs <= spectral_bound
    return RipConsequenceReport(
        lhs=lhs, nuclear_bound=nuclear_bound, spectral_bound=spectral_bound,
        pass_nuclear=lhs <= nuclear_bound, pass_spectral=pass_spectral)
