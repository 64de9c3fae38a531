"""Planted low-rank ground truths with controlled singular spectra.

The planted matrix is a tall factor ``X`` of shape ``(d, r_star)`` whose
symmetric product ``X @ X.T`` is the target of every recovery experiment.
Two construction modes are supported:

* ``orthogonalized`` -- ``X = Q @ diag(sigmas)`` with an orthonormal frame
  ``Q``, so the singular values are exactly the requested ones;
* ``gaussian`` -- i.i.d. standard-normal entries, matching the randomized
  setup used in the experiment sweeps, with the realized singular values
  recorded after the fact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DimensionError, InvalidSpectrumError

ORTHOGONALIZED = "orthogonalized"
GAUSSIAN = "gaussian"

_MODES = (ORTHOGONALIZED, GAUSSIAN)


@dataclass(frozen=True)
class GroundTruth:
    """Planted factor plus the spectral constants derived from it.

    ``kappa`` is the condition number ``sigma_1**2 / tau`` and ``tau`` the
    smallest gap ``min_s(sigma_s**2 - sigma_{s+1}**2)`` of the squared
    spectrum, with the convention ``sigma_{r_star+1} = 0``.  Instances are
    immutable and safe to share between concurrent runs; the arrays must
    not be written to.
    """

    d: int
    r_star: int
    mode: str
    seed: int
    X: np.ndarray        # (d, r_star)
    sigmas: np.ndarray   # (r_star,), strictly decreasing, positive
    kappa: float
    tau: float

    @property
    def spectral_norm(self):
        return float(self.sigmas[0])

    def target(self):
        """The planted symmetric matrix ``X @ X.T``."""
        return self.X @ self.X.T


@dataclass(frozen=True)
class Truncation:
    """Top-``s`` block of the planted factor with orthonormal bases.

    ``V_s`` spans the top-``s`` left singular space, ``V_s_perp`` an
    orthonormal complement.  ``X_s @ X_s.T`` is the best rank-``s``
    approximation of the planted matrix.
    """

    s: int
    X_s: np.ndarray       # (d, s)
    V_s: np.ndarray       # (d, s)
    V_s_perp: np.ndarray  # (d, d - s)


def _spectral_constants(sigmas):
    sq = sigmas**2
    gaps = np.diff(np.append(sq, 0.0)) * -1.0
    tau = float(gaps.min())
    if tau <= 0:
        raise InvalidSpectrumError("squared singular values must have positive gaps")
    return float(sq[0] / tau), tau


def make_ground_truth(d, sigmas=None, mode=ORTHOGONALIZED, seed=0, r_star=None):
    """Construct a planted ground truth.

    Parameters
    ----------
    d : int
        Ambient dimension.
    sigmas : sequence of float, optional
        Requested singular values, strictly decreasing and positive.
        Required in ``orthogonalized`` mode.  In ``gaussian`` mode the
        values are ignored (only the length is used as the rank when
        ``r_star`` is not given) and the realized spectrum is recorded.
    mode : str
        ``"orthogonalized"`` or ``"gaussian"``.
    seed : int
        Seed for the underlying Gaussian draw; construction is
        deterministic per seed.
    r_star : int, optional
        Rank, only needed in ``gaussian`` mode when ``sigmas`` is omitted.
    """
    if mode not in _MODES:
        raise InvalidSpectrumError(f"unknown mode {mode!r}")
    if sigmas is not None:
        sigmas = np.asarray(sigmas, dtype=float)
        if sigmas.ndim != 1 or sigmas.size < 1:
            raise InvalidSpectrumError("sigmas must be a non-empty 1-d sequence")
        if r_star is None:
            r_star = int(sigmas.size)
    if r_star is None:
        raise InvalidSpectrumError("rank unspecified: pass sigmas or r_star")
    if d < r_star or r_star < 1:
        raise DimensionError(f"need 1 <= r_star <= d, got r_star={r_star}, d={d}")

    rng = np.random.default_rng(seed)
    if mode == ORTHOGONALIZED:
        if sigmas is None:
            raise InvalidSpectrumError("orthogonalized mode requires sigmas")
        if np.any(sigmas <= 0) or np.any(np.diff(sigmas) >= 0):
            raise InvalidSpectrumError(
                "sigmas must be strictly decreasing and positive")
        q, _ = np.linalg.qr(rng.standard_normal((d, r_star)))
        X = q * sigmas
    else:
        X = rng.standard_normal((d, r_star))
        sigmas = np.linalg.svd(X, compute_uv=False)

    kappa, tau = _spectral_constants(sigmas)
    return GroundTruth(d=d, r_star=r_star, mode=mode, seed=int(seed),
                       X=X, sigmas=sigmas, kappa=kappa, tau=tau)


def truncate(gt, s):
    """Top-``s`` truncation of a ground truth.

    In gaussian mode the columns are ordered by the SVD of ``X``; in
    orthogonalized mode the stored columns are already singular vectors
    scaled by their singular values, so the truncation is exact.
    """
    if not 1 <= s <= gt.r_star:
        raise DimensionError(f"need 1 <= s <= r_star={gt.r_star}, got s={s}")
    if gt.mode == ORTHOGONALIZED:
        V = gt.X / gt.sigmas
        X_s = gt.X[:, :s]
        V_s = V[:, :s]
        q, _ = np.linalg.qr(V_s, mode="complete")
        V_s_perp = q[:, s:]
    else:
        frame, svals, _ = np.linalg.svd(gt.X, full_matrices=True)
        V_s = frame[:, :s]
        X_s = V_s * svals[:s]
        V_s_perp = frame[:, s:]
    return Truncation(s=s, X_s=X_s, V_s=V_s, V_s_perp=V_s_perp)


def ground_truth_to_json(gt):
    """JSON-serializable document; round-trips ``X`` bit-exactly."""
    return {
        "d": gt.d,
        "r_star": gt.r_star,
        "mode": gt.mode,
        "seed": gt.seed,
        "sigmas": gt.sigmas.tolist(),
        "X": gt.X.ravel().tolist(),  # row-major
    }


def ground_truth_from_json(doc):
    sigmas = np.asarray(doc["sigmas"], dtype=float)
    X = np.asarray(doc["X"], dtype=float).reshape(doc["d"], doc["r_star"])
    kappa, tau = _spectral_constants(sigmas)
    return GroundTruth(d=int(doc["d"]), r_star=int(doc["r_star"]),
                       mode=doc["mode"], seed=int(doc["seed"]),
                       X=X, sigmas=sigmas, kappa=kappa, tau=tau)


def save_ground_truth(gt, path):
    with open(path, "w") as fh:
        json.dump(ground_truth_to_json(gt), fh)


def load_ground_truth(path):
    with open(path) as fh:
        return ground_truth_from_json(json.load(fh))
