"""Small vector/matrix helpers shared by every other module.

Vectors are plain numpy arrays of shape (3,) and rotation matrices are
(3, 3) arrays; no wrapper classes. Randomness goes through counter-based
Philox generators keyed by integer tuples so that parallel runs can derive
independent, reproducible streams.
"""

from __future__ import annotations

import numpy as np

EPSILON = 1e-9

# Absolute tolerance on negative eigenvalues when factoring covariances.
PSD_TOLERANCE = 1e-12

Vec3 = np.ndarray
Mat3 = np.ndarray


def vec3(x: float, y: float, z: float) -> Vec3:
    return np.array([x, y, z], dtype=float)


def norm(v: np.ndarray) -> float:
    return float(np.sqrt(np.dot(v, v)))


def normalize(v: np.ndarray) -> np.ndarray:
    """Unit vector along v; the zero vector maps to the zero vector."""
    n = norm(v)
    if n < EPSILON:
        return np.zeros_like(v)
    return v / n


def make_rng(*key: int) -> np.random.Generator:
    """Counter-based generator for the given integer key tuple.

    Philox streams keyed by (master_seed, run_index, stream_index, ...) are
    independent and identical across platforms, which is what batch runs
    rely on for worker-count-invariant output.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def psd_cholesky(cov: np.ndarray) -> np.ndarray:
    """Matrix square root L with L @ L.T == cov for PSD cov.

    Uses the plain Cholesky factorization when cov is positive definite and
    falls back to an eigendecomposition for singular matrices. Eigenvalues
    in [-PSD_TOLERANCE, 0) are treated as rounding noise and clamped to
    zero; anything more negative raises ValueError.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    # Symmetrize before eigh so tiny asymmetries do not leak in.
    w, v = np.linalg.eigh(0.5 * (cov + cov.T))
    if w.min() < -PSD_TOLERANCE:
        raise ValueError(f"covariance not PSD: min eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return v * np.sqrt(w)


def sample_gaussian(rng: np.random.Generator, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """Draw mean + L z with z standard normal and L = psd_cholesky(cov).

    Always consumes len(mean) normals from rng, even for cov == 0, so that
    stream alignment does not depend on noise settings.
    """
    mean = np.asarray(mean, dtype=float)
    z = rng.standard_normal(mean.shape[0])
    L = psd_cholesky(cov)
    return mean + L @ z
