"""Sparse direct solves and symmetric generalized eigenproblems."""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DENSE_EIG_LIMIT = 6000


class SingularSystemError(RuntimeError):
    """Raised when the factorization of the system matrix breaks down."""


def solve_direct(A, b, rtol=1e-10, max_refine=3):
    """LU solve with a few steps of iterative refinement.

    Raises :class:`SingularSystemError` if the factorization fails or the
    relative residual stays above ``rtol``; near a Dirichlet eigenvalue this
    is the expected failure mode and the resonance gate should be consulted.
    """
    A = sps.csc_matrix(A)
    dtype = np.result_type(A.dtype, np.asarray(b).dtype, np.float64)
    A = A.astype(dtype)
    b = np.asarray(b, dtype=dtype)
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(
            f"factorization failed ({exc}); k may be close to a resonance, run the resonance gate"
        ) from exc
    x = lu.solve(b)
    nb = np.linalg.norm(b) or 1.0
    res = np.linalg.norm(A @ x - b) / nb
    for _ in range(max_refine):
        if res <= rtol * 1e-2:
            break
        x = x + lu.solve(b - A @ x)
        res = np.linalg.norm(A @ x - b) / nb
    if not np.all(np.isfinite(x)) or res > rtol:
        raise SingularSystemError(
            f"relative residual {res:.2e} exceeds {rtol:.0e}; k may be close to a resonance, "
            "run the resonance gate"
        )
    log.debug("direct solve: n=%d residual=%.2e", A.shape[0], res)
    return x


@dataclass
class EigResult:
    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    orthogonality: float


def sym_generalized_eig(E, M, m, dense_limit=DENSE_EIG_LIMIT):
    """Lowest ``m`` eigenpairs of ``E v = lambda M v`` with ``M`` SPD.

    Eigenvectors are M-orthonormal. ``residuals`` holds
    ``||E v - lambda M v|| / (|lambda| ||M v||)`` per pair.
    """
    n = E.shape[0]
    m = int(min(m, n))
    if m < 1:
        raise ValueError("need at least one eigenpair")
    if n <= dense_limit:
        Ed = E.toarray() if sps.issparse(E) else np.asarray(E)
        Md = M.toarray() if sps.issparse(M) else np.asarray(M)
        vals, vecs = sla.eigh(Ed, Md, subset_by_index=[0, m - 1])
    else:
        k = min(m, n - 2)
        vals, vecs = spla.eigsh(sps.csc_matrix(E), k=k, M=sps.csc_matrix(M), sigma=0.0, which="LM")
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        # normalize in the M inner product
        nrm = np.sqrt(np.einsum("ij,ij->j", vecs, M @ vecs))
        vecs = vecs / nrm
    MV = M @ vecs
    R = E @ vecs - MV * vals
    scale = np.maximum(np.abs(vals), 1.0) * np.linalg.norm(MV, axis=0)
    residuals = np.linalg.norm(R, axis=0) / scale
    gram = vecs.T @ MV
    orth = float(np.max(np.abs(gram - np.eye(len(vals))))) if len(vals) else 0.0
    return EigResult(vals, vecs, residuals, orth)
