"""Dense linear-algebra kernel: Jacobi eigensolver, QR, moments, Stiefel retraction.

Everything here is a pure function of numpy float64 arrays.  Matrices are
plain 2-D ``np.ndarray``; there is no wrapper type.
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO

import numpy as np

from .errors import DegenerateError, DimensionError, FormatError, RankError

SDMX_MAGIC = b"SDMX"
_HEADER = struct.Struct("<4sII")


@dataclass(frozen=True)
class EigenResult:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # one column per eigenvalue


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DegenerateError(f"{name} contains non-finite entries")
    return a


def _canonical_signs(vectors: np.ndarray) -> np.ndarray:
    # largest-|entry| positive; argmax picks the lowest index on ties
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def sym_eig(a, tol: float = 1e-15, max_sweeps: int = 60) -> EigenResult:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Eigenvalues are returned in descending order (stable, so degenerate
    eigenvalues keep their order of appearance on the diagonal).  Each
    eigenvector is flipped so that its largest-magnitude entry is positive.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise DimensionError(f"sym_eig needs a square matrix, got {a.shape}")
    scale = np.max(np.abs(a))
    if scale > 0 and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise DimensionError("sym_eig needs a symmetric matrix")

    A = 0.5 * (a + a.T)
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if n > 1 and fro > 0:
        target = (tol * fro) ** 2
        for sweep in range(max_sweeps):
            off = np.sum(A**2) - np.sum(np.diag(A) ** 2)
            if off <= target:
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    app, aqq = abs(A[p, p]), abs(A[q, q])
                    g = 100.0 * abs(apq)
                    if sweep > 3 and app + g == app and aqq + g == aqq:
                        # below rounding of both diagonal entries
                        A[p, q] = A[q, p] = 0.0
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    if abs(theta) > 1e150:
                        t = 0.5 / theta
                    else:
                        t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    row_p = A[p, :].copy()
                    row_q = A[q, :]
                    A[p, :] = c * row_p - s * row_q
                    A[q, :] = s * row_p + c * row_q
                    col_p = A[:, p].copy()
                    col_q = A[:, q]
                    A[:, p] = c * col_p - s * col_q
                    A[:, q] = s * col_p + c * col_q
                    A[p, q] = A[q, p] = 0.0
                    v_p = V[:, p].copy()
                    v_q = V[:, q]
                    V[:, p] = c * v_p - s * v_q
                    V[:, q] = s * v_p + c * v_q

    values = np.diag(A).copy()
    order = np.argsort(-values, kind="stable")
    return EigenResult(values[order], _canonical_signs(V[:, order]))


def top_eigenvectors(a, k: int) -> tuple[np.ndarray, np.ndarray]:
    res = sym_eig(a)
    return res.eigenvalues[:k], res.eigenvectors[:, :k]


def qr_orthonormalize(a, rank_tol: float = 1e-12) -> np.ndarray:
    """Orthonormal basis of span(a), with the R factor's diagonal forced positive."""
    a = as_matrix(a, "a")
    rows, cols = a.shape
    if rows < cols:
        raise DimensionError(f"qr_orthonormalize needs rows >= cols, got {a.shape}")
    q, r = np.linalg.qr(a)
    diag = np.abs(np.diag(r))
    top = diag.max()
    bad = np.flatnonzero(diag <= rank_tol * top) if top > 0 else np.arange(cols)
    if bad.size:
        raise RankError(f"input is rank deficient at column {int(bad[0])}")
    signs = np.sign(np.diag(r))
    return q * signs


def covariance(x, center: bool = False) -> np.ndarray:
    """Second-moment matrix (1/n) XᵀX, optionally of the mean-centered rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DimensionError("covariance needs a non-empty batch of rows")
    if center:
        x = x - x.mean(axis=0)
    c = x.T @ x / x.shape[0]
    return 0.5 * (c + c.T)


def stiefel_retract(v, gradient_step) -> np.ndarray:
    """Euclidean step followed by QR retraction back onto the Stiefel manifold."""
    v = np.asarray(v, dtype=np.float64)
    step = np.asarray(gradient_step, dtype=np.float64)
    if v.shape != step.shape:
        raise DimensionError(f"step shape {step.shape} does not match point shape {v.shape}")
    return qr_orthonormalize(v - step)


def orthogonality_error(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(np.linalg.norm(v.T @ v - np.eye(v.shape[1])))


def projector(u) -> np.ndarray:
    """Orthogonal projector onto span(u) for column-orthonormal u."""
    u = np.asarray(u, dtype=np.float64)
    return u @ u.T


# -- SDMX binary matrix format ------------------------------------------------


def write_matrix(dest: BinaryIO, m) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim == 1:
        m = m[None, :]
    dest.write(_HEADER.pack(SDMX_MAGIC, m.shape[0], m.shape[1]))
    dest.write(np.ascontiguousarray(m, dtype="<f8").tobytes())


def read_matrix(src: BinaryIO) -> np.ndarray:
    head = src.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError("truncated SDMX header")
    magic, rows, cols = _HEADER.unpack(head)
    if magic != SDMX_MAGIC:
        raise FormatError(f"bad SDMX magic {magic!r}")
    nbytes = rows * cols * 8
    body = src.read(nbytes)
    if len(body) < nbytes:
        raise FormatError(f"truncated SDMX body: expected {nbytes} bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").reshape(rows, cols).astype(np.float64)


def save_matrix(path, m) -> None:
    with open(path, "wb") as fh:
        write_matrix(fh, m)


def load_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    src = io.BytesIO(data)
    m = read_matrix(src)
    if src.read(1):
        raise FormatError(f"{path}: trailing bytes after SDMX matrix")
    return m
