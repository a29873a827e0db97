"""Dense complex linear algebra and special functions.

Qubit ordering convention used throughout eqlab: qubit 0 is the most
significant bit of a computational-basis index, so for N qubits the basis
state ``|b_0 b_1 ... b_{N-1}>`` has index ``sum_q b_q * 2**(N-1-q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalContractError

MAX_DIM = 2**12

_HERMITIAN_RTOL = 1e-10


@dataclass(frozen=True)
class HermitianEigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass(frozen=True)
class BipartitionLayout:
    """Split of ``n_qubits`` into a subsystem and its environment."""

    n_qubits: int
    subsystem: tuple[int, ...]

    def __post_init__(self):
        sub = tuple(sorted(set(int(q) for q in self.subsystem)))
        if self.n_qubits < 2:
            raise ValueError("a bipartition needs at least two qubits")
        if not sub or len(sub) >= self.n_qubits:
            raise ValueError("subsystem must be a nonempty proper subset of the qubits")
        if sub[0] < 0 or sub[-1] >= self.n_qubits:
            raise ValueError(f"subsystem qubits {sub} out of range for N={self.n_qubits}")
        object.__setattr__(self, "subsystem", sub)

    @property
    def environment(self) -> tuple[int, ...]:
        return tuple(q for q in range(self.n_qubits) if q not in self.subsystem)

    @property
    def m(self) -> int:
        return len(self.subsystem)

    @property
    def d(self) -> int:
        return 2**self.n_qubits

    @property
    def d_s(self) -> int:
        return 2 ** len(self.subsystem)

    @property
    def d_e(self) -> int:
        return 2 ** (self.n_qubits - len(self.subsystem))

    @classmethod
    def first(cls, n_qubits: int, m: int = 1) -> "BipartitionLayout":
        """Subsystem made of the first ``m`` qubits."""
        return cls(n_qubits, tuple(range(m)))


def hermiticity_defect(a: np.ndarray) -> float:
    """Relative Frobenius norm of the anti-Hermitian part of ``a``."""
    a = np.asarray(a)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - a.conj().swapaxes(-1, -2)) / scale)


def hermitian_eig(a: np.ndarray) -> HermitianEigResult:
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Backed by LAPACK ``heevd`` through :func:`numpy.linalg.eigh`. Memory is
    about ``3 * 16 * d**2`` bytes, so the largest allowed input (``d = 4096``)
    needs roughly 800 MB and a few tens of seconds.

    Raises:
        NumericalContractError: if ``a`` is not Hermitian to 1e-10 relative,
            or not square, or larger than ``2**12``.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericalContractError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] > MAX_DIM:
        raise NumericalContractError(f"dimension {a.shape[0]} exceeds {MAX_DIM}")
    if not np.all(np.isfinite(a)):
        raise NumericalContractError("matrix has non-finite entries")
    defect = hermiticity_defect(a)
    if defect > _HERMITIAN_RTOL:
        raise NumericalContractError(
            f"matrix is not Hermitian: ||A - A^H||_F / ||A||_F = {defect:.3e}"
        )
    w, v = np.linalg.eigh(0.5 * (a + a.conj().T))
    return HermitianEigResult(eigenvalues=w, eigenvectors=v)


def trace_norm(a: np.ndarray, hermitian: bool | None = None) -> np.ndarray | float:
    """Sum of singular values. Works on stacks of matrices ``(..., d, d)``.

    If ``hermitian`` is None, Hermiticity is detected (to 1e-12 relative) and
    the cheaper eigenvalue route is taken.
    """
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise NumericalContractError("matrix has non-finite entries")
    if hermitian is None:
        hermitian = hermiticity_defect(a) <= 1e-12
    if hermitian:
        w = np.linalg.eigvalsh(0.5 * (a + a.conj().swapaxes(-1, -2)))
        out = np.abs(w).sum(axis=-1)
    else:
        out = np.linalg.svd(a, compute_uv=False).sum(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def _subsystem_axes(layout: BipartitionLayout, offset: int) -> list[int]:
    return [offset + q for q in layout.subsystem] + [offset + q for q in layout.environment]


def partial_trace(rho: np.ndarray, layout: BipartitionLayout) -> np.ndarray:
    """Trace out the environment; returns ``(..., d_S, d_S)``.

    Leading batch axes are carried through. Subsystem qubits keep their
    relative order in the result.
    """
    rho = np.asarray(rho)
    n = layout.n_qubits
    if rho.shape[-2:] != (layout.d, layout.d):
        raise ValueError(f"state of shape {rho.shape[-2:]} does not match 2**{n}")
    batch = rho.shape[:-2]
    nb = len(batch)
    t = rho.reshape(batch + (2,) * (2 * n))
    perm = list(range(nb)) + _subsystem_axes(layout, nb) + _subsystem_axes(layout, nb + n)
    t = t.transpose(perm).reshape(batch + (layout.d_s, layout.d_e, layout.d_s, layout.d_e))
    return np.einsum("...aebe->...ab", t)


def split_vector(psi: np.ndarray, layout: BipartitionLayout) -> np.ndarray:
    """Reshape state vectors ``(..., d)`` to ``(..., d_S, d_E)`` amplitude matrices."""
    psi = np.asarray(psi)
    n = layout.n_qubits
    if psi.shape[-1] != layout.d:
        raise ValueError(f"vector of length {psi.shape[-1]} does not match 2**{n}")
    batch = psi.shape[:-1]
    nb = len(batch)
    t = psi.reshape(batch + (2,) * n)
    t = t.transpose(list(range(nb)) + _subsystem_axes(layout, nb))
    return t.reshape(batch + (layout.d_s, layout.d_e))


def reduced_from_vector(psi: np.ndarray, layout: BipartitionLayout) -> np.ndarray:
    """``tr_E |psi><psi|`` for one or many pure states, without forming ``d x d``."""
    a = split_vector(psi, layout)
    if a.ndim == 2 and layout.d_s <= 4:
        # a few BLAS dot products beat a matmul against a conjugated copy
        out = np.empty((layout.d_s, layout.d_s), dtype=complex)
        for i in range(layout.d_s):
            for j in range(i, layout.d_s):
                out[i, j] = np.vdot(a[j], a[i])
                out[j, i] = np.conj(out[i, j])
        return out
    return a @ a.conj().swapaxes(-1, -2)


# Bessel J1 -----------------------------------------------------------------

# Beyond this the Hankel expansion with 24 terms is accurate to ~1e-11;
# below it the power series loses at most ~1e-13 to cancellation.
_J1_SWITCH = 12.0
_J1_SERIES_TERMS = 40
_J1_ASYM_TERMS = 24


def _j1_series(x: np.ndarray) -> np.ndarray:
    q = -0.25 * x * x
    term = 0.5 * x
    total = term.copy()
    for k in range(1, _J1_SERIES_TERMS):
        term = term * q / (k * (k + 1))
        total = total + term
    return total


def _j1_asymptotic(x: np.ndarray) -> np.ndarray:
    # J1(x) ~ sqrt(2/(pi x)) (P cos chi - Q sin chi), chi = x - 3pi/4
    p = np.ones_like(x)
    q = np.zeros_like(x)
    a = np.ones_like(x)
    for k in range(1, _J1_ASYM_TERMS + 1):
        a = a * (4.0 - (2 * k - 1) ** 2) / (k * 8.0 * x)
        sign = -1.0 if (k // 2) % 2 else 1.0
        if k % 2:
            q = q + sign * a
        else:
            p = p + sign * a
    # cos(x - 3pi/4) expanded so that large x is never shifted in floating point
    c, s = np.cos(x), np.sin(x)
    r = math.sqrt(0.5)
    cos_chi = r * (s - c)
    sin_chi = -r * (s + c)
    return np.sqrt(2.0 / (np.pi * x)) * (p * cos_chi - q * sin_chi)


def bessel_j1(x):
    """Bessel function of the first kind of order one.

    Absolute error below 1e-10 for ``|x| <= 1e8``. Accepts scalars or arrays.
    """
    xa = np.asarray(x, dtype=float)
    ax = np.abs(xa)
    out = np.empty_like(ax)
    small = ax <= _J1_SWITCH
    out[small] = _j1_series(ax[small])
    out[~small] = _j1_asymptotic(ax[~small])
    out = np.sign(xa) * out
    return float(out) if out.ndim == 0 else out


def jinc(x):
    """``2 J1(x) / x`` with the limit value 1 at ``x = 0``."""
    xa = np.asarray(x, dtype=float)
    out = np.ones_like(xa)
    nz = xa != 0.0
    out[nz] = 2.0 * bessel_j1(xa[nz]) / xa[nz]
    return float(out) if out.ndim == 0 else out


# Harmonic-oscillator eigenfunctions ----------------------------------------

_RESCALE = 1e150
_MAX_HERMITE_INDEX = 4096


def _oscillator_recurrence(x: np.ndarray, kmax: int):
    """Yield ``(k, v, log_scale)`` with ``phi_k(x) = v * exp(log_scale)``.

    ``log_scale`` changes between yields when the running values are renormalised,
    so callers accumulating functions of ``v`` must rescale in step.
    """
    log_scale = -0.5 * x * x
    v_prev = np.zeros_like(x)
    v = np.full_like(x, np.pi**-0.25)
    yield 0, v, log_scale, np.ones_like(x)
    for k in range(kmax):
        v_next = x * math.sqrt(2.0 / (k + 1)) * v - math.sqrt(k / (k + 1)) * v_prev
        v_prev, v = v, v_next
        big = np.abs(v) > _RESCALE
        factor = np.where(big, np.abs(v), 1.0)
        if big.any():
            v = v / factor
            v_prev = v_prev / factor
            log_scale = log_scale + np.log(factor)
        yield k + 1, v, log_scale, factor


def hermite_fn(k: int, x):
    """Normalised oscillator eigenfunction ``phi_k(x)``, ``0 <= k <= 4096``.

    ``phi_k(x) = (2^k k! sqrt(pi))^(-1/2) H_k(x) exp(-x^2/2)``, evaluated by the
    normalised three-term recurrence with a running log-scale so that neither
    the Gaussian factor nor the polynomial overflows.
    """
    if not 0 <= k <= _MAX_HERMITE_INDEX:
        raise ValueError(f"index k={k} outside [0, {_MAX_HERMITE_INDEX}]")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    for j, v, log_scale, _ in _oscillator_recurrence(xa, k):
        if j == k:
            with np.errstate(under="ignore"):
                out = v * np.exp(log_scale)
            break
    return float(out[0]) if np.ndim(x) == 0 else out


def oscillator_kernel_diagonal(d: int, x):
    """``K(x, x) = sum_{k<d} phi_k(x)^2``."""
    if not 1 <= d <= _MAX_HERMITE_INDEX + 1:
        raise ValueError(f"kernel size d={d} out of range")
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    acc = np.zeros_like(xa)
    for j, v, log_scale, factor in _oscillator_recurrence(xa, d - 1):
        acc = acc / (factor * factor)
        acc = acc + v * v
        if j == d - 1:
            with np.errstate(under="ignore"):
                out = acc * np.exp(2.0 * log_scale)
            break
    return float(out[0]) if np.ndim(x) == 0 else out
