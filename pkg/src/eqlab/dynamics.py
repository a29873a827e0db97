"""Hamiltonian assembly, exact evolution in the eigenbasis, and equilibration traces.

Evolution convention: ``rho(t) = exp(-itH) rho exp(itH)``. Every routine
works with the eigenbasis coefficients ``U^dagger psi`` and phases on the
energies; no matrix exponential is ever formed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import bounds
from .circuits import MAX_SYNTHESIS_QUBITS, QuantumCircuit, apply_circuit, circuit_unitary
from .ensembles import RngStream, Spectrum, as_generator, sample_haar, spectrum_from_energies
from .errors import NumericalContractError
from .numerics import (
    BipartitionLayout,
    hermiticity_defect,
    partial_trace,
    reduced_from_vector,
    split_vector,
    trace_norm,
)


class DensityMatrix:
    """A validated state. Pure states keep their vector and build the matrix on demand."""

    def __init__(self, matrix=None, vector=None):
        if matrix is None and vector is None:
            raise ValueError("need a matrix or a vector")
        self.vector = vector
        if matrix is not None:
            self.__dict__["matrix"] = matrix

    @cached_property
    def matrix(self) -> np.ndarray:
        return np.outer(self.vector, self.vector.conj())

    @classmethod
    def from_matrix(cls, matrix, check: bool = True) -> "DensityMatrix":
        m = np.asarray(matrix, dtype=complex)
        if check:
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise NumericalContractError(f"density matrix must be square, got {m.shape}")
            if hermiticity_defect(m) > 1e-10:
                raise NumericalContractError("density matrix is not Hermitian")
            tr = np.trace(m).real
            if abs(tr - 1.0) > 1e-10:
                raise NumericalContractError(f"density matrix has trace {float(tr):.12g}")
            lo = np.linalg.eigvalsh(0.5 * (m + m.conj().T))[0]
            if lo < -1e-9:
                raise NumericalContractError(f"density matrix has eigenvalue {lo:.3e}")
        return cls(m)

    @classmethod
    def pure(cls, vector) -> "DensityMatrix":
        v = np.asarray(vector, dtype=complex).ravel()
        nrm = np.linalg.norm(v)
        if abs(nrm - 1.0) > 1e-10:
            raise NumericalContractError(f"state vector has norm {float(nrm):.12g}")
        return cls(vector=v)

    @classmethod
    def basis(cls, n_qubits: int, index: int = 0) -> "DensityMatrix":
        v = np.zeros(2**n_qubits, dtype=complex)
        v[index] = 1.0
        return cls.pure(v)

    @property
    def dim(self) -> int:
        return self.vector.size if self.vector is not None else self.matrix.shape[0]

    @property
    def is_pure(self) -> bool:
        return self.vector is not None

    def purity(self) -> float:
        if self.is_pure:
            return 1.0
        return float(np.real(np.vdot(self.matrix, self.matrix)))


def product_state(single_qubit_states) -> DensityMatrix:
    """Pure product state from a list of 2-vectors, qubit 0 first."""
    v = np.ones(1, dtype=complex)
    for s in single_qubit_states:
        s = np.asarray(s, dtype=complex)
        v = np.kron(v, s / np.linalg.norm(s))
    return DensityMatrix.pure(v)


def random_pure_state(n_qubits: int, rng) -> DensityMatrix:
    gen = as_generator(rng)
    d = 2**n_qubits
    v = gen.standard_normal(d) + 1j * gen.standard_normal(d)
    return DensityMatrix.pure(v / np.linalg.norm(v))


def random_mixed_state(n_qubits: int, rng, rank: int | None = None) -> DensityMatrix:
    gen = as_generator(rng)
    d = 2**n_qubits
    k = d if rank is None else rank
    g = gen.standard_normal((d, k)) + 1j * gen.standard_normal((d, k))
    m = g @ g.conj().T
    return DensityMatrix.from_matrix(m / np.trace(m).real)


@dataclass(frozen=True)
class DiagonalizerSource:
    """Where the eigenbasis ``U`` comes from.

    ``kind`` is one of ``haar``, ``circuit``, ``identity``, ``explicit``.
    """

    kind: str
    rng: RngStream | None = None
    circuit: QuantumCircuit | None = None
    unitary: np.ndarray | None = None

    @classmethod
    def haar(cls, rng: RngStream) -> "DiagonalizerSource":
        return cls("haar", rng=rng)

    @classmethod
    def from_circuit(cls, circuit: QuantumCircuit) -> "DiagonalizerSource":
        return cls("circuit", circuit=circuit)

    @classmethod
    def identity(cls) -> "DiagonalizerSource":
        return cls("identity")

    @classmethod
    def explicit(cls, unitary) -> "DiagonalizerSource":
        u = np.asarray(unitary, dtype=complex)
        if np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]), 2) > 1e-10:
            raise NumericalContractError("explicit diagonalizer is not unitary")
        return cls("explicit", unitary=u)

    def dense(self, d: int) -> np.ndarray:
        if self.kind == "haar":
            return sample_haar(d, self.rng)
        if self.kind == "circuit":
            if 2**self.circuit.n_qubits != d:
                raise ValueError("circuit width does not match the spectrum")
            return circuit_unitary(self.circuit)
        if self.kind == "identity":
            return np.eye(d, dtype=complex)
        if self.kind == "explicit":
            if self.unitary.shape != (d, d):
                raise ValueError("explicit unitary does not match the spectrum")
            return self.unitary
        raise ValueError(f"unknown diagonalizer kind {self.kind!r}")


class HamiltonianModel:
    """``H = U diag(E) U^dagger``; ``energies[n]`` belongs to ``U|n>``.

    ``U`` is built lazily. Circuit and identity diagonalizers can also act on
    state vectors matrix-free, which is what allows ``N > 12`` for those.
    """

    def __init__(self, energies, diagonalizer: DiagonalizerSource, tolerance=None):
        self.energies = np.asarray(energies, dtype=float).ravel()
        d = self.energies.size
        if d & (d - 1) or d < 2:
            raise ValueError(f"number of energies ({d}) must be a power of two >= 2")
        self.n_qubits = d.bit_length() - 1
        self.diagonalizer = diagonalizer
        self.spectrum: Spectrum = spectrum_from_energies(self.energies, tolerance)
        order = np.argsort(self.energies, kind="stable")
        labels = np.empty(d, dtype=np.int64)
        labels[order] = self.spectrum.labels
        self.labels = labels
        self._phase_cache = {}

    def with_diagonalizer(self, diagonalizer: DiagonalizerSource) -> "HamiltonianModel":
        """Same energies and clustering, new eigenbasis; phase tables are shared."""
        other = object.__new__(HamiltonianModel)
        other.energies = self.energies
        other.n_qubits = self.n_qubits
        other.diagonalizer = diagonalizer
        other.spectrum = self.spectrum
        other.labels = self.labels
        other._phase_cache = self._phase_cache
        return other

    @property
    def d(self) -> int:
        return self.energies.size

    @cached_property
    def u(self) -> np.ndarray:
        if self.n_qubits > MAX_SYNTHESIS_QUBITS:
            raise ValueError(f"dense models limited to N <= {MAX_SYNTHESIS_QUBITS}")
        return self.diagonalizer.dense(self.d)

    @cached_property
    def h(self) -> np.ndarray:
        u = self.u
        return (u * self.energies) @ u.conj().T

    @cached_property
    def same_cluster(self) -> np.ndarray:
        return self.labels[:, None] == self.labels[None, :]

    def to_eigenbasis(self, states: np.ndarray) -> np.ndarray:
        """``U^dagger`` applied to the leading axis."""
        kind = self.diagonalizer.kind
        if kind == "identity":
            return np.asarray(states, dtype=complex)
        if kind == "circuit" and self.n_qubits > 6:
            return apply_circuit(self.diagonalizer.circuit, states, adjoint=True)
        return self.u.conj().T @ states

    def from_eigenbasis(self, coeffs: np.ndarray, overwrite: bool = False) -> np.ndarray:
        """``U`` applied to the leading axis; ``overwrite`` lets circuits reuse ``coeffs``."""
        kind = self.diagonalizer.kind
        if kind == "identity":
            return np.asarray(coeffs, dtype=complex)
        if kind == "circuit" and self.n_qubits > 6:
            return apply_circuit(self.diagonalizer.circuit, coeffs, overwrite=overwrite)
        return self.u @ coeffs

    def phases(self, times) -> np.ndarray:
        """``exp(-i t E_n)`` with shape ``(d, len(times))``; the latest table is cached."""
        times = np.atleast_1d(np.asarray(times, dtype=float))
        key = times.tobytes()
        table = self._phase_cache.get(key)
        if table is None:
            # column-major so that a single time's phases are contiguous
            table = np.asfortranarray(np.exp(-1j * np.multiply.outer(self.energies, times)))
            table.setflags(write=False)
            self._phase_cache.clear()
            self._phase_cache[key] = table
        return table


def _check(model: HamiltonianModel, rho0: DensityMatrix, layout: BipartitionLayout):
    if rho0.dim != model.d or layout.d != model.d:
        raise ValueError(
            f"dimension mismatch: model d={model.d}, state d={rho0.dim}, layout d={layout.d}"
        )


def _eigen_state(model, rho0):
    if rho0.is_pure:
        return model.to_eigenbasis(rho0.vector)
    return model.to_eigenbasis(model.to_eigenbasis(rho0.matrix).conj().T).conj().T


def evolve_full(model: HamiltonianModel, rho0: DensityMatrix, t: float) -> np.ndarray:
    """Full-system ``rho(t)``."""
    if rho0.is_pure:
        psi = model.from_eigenbasis(model.phases(t)[:, 0] * model.to_eigenbasis(rho0.vector))
        return np.outer(psi, psi.conj())
    r = _eigen_state(model, rho0)
    ph = model.phases(t)[:, 0]
    rt = r * np.outer(ph, ph.conj())
    u = model.u
    return u @ rt @ u.conj().T


def evolve_reduced(model, rho0: DensityMatrix, layout: BipartitionLayout, t) -> np.ndarray:
    """``rho_S(t)``; for an array of times returns a stack ``(T, d_S, d_S)``."""
    _check(model, rho0, layout)
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if rho0.is_pure:
        c = model.to_eigenbasis(rho0.vector)
        ph = model.phases(times)
        if model.n_qubits > MAX_SYNTHESIS_QUBITS:
            # one time at a time keeps the working set in cache
            rows = np.ascontiguousarray(ph.T)
            out = np.stack([reduced_from_vector(model.from_eigenbasis(row * c, overwrite=True), layout) for row in rows])
        else:
            out = reduced_from_vector(model.from_eigenbasis(ph * c[:, None]).T, layout)
    else:
        r = _eigen_state(model, rho0)
        u = model.u
        out = np.empty((times.size, layout.d_s, layout.d_s), dtype=complex)
        for i, ph in enumerate(model.phases(times).T):
            rt = r * np.outer(ph, ph.conj())
            out[i] = partial_trace(u @ rt @ u.conj().T, layout)
    return out[0] if scalar else out


def dephase(model: HamiltonianModel, rho: np.ndarray) -> np.ndarray:
    """Delete coherences between distinct energy clusters (full system)."""
    u = model.u
    r = u.conj().T @ np.asarray(rho, dtype=complex) @ u
    return u @ (r * model.same_cluster) @ u.conj().T


def time_averaged_state(model, rho0: DensityMatrix, layout: BipartitionLayout) -> np.ndarray:
    """``tr_E`` of the dephased state, i.e. the infinite-time average of ``rho_S(t)``."""
    _check(model, rho0, layout)
    r = _eigen_state(model, rho0)
    if rho0.is_pure:
        r = np.outer(r, r.conj())
    u = model.u
    return partial_trace(u @ (r * model.same_cluster) @ u.conj().T, layout)


def omega_map(model, rho0: DensityMatrix, layout: BipartitionLayout, t: float) -> np.ndarray:
    """``rho_S(t) - bar rho_S`` as the explicit double sum over eigenstate pairs.

    ``sum_{E_n != E_m} exp(-it(E_n - E_m)) <n|R|m> tr_E |Psi_n><Psi_m|``
    with ``R = U^dagger rho U``. Kept independent of :func:`evolve_reduced`
    so the two can be cross-checked.
    """
    _check(model, rho0, layout)
    u = model.u
    r = u.conj().T @ rho0.matrix @ u
    e = model.energies
    w = r * np.exp(-1j * t * (e[:, None] - e[None, :])) * ~model.same_cluster
    blocks = split_vector(u.T, layout)  # blocks[n] = Psi_n as (d_S, d_E)
    return np.einsum("nse,nm,mte->st", blocks, w, blocks.conj())


@dataclass
class EquilibrationTrace:
    times: np.ndarray
    distances: np.ndarray
    mu_abs: np.ndarray
    bound_r1: np.ndarray
    bound_r3: np.ndarray | None = None

    def rows(self):
        r3 = self.bound_r3 if self.bound_r3 is not None else [None] * len(self.times)
        yield from zip(self.times, self.distances, self.mu_abs, self.bound_r1, r3)

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "dist", "mu_abs", "bound_r1", "bound_r3"])
        for row in self.rows():
            writer.writerow(["" if v is None else format_number(v) for v in row])
        return buf.getvalue()


def format_number(x) -> str:
    """Decimal text with 12 significant digits."""
    x = float(x)
    if x == 0.0:
        return "0"
    return f"{x:.12g}"


def distance_series(model, rho0, layout, times) -> np.ndarray:
    """``||rho_S(t) - bar rho_S||_1`` for each time."""
    rs = evolve_reduced(model, rho0, layout, np.atleast_1d(times))
    bar = time_averaged_state(model, rho0, layout)
    return np.clip(trace_norm(rs - bar, hermitian=True), 0.0, 2.0)


def equilibration_trace(model, rho0, layout, times, epsilon: float, r3_params=None) -> EquilibrationTrace:
    """Distances, ``|mu(t)|`` and the R1 (and optionally R3) bounds on a time grid.

    ``r3_params`` is ``(C, alpha, form)`` with ``form`` either ``main_text`` or
    ``appendix``.
    """
    times = np.atleast_1d(np.asarray(times, dtype=float))
    spec = model.spectrum
    dist = distance_series(model, rho0, layout, times)
    mu = np.minimum(np.abs(bounds.mu_tilde(spec, times)), 1.0)
    b1 = bounds.result1_bound(mu, spec.g, spec.d, layout.d_s, layout.d_e, epsilon)
    b3 = None
    if r3_params is not None:
        c, alpha, form = r3_params
        b3 = bounds.result3_bound(
            mu, spec.g, spec.d, layout.d_s, layout.d_e, epsilon, c, layout.n_qubits, alpha, form
        )
    return EquilibrationTrace(times, dist, mu, np.atleast_1d(b1), None if b3 is None else np.atleast_1d(b3))


def time_average_distance(model, rho0, layout, T: float, n_samples: int, rng) -> tuple[float, float]:
    """Monte Carlo estimate of the time-averaged distance on ``[0, T]`` with its standard error."""
    if T <= 0:
        raise ValueError("T must be positive")
    if n_samples < 100:
        raise ValueError("need at least 100 time samples")
    times = as_generator(rng).uniform(0.0, T, size=n_samples)
    dist = distance_series(model, rho0, layout, times)
    return float(math.fsum(dist) / n_samples), float(np.std(dist, ddof=1) / math.sqrt(n_samples))
