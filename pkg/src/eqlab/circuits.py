"""Gate sets, random circuits, unitary synthesis and support analysis.

Two-qubit gates act on ``targets = (a, b)`` with ``a`` the first tensor
factor of the gate matrix, so for CNOT ``a`` is the control.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path

import numpy as np

from .ensembles import as_generator

MAX_SYNTHESIS_QUBITS = 12

_S2 = 1.0 / math.sqrt(2.0)

GATE_LIBRARY: dict[str, np.ndarray] = {
    "H": np.array([[_S2, _S2], [_S2, -_S2]], dtype=complex),
    "T": np.diag([1.0, np.exp(1j * np.pi / 4)]),
    "TDG": np.diag([1.0, np.exp(-1j * np.pi / 4)]),
    "S": np.diag([1.0, 1j]),
    "SDG": np.diag([1.0, -1j]),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.diag([1.0, -1.0]).astype(complex),
    "CNOT": np.array(
        [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
    ),
    "CZ": np.diag([1.0, 1.0, 1.0, -1.0]).astype(complex),
    "SWAP": np.array(
        [[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex
    ),
}

# Not derived from anything: the design-gap constant of a gate set is unknown
# in closed form, so it is a user parameter with this placeholder default.
DEFAULT_ALPHA = 0.1


@dataclass(frozen=True)
class Gate:
    name: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        if m.shape not in ((2, 2), (4, 4)):
            raise ValueError(f"gate {self.name}: unsupported shape {m.shape}")
        if np.linalg.norm(m.conj().T @ m - np.eye(m.shape[0])) > 1e-12:
            raise ValueError(f"gate {self.name} is not unitary")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def arity(self) -> int:
        return 1 if self.matrix.shape[0] == 2 else 2


@dataclass(frozen=True)
class GateSet:
    gates: tuple[Gate, ...]
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if not any(g.arity == 2 for g in self.gates):
            raise ValueError("a gate set needs at least one two-qubit gate")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        names = [g.name for g in self.gates]
        if len(set(names)) != len(names):
            raise ValueError("gate names must be unique")

    @classmethod
    def from_names(cls, names, alpha: float = DEFAULT_ALPHA) -> "GateSet":
        try:
            return cls(tuple(Gate(n.upper(), GATE_LIBRARY[n.upper()]) for n in names), alpha)
        except KeyError as exc:
            raise ValueError(f"unknown gate {exc.args[0]!r}") from None

    def index(self, name: str) -> int:
        for i, g in enumerate(self.gates):
            if g.name == name.upper():
                return i
        raise KeyError(name)

    @property
    def arities(self) -> np.ndarray:
        return np.array([g.arity for g in self.gates])

    @property
    def fractions(self) -> tuple[Fraction, Fraction]:
        """Exact fractions ``(q1, q2)`` of one- and two-qubit gates."""
        n1 = sum(1 for g in self.gates if g.arity == 1)
        return Fraction(n1, len(self.gates)), Fraction(len(self.gates) - n1, len(self.gates))


def default_gateset(alpha: float = DEFAULT_ALPHA) -> GateSet:
    """Hadamard, T and CNOT."""
    return GateSet.from_names(["H", "T", "CNOT"], alpha)


@dataclass(frozen=True)
class QuantumCircuit:
    n_qubits: int
    applications: tuple[tuple[int, tuple[int, ...]], ...]
    gateset: GateSet

    def __post_init__(self):
        apps = tuple((int(g), tuple(int(q) for q in t)) for g, t in self.applications)
        for g, targets in apps:
            gate = self.gateset.gates[g]
            if len(targets) != gate.arity:
                raise ValueError(f"{gate.name} needs {gate.arity} targets, got {targets}")
            if len(set(targets)) != len(targets):
                raise ValueError(f"repeated target in {targets}")
            if min(targets) < 0 or max(targets) >= self.n_qubits:
                raise ValueError(f"target {targets} out of range for N={self.n_qubits}")
        object.__setattr__(self, "applications", apps)

    @property
    def size(self) -> int:
        """Number of gates ``C``."""
        return len(self.applications)

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "gates": [
                {"name": self.gateset.gates[g].name, "targets": list(t)}
                for g, t in self.applications
            ],
        }

    @classmethod
    def from_dict(cls, data: dict, gateset: GateSet | None = None) -> "QuantumCircuit":
        names = [item["name"].upper() for item in data["gates"]]
        if gateset is None:
            used = list(dict.fromkeys(names))
            if not any(GATE_LIBRARY.get(n, np.eye(2)).shape[0] == 4 for n in used):
                used.append("CNOT")
            gateset = GateSet.from_names(used)
        apps = [(gateset.index(n), tuple(item["targets"])) for n, item in zip(names, data["gates"])]
        return cls(int(data["n_qubits"]), tuple(apps), gateset)


def write_circuit_json(path, circuit: QuantumCircuit) -> None:
    Path(path).write_text(json.dumps(circuit.to_dict(), indent=2) + "\n")


def read_circuit_json(path, gateset: GateSet | None = None) -> QuantumCircuit:
    return QuantumCircuit.from_dict(json.loads(Path(path).read_text()), gateset)


def sample_random_circuit(n_qubits: int, size: int, gateset: GateSet, rng) -> QuantumCircuit:
    """Draw ``size`` gates uniformly from ``gateset``.

    A one-qubit gate lands on a uniform qubit; a two-qubit gate on a uniform
    ordered pair of distinct qubits (so its support is uniform over the
    unordered pairs).
    """
    if n_qubits < 2:
        raise ValueError("random circuits need N >= 2")
    if size < 0:
        raise ValueError("circuit size must be nonnegative")
    gen = as_generator(rng)
    kinds = gen.integers(len(gateset.gates), size=size)
    first = gen.integers(n_qubits, size=size)
    offset = gen.integers(1, n_qubits, size=size)
    second = (first + offset) % n_qubits
    arity = gateset.arities[kinds]
    apps = tuple(
        (int(k), (int(a),) if r == 1 else (int(a), int(b)))
        for k, a, b, r in zip(kinds, first, second, arity)
    )
    return QuantumCircuit(n_qubits, apps, gateset)


def circuit_support(circuit: QuantumCircuit) -> frozenset[int]:
    return frozenset(q for _, targets in circuit.applications for q in targets)


def no_touch_probability(n: int, m: int, size: int, gateset: GateSet, form: str = "exact") -> float:
    """Probability that a random circuit leaves ``m`` fixed qubits untouched.

    ``paper_bound`` is ``((n-m)/n)^(2C)``; ``exact`` follows the sampling
    process above. The bound is not a lower bound for small ``n`` (for
    ``n=2, m=1`` with only two-qubit gates the exact value is 0).
    """
    if not 1 <= m < n:
        raise ValueError("need 1 <= M < N")
    if form == "paper_bound":
        return float(Fraction(n - m, n) ** (2 * size))
    if form == "exact":
        q1, q2 = gateset.fractions
        per_gate = q1 * Fraction(n - m, n) + q2 * Fraction((n - m) * (n - m - 1), n * (n - 1))
        return float(per_gate**size)
    raise ValueError(f"unknown form {form!r}")


# Synthesis -----------------------------------------------------------------


def _bit_views(x: np.ndarray, targets, n_qubits: int) -> list[np.ndarray]:
    """Views of ``x`` (shape ``(2^N, R)``) indexed by the target bits, gate order."""
    if len(targets) == 1:
        q = targets[0]
        v = x.reshape(2**q, 2, -1)
        return [v[:, 0], v[:, 1]]
    a, b = targets
    lo, hi = min(a, b), max(a, b)
    v = x.reshape(2**lo, 2, 2 ** (hi - lo - 1), 2, -1)
    views = []
    for j in range(4):
        ba, bb = j >> 1, j & 1
        views.append(v[:, ba, :, bb] if a == lo else v[:, bb, :, ba])
    return views


@lru_cache(maxsize=256)
def _gate_kind(matrix_bytes: bytes, dim: int) -> str:
    m = np.frombuffer(matrix_bytes, dtype=complex).reshape(dim, dim)
    if not np.any(m - np.diag(np.diag(m))):
        return "diagonal"
    nz = m != 0
    if np.all(nz.sum(axis=1) == 1) and np.allclose(np.abs(m[nz]), 1.0, rtol=0, atol=0):
        return "permutation"
    if dim == 2 and m[0, 0] == m[0, 1] == m[1, 0] == -m[1, 1]:
        return "butterfly"
    return "general"


def _apply_gate_inplace(x: np.ndarray, matrix: np.ndarray, targets, n_qubits: int) -> None:
    views = _bit_views(x, targets, n_qubits)
    k = len(views)
    m = matrix
    kind = _gate_kind(m.tobytes(), k)
    if kind == "diagonal":
        for i in range(k):
            if m[i, i] != 1:
                np.multiply(views[i], m[i, i], out=views[i])
        return
    if kind == "butterfly":
        # Hadamard pattern: (v0, v1) -> s (v0 + v1, v0 - v1)
        v0, v1 = views
        tmp = v0 + v1
        np.subtract(v0, v1, out=v1)
        np.multiply(tmp, m[0, 0], out=v0)
        np.multiply(v1, m[0, 0], out=v1)
        return
    nz = m != 0
    if kind == "permutation":
        # phased permutation (X, Y, CNOT, SWAP, ...): move slices
        src = [int(np.flatnonzero(nz[i])[0]) for i in range(k)]
        moved = {j for i, j in enumerate(src) if i != j}
        saved = {j: views[j].copy() for j in moved}
        for i in range(k):
            c = m[i, src[i]]
            if src[i] != i:
                np.multiply(saved[src[i]], c, out=views[i]) if c != 1 else np.copyto(views[i], saved[src[i]])
            elif c != 1:
                np.multiply(views[i], c, out=views[i])
        return
    new = []
    for i in range(k):
        acc = None
        for j in range(k):
            if nz[i, j]:
                if acc is None:
                    acc = views[j] * m[i, j]
                else:
                    acc += views[j] * m[i, j]
        new.append(acc)
    for i in range(k):
        if new[i] is None:
            views[i][...] = 0
        else:
            views[i][...] = new[i]


def apply_gate(states: np.ndarray, matrix: np.ndarray, targets, n_qubits: int) -> np.ndarray:
    """Apply a 1- or 2-qubit gate to the leading ``2^N`` axis of ``states``.

    Works on strided views of the target bits, so no axis transposition or
    embedded ``2^N`` matrix is formed. Returns a new array.
    """
    out = np.array(states, dtype=complex, copy=True, order="C")
    _apply_gate_inplace(out.reshape(2**n_qubits, -1), np.asarray(matrix), targets, n_qubits)
    return out


@lru_cache(maxsize=4096)
def _embedded(matrix_bytes: bytes, dim: int, targets: tuple[int, ...], n_qubits: int) -> np.ndarray:
    m = np.frombuffer(matrix_bytes, dtype=complex).reshape(dim, dim)
    return apply_gate(np.eye(2**n_qubits, dtype=complex), m, targets, n_qubits)


def apply_circuit(
    circuit: QuantumCircuit, states: np.ndarray, adjoint: bool = False, overwrite: bool = False
) -> np.ndarray:
    """Apply ``U`` (or ``U^dagger``) gate by gate, never forming ``U``.

    With ``overwrite`` a C-contiguous complex input is updated in place.
    """
    if overwrite and states.dtype == complex and states.flags.c_contiguous:
        out = states
    else:
        out = np.array(states, dtype=complex, copy=True, order="C")
    flat = out.reshape(2**circuit.n_qubits, -1)
    apps = circuit.applications
    gates = circuit.gateset.gates
    for g, targets in (reversed(apps) if adjoint else apps):
        m = gates[g].matrix
        _apply_gate_inplace(flat, m.conj().T if adjoint else m, targets, circuit.n_qubits)
    return out


def circuit_unitary(circuit: QuantumCircuit) -> np.ndarray:
    """Dense unitary; later gates multiply on the left."""
    n = circuit.n_qubits
    if n > MAX_SYNTHESIS_QUBITS:
        raise ValueError(f"dense synthesis limited to N <= {MAX_SYNTHESIS_QUBITS}, got {n}")
    d = 2**n
    if n <= 6:
        u = np.eye(d, dtype=complex)
        for g, targets in circuit.applications:
            m = circuit.gateset.gates[g].matrix
            u = _embedded(m.tobytes(), m.shape[0], targets, n) @ u
        return u
    return apply_circuit(circuit, np.eye(d, dtype=complex))


def inverse_circuit(circuit: QuantumCircuit) -> QuantumCircuit:
    """Gate-wise inverse in reverse order, over an extended gate set."""
    gates = list(circuit.gateset.gates)
    index = {}
    for i, g in enumerate(circuit.gateset.gates):
        adj = g.matrix.conj().T
        for j, other in enumerate(gates):
            if other.matrix.shape == adj.shape and np.allclose(other.matrix, adj, atol=1e-14):
                index[i] = j
                break
        else:
            gates.append(Gate(g.name + "_DG", adj))
            index[i] = len(gates) - 1
    gs = GateSet(tuple(gates), circuit.gateset.alpha)
    apps = tuple((index[g], t) for g, t in reversed(circuit.applications))
    return QuantumCircuit(circuit.n_qubits, apps, gs)


def free_fermion_model(frequencies, diagonalizer=None, tolerance=None):
    """``H = U (sum_k w_k n_k) U^dagger`` with mode ``k`` on qubit ``k``."""
    from .dynamics import DiagonalizerSource, HamiltonianModel
    from .ensembles import occupation_energies

    freqs = np.asarray(frequencies, dtype=float)
    source = diagonalizer if diagonalizer is not None else DiagonalizerSource.identity()
    return HamiltonianModel(occupation_energies(freqs), source, tolerance=tolerance)
