"""Fourth-moment machinery for Haar (and circuit) averaged equilibration.

Permutations of four tensor factors are written in one-line notation, either
as strings like ``"2143"`` or as 0-based tuples. The operator ``V_pi`` acts as
``<n_1 n_2 n_3 n_4| V_pi = <n_pi(1) n_pi(2) n_pi(3) n_pi(4)|``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .bounds import mu_tilde
from .circuits import GateSet, circuit_unitary, sample_random_circuit
from .dynamics import DensityMatrix
from .ensembles import RngStream, Spectrum, sample_haar, spectrum_from_energies
from .errors import NumericalContractError
from .numerics import BipartitionLayout, reduced_from_vector, split_vector

Perm = tuple[int, int, int, int]

PERMUTATIONS: tuple[Perm, ...] = tuple(itertools.permutations(range(4)))


def parse_perm(p) -> Perm:
    if isinstance(p, str):
        perm = tuple(int(ch) - 1 for ch in p)
    else:
        perm = tuple(int(i) for i in p)
    if sorted(perm) != [0, 1, 2, 3]:
        raise ValueError(f"not a permutation of four elements: {p!r}")
    return perm


def perm_name(p) -> str:
    return "".join(str(i + 1) for i in parse_perm(p))


def compose(p, q) -> Perm:
    """``(p o q)(i) = p(q(i))``."""
    p, q = parse_perm(p), parse_perm(q)
    return tuple(p[q[i]] for i in range(4))


def inverse(p) -> Perm:
    p = parse_perm(p)
    out = [0] * 4
    for i, pi in enumerate(p):
        out[pi] = i
    return tuple(out)


def cycles(p) -> list[list[int]]:
    p = parse_perm(p)
    seen, out = set(), []
    for start in range(4):
        if start in seen:
            continue
        cyc, j = [], start
        while j not in seen:
            seen.add(j)
            cyc.append(j)
            j = p[j]
        out.append(cyc)
    return out


def cycle_count(p) -> int:
    return len(cycles(p))


def permutation_trace_product(pi, sigma, d: int) -> float:
    """``tr(V_pi V_sigma) = d^(number of cycles of pi o sigma)``."""
    return float(d) ** cycle_count(compose(pi, sigma))


def permutation_operator(pi, d: int) -> np.ndarray:
    """Dense ``d^4 x d^4`` matrix of ``V_pi``; meant for small ``d``."""
    p = parse_perm(pi)
    idx = np.arange(d**4)
    digits = np.stack(np.unravel_index(idx, (d,) * 4))  # digits[i] = n_{i+1}
    cols = np.ravel_multi_index(tuple(digits[p[i]] for i in range(4)), (d,) * 4)
    v = np.zeros((d**4, d**4))
    v[idx, cols] = 1.0
    return v


# c coefficients ------------------------------------------------------------

COEFFICIENT_CLASSES: dict[int, tuple[str, ...]] = {
    1: ("1234", "2134"),
    2: ("1243", "2143"),
    3: ("1423", "1342", "2413", "4123", "4213", "2341", "3142", "3241"),
    4: ("1324", "1432", "2314", "3124", "3214", "2431", "4132", "4231"),
    5: ("3412", "4321", "3421", "4312"),
}
_CLASS_OF = {parse_perm(p): k for k, ps in COEFFICIENT_CLASSES.items() for p in ps}

# tr(M0 V_sigma) targets, in the order checked by MomentCoefficients.verify
TRACE_TARGET_PERMS = ("1234", "1243", "1342", "1324", "4312")


@dataclass(frozen=True)
class MomentCoefficients:
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    d: int
    d_e: int
    beta: float

    def coefficient(self, pi) -> float:
        return getattr(self, f"c{_CLASS_OF[parse_perm(pi)]}")

    def trace_targets(self) -> dict[str, float]:
        d, de = self.d, self.d_e
        return dict(zip(TRACE_TARGET_PERMS, (d * de, d * d / de, d / de, de, self.beta)))

    def reconstructed_traces(self) -> dict[str, float]:
        """``tr(M0 V_sigma)`` for ``M0 = sum_pi c_pi V_pi``."""
        out = {}
        for name in TRACE_TARGET_PERMS:
            terms = [self.coefficient(p) * permutation_trace_product(p, name, self.d) for p in PERMUTATIONS]
            out[name] = math.fsum(terms)
        return out

    def verify(self) -> float:
        """Largest relative deviation of the reconstructed traces from their targets."""
        got, want = self.reconstructed_traces(), self.trace_targets()
        return max(abs(got[k] - want[k]) / abs(want[k]) for k in want if want[k] != 0)


def c_coefficients(d: int, d_e: int, beta: float) -> MomentCoefficients:
    """Closed-form coefficients of the Haar-averaged ``M`` in the permutation basis.

    Outside ``d > d_E > 0`` a warning is issued and the values are still returned.
    """
    if not d > d_e > 0:
        warnings.warn(f"c coefficients derived for d > d_E > 0, got d={d}, d_E={d_e}", stacklevel=2)
    d, de, b = float(d), float(d_e), float(beta)
    den = (d - 1) * d**2 * (d + 1) * (d + 2) * (d + 3) * de
    c1 = (d * (d * (d + 4) + 2) * (de**2 - 1) - 2 * de**2 + 2 * de * b) / den
    c2 = (d * (d**3 + 4 * d**2 - (d + 4) * de**2 + 2 * d - 2) - 2 * de**2 + 2 * de * b) / den
    c3 = (-(d + 1) * de * b + d + de**2) / den
    c4 = (-(d + 1) * de * b + d + de**2) / den
    c5 = (d * (de * b - 1) + de * (b - de)) / (d**2 * (d**3 + 3 * d**2 - d - 3) * de)
    return MomentCoefficients(c1, c2, c3, c4, c5, int(d), int(d_e), float(beta))


def beta_purity(psi: DensityMatrix, layout: BipartitionLayout) -> float:
    """Purity ``tr(rho_S^2)`` of the reduced state of a pure state."""
    if psi.is_pure:
        v = psi.vector
    else:
        if psi.purity() < 1.0 - 1e-9:
            raise NumericalContractError(f"state is mixed (purity {psi.purity():.6f})")
        w, vecs = np.linalg.eigh(psi.matrix)
        v = vecs[:, -1]
    rs = reduced_from_vector(v, layout)
    return float(np.real(np.vdot(rs, rs)))


# f functions ---------------------------------------------------------------

F_NAMES = ("2143", "2413", "3142", "3412", "4321", "4312", "3421")


def f_functions(spec: Spectrum, t: float) -> dict[str, complex]:
    """The seven nonvanishing constrained phase sums, in ``O(clusters)``.

    With ``z(t) = sum_j m_j exp(i t e_j)`` and ``y_j = z - m_j exp(i t e_j)``
    (the sum over all levels outside cluster ``j``):

    * ``2143``: ``d^2 - w``
    * ``2413``, ``3142``: ``sum_j m_j |y_j|^2``
    * ``3412``: ``(|z|^2 - w)^2``
    * ``4321``: ``|z(2t)|^2 - w``
    * ``4312``: ``sum_j m_j exp(-2 i t e_j) y_j^2``; ``3421`` is its conjugate.
    """
    m = spec.multiplicities.astype(float)
    u = np.exp(1j * t * spec.levels)
    z = math.fsum((m * u).real) + 1j * math.fsum((m * u).imag)
    z2 = np.sum(m * u * u)
    w = float(spec.w)
    d = float(spec.d)
    y = z - m * u
    chain = float(np.sum(m * np.abs(y) ** 2))
    f4312 = complex(np.sum(m * np.conj(u) ** 2 * y * y))
    return {
        "2143": complex(d * d - w),
        "2413": complex(chain),
        "3142": complex(chain),
        "3412": complex((abs(z) ** 2 - w) ** 2),
        "4321": complex(abs(z2) ** 2 - w),
        "4312": f4312,
        "3421": f4312.conjugate(),
    }


def fourth_moment_prediction(spec: Spectrum, d_e: int, beta: float, t: float) -> tuple[float, float]:
    """Haar average of ``tr_S(Omega_t[psi]^2)`` and its upper bound.

    Returns ``(predicted, bound)`` with ``bound = |mu|^4 + g^2/d^2 + 7/d_E``.
    """
    d = spec.d
    if not d > d_e:
        raise ValueError(f"need d > d_E, got d={d}, d_E={d_e}")
    c = c_coefficients(d, d_e, beta)
    f = f_functions(spec, t)
    pred = (
        c.c2 * f["2143"]
        + c.c3 * (f["2413"] + f["3142"])
        + c.c5 * (f["3412"] + f["4321"] + f["4312"] + f["3421"])
    )
    mu = abs(mu_tilde(spec, t))
    bound = mu**4 + (spec.g / d) ** 2 + 7.0 / d_e
    return float(pred.real), float(bound)


# Monte Carlo ---------------------------------------------------------------


@dataclass(frozen=True)
class CircuitSampler:
    size: int
    gateset: GateSet

    @property
    def label(self) -> str:
        return f"circuit({self.size})"


def _sample_unitary(sampler, d: int, n_qubits: int, stream: RngStream) -> np.ndarray:
    if sampler == "haar":
        return sample_haar(d, stream)
    circ = sample_random_circuit(n_qubits, sampler.size, sampler.gateset, stream)
    return circuit_unitary(circ)


def omega_purity(u: np.ndarray, energies, labels, psi: np.ndarray, layout, t: float) -> float:
    """``tr_S(Omega_t[psi]^2) = ||rho_S(t) - bar rho_S||_2^2`` for one diagonalizer."""
    c = u.conj().T @ psi
    e = np.asarray(energies)
    w = np.outer(c, c.conj()) * np.exp(-1j * t * (e[:, None] - e[None, :]))
    w[labels[:, None] == labels[None, :]] = 0.0
    # tr_E(U W U^dagger) via the (d_S, d_E) blocks of the eigenvectors
    blocks = split_vector(u.T, layout)
    om = np.einsum("nse,nm,mte->st", blocks, w, blocks.conj())
    return float(np.real(np.vdot(om, om)))


def _labels_for(energies, tolerance=None):
    spec = spectrum_from_energies(energies, tolerance)
    order = np.argsort(np.asarray(energies, dtype=float), kind="stable")
    labels = np.empty(spec.d, dtype=np.int64)
    labels[order] = spec.labels
    return labels


def monte_carlo_fourth_moment(
    energies,
    layout: BipartitionLayout,
    psi: DensityMatrix,
    t: float,
    n: int,
    sampler,
    rng: RngStream,
    jobs: int = 1,
    tolerance=None,
) -> tuple[float, float]:
    """Average of ``||rho_S(t) - bar rho_S||_2^2`` over sampled diagonalizers.

    ``sampler`` is ``"haar"`` or a :class:`CircuitSampler`. Sample ``i`` draws
    from ``rng.child(i)`` and the reduction uses ``math.fsum`` in sample order,
    so the result does not depend on ``jobs``.
    """
    if layout.n_qubits > 8:
        raise ValueError("Monte Carlo fourth moments limited to N <= 8")
    if not psi.is_pure:
        raise ValueError("psi must be a pure state")
    energies = np.asarray(energies, dtype=float)
    labels = _labels_for(energies, tolerance)
    d = layout.d

    def one(i):
        u = _sample_unitary(sampler, d, layout.n_qubits, rng.child(i))
        return omega_purity(u, energies, labels, psi.vector, layout, t)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vals = list(pool.map(one, range(n), chunksize=64))
    else:
        vals = [one(i) for i in range(n)]
    vals = np.asarray(vals)
    mean = math.fsum(vals) / n
    stderr = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(mean), stderr


@dataclass
class MomentReport:
    t: float
    predicted: float
    e17_bound: float
    mc_estimate: float
    mc_stderr: float
    n_samples: int
    sampler: str

    @property
    def z_score(self) -> float:
        if self.mc_stderr == 0.0:
            return 0.0 if self.mc_estimate == self.predicted else math.inf
        return abs(self.mc_estimate - self.predicted) / self.mc_stderr

    def to_dict(self) -> dict:
        return asdict(self)


# The M operator ------------------------------------------------------------


def _joint_index(layout: BipartitionLayout) -> np.ndarray:
    """``idx[s, e]`` = basis index of subsystem state ``s`` times environment state ``e``."""
    n = layout.n_qubits
    out = np.zeros((layout.d_s, layout.d_e), dtype=np.int64)
    for qubits, axis in ((layout.subsystem, 0), (layout.environment, 1)):
        k = len(qubits)
        vals = np.arange(2**k)
        contrib = np.zeros(2**k, dtype=np.int64)
        for j, q in enumerate(qubits):
            contrib += ((vals >> (k - 1 - j)) & 1) << (n - 1 - q)
        out += contrib[:, None] if axis == 0 else contrib[None, :]
    return out


def m_environment_factor(layout: BipartitionLayout) -> np.ndarray:
    """``X = sum |s e><s' e| (x) |s' e'><s e'|`` on two copies of the space (``d^2 x d^2``)."""
    ds, de, d = layout.d_s, layout.d_e, layout.d
    idx = _joint_index(layout)
    x = np.zeros((d * d, d * d))
    for s, e, s2, e2 in itertools.product(range(ds), range(de), range(ds), range(de)):
        x[idx[s, e] * d + idx[s2, e2], idx[s2, e] * d + idx[s, e2]] += 1.0
    return x


def m_matrix(layout: BipartitionLayout, psi: DensityMatrix) -> np.ndarray:
    """Dense ``M = psi (x) psi (x) X`` (``d^4 x d^4``); only for ``N <= 2``."""
    if layout.n_qubits > 2:
        raise ValueError("dense M limited to N <= 2 (use m_matrix_norm_check for N <= 4)")
    p = psi.matrix
    return np.kron(np.kron(p, p), m_environment_factor(layout))


def m_matrix_norm_check(layout: BipartitionLayout, psi: DensityMatrix) -> float:
    """Frobenius norm of ``M`` for ``N <= 4``.

    ``M`` is a Kronecker product, so its norm is the product of the factor
    norms; for ``N <= 2`` the full matrix is formed instead. The value is
    ``d`` for any pure ``psi``.
    """
    if layout.n_qubits > 4:
        raise ValueError("M norm check limited to N <= 4")
    if layout.n_qubits <= 2:
        return float(np.linalg.norm(m_matrix(layout, psi)))
    p = psi.matrix
    return float(np.linalg.norm(p) ** 2 * np.linalg.norm(m_environment_factor(layout)))


# Design defect -------------------------------------------------------------


def _perm_inner_with_product(pi, factors) -> complex:
    """``tr(V_pi^dagger (y_1 (x) y_2 (x) y_3 (x) y_4))`` as a product of cycle traces."""
    out = 1.0 + 0j
    for cyc in cycles(pi):
        prod = factors[cyc[0]]
        for j in cyc[1:]:
            prod = prod @ factors[j]
        out *= np.trace(prod)
    return out


def _twirl_coefficients(d: int, probe) -> np.ndarray:
    gram = np.array(
        [[float(d) ** cycle_count(compose(inverse(s), p)) for p in PERMUTATIONS] for s in PERMUTATIONS]
    )
    b = np.array([_perm_inner_with_product(s, probe) for s in PERMUTATIONS])
    return np.linalg.solve(gram, b), gram


def estimate_design_defect(
    n_qubits: int, size: int, gateset: GateSet | None, n: int, rng: RngStream, probes: int = 4, sampler=None
) -> tuple[float, float]:
    """Unbiased estimate of ``||avg_U U^{(x)4} X U^{dagger (x)4} - twirl(X)||_2^2 / ||X||_2^2``.

    Probes ``X`` are random product operators, so every sample stays a product
    of four ``d x d`` factors and no ``d^4``-dimensional object is formed.
    The Haar twirl is the orthogonal projection onto the span of the ``V_pi``.
    Pass ``sampler="haar"`` to replace circuits by Haar unitaries. Returns the
    mean over probes and its standard error.
    """
    if n_qubits > 3:
        raise ValueError("design defect probe limited to N <= 3")
    if n < 2:
        raise ValueError("need at least two samples")
    d = 2**n_qubits
    gen_probe = rng.child(0).generator()
    probe_list = [
        [gen_probe.standard_normal((d, d)) + 1j * gen_probe.standard_normal((d, d)) for _ in range(4)]
        for _ in range(probes)
    ]
    if sampler is None:
        sampler = CircuitSampler(size, gateset)
    us = [_sample_unitary(sampler, d, n_qubits, rng.child(1).child(i)) for i in range(n)]
    u_arr = np.stack(us)
    estimates, variances = [], []
    for probe in probe_list:
        coef, gram = _twirl_coefficients(d, probe)
        x_norm2 = float(np.prod([np.vdot(y, y).real for y in probe]))
        # rotated factors: ys[i][a] = U_a y_i U_a^dagger
        ys = [u_arr @ y @ u_arr.conj().transpose(0, 2, 1) for y in probe]
        gram_samples = np.ones((n, n), dtype=complex)
        for yi in ys:
            flat = yi.reshape(n, -1)
            gram_samples *= flat.conj() @ flat.T
        p_dot_y = np.array(
            [sum(np.conj(c) * _perm_inner_with_product(pi, [yi[a] for yi in ys]) for c, pi in zip(coef, PERMUTATIONS)) for a in range(n)]
        )
        p_norm2 = np.real(np.conj(coef) @ gram @ coef)
        # <Y_a - P, Y_b - P>
        inner = gram_samples - p_dot_y[:, None] - np.conj(p_dot_y)[None, :] + p_norm2
        inner = np.real(inner) / x_norm2
        off = inner.sum(axis=1) - np.diag(inner)
        h = off / (n - 1)
        estimates.append(float(h.mean()))
        variances.append(float(4.0 * np.var(h, ddof=1) / n))
    k = len(estimates)
    mean = math.fsum(estimates) / k
    stderr = math.sqrt(math.fsum(variances)) / k
    return mean, stderr
