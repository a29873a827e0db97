"""Random matrix sources and spectrum models."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import oscillator_kernel_diagonal


@dataclass(frozen=True)
class RngStream:
    """Reproducible random stream addressed by ``(master_seed, stream_index)``.

    Streams are derived with :class:`numpy.random.SeedSequence` spawn keys, so
    distinct indices give independent PCG64 sequences and identical pairs give
    bit-identical ones regardless of which thread draws them.
    """

    master_seed: int
    stream_index: tuple[int, ...] = ()

    def __post_init__(self):
        idx = self.stream_index
        if isinstance(idx, (int, np.integer)):
            idx = (int(idx),)
        object.__setattr__(self, "stream_index", tuple(int(i) for i in idx))
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must fit in 64 bits")

    def child(self, index: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index + (int(index),))

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.master_seed), spawn_key=self.stream_index)
        return np.random.Generator(np.random.PCG64(seq))


def as_generator(rng) -> np.random.Generator:
    """Accept an :class:`RngStream` or an existing numpy ``Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng).__name__}")


def sample_gue(d: int, rng) -> np.ndarray:
    """Hermitian ``d x d`` matrix with density proportional to ``exp(-tr H^2)``.

    Diagonal entries are real with variance 1/2; off-diagonal entries are
    complex with ``E|H_ij|^2 = 1/2``. Eigenvalues then follow a semicircle of
    radius ``sqrt(2 d)``.
    """
    if d < 1:
        raise ValueError("d must be positive")
    gen = as_generator(rng)
    diag = gen.normal(0.0, math.sqrt(0.5), size=d)
    re = gen.normal(0.0, 0.5, size=(d, d))
    im = gen.normal(0.0, 0.5, size=(d, d))
    upper = np.triu(re + 1j * im, k=1)
    return upper + upper.conj().T + np.diag(diag).astype(complex)


def sample_haar(d: int, rng) -> np.ndarray:
    """Haar-distributed unitary via QR of a complex Ginibre matrix.

    The phases of ``diag(R)`` are moved into ``Q``; without this correction
    the result is unitary but not Haar distributed.
    """
    if d < 1:
        raise ValueError("d must be positive")
    gen = as_generator(rng)
    z = (gen.standard_normal((d, d)) + 1j * gen.standard_normal((d, d))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    diag = np.diagonal(r)
    return q * (diag / np.abs(diag))


# Spectra -------------------------------------------------------------------


def default_tolerance(energies) -> float:
    e = np.asarray(energies, dtype=float)
    return 1e-9 * (float(e.max() - e.min()) + 1.0)


@dataclass(frozen=True)
class Spectrum:
    """Sorted energies with their degeneracy clusters.

    ``levels[j]`` is the mean energy of cluster ``j`` and ``multiplicities[j]``
    its size; ``labels[i]`` is the cluster of ``energies[i]``.
    """

    energies: np.ndarray
    cluster_tolerance: float
    levels: np.ndarray = field(repr=False)
    multiplicities: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)

    @property
    def clusters(self) -> list[tuple[float, int]]:
        return [(float(e), int(m)) for e, m in zip(self.levels, self.multiplicities)]

    @property
    def d(self) -> int:
        return int(self.energies.size)

    @property
    def g(self) -> int:
        """Largest multiplicity."""
        return int(self.multiplicities.max())

    @property
    def w(self) -> int:
        """Number of ordered pairs ``(n, n')`` with equal energy."""
        m = self.multiplicities.astype(np.int64)
        return int(np.dot(m, m))

    @property
    def delta_e(self) -> float:
        """Standard deviation of the level density."""
        return float(np.std(self.energies))

    @property
    def e_min(self) -> float:
        return float(self.energies[0])

    @property
    def e_max(self) -> float:
        return float(self.energies[-1])

    @property
    def n_clusters(self) -> int:
        return int(self.levels.size)

    def expanded_levels(self) -> np.ndarray:
        """Cluster representatives repeated by multiplicity."""
        return np.repeat(self.levels, self.multiplicities)


def spectrum_from_energies(energies, tolerance: float | None = None) -> Spectrum:
    """Cluster energies: a new cluster starts when a sorted gap exceeds ``tolerance``.

    The default tolerance is ``1e-9 * (e_max - e_min + 1)``.
    """
    e = np.sort(np.asarray(energies, dtype=float).ravel())
    if e.size == 0:
        raise ValueError("spectrum must contain at least one energy")
    if not np.all(np.isfinite(e)):
        raise ValueError("energies must be finite")
    tol = default_tolerance(e) if tolerance is None else float(tolerance)
    if tol < 0:
        raise ValueError("tolerance must be nonnegative")
    starts = np.concatenate([[True], np.diff(e) > tol])
    labels = np.cumsum(starts) - 1
    mult = np.bincount(labels)
    levels = np.bincount(labels, weights=e) / mult
    return Spectrum(
        energies=e,
        cluster_tolerance=tol,
        levels=levels,
        multiplicities=mult,
        labels=labels,
    )


def read_spectrum_file(path, tolerance: float | None = None) -> Spectrum:
    """One energy per line; blank lines and ``#`` comments are ignored."""
    values = []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise ValueError(f"{path}:{lineno}: not a number: {raw!r}") from None
    return spectrum_from_energies(values, tolerance)


def write_spectrum_file(path, energies, comment: str | None = None) -> None:
    lines = []
    if comment:
        lines.extend(f"# {c}" for c in comment.splitlines())
    lines.extend(f"{float(x):.17g}" for x in np.asarray(energies, dtype=float).ravel())
    Path(path).write_text("\n".join(lines) + "\n")


# Ising / free-fermion spectra ----------------------------------------------

MAX_ENUMERATION_MODES = 20


@dataclass(frozen=True)
class IsingParams:
    n_modes: int
    h: float

    def __post_init__(self):
        if self.n_modes < 1:
            raise ValueError("need at least one mode")
        if not math.isfinite(self.h):
            raise ValueError("field h must be finite")


def ising_dispersion(phi, h: float):
    """Single-mode energy ``sqrt((h - cos phi)^2 + sin^2 phi)``."""
    phi = np.asarray(phi, dtype=float)
    return np.sqrt((h - np.cos(phi)) ** 2 + np.sin(phi) ** 2)


def ising_frequencies(params: IsingParams) -> np.ndarray:
    k = np.arange(1, params.n_modes + 1)
    return ising_dispersion(2.0 * np.pi * k / params.n_modes, params.h)


def occupation_energies(frequencies) -> np.ndarray:
    """All ``2^N`` sums ``sum_k n_k w_k`` in computational-basis order.

    Mode ``k`` is carried by qubit ``k``, so the first frequency goes with the
    most significant bit.
    """
    e = np.zeros(1)
    for w in np.asarray(frequencies, dtype=float):
        e = (e[:, None] + np.array([0.0, w])[None, :]).ravel()
    return e


def ising_spectrum(params: IsingParams, mode: str = "modes_only", tolerance=None):
    """Mode frequencies, or the full enumerated :class:`Spectrum` of size ``2^N``."""
    freqs = ising_frequencies(params)
    if mode == "modes_only":
        return freqs
    if mode == "full_enumeration":
        if params.n_modes > MAX_ENUMERATION_MODES:
            raise ValueError(
                f"full enumeration limited to N <= {MAX_ENUMERATION_MODES}, got {params.n_modes}"
            )
        return spectrum_from_energies(occupation_energies(freqs), tolerance)
    raise ValueError(f"unknown mode {mode!r}")


# GUE level density ---------------------------------------------------------

MAX_KERNEL_DIM = 1024


def gue_level_density(d: int, energy, method: str = "exact_kernel"):
    """Unnormalised level density of the d-dimensional GUE (integrates to ``d``).

    ``exact_kernel`` sums squared oscillator eigenfunctions; ``semicircle`` is
    the large-``d`` limit ``sqrt(2d - E^2) / pi`` on ``|E| <= sqrt(2d)``.
    """
    if method == "exact_kernel":
        if d > MAX_KERNEL_DIM:
            raise ValueError(f"exact kernel limited to d <= {MAX_KERNEL_DIM}")
        return oscillator_kernel_diagonal(d, energy)
    if method == "semicircle":
        e = np.asarray(energy, dtype=float)
        out = np.sqrt(np.clip(2.0 * d - e * e, 0.0, None)) / np.pi
        return float(out) if out.ndim == 0 else out
    raise ValueError(f"unknown method {method!r}")


def semicircle_cdf(x, d: int):
    """CDF of the normalised semicircle law of radius ``sqrt(2d)``."""
    r = math.sqrt(2.0 * d)
    u = np.clip(np.asarray(x, dtype=float) / r, -1.0, 1.0)
    return 0.5 + (u * np.sqrt(1.0 - u * u) + np.arcsin(u)) / np.pi


def gue_spectrum(d: int, rng, tolerance=None) -> Spectrum:
    return spectrum_from_energies(np.linalg.eigvalsh(sample_gue(d, rng)), tolerance)
