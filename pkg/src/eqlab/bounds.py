"""Closed-form equilibration quantities: level-density Fourier transforms,
bound formulas, time-scale estimates and resonance counting.

Every bound takes scalar statistics (never matrices) and broadcasts over
numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ensembles import IsingParams, Spectrum, ising_dispersion, ising_frequencies
from .numerics import jinc


def mu_tilde(spec: Spectrum, t):
    """``(1/d) sum_n exp(i t E_n)``, evaluated cluster-wise."""
    times = np.asarray(t, dtype=float)
    phases = np.exp(1j * np.multiply.outer(times, spec.levels))
    out = phases @ spec.multiplicities.astype(float) / spec.d
    return complex(out) if out.ndim == 0 else out


def _check_epsilon(epsilon):
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")


def mu_ising(params: IsingParams, t, method: str = "exact_product"):
    """``|mu(t)|`` for the enumerated Ising spectrum.

    ``exact_product`` is ``[2^-N prod_k (1 + cos(t w_k))]^(1/2)`` (summed in
    logs so large ``N`` does not underflow); ``small_t`` is the Gaussian
    ``exp(-t^2 N (1+h^2) / 8)``; ``large_t_bound`` is the constant ``2^(-N/2)``,
    an upper bound once ``t w_k`` is large rather than an approximation.
    """
    times = np.asarray(t, dtype=float)
    n, h = params.n_modes, params.h
    if method == "exact_product":
        w = ising_frequencies(params)
        c = np.cos(np.multiply.outer(times, w))
        with np.errstate(divide="ignore"):
            logs = np.log(0.5 * (1.0 + c)).sum(axis=-1)
        out = np.exp(0.5 * logs)
    elif method == "small_t":
        out = np.exp(-times**2 * n * (1.0 + h * h) / 8.0)
    elif method == "large_t_bound":
        out = np.full_like(times, 2.0 ** (-n / 2.0))
    else:
        raise ValueError(f"unknown method {method!r}")
    return float(out) if out.ndim == 0 else out


def mu_gue_asymptotic(d: int, t):
    """Large-``d`` GUE value ``|2 J1(x) / x|`` with ``x = t sqrt(2d)``."""
    times = np.asarray(t, dtype=float)
    if np.any(times < 0):
        raise ValueError("t must be nonnegative")
    out = np.abs(jinc(times * math.sqrt(2.0 * d)))
    return float(out) if np.ndim(out) == 0 else out


def result1_bound(mu_abs, g, d, d_s, d_e, epsilon):
    """Distance bound that all but an ``epsilon`` fraction of Haar diagonalizers obey."""
    _check_epsilon(epsilon)
    if d != d_s * d_e:
        raise ValueError("d must equal d_S * d_E")
    mu = np.asarray(mu_abs, dtype=float)
    out = math.sqrt(d_s) / epsilon * np.sqrt(mu**4 + (g / d) ** 2 + 7.0 / d_e)
    return float(out) if out.ndim == 0 else out


def result2_bound(g, d_s, d_e, epsilon) -> float:
    """Bound on the infinite-time average of the distance."""
    _check_epsilon(epsilon)
    return math.sqrt(g / d_e + 7.0 * d_s / d_e) / epsilon


def result3_extra_term(d, d_s, d_e, size, n_qubits, alpha, form: str = "main_text") -> float:
    """Penalty added inside the square root for circuits of ``size`` gates.

    ``main_text``: ``d^3 2^(-alpha C / N)``.
    ``appendix``: ``d^4 (1 - alpha/N)^C d_E sqrt(d_S)``.
    The two disagree in constants and powers of ``d``; both are provided.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if size < 0:
        raise ValueError("circuit size must be nonnegative")
    if form == "main_text":
        return float(d) ** 3 * 2.0 ** (-alpha * size / n_qubits)
    if form == "appendix":
        if alpha >= n_qubits:
            raise ValueError("appendix form needs alpha < N")
        return float(d) ** 4 * (1.0 - alpha / n_qubits) ** size * d_e * math.sqrt(d_s)
    raise ValueError(f"unknown form {form!r}")


def result3_bound(mu_abs, g, d, d_s, d_e, epsilon, size, n_qubits, alpha, form="main_text"):
    _check_epsilon(epsilon)
    if d != d_s * d_e:
        raise ValueError("d must equal d_S * d_E")
    extra = result3_extra_term(d, d_s, d_e, size, n_qubits, alpha, form)
    mu = np.asarray(mu_abs, dtype=float)
    out = math.sqrt(d_s) / epsilon * np.sqrt(mu**4 + (g / d) ** 2 + 7.0 / d_e + extra)
    return float(out) if out.ndim == 0 else out


def min_complexity_threshold(n_qubits: int, alpha: float, alpha_prime: float) -> int:
    """Smallest integer ``C >= alpha' N^2``, valid only for ``alpha' > 3/alpha``."""
    if not alpha_prime > 3.0 / alpha:
        raise ValueError(
            f"alpha'={alpha_prime} must exceed 3/alpha={3.0 / alpha} for the extra term to vanish"
        )
    return math.ceil(alpha_prime * n_qubits * n_qubits)


def resonance_fraction(spec: Spectrum) -> float:
    """Fraction ``d^-4 #{(n,n',k,k'): E_n != E_n', E_k != E_k', gaps cancel}``.

    Gaps between distinct clusters are grouped by sorting (two gaps match when
    they differ by at most twice the cluster tolerance). The gap multiset is
    symmetric under negation, so the count is the sum of squared group weights.
    """
    k = spec.n_clusters
    if k > 4096:
        raise ValueError("resonance counting limited to 4096 clusters")
    if k < 2:
        return 0.0
    lv = spec.levels
    m = spec.multiplicities.astype(float)
    off = ~np.eye(k, dtype=bool)
    gaps = (lv[:, None] - lv[None, :])[off]
    weights = np.outer(m, m)[off]
    order = np.argsort(gaps, kind="stable")
    gaps, weights = gaps[order], weights[order]
    starts = np.concatenate([[True], np.diff(gaps) > 2.0 * spec.cluster_tolerance])
    groups = np.cumsum(starts) - 1
    totals = np.bincount(groups, weights=weights)
    return float(math.fsum(totals * totals) / float(spec.d) ** 4)


@dataclass(frozen=True)
class TimeScaleEstimates:
    inverse_width: float | None = None
    gue: float | None = None
    ising: float | None = None
    e_max_ising: float | None = None

    def to_dict(self) -> dict:
        return {
            "inverse_width": self.inverse_width,
            "gue": self.gue,
            "ising": self.ising,
            "e_max_ising": self.e_max_ising,
        }


def ising_e_max(params: IsingParams, points: int | None = None) -> float:
    """``(N / 2 pi) * integral_0^{2 pi} w(phi) dphi`` by the periodic trapezoid rule.

    4096 points reach 1e-8 relative for smooth integrands; near ``h = 1`` the
    integrand develops a kink and ``2^20`` points are used.
    """
    if points is None:
        points = 2**20 if abs(abs(params.h) - 1.0) < 0.01 else 4096
    phi = 2.0 * np.pi * np.arange(points) / points
    mean = math.fsum(ising_dispersion(phi, params.h)) / points
    return params.n_modes * mean


def time_scales(source) -> TimeScaleEstimates:
    """Equilibration time-scale estimates.

    ``source`` is a :class:`Spectrum`, an :class:`IsingParams`, or
    ``("gue", N)``.
    """
    if isinstance(source, Spectrum):
        width = source.delta_e
        return TimeScaleEstimates(inverse_width=math.inf if width == 0 else 1.0 / width)
    if isinstance(source, IsingParams):
        n, h = source.n_modes, source.h
        e_max = ising_e_max(source)
        spec_width = math.sqrt(float(np.sum(ising_frequencies(source) ** 2)) / 4.0)
        return TimeScaleEstimates(
            inverse_width=1.0 / spec_width if spec_width > 0 else math.inf,
            ising=1.0 / math.sqrt(n * (1.0 + h * h)),
            e_max_ising=e_max,
        )
    if isinstance(source, tuple) and source[0] == "gue":
        n = int(source[1])
        return TimeScaleEstimates(gue=2.0 ** (-n / 2.0))
    raise TypeError(f"unsupported time-scale source {source!r}")
