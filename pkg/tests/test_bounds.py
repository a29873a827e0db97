import itertools
import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eqlab.bounds import (
    min_complexity_threshold,
    mu_gue_asymptotic,
    mu_ising,
    mu_tilde,
    resonance_fraction,
    result1_bound,
    result2_bound,
    result3_bound,
    result3_extra_term,
    time_scales,
)
from eqlab.ensembles import (
    IsingParams,
    RngStream,
    gue_spectrum,
    ising_frequencies,
    occupation_energies,
    spectrum_from_energies,
)


# mu_tilde


def test_mu_tilde_examples():
    assert mu_tilde(spectrum_from_energies([0.3, 1.7, 2.0]), 0.0) == 1.0
    e = 2.6
    assert abs(mu_tilde(spectrum_from_energies([0.0, e]), math.pi / e)) < 1e-15
    assert abs(mu_tilde(spectrum_from_energies([0, 1, 2, 3]), math.pi / 2)) < 1e-15


def test_mu_tilde_uses_multiplicities():
    spec = spectrum_from_energies([0.0, 0.0, 0.0, 1.0])
    assert mu_tilde(spec, 2.0) == pytest.approx((3 + np.exp(2j)) / 4, abs=1e-15)
    out = mu_tilde(spec, np.array([0.0, 2.0]))
    assert out.shape == (2,)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(-100, 100))
def test_mu_tilde_properties(energies, t):
    spec = spectrum_from_energies(energies)
    m = mu_tilde(spec, t)
    assert abs(m) <= 1 + 1e-12
    assert mu_tilde(spec, -t) == pytest.approx(m.conjugate(), abs=1e-12)


# mu_ising


def _brute_mu(n, h, t):
    # plain sum over all 2^N occupation energies, no clustering
    e = occupation_energies(ising_frequencies(IsingParams(n, h)))
    return abs(np.exp(1j * t * e).sum() / e.size)


def test_mu_ising_t0():
    assert mu_ising(IsingParams(30, 0.7), 0.0) == 1.0


def test_mu_ising_matches_enumeration_n12():
    for t in (0.1, 0.9, 3.3, 17.0):
        assert mu_ising(IsingParams(12, 0.5), t) == pytest.approx(_brute_mu(12, 0.5, t), abs=1e-12)


def test_mu_ising_matches_enumeration_random():
    gen = np.random.default_rng(0)
    for _ in range(50):
        n = int(gen.integers(1, 13))
        h, t = gen.uniform(-2, 2), gen.uniform(0, 20)
        assert abs(mu_ising(IsingParams(n, h), t) - _brute_mu(n, h, t)) <= 1e-12


def test_mu_ising_small_t_n100():
    p = IsingParams(100, 1.0)
    exact, small = mu_ising(p, 0.02), mu_ising(p, 0.02, method="small_t")
    assert abs(math.log(exact) - math.log(small)) <= 0.1 * abs(math.log(small))


def test_mu_ising_am_gm_bound():
    # prod(1 + c_k) <= (1 + mean c)^N holds for every N and t
    gen = np.random.default_rng(1)
    for n, h in [(12, 0.5), (20, 3.0), (100, 0.5), (1000, 1.3)]:
        p = IsingParams(n, h)
        w = ising_frequencies(p)
        ts = gen.uniform(100 / w.min(), 1e4 / w.min(), 20)
        mean_cos = np.cos(np.outer(ts, w)).mean(axis=1)
        log_ceiling = 0.5 * n * np.log(0.5 * (1.0 + mean_cos))
        with np.errstate(divide="ignore"):
            assert np.all(np.log(mu_ising(p, ts)) <= log_ceiling + 1e-9)


@pytest.mark.parametrize("n,h", [(100, 0.5), (400, 2.0), (1000, 1.3)])
def test_mu_ising_large_t_value(n, h):
    p = IsingParams(n, h)
    w = ising_frequencies(p)
    ts = np.random.default_rng(n).uniform(100 / w.min(), 1e4 / w.min(), 20)
    assert np.all(mu_ising(p, ts) <= mu_ising(p, ts, method="large_t_bound") * (1 + 1e-9))


def test_mu_ising_large_t_value_is_not_a_finite_n_bound():
    # at N=12 the mean of cos(t w_k) over only twelve modes fluctuates enough
    # for |mu| to exceed 2^(-N/2); the large-t value is a large-N statement
    p = IsingParams(12, 0.5)
    w = ising_frequencies(p)
    ts = np.random.default_rng(0).uniform(100 / w.min(), 1e4 / w.min(), 20)
    assert np.any(mu_ising(p, ts) > 2.0**-6)


def test_mu_ising_unknown_method():
    with pytest.raises(ValueError):
        mu_ising(IsingParams(3, 1.0), 1.0, method="fast")


# GUE asymptotic


def test_mu_gue_asymptotic():
    assert mu_gue_asymptotic(64, 0.0) == 1.0
    j11 = float(mpmath.besseljzero(1, 1))
    assert mu_gue_asymptotic(512, j11 / math.sqrt(1024)) < 1e-10
    with pytest.raises(ValueError):
        mu_gue_asymptotic(8, -1.0)


def test_mu_gue_asymptotic_tracks_samples():
    d = 256
    ts = np.linspace(0, 3, 61)
    emp = np.mean([np.abs(mu_tilde(gue_spectrum(d, RngStream(0, i)), ts)) for i in range(10)], axis=0)
    assert np.max(np.abs(emp - mu_gue_asymptotic(d, ts))) <= 0.08


# Result 1 and 2


def test_result1_vacuous_at_t0():
    assert result1_bound(1.0, 1, 256, 2, 128, 0.1) >= math.sqrt(2) / 0.1


def test_result1_value():
    with mpmath.workdps(40):
        oracle = mpmath.sqrt(2) / mpmath.mpf("0.1") * mpmath.sqrt(mpmath.mpf(1) / 256**2 + mpmath.mpf(7) / 128)
    assert float(oracle) == pytest.approx(3.3076505, abs=1e-7)
    assert result1_bound(0.0, 1, 256, 2, 128, 0.1) == pytest.approx(float(oracle), rel=1e-14)


def test_result1_monotone():
    base = result1_bound(0.2, 2, 256, 2, 128, 0.1)
    assert result1_bound(0.5, 2, 256, 2, 128, 0.1) >= base
    assert result1_bound(0.2, 8, 256, 2, 128, 0.1) >= base
    assert result1_bound(0.2, 2, 256, 2, 128, 0.05) >= base
    arr = result1_bound(np.array([0.0, 0.5, 1.0]), 1, 16, 2, 8, 0.3)
    assert np.all(np.diff(arr) > 0)


def test_result1_errors():
    with pytest.raises(ValueError):
        result1_bound(0.1, 1, 256, 2, 64, 0.1)
    with pytest.raises(ValueError):
        result1_bound(0.1, 1, 256, 2, 128, 1.0)


def test_result2_value():
    # sqrt((1 + 7*2) / 2^20) / 0.1 = sqrt(15) / 102.4
    with mpmath.workdps(40):
        oracle = float(mpmath.sqrt(mpmath.mpf(15) / 2**20) / mpmath.mpf("0.1"))
    assert oracle == pytest.approx(0.0378221, abs=1e-7)
    assert result2_bound(1, 2, 2**20, 0.1) == pytest.approx(oracle, rel=1e-14)


def test_result2_scaling_and_boundary():
    assert result2_bound(3, 4, 1000, 0.2) / result2_bound(3, 4, 4000, 0.2) == pytest.approx(2.0, rel=1e-15)
    # g/d_E + 7 d_S/d_E = eps^2 with g=2, d_S=2, d_E=64, eps=0.5
    assert Fraction(2, 64) + Fraction(14, 64) == Fraction(1, 4)
    assert result2_bound(2, 2, 64, 0.5) == 1.0


# Result 3


def test_result3_limits():
    r1 = result1_bound(0.3, 1, 256, 2, 128, 0.1)
    assert result3_bound(0.3, 1, 256, 2, 128, 0.1, 10**6, 8, 0.1) == pytest.approx(r1, rel=1e-15)
    pre = math.sqrt(2) / 0.1
    r3 = result3_bound(0.3, 1, 256, 2, 128, 0.1, 0, 8, 0.1)
    assert (r3 / pre) ** 2 - (r1 / pre) ** 2 == pytest.approx(256**3, rel=1e-12)


def test_result3_desk_scale_example():
    assert result3_extra_term(1024, 2, 512, 300, 10, 0.1) == 2.0**27


@pytest.mark.parametrize("form", ["main_text", "appendix"])
def test_result3_converges_monotonically(form):
    sizes = list(range(0, 10**4 + 1, 10))
    r1 = result1_bound(0.05, 1, 256, 2, 128, 0.1)
    r3 = np.array([result3_bound(0.05, 1, 256, 2, 128, 0.1, c, 8, 0.1, form) for c in sizes])
    assert np.all(r3 >= r1)
    assert np.all(np.diff(r3 - r1) <= 0)
    assert r3[-1] - r1 < 1e-6 * r1


def test_result3_forms_differ():
    main = result3_extra_term(256, 2, 128, 100, 8, 0.1, "main_text")
    appendix = result3_extra_term(256, 2, 128, 100, 8, 0.1, "appendix")
    assert main == pytest.approx(256**3 * 2 ** (-100 * 0.1 / 8))
    assert appendix == pytest.approx(256**4 * (1 - 0.1 / 8) ** 100 * 128 * math.sqrt(2))
    with pytest.raises(ValueError):
        result3_extra_term(256, 2, 128, 100, 8, 9.0, "appendix")
    with pytest.raises(ValueError):
        result3_extra_term(256, 2, 128, 100, 8, 0.1, "other")
    with pytest.raises(ValueError):
        result3_extra_term(256, 2, 128, -1, 8, 0.1)
    with pytest.raises(ValueError):
        result3_extra_term(256, 2, 128, 1, 8, 0.0)


def test_min_complexity_threshold():
    assert min_complexity_threshold(10, 0.1, 31) == 3100
    for n in (5, 10, 17):
        assert min_complexity_threshold(2 * n, 0.1, 31) == pytest.approx(4 * min_complexity_threshold(n, 0.1, 31), abs=4)
    with pytest.raises(ValueError):
        min_complexity_threshold(10, 0.1, 3 / 0.1)


# resonances


def _brute_resonance(energies):
    e = np.asarray(energies)
    d = e.size
    count = 0
    for n, n2, k, k2 in itertools.product(range(d), repeat=4):
        if e[n] != e[n2] and e[k] != e[k2] and e[n] - e[n2] + e[k] - e[k2] == 0:
            count += 1
    return count / d**4


def test_resonance_equally_spaced():
    e = [0, 1, 2, 3]
    assert resonance_fraction(spectrum_from_energies(e)) == _brute_resonance(e)
    assert _brute_resonance(e) == 28 / 256


def test_resonance_degenerate_integer_spectra():
    gen = np.random.default_rng(2)
    for _ in range(10):
        e = gen.integers(0, 5, size=8).astype(float)
        assert resonance_fraction(spectrum_from_energies(e)) == pytest.approx(_brute_resonance(e), abs=1e-15)


def test_resonance_generic_and_flat():
    e = np.sqrt([2.0, 3.0, 5.0, 7.0, 11.0, 13.0])
    spec = spectrum_from_energies(e)
    # only the pairing with the reversed gap survives
    assert resonance_fraction(spec) == pytest.approx(30 / 6**4, abs=1e-15)
    assert resonance_fraction(spec) <= spec.g / spec.d
    assert resonance_fraction(spectrum_from_energies([1.0] * 16)) == 0.0


@pytest.mark.parametrize("d", [8, 64, 256])
def test_resonance_below_g_over_d(d):
    gen = np.random.default_rng(d)
    for i in range(100):
        if i % 2:
            e = gen.standard_normal(d)
        else:
            e = gen.integers(0, max(2, d // 4), size=d).astype(float)
        spec = spectrum_from_energies(e)
        assert resonance_fraction(spec) <= spec.g / spec.d


# time scales


def test_time_scales_ising():
    assert time_scales(IsingParams(10, 0.0)).e_max_ising == 10.0
    ts = time_scales(IsingParams(10, 1.0))
    assert ts.e_max_ising == pytest.approx(40 / math.pi, rel=1e-8)
    assert ts.ising == pytest.approx(1 / math.sqrt(20))


def test_time_scales_gue_and_spectrum():
    assert time_scales(("gue", 8)).gue == 0.0625
    spec = spectrum_from_energies([0.0, 2.0])
    assert time_scales(spec).inverse_width == 1.0
    assert time_scales(spectrum_from_energies([1.0, 1.0])).inverse_width == math.inf
    assert set(time_scales(spec).to_dict()) == {"inverse_width", "gue", "ising", "e_max_ising"}
    with pytest.raises(TypeError):
        time_scales(3.0)
