"""Reproducible campaigns behind the CLI subcommands.

Every run is a pure function of ``(config, jobs)``: random draws come from
``RngStream(master_seed, (purpose, member, ...))`` and every reduction runs
in member order with ``math.fsum``, so ``jobs`` never changes an output byte.
Each ``run_*`` returns the text that the CLI writes.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, bounds
from .circuits import GateSet, circuit_support, no_touch_probability, sample_random_circuit
from .config import ExperimentConfig
from .dynamics import (
    DensityMatrix,
    DiagonalizerSource,
    HamiltonianModel,
    equilibration_trace,
    evolve_reduced,
    format_number,
    product_state,
    random_mixed_state,
    random_pure_state,
    time_average_distance,
)
from .ensembles import (
    IsingParams,
    RngStream,
    gue_spectrum,
    ising_frequencies,
    occupation_energies,
    read_spectrum_file,
    spectrum_from_energies,
)
from .errors import ConfigError
from .moments import (
    CircuitSampler,
    MomentReport,
    beta_purity,
    fourth_moment_prediction,
    monte_carlo_fourth_moment,
)
from .numerics import BipartitionLayout, trace_norm

# stream purposes
SPECTRUM, DIAGONALIZER, STATE, TIMES, MOMENTS, DEMO, MU = range(7)


def _pmap(fn, items, jobs: int):
    items = list(items)
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _metadata(command: str, config: ExperimentConfig) -> dict:
    return {"tool": "eqlab", "version": __version__, "command": command, "config": config.to_dict()}


def _csv_header(command: str, config: ExperimentConfig) -> list[str]:
    return [
        f"eqlab {__version__} {command}",
        "config " + json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":")),
    ]


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=True) + "\n"


# Builders ------------------------------------------------------------------


def build_layout(config: ExperimentConfig) -> BipartitionLayout:
    return BipartitionLayout(config.n_qubits, tuple(config.subsystem))


def build_energies(config: ExperimentConfig, stream: RngStream) -> np.ndarray:
    """Energies in eigenbasis order for the configured spectrum model."""
    spec = config.spectrum
    n = config.n_qubits
    d = 2**n
    model = spec["model"]
    if model == "gue":
        if n > 12:
            raise ConfigError("gue spectra limited to n_qubits <= 12")
        return gue_spectrum(d, stream).energies
    if model == "ising":
        return occupation_energies(ising_frequencies(IsingParams(n, float(spec.get("h", 1.0)))))
    if model == "file":
        try:
            energies = read_spectrum_file(spec["path"]).energies
        except OSError as exc:
            raise ConfigError(f"cannot read spectrum file: {exc}") from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    else:
        energies = np.asarray(spec["energies"], dtype=float)
    if energies.size != d:
        raise ConfigError(f"spectrum has {energies.size} energies, expected 2^{n} = {d}")
    return energies


def _gateset(section: dict, alpha: float) -> GateSet:
    try:
        return GateSet.from_names(section.get("gates", ["H", "T", "CNOT"]), alpha)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def build_diagonalizer(config: ExperimentConfig, stream: RngStream) -> DiagonalizerSource:
    diag = config.diagonalizer
    kind = diag["kind"]
    if kind == "haar":
        if config.n_qubits > 12:
            raise ConfigError("haar diagonalizers limited to n_qubits <= 12")
        return DiagonalizerSource.haar(stream)
    if kind == "circuit":
        gs = _gateset(diag, config.alpha)
        return DiagonalizerSource.from_circuit(
            sample_random_circuit(config.n_qubits, int(diag["C"]), gs, stream)
        )
    return DiagonalizerSource.identity()


def build_state(config: ExperimentConfig, stream: RngStream) -> DensityMatrix:
    n = config.n_qubits
    kind = config.initial_state
    if isinstance(kind, dict):
        return _explicit_state(kind, 2**n)
    if kind == "zero":
        return DensityMatrix.basis(n, 0)
    if kind == "plus":
        return product_state([[1.0, 1.0]] * n)
    if kind == "random":
        return random_pure_state(n, stream)
    return random_mixed_state(n, stream)


def _explicit_state(spec: dict, d: int) -> DensityMatrix:
    """``{"vector": re[, "vector_imag": im]}`` or ``{"density": re[, "density_imag": im]}``."""
    key = "vector" if "vector" in spec else "density"
    try:
        re = np.asarray(spec[key], dtype=float)
        im = np.asarray(spec.get(key + "_imag", np.zeros_like(re)), dtype=float)
        value = re + 1j * im
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"initial_state.{key}: {exc}") from None
    expected = (d,) if key == "vector" else (d, d)
    if value.shape != expected:
        raise ConfigError(f"initial_state.{key} has shape {value.shape}, expected {expected}")
    if key == "vector":
        return DensityMatrix.pure(value)
    return DensityMatrix.from_matrix(value)


def _spectrum_stream(config, root, member):
    if config.spectrum.get("resample", False):
        return root.child(SPECTRUM).child(member)
    return root.child(SPECTRUM)


def build_member(config: ExperimentConfig, member: int, energies=None) -> HamiltonianModel:
    root = RngStream(config.master_seed)
    if energies is None:
        energies = build_energies(config, _spectrum_stream(config, root, member))
    diag = build_diagonalizer(config, root.child(DIAGONALIZER).child(member))
    return HamiltonianModel(energies, diag, tolerance=config.tolerance)


def _r3_params(config: ExperimentConfig):
    if config.diagonalizer["kind"] != "circuit":
        return None
    return (int(config.diagonalizer["C"]), float(config.alpha), config.r3_form or "main_text")


def time_grid(config: ExperimentConfig) -> np.ndarray:
    tg = config.time_grid
    return np.linspace(float(tg["start"]), float(tg["stop"]), int(tg["steps"]))


def equilibration_time(config: ExperimentConfig, energies) -> tuple[float, str]:
    """Time-scale estimate used to decide where "late times" begin."""
    model = config.spectrum["model"]
    if model == "gue":
        return bounds.time_scales(("gue", config.n_qubits)).gue, "gue"
    if model == "ising":
        est = bounds.time_scales(IsingParams(config.n_qubits, float(config.spectrum.get("h", 1.0))))
        return est.ising, "ising"
    return bounds.time_scales(spectrum_from_energies(energies)).inverse_width, "inverse_width"


# Commands ------------------------------------------------------------------


def run_trace(config: ExperimentConfig, jobs: int = 1) -> str:
    """One Hamiltonian (member 0): distance, ``|mu|`` and bounds on the grid."""
    root = RngStream(config.master_seed)
    model = build_member(config, 0)
    rho0 = build_state(config, root.child(STATE))
    trace = equilibration_trace(
        model, rho0, build_layout(config), time_grid(config), config.epsilon, _r3_params(config)
    )
    return trace.to_csv(_csv_header("trace", config))


def _binomial(k: int, n: int) -> tuple[float, float]:
    p = k / n
    return p, math.sqrt(p * (1.0 - p) / n)


def run_ensemble(config: ExperimentConfig, jobs: int = 1, timing: bool = False) -> str:
    """Violation statistics of the distance bounds over ``n_ensemble`` diagonalizers."""
    start = time.perf_counter()
    root = RngStream(config.master_seed)
    layout = build_layout(config)
    times = time_grid(config)
    rho0 = build_state(config, root.child(STATE))
    shared = None
    if not config.spectrum.get("resample", False):
        shared = build_energies(config, root.child(SPECTRUM))
    ta = config.time_average
    r3 = _r3_params(config)

    def member(i):
        model = build_member(config, i, shared)
        tr = equilibration_trace(model, rho0, layout, times, config.epsilon, r3)
        avg = time_average_distance(
            model, rho0, layout, float(ta["T"]), int(ta["n_samples"]), root.child(TIMES).child(i)
        )
        spec = model.spectrum
        r2 = bounds.result2_bound(spec.g, layout.d_s, layout.d_e, config.epsilon)
        return tr, avg, r2

    results = _pmap(member, range(config.n_ensemble), jobs)
    n = config.n_ensemble
    dist = np.array([tr.distances for tr, _, _ in results])
    b1 = np.array([tr.bound_r1 for tr, _, _ in results])
    v1 = dist > b1
    v3 = None
    if r3 is not None:
        v3 = dist > np.array([tr.bound_r3 for tr, _, _ in results])

    records = []
    for j, t in enumerate(times):
        col = dist[:, j]
        mean = math.fsum(col) / n
        std = math.sqrt(math.fsum((col - mean) ** 2) / (n - 1)) if n > 1 else 0.0
        f1, s1 = _binomial(int(v1[:, j].sum()), n)
        rec = {
            "t": float(t),
            "mean_distance": mean,
            "std_distance": std,
            "bound_r1_mean": math.fsum(b1[:, j]) / n,
            "violation_fraction_r1": f1,
            "violation_stderr_r1": s1,
            "violation_fraction_r3": None,
            "violation_stderr_r3": None,
        }
        if v3 is not None:
            rec["violation_fraction_r3"], rec["violation_stderr_r3"] = _binomial(int(v3[:, j].sum()), n)
        records.append(rec)

    t_eq, t_eq_source = equilibration_time(
        config, shared if shared is not None else build_energies(config, root.child(SPECTRUM))
    )
    late = times >= 5.0 * t_eq
    sup_all, sup_all_err = _binomial(int(v1.any(axis=1).sum()), n)
    sup_late, sup_late_err = _binomial(int(v1[:, late].any(axis=1).sum()), n) if late.any() else (None, None)

    avgs = [avg for _, avg, _ in results]
    r2s = [r2 for _, _, r2 in results]
    below = sum(1 for (m, _), r2 in zip(avgs, r2s) if m <= r2)
    means = np.array([m for m, _ in avgs])
    avg_mean = math.fsum(means) / n
    report = _metadata("ensemble", config)
    report.update(
        {
            "master_seed": config.master_seed,
            "n_ensemble": n,
            "t_eq": t_eq,
            "t_eq_source": t_eq_source,
            "records": records,
            "sup_grid_violation_fraction_r1": sup_all,
            "sup_grid_violation_stderr_r1": sup_all_err,
            "late_sup_grid_violation_fraction_r1": sup_late,
            "late_sup_grid_violation_stderr_r1": sup_late_err,
            "time_average": {
                "T": float(ta["T"]),
                "n_samples": int(ta["n_samples"]),
                "mean": avg_mean,
                "std": math.sqrt(math.fsum((means - avg_mean) ** 2) / (n - 1)) if n > 1 else 0.0,
                "result2_bound": max(r2s),
                "members_below_bound": below,
                "fraction_below_bound": below / n,
                "per_member": [{"mean": m, "stderr": s} for m, s in avgs],
            },
            "wall_clock_s": time.perf_counter() - start if timing else None,
        }
    )
    return dump_json(report)


def run_mu_study(config: ExperimentConfig, jobs: int = 1) -> str:
    """``|mu(t)|`` from the spectrum itself next to the applicable closed forms."""
    times = time_grid(config)
    model = config.spectrum["model"]
    n = config.n_qubits
    root = RngStream(config.master_seed).child(MU)
    if model == "gue":
        d = 2**n
        k = int(config.mu.get("n_samples", 20))
        if d > 4096:
            raise ConfigError("gue mu study limited to n_qubits <= 12")

        def one(i):
            return bounds.mu_tilde(gue_spectrum(d, root.child(i)), times)

        samples = np.array(_pmap(one, range(k), jobs))
        avg = np.array([math.fsum(samples[:, j].real) + 1j * math.fsum(samples[:, j].imag) for j in range(times.size)]) / k
        columns = {"mu_exact": np.minimum(np.abs(avg), 1.0), "mu_bessel": bounds.mu_gue_asymptotic(d, np.abs(times))}
    elif model == "ising":
        params = IsingParams(n, float(config.spectrum.get("h", 1.0)))
        columns = {}
        if n <= 20:
            spec = spectrum_from_energies(occupation_energies(ising_frequencies(params)))
            columns["mu_exact"] = np.minimum(np.abs(bounds.mu_tilde(spec, times)), 1.0)
        columns["mu_product"] = bounds.mu_ising(params, times, "exact_product")
        columns["mu_small_t"] = bounds.mu_ising(params, times, "small_t")
    else:
        spec = spectrum_from_energies(build_energies(config, root))
        columns = {"mu_exact": np.minimum(np.abs(bounds.mu_tilde(spec, times)), 1.0)}
    lines = [f"# {h}" for h in _csv_header("mu", config)]
    lines.append(",".join(["t", *columns]))
    for j, t in enumerate(times):
        lines.append(",".join([format_number(t), *(format_number(c[j]) for c in columns.values())]))
    return "\n".join(lines) + "\n"


def _moment_sampler(config: ExperimentConfig):
    s = config.moments.get("sampler", "haar")
    if s == "haar":
        return "haar"
    if isinstance(s, dict) and "C" in s:
        return CircuitSampler(int(s["C"]), _gateset(s, config.alpha))
    raise ConfigError("moments.sampler must be 'haar' or {\"C\": int, \"gates\": [...]}")


def run_moments(config: ExperimentConfig, jobs: int = 1, timing: bool = False) -> str:
    """Fourth-moment prediction against a sampled-diagonalizer average."""
    start = time.perf_counter()
    if config.n_qubits > 8:
        raise ConfigError("moments limited to n_qubits <= 8")
    psi = build_state(config, RngStream(config.master_seed).child(STATE))
    if not psi.is_pure:
        raise ConfigError("moments need a pure initial state")
    root = RngStream(config.master_seed)
    layout = build_layout(config)
    energies = build_energies(config, root.child(SPECTRUM))
    spec = spectrum_from_energies(energies, config.tolerance)
    beta = beta_purity(psi, layout)
    t = float(config.moments.get("t", 0.7))
    pred, e17 = fourth_moment_prediction(spec, layout.d_e, beta, t)
    sampler = _moment_sampler(config)
    n = int(config.moments.get("n_samples", 20000))
    if n < 2:
        raise ConfigError("moments.n_samples must be >= 2")
    mc, se = monte_carlo_fourth_moment(
        energies, layout, psi, t, n, sampler, root.child(MOMENTS), jobs=jobs, tolerance=config.tolerance
    )
    rep = MomentReport(t, pred, e17, mc, se, n, "haar" if sampler == "haar" else sampler.label)
    out = _metadata("moments", config)
    out.update(rep.to_dict())
    out.update(
        {
            "master_seed": config.master_seed,
            "beta": beta,
            "z_score": rep.z_score,
            "passed": bool(rep.z_score <= 4.0),
            "e17_ok": bool(pred <= e17 + 1e-12),
            "wall_clock_s": time.perf_counter() - start if timing else None,
        }
    )
    return dump_json(out)


def run_bounds(config: ExperimentConfig, jobs: int = 1) -> str:
    """Pure formula evaluation for the configured spectrum and split."""
    root = RngStream(config.master_seed)
    layout = build_layout(config)
    energies = build_energies(config, root.child(SPECTRUM))
    spec = spectrum_from_energies(energies, config.tolerance)
    times = time_grid(config)
    eps = config.epsilon
    mu = np.minimum(np.abs(bounds.mu_tilde(spec, times)), 1.0)
    r1 = bounds.result1_bound(mu, spec.g, spec.d, layout.d_s, layout.d_e, eps)
    sizes = [int(c) for c in config.bounds.get("C_values", [0, 10, 100, 1000, 10000])]
    r3 = {}
    for form in ("main_text", "appendix"):
        if form == "appendix" and config.alpha >= config.n_qubits:
            continue
        r3[form] = [
            {
                "C": c,
                "extra_term": bounds.result3_extra_term(
                    spec.d, layout.d_s, layout.d_e, c, config.n_qubits, config.alpha, form
                ),
            }
            for c in sizes
        ]
    t_eq, src = equilibration_time(config, energies)
    out = _metadata("bounds", config)
    out.update(
        {
            "d": spec.d,
            "d_s": layout.d_s,
            "d_e": layout.d_e,
            "g": spec.g,
            "w": spec.w,
            "n_clusters": spec.n_clusters,
            "delta_e": spec.delta_e,
            "resonance_fraction": bounds.resonance_fraction(spec) if spec.n_clusters <= 4096 else None,
            "t_eq": t_eq,
            "t_eq_source": src,
            "result2_bound": bounds.result2_bound(spec.g, layout.d_s, layout.d_e, eps),
            "rows": [
                {"t": float(t), "mu_abs": float(m), "bound_r1": float(b)} for t, m, b in zip(times, mu, r1)
            ],
            "result3_extra_terms": r3,
        }
    )
    ap = config.bounds.get("alpha_prime")
    if ap is not None:
        try:
            out["min_complexity_threshold"] = bounds.min_complexity_threshold(
                config.n_qubits, config.alpha, float(ap)
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return dump_json(out)


def run_circuit_demo(config: ExperimentConfig, jobs: int = 1, timing: bool = False) -> str:
    """Shallow random diagonalizers that never reach the subsystem.

    Each draw samples a circuit; untouched draws (with ``n <= 16``) are then
    evolved matrix-free under ``H = U (sum_k w_k n_k) U^dagger`` from a state
    whose subsystem part is a computational basis state and whose environment
    part is a random product state, and ``||rho_S(t) - rho_S(0)||_1`` is
    recorded at ``check_times`` random times.
    """
    start = time.perf_counter()
    cd = config.circuit_demo
    n, m, size, draws = int(cd["n_qubits"]), int(cd["m"]), int(cd["C"]), int(cd["draws"])
    if not 1 <= m < n:
        raise ConfigError("circuit_demo needs 1 <= m < n_qubits")
    if draws < 1 or size < 0:
        raise ConfigError("circuit_demo needs draws >= 1 and C >= 0")
    gs = _gateset(cd, config.alpha)
    layout = BipartitionLayout.first(n, m)
    sub = set(layout.subsystem)
    root = RngStream(config.master_seed).child(DEMO)
    dynamics = bool(cd.get("dynamics", n <= 16))
    if dynamics and n > 16:
        raise ConfigError("circuit_demo dynamics limited to n_qubits <= 16")
    n_times = int(cd.get("check_times", 10))
    t_max = float(config.time_grid["stop"])

    if dynamics:
        freqs = ising_frequencies(IsingParams(n, float(cd.get("h", 1.3))))
        energies = occupation_energies(freqs)
        g = root.child(0).generator()
        env = [g.standard_normal(2) + 1j * g.standard_normal(2) for _ in range(n - m)]
        rho0 = product_state([[0.0, 1.0]] * m + env)
        times = np.sort(g.uniform(0.0, t_max, size=n_times))
        base = HamiltonianModel(energies, DiagonalizerSource.identity())
        rs0 = evolve_reduced(base, rho0, layout, 0.0)

    def one(i):
        circ = sample_random_circuit(n, size, gs, root.child(1).child(i))
        touched = bool(circuit_support(circ) & sub)
        if not dynamics or touched:
            return touched, None
        model = base.with_diagonalizer(DiagonalizerSource.from_circuit(circ))
        rs = evolve_reduced(model, rho0, layout, times)
        return touched, float(np.max(trace_norm(rs - rs0, hermitian=True)))

    results = _pmap(one, range(draws), jobs)
    untouched = sum(1 for touched, _ in results if not touched)
    exact = no_touch_probability(n, m, size, gs, "exact")
    sigma = math.sqrt(exact * (1.0 - exact) / draws)
    freq = untouched / draws
    devs = [dev for _, dev in results if dev is not None]
    out = _metadata("circuit-demo", config)
    out.update(
        {
            "master_seed": config.master_seed,
            "n_qubits": n,
            "m": m,
            "C": size,
            "draws": draws,
            "no_touch_count": untouched,
            "no_touch_fraction": freq,
            "no_touch_stderr": math.sqrt(freq * (1.0 - freq) / draws),
            "exact_probability": exact,
            "paper_bound": no_touch_probability(n, m, size, gs, "paper_bound"),
            "z_score": abs(freq - exact) / sigma if sigma > 0 else (0.0 if freq == exact else math.inf),
            "dynamics_checked": len(devs),
            "check_times": times.tolist() if dynamics else None,
            "max_untouched_deviation": max(devs) if devs else None,
            "wall_clock_s": time.perf_counter() - start if timing else None,
        }
    )
    return dump_json(out)


COMMANDS = {
    "trace": run_trace,
    "ensemble": run_ensemble,
    "mu": run_mu_study,
    "moments": run_moments,
    "bounds": run_bounds,
    "circuit-demo": run_circuit_demo,
}
TIMED = {"ensemble", "moments", "circuit-demo"}


def run(command: str, config: ExperimentConfig, jobs: int = 1, timing: bool = False) -> str:
    fn = COMMANDS[command]
    if command in TIMED:
        return fn(config, jobs=jobs, timing=timing)
    return fn(config, jobs=jobs)

