"""Experiment configuration: a single JSON document plus dotted CLI overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError

SPECTRUM_MODELS = ("gue", "ising", "file", "explicit")
DIAGONALIZERS = ("haar", "circuit", "identity")


def _default_time_grid():
    return {"start": 0.0, "stop": 10.0, "steps": 200}


@dataclass
class ExperimentConfig:
    n_qubits: int = 8
    subsystem: list = field(default_factory=lambda: [0])
    spectrum: dict = field(default_factory=lambda: {"model": "gue"})
    diagonalizer: dict = field(default_factory=lambda: {"kind": "haar"})
    initial_state: str | dict = "zero"
    epsilon: float = 0.1
    time_grid: dict = field(default_factory=_default_time_grid)
    n_ensemble: int = 100
    master_seed: int = 0
    alpha: float = 0.1
    r3_form: str | None = None
    tolerance: float | None = None
    time_average: dict = field(default_factory=lambda: {"T": 1000.0, "n_samples": 1000})
    moments: dict = field(default_factory=lambda: {"t": 0.7, "n_samples": 20000, "sampler": "haar"})
    mu: dict = field(default_factory=lambda: {"n_samples": 20})
    bounds: dict = field(default_factory=lambda: {"C_values": [0, 10, 100, 1000, 10000], "alpha_prime": None})
    circuit_demo: dict = field(
        default_factory=lambda: {"n_qubits": 16, "m": 1, "C": 2, "draws": 10000, "check_times": 10, "h": 1.3}
    )

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        base = asdict(cls())
        for key, value in data.items():
            if isinstance(base[key], dict) and isinstance(value, dict) and key not in ("spectrum", "diagonalizer"):
                base[key] = {**base[key], **value}
            else:
                base[key] = value
        cfg = cls(**base)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return copy.deepcopy(asdict(self))

    def with_overrides(self, overrides: dict) -> "ExperimentConfig":
        """Apply ``{"a.b": value}`` style overrides and revalidate."""
        data = self.to_dict()
        for dotted, value in overrides.items():
            keys = dotted.split(".")
            node = data
            for k in keys[:-1]:
                if not isinstance(node.get(k), dict):
                    raise ConfigError(f"override {dotted!r}: {k!r} is not a section")
                node = node[k]
            node[keys[-1]] = value
        return ExperimentConfig.from_dict(data)

    def validate(self) -> None:
        n = self.n_qubits
        if not isinstance(n, int) or n < 2:
            raise ConfigError("n_qubits must be an integer >= 2")
        sub = self.subsystem
        if not isinstance(sub, list) or not sub or len(set(sub)) != len(sub):
            raise ConfigError("subsystem must be a nonempty list of distinct qubits")
        if len(sub) >= n or min(sub) < 0 or max(sub) >= n:
            raise ConfigError(f"subsystem {sub} is not a proper subset of {n} qubits")
        if not 0.0 < float(self.epsilon) < 1.0:
            raise ConfigError("epsilon must lie in (0, 1)")
        tg = self.time_grid
        if int(tg.get("steps", 0)) < 1:
            raise ConfigError("time_grid.steps must be >= 1")
        if float(tg.get("stop", 0.0)) < float(tg.get("start", 0.0)):
            raise ConfigError("time_grid.stop must be >= start")
        if int(self.n_ensemble) < 1:
            raise ConfigError("n_ensemble must be >= 1")
        if not 0 <= int(self.master_seed) < 2**64:
            raise ConfigError("master_seed must be an unsigned 64-bit integer")
        if float(self.alpha) <= 0:
            raise ConfigError("alpha must be positive")
        model = self.spectrum.get("model")
        if model not in SPECTRUM_MODELS:
            raise ConfigError(f"spectrum.model must be one of {SPECTRUM_MODELS}")
        if model == "file" and "path" not in self.spectrum:
            raise ConfigError("spectrum.path is required for model 'file'")
        if model == "explicit" and not self.spectrum.get("energies"):
            raise ConfigError("spectrum.energies is required for model 'explicit'")
        kind = self.diagonalizer.get("kind")
        if kind not in DIAGONALIZERS:
            raise ConfigError(f"diagonalizer.kind must be one of {DIAGONALIZERS}")
        if kind == "circuit" and int(self.diagonalizer.get("C", -1)) < 0:
            raise ConfigError("diagonalizer.C must be a nonnegative integer")
        if self.r3_form not in (None, "main_text", "appendix"):
            raise ConfigError("r3_form must be null, 'main_text' or 'appendix'")
        st = self.initial_state
        if isinstance(st, dict):
            if len(st.keys() & {"vector", "density"}) != 1:
                raise ConfigError("explicit initial_state needs exactly one of 'vector' or 'density'")
        elif st not in ("zero", "plus", "random", "random_mixed"):
            raise ConfigError("initial_state must be zero, plus, random, random_mixed or an explicit state")
