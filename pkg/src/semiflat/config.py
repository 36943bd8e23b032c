"""Run configuration: a single versioned YAML tree holding every numeric
threshold the modules use, so that reruns are reproducible and the manifest
can echo the exact constants of a run."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field, asdict
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigInvalid

CONFIG_VERSION = 1

# Constants produced by the `calibrate` brute-force sweeps (seed 20240801,
# 10^4 constant-gauge + 400 field-gauge + 10^3 displacement samples); see
# calibrate.run_calibration.
CALIBRATED_UNITARY_RATIO = 1.05        # bound on |h*A - A0| / sup|F_A|^(1/2)
CALIBRATED_GAUGE_DISPLACEMENT = 9.4    # lower bound on |exp(v)*A' - A'| / |v|
CALIBRATION_SEED = 20240801


@dataclass
class GeometryConfig:
    potential: dict = dc_field(default_factory=lambda: {"name": "flat"})
    resolution: int = 64
    periods: tuple = (1.0, 1.0)
    cy_tol: float = 1e-8

    def build_potential(self):
        from .geometry import Potential

        spec = dict(self.potential)
        name = spec.pop("name", "flat")
        if name == "flat":
            return Potential.flat(periods=self.periods)
        if name == "quadratic":
            return Potential.quadratic_form(np.asarray(spec["matrix"], dtype=float),
                                            periods=self.periods)
        if name == "cosine":
            return Potential.cosine(spec.get("amplitude", 0.01),
                                    modes=tuple(spec.get("modes", (1, 1))),
                                    quadratic=spec.get("quadratic"),
                                    periods=self.periods)
        if name == "samples":
            data = np.loadtxt(spec["file"])
            n = int(np.sqrt(data.shape[0]))
            grid = data[:, 2].reshape(n, n)
            return Potential.from_samples(grid, quadratic=spec.get("quadratic"),
                                          periods=self.periods)
        raise ConfigInvalid("geometry.potential.name", f"unknown potential '{name}'")


@dataclass
class SolverConfig:
    tol: float = 1e-6
    max_iters: int = 2000
    blowup_guard_factor: float = 1e3
    c0: float = 0.0


@dataclass
class Thresholds:
    cy_tol: float = 1e-8
    moduli_tol: float = 1e-6
    branch_tol: float = 1e-3
    eig_tol: float = 1e-9
    hol_warn_tol: float = 1e-6
    flatten_energy_max: float = 0.05
    newton_tol: float = 1e-12
    newton_max_iters: int = 50
    delta0: float = 0.5
    eta: float = 0.2
    delta_eta: Optional[float] = None   # auto-calibrated from the corpus
    phi_jump_tol: float = 0.3
    bubble_slope_tol: float = 0.3
    bubble_bounded_delta: float = 0.1
    unitary_ratio: float = CALIBRATED_UNITARY_RATIO
    gauge_displacement: float = CALIBRATED_GAUGE_DISPLACEMENT


@dataclass
class SeedConfig:
    kind: str = "flat"
    a0: complex = 0.45 + 0.3j
    winding: tuple = (1, -1)
    trace_winding: tuple = (0, 0)
    amplitude: float = 5e-3
    fiber_band: tuple = (2, 3)
    base_band: int = 2
    center: tuple = (0.5, 0.5)
    base_width: float = 0.08
    fiber_mode: int = 2

    def build(self, nb, nf, epsilon, rng):
        from . import seeds

        if self.kind == "flat":
            return seeds.flat_seed(nb, nf, epsilon=epsilon, a0=complex(self.a0))
        if self.kind == "abelian-winding":
            return seeds.abelian_winding_seed(
                nb, nf, epsilon=epsilon, winding=tuple(self.winding),
                trace_winding=tuple(self.trace_winding),
                amplitude=self.amplitude, fiber_band=tuple(self.fiber_band),
                base_band=self.base_band, rng=rng)
        if self.kind == "abelian-lump":
            return seeds.abelian_lump_seed(
                nb, nf, epsilon=epsilon, center=tuple(self.center),
                base_width=self.base_width, fiber_mode=self.fiber_mode,
                amplitude=self.amplitude)
        if self.kind == "perturbed":
            return seeds.perturbed_seed(nb, nf, epsilon=epsilon,
                                        a0=complex(self.a0),
                                        amplitude=self.amplitude, rng=rng)
        raise ConfigInvalid("seed.kind", f"unknown seed kind '{self.kind}'")


@dataclass
class RunConfig:
    config_version: int = CONFIG_VERSION
    geometry: GeometryConfig = dc_field(default_factory=GeometryConfig)
    base_grid: int = 16
    fiber_grid: int = 16
    epsilons: tuple = (1.0, 0.5, 0.25, 0.125)
    solver: SolverConfig = dc_field(default_factory=SolverConfig)
    thresholds: Thresholds = dc_field(default_factory=Thresholds)
    seed: SeedConfig = dc_field(default_factory=SeedConfig)
    rng_seed: int = 12345
    pipeline: tuple = ("geometry", "family", "mirror")
    output: str = "out"

    def validate(self):
        if self.config_version != CONFIG_VERSION:
            raise ConfigInvalid("config_version",
                                f"expected {CONFIG_VERSION}, got {self.config_version}")
        eps = list(self.epsilons)
        if not eps or any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigInvalid("epsilons", "must be strictly decreasing")
        if any(e <= 0 or e > 1 for e in eps):
            raise ConfigInvalid("epsilons", "values must lie in (0, 1]")
        for name in ("base_grid", "fiber_grid"):
            n = getattr(self, name)
            if n < 8 or (n & (n - 1)) != 0:
                raise ConfigInvalid(name, "grid sizes must be powers of two, >= 8")
        th = self.thresholds
        for fname in ("cy_tol", "moduli_tol", "branch_tol", "eig_tol",
                      "hol_warn_tol", "flatten_energy_max", "newton_tol",
                      "delta0", "eta", "phi_jump_tol", "bubble_slope_tol",
                      "bubble_bounded_delta", "unitary_ratio",
                      "gauge_displacement"):
            if getattr(th, fname) <= 0:
                raise ConfigInvalid(f"thresholds.{fname}", "must be positive")
        if th.delta_eta is not None and th.delta_eta <= 0:
            raise ConfigInvalid("thresholds.delta_eta", "must be positive")
        if self.solver.tol <= 0:
            raise ConfigInvalid("solver.tol", "must be positive")
        if self.solver.max_iters < 1:
            raise ConfigInvalid("solver.max_iters", "must be at least 1")
        seen = {"geometry", "family", "mirror", "solve"}
        for stage in self.pipeline:
            if stage not in seen:
                raise ConfigInvalid("pipeline", f"unknown stage '{stage}'")
        return self

    def echo(self) -> dict:
        """Flat dictionary of every constant, for the run manifest."""
        out = asdict(self)
        out["seed"]["a0"] = repr(complex(self.seed.a0))
        return out


def _update_dataclass(obj, data, path):
    for key, val in data.items():
        if not hasattr(obj, key):
            raise ConfigInvalid(f"{path}{key}", "unknown field")
        cur = getattr(obj, key)
        if hasattr(cur, "__dataclass_fields__") and isinstance(val, dict):
            _update_dataclass(cur, val, f"{path}{key}.")
        else:
            if isinstance(cur, tuple) and isinstance(val, (list, tuple)):
                val = tuple(val)
            if key == "a0" and isinstance(val, str):
                val = complex(val)
            setattr(obj, key, val)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    cfg = RunConfig()
    _update_dataclass(cfg, data, "")
    return cfg.validate()


def dump_config(cfg: RunConfig, path):
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.echo(), fh, sort_keys=True)
