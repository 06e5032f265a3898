"""Experiment configuration: a blocked key-value file, strictly validated.

Configs are YAML mappings of named blocks.  Every key is checked against
the block schema and unknown keys are rejected, so a typo fails fast
instead of silently running defaults.  The canonical dump (sorted keys,
seed applied) is what run manifests hash.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from ..errors import ConfigError
from ..spectral import DomainSpec

__all__ = ["ExperimentConfig", "load_config", "resolve_config_path",
           "profile_samples", "PROFILE_NAMES"]

PROFILE_NAMES = ("sine-bump",)


def profile_samples(name: str, times: np.ndarray, horizon: float) -> np.ndarray:
    """Sample a named causal profile, vanishing at both horizon ends."""
    if name == "sine-bump":
        return np.sin(np.pi * np.asarray(times) / horizon) ** 2
    raise ConfigError(f"unknown profile {name!r}; known: {PROFILE_NAMES}")


def _take(block: dict, name: str, allowed: dict) -> dict:
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) {unknown} in block '{name}'")
    merged = dict(allowed)
    merged.update(block)
    return merged


def _require(value, name: str, key: str):
    if value is None:
        raise ConfigError(f"block '{name}' requires key '{key}'")
    return value


@dataclass(frozen=True)
class DomainBlock:
    kind: str
    lengths: tuple
    kappa: float

    @staticmethod
    def parse(block: dict) -> "DomainBlock":
        vals = _take(block, "domain",
                     {"kind": "interval", "lengths": [1.0], "kappa": 1.0})
        lengths = vals["lengths"]
        if not isinstance(lengths, (list, tuple)):
            raise ConfigError("domain.lengths must be a list")
        return DomainBlock(str(vals["kind"]),
                           tuple(float(x) for x in lengths),
                           float(vals["kappa"]))

    def build(self) -> DomainSpec:
        try:
            return DomainSpec(self.kind, self.lengths, self.kappa)
        except ValueError as exc:
            raise ConfigError(f"invalid domain: {exc}") from exc


@dataclass(frozen=True)
class ModesBlock:
    count: int
    controlled: int

    @staticmethod
    def parse(block: dict) -> "ModesBlock":
        vals = _take(block, "modes", {"count": 32, "controlled": 4})
        count, controlled = int(vals["count"]), int(vals["controlled"])
        if count < 1 or controlled < 1 or controlled > count:
            raise ConfigError("modes.count and modes.controlled must satisfy "
                              "1 <= controlled <= count")
        return ModesBlock(count, controlled)


@dataclass(frozen=True)
class ActuatorBlock:
    kind: str
    count: int | None
    counts: tuple | None
    points: tuple | None
    candidates_per_axis: int
    select: int | None

    @staticmethod
    def parse(block: dict) -> "ActuatorBlock":
        vals = _take(block, "actuators",
                     {"kind": "dct", "count": None, "counts": None,
                      "points": None, "candidates_per_axis": 64,
                      "select": None})
        kind = str(vals["kind"])
        if kind not in ("dct", "explicit", "greedy"):
            raise ConfigError(f"unknown actuator kind {kind!r}")
        points = vals["points"]
        if points is not None:
            points = tuple(tuple(float(x) for x in np.atleast_1d(row))
                           for row in points)
        counts = vals["counts"]
        if counts is not None:
            counts = tuple(int(c) for c in counts)
        return ActuatorBlock(kind,
                             None if vals["count"] is None else int(vals["count"]),
                             counts, points,
                             int(vals["candidates_per_axis"]),
                             None if vals["select"] is None else int(vals["select"]))


@dataclass(frozen=True)
class ControlBlock:
    gain: float | None
    target_rate: float | None
    horizon: float
    dt: float
    reference: tuple
    fixed_point: bool
    initial: tuple | None

    @staticmethod
    def parse(block: dict) -> "ControlBlock":
        vals = _take(block, "control",
                     {"gain": None, "target_rate": None, "horizon": 1.0,
                      "dt": 0.002, "reference": None, "fixed_point": True,
                      "initial": None})
        if vals["gain"] is None and vals["target_rate"] is None:
            raise ConfigError("control needs either gain or target_rate")
        reference = vals["reference"]
        reference = () if reference is None else tuple(float(x) for x in reference)
        initial = vals["initial"]
        if initial is not None:
            initial = tuple(float(x) for x in initial)
        horizon, dt = float(vals["horizon"]), float(vals["dt"])
        if horizon <= 0 or dt <= 0:
            raise ConfigError("control.horizon and control.dt must be positive")
        return ControlBlock(
            None if vals["gain"] is None else float(vals["gain"]),
            None if vals["target_rate"] is None else float(vals["target_rate"]),
            horizon, dt, reference, bool(vals["fixed_point"]), initial)


@dataclass(frozen=True)
class TrackBlock:
    delta: float
    mu: float
    deltas: tuple
    profile: str

    @staticmethod
    def parse(block: dict) -> "TrackBlock":
        vals = _take(block, "track",
                     {"delta": 0.05, "mu": 1.0,
                      "deltas": [0.2, 0.1, 0.05, 0.025],
                      "profile": "sine-bump"})
        profile = str(vals["profile"])
        if profile not in PROFILE_NAMES:
            raise ConfigError(f"unknown profile {profile!r}")
        return TrackBlock(float(vals["delta"]), float(vals["mu"]),
                          tuple(float(d) for d in vals["deltas"]), profile)


@dataclass(frozen=True)
class PlasmonicBlock:
    c_m: float
    kappa: float | None
    contrasts: tuple | str
    coupling_scale: float
    dictionary: tuple | str
    perturb_interaction: bool

    @staticmethod
    def parse(block: dict) -> "PlasmonicBlock":
        vals = _take(block, "plasmonic",
                     {"c_m": 1.0, "kappa": None, "contrasts": "ones",
                      "coupling_scale": 0.05, "dictionary": "identity",
                      "perturb_interaction": False})
        contrasts = vals["contrasts"]
        if contrasts != "ones":
            contrasts = tuple(float(x) for x in contrasts)
        dictionary = vals["dictionary"]
        if dictionary != "identity":
            dictionary = tuple(tuple(float(x) for x in row) for row in dictionary)
        return PlasmonicBlock(
            float(vals["c_m"]),
            None if vals["kappa"] is None else float(vals["kappa"]),
            contrasts, float(vals["coupling_scale"]), dictionary,
            bool(vals["perturb_interaction"]))


@dataclass(frozen=True)
class RestrictionBlock:
    probes: tuple
    horizons: tuple
    sources: tuple | None
    amplitudes: tuple | None
    samples: int
    quad_order: int

    @staticmethod
    def parse(block: dict) -> "RestrictionBlock":
        vals = _take(block, "restriction",
                     {"probes": None, "horizons": None, "sources": None,
                      "amplitudes": None, "samples": 48, "quad_order": 12})
        probes = _require(vals["probes"], "restriction", "probes")
        horizons = _require(vals["horizons"], "restriction", "horizons")
        to_rows = lambda rows: tuple(
            tuple(float(x) for x in np.atleast_1d(row)) for row in rows)
        sources = vals["sources"]
        amplitudes = vals["amplitudes"]
        return RestrictionBlock(
            to_rows(probes), tuple(float(h) for h in horizons),
            None if sources is None else to_rows(sources),
            None if amplitudes is None else tuple(float(a) for a in amplitudes),
            int(vals["samples"]), int(vals["quad_order"]))


@dataclass(frozen=True)
class CoercivityBlock:
    cells: tuple
    modes_per_cell: int

    @staticmethod
    def parse(block: dict) -> "CoercivityBlock":
        vals = _take(block, "coercivity",
                     {"cells": [8, 16, 32, 64], "modes_per_cell": 8})
        cells = tuple(int(m) for m in vals["cells"])
        if any(m < 1 for m in cells):
            raise ConfigError("coercivity.cells must be positive")
        return CoercivityBlock(cells, int(vals["modes_per_cell"]))


@dataclass(frozen=True)
class SweepBlock:
    kind: str
    values: tuple

    @staticmethod
    def parse(block: dict) -> "SweepBlock":
        vals = _take(block, "sweep", {"kind": None, "values": None})
        kind = str(_require(vals["kind"], "sweep", "kind"))
        if kind not in ("delta", "gain", "mesh"):
            raise ConfigError(f"unknown sweep kind {kind!r}")
        values = tuple(float(v) for v in _require(vals["values"], "sweep", "values"))
        if len(values) < 1:
            raise ConfigError("sweep.values must be nonempty")
        return SweepBlock(kind, values)


@dataclass(frozen=True)
class TolerancesBlock:
    cross_integrator: float
    convergence: float
    low_mode: float
    resolution: float

    @staticmethod
    def parse(block: dict) -> "TolerancesBlock":
        vals = _take(block, "tolerances",
                     {"cross_integrator": 1e-8, "convergence": 1e-6,
                      "low_mode": 1e-8, "resolution": 1e-6})
        return TolerancesBlock(*(float(vals[k]) for k in
                                 ("cross_integrator", "convergence",
                                  "low_mode", "resolution")))


_BLOCK_PARSERS = {
    "domain": DomainBlock.parse,
    "modes": ModesBlock.parse,
    "actuators": ActuatorBlock.parse,
    "control": ControlBlock.parse,
    "track": TrackBlock.parse,
    "plasmonic": PlasmonicBlock.parse,
    "restriction": RestrictionBlock.parse,
    "coercivity": CoercivityBlock.parse,
    "sweep": SweepBlock.parse,
    "tolerances": TolerancesBlock.parse,
}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    domain: DomainBlock
    modes: ModesBlock
    actuators: ActuatorBlock
    control: ControlBlock
    track: TrackBlock
    plasmonic: PlasmonicBlock
    tolerances: TolerancesBlock
    restriction: RestrictionBlock | None = None
    coercivity: CoercivityBlock | None = None
    sweep: SweepBlock | None = None
    canonical: str = field(default="", compare=False)

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.canonical.encode()).hexdigest()

    @staticmethod
    def from_mapping(data: dict, seed_override: int | None = None) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config root must be a mapping of blocks")
        unknown = sorted(set(data) - set(_BLOCK_PARSERS) - {"seed"})
        if unknown:
            raise ConfigError(f"unknown top-level block(s) {unknown}")
        seed = data.get("seed")
        if seed_override is not None:
            seed = seed_override
        if seed is None:
            raise ConfigError("a seed is required (config key or --seed)")
        seed = int(seed)
        blocks = {}
        for name, parser in _BLOCK_PARSERS.items():
            raw = data.get(name)
            if raw is None:
                blocks[name] = None
            elif not isinstance(raw, dict):
                raise ConfigError(f"block '{name}' must be a mapping")
            else:
                blocks[name] = parser(raw)
        # Blocks every experiment relies on get their defaults when absent.
        for name in ("domain", "modes", "actuators", "control", "track",
                     "plasmonic", "tolerances"):
            if blocks[name] is None:
                blocks[name] = _BLOCK_PARSERS[name]({})
        canon_source = {k: v for k, v in data.items() if k != "seed"}
        canon_source["seed"] = seed
        canonical = yaml.safe_dump(canon_source, sort_keys=True)
        return ExperimentConfig(seed=seed, canonical=canonical, **blocks)


def resolve_config_path(spec: str):
    """Map the literal name 'default' to the packaged config file."""
    if spec == "default":
        return resources.files("heattrack.configs") / "default.yaml"
    return spec


def load_config(path_or_name: str,
                seed_override: int | None = None) -> ExperimentConfig:
    resolved = resolve_config_path(path_or_name)
    try:
        if hasattr(resolved, "read_text"):
            text = resolved.read_text()
        else:
            with open(resolved, "r", encoding="utf-8") as handle:
                text = handle.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path_or_name!r}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return ExperimentConfig.from_mapping(data or {}, seed_override)
