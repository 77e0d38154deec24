"""Experiment configuration: one JSON document drives every subcommand."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Any, Optional

import jsonschema
import numpy as np

from . import utility as ut
from .capacity import CapacityRegion, quadratic_state, simplex_region, simplex_state
from .markov_env import build_generator
from .mimo import ChannelSet, bc_state_region, mac_region_scalar


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


def _schema():
    return json.loads(resources.files("htsched").joinpath("data/config.schema.json").read_text())


def bundled(name: str = "symmetric2") -> dict:
    return json.loads(resources.files("htsched").joinpath(f"data/{name}.json").read_text())


@dataclass
class EnvironmentConfig:
    holding_rates: list
    embedded_matrix: list
    initial_state: int = 0


@dataclass
class RegionConfig:
    kind: str
    users: Optional[int] = None
    sum_capacity: Optional[list] = None
    gains: Optional[list] = None
    gains_imag: Optional[list] = None
    channels: Optional[list] = None
    channels_imag: Optional[list] = None
    powers: Optional[list] = None
    total_power: Optional[float] = None
    family: Optional[str] = None
    radius: Optional[list] = None
    split_grid_size: int = 21
    directions: int = 11


@dataclass
class UtilityConfig:
    family: str = "linear-log"
    weights: Optional[list] = None
    shift: float = 1.0
    beta: float = 1.0
    alpha: float = 0.5


@dataclass
class TrafficConfig:
    mu: list
    service_scv: Optional[list] = None
    arrival_scv: Optional[list] = None
    arrival_rate: Optional[list] = None  # None: nominal rates mu_j rho_j(i)


@dataclass
class SimulationConfig:
    policy: str = "utility-max"
    horizon: float = 1000.0
    grid_step: float = 1.0
    log_events: bool = False


@dataclass
class HeavyTrafficConfig:
    theta: Any = -0.3
    r_values: list = field(default_factory=lambda: [4, 8, 16, 32])
    replicas: int = 20
    horizon: float = 10.0
    grid_step: float = 0.01
    policies: list = field(default_factory=lambda: ["utility-max", "static-rho", "maxweight"])


@dataclass
class RdrsConfig:
    dt: Optional[float] = None
    paths: int = 200
    t_probe: Optional[float] = None
    alpha: float = 0.01


@dataclass
class OutputConfig:
    directory: str = "runs"
    formats: list = field(default_factory=lambda: ["csv", "json"])


@dataclass
class ExperimentConfig:
    environment: EnvironmentConfig
    region: RegionConfig
    utility: UtilityConfig
    traffic: TrafficConfig
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    heavy_traffic: HeavyTrafficConfig = field(default_factory=HeavyTrafficConfig)
    rdrs: RdrsConfig = field(default_factory=RdrsConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0

    # -------------------------------------------------------- parsing

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(doc, _schema())
        except jsonschema.ValidationError as exc:
            path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(path, exc.message) from None
        doc = copy.deepcopy(doc)
        cfg = cls(
            environment=EnvironmentConfig(**doc["environment"]),
            region=RegionConfig(**doc["region"]),
            utility=UtilityConfig(**doc.get("utility", {})),
            traffic=TrafficConfig(**doc["traffic"]),
            simulation=SimulationConfig(**doc.get("simulation", {})),
            heavy_traffic=HeavyTrafficConfig(**doc.get("heavy_traffic", {})),
            rdrs=RdrsConfig(**doc.get("rdrs", {})),
            output=OutputConfig(**doc.get("output", {})),
            seed=doc.get("seed", 0),
        )
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError("<document>", f"not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        """Document form; unset optional fields are omitted so it re-validates."""
        doc = asdict(self)
        return {k: ({f: v for f, v in sec.items() if v is not None} if isinstance(sec, dict) else sec) for k, sec in doc.items()}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    # -------------------------------------------------------- cross-field checks

    @property
    def K(self) -> int:
        return len(self.environment.holding_rates)

    @property
    def J(self) -> int:
        return len(self.traffic.mu)

    def check(self) -> None:
        K, J = self.K, self.J
        env = self.environment
        if len(env.embedded_matrix) != K or any(len(row) != K for row in env.embedded_matrix):
            raise ConfigError("environment.embedded_matrix", f"must be {K} x {K}")
        if not env.initial_state < K:
            raise ConfigError("environment.initial_state", f"must be below K={K}")
        try:
            build_generator(env.holding_rates, env.embedded_matrix)
        except ValueError as exc:
            raise ConfigError("environment", str(exc)) from None

        def shape(path, val, rows, cols):
            if val is None:
                return
            if len(val) != rows or any(len(r) != cols for r in val):
                raise ConfigError(path, f"must be {rows} x {cols}")

        reg = self.region
        if reg.kind == "simplex" or (reg.kind == "custom" and reg.family in (None, "simplex")):
            if reg.sum_capacity is None or len(reg.sum_capacity) != K:
                raise ConfigError("region.sum_capacity", f"needs one value per state ({K})")
        if reg.kind == "custom" and reg.family == "quadratic":
            if reg.sum_capacity is None or len(reg.sum_capacity) != K:
                raise ConfigError("region.sum_capacity", f"needs one value per state ({K})")
            if reg.radius is None or len(reg.radius) != K:
                raise ConfigError("region.radius", f"needs one value per state ({K})")
            if J != 2:
                raise ConfigError("region.family", "the quadratic family is defined for 2 users")
        if reg.kind in ("mac2", "bc2"):
            if J != 2:
                raise ConfigError("region.kind", f"{reg.kind} needs exactly 2 users, traffic has {J}")
            if reg.gains is None:
                raise ConfigError("region.gains", "required")
            shape("region.gains", reg.gains, K, J)
            shape("region.gains_imag", reg.gains_imag, K, J)
        if reg.kind == "mac2" and (reg.powers is None or len(reg.powers) != J):
            raise ConfigError("region.powers", f"needs one power per user ({J})")
        if reg.kind == "bc2" and reg.total_power is None:
            raise ConfigError("region.total_power", "required for bc2")
        if reg.kind == "mimo-mac":
            H = self._channels()
            if H.shape[:2] != (K, J):
                raise ConfigError("region.channels", f"leading dimensions must be ({K}, {J}), got {H.shape[:2]}")
            if H.shape[2] != 1:
                raise ConfigError("region.channels", "per-user receive dimension N must be 1 for a facet region")
            if reg.powers is None or len(reg.powers) != J:
                raise ConfigError("region.powers", f"needs one power per user ({J})")
        if reg.users is not None and reg.users != J:
            raise ConfigError("region.users", f"is {reg.users} but traffic.mu has {J} entries")

        u = self.utility
        if u.weights is not None and len(u.weights) != J:
            raise ConfigError("utility.weights", f"needs {J} entries")
        tr = self.traffic
        if tr.service_scv is not None and len(tr.service_scv) != J:
            raise ConfigError("traffic.service_scv", f"needs {J} entries")
        shape("traffic.arrival_scv", tr.arrival_scv, K, J)
        shape("traffic.arrival_rate", tr.arrival_rate, K, J)
        ht = self.heavy_traffic
        if isinstance(ht.theta, list):
            shape("heavy_traffic.theta", ht.theta, K, J)
        if list(ht.r_values) != sorted(set(ht.r_values)):
            raise ConfigError("heavy_traffic.r_values", "must be strictly increasing")
        if ht.grid_step > ht.horizon:
            raise ConfigError("heavy_traffic.grid_step", "exceeds the horizon")
        if self.simulation.grid_step > self.simulation.horizon:
            raise ConfigError("simulation.grid_step", "exceeds the horizon")
        if self.rdrs.t_probe is not None and self.rdrs.t_probe > ht.horizon:
            raise ConfigError("rdrs.t_probe", "lies beyond heavy_traffic.horizon")

    # -------------------------------------------------------- builders

    def _channels(self) -> np.ndarray:
        reg = self.region
        H = np.asarray(reg.channels, dtype=float)
        if reg.channels_imag is not None:
            H = H + 1j * np.asarray(reg.channels_imag, dtype=float)
        if H.ndim != 4:
            raise ConfigError("region.channels", f"must be a (K, J, N, M) nested array, got {H.ndim} dimensions")
        return H.astype(complex)

    def _gains(self) -> np.ndarray:
        g = np.asarray(self.region.gains, dtype=complex)
        if self.region.gains_imag is not None:
            g = g + 1j * np.asarray(self.region.gains_imag, dtype=float)
        return g

    def generator(self):
        return build_generator(self.environment.holding_rates, self.environment.embedded_matrix)

    def build_region(self) -> CapacityRegion:
        reg, J = self.region, self.J
        if reg.kind == "simplex" or (reg.kind == "custom" and reg.family in (None, "simplex")):
            return simplex_region(J, reg.sum_capacity)
        if reg.kind == "custom":
            return CapacityRegion(
                tuple(quadratic_state(R, C, J) for R, C in zip(reg.radius, reg.sum_capacity)), "quadratic"
            )
        if reg.kind == "mac2":
            return mac_region_scalar(ChannelSet.scalar(self._gains(), reg.powers))
        if reg.kind == "mimo-mac":
            return mac_region_scalar(ChannelSet(self._channels(), reg.powers))
        if reg.kind == "bc2":
            ch = ChannelSet.scalar(self._gains())
            return CapacityRegion(
                tuple(
                    bc_state_region(ch.H[i], reg.total_power, reg.split_grid_size, reg.directions)
                    for i in range(ch.K)
                ),
                "bc",
            )
        raise ConfigError("region.kind", f"unknown kind {reg.kind!r}")

    def channel_set(self) -> Optional[ChannelSet]:
        reg = self.region
        if reg.kind in ("mac2", "bc2"):
            return ChannelSet.scalar(self._gains(), reg.powers, reg.total_power)
        if reg.kind == "mimo-mac":
            return ChannelSet(self._channels(), reg.powers)
        return None

    def build_utility(self) -> ut.UtilityFamily:
        return ut.from_config(asdict(self.utility), self.J)

    def theta(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.heavy_traffic.theta, dtype=float), (self.K, self.J)).copy()

    def arrival_scv(self) -> np.ndarray:
        a = self.traffic.arrival_scv
        return np.ones((self.K, self.J)) if a is None else np.asarray(a, dtype=float)

    def service_scv(self) -> np.ndarray:
        b = self.traffic.service_scv
        return np.ones(self.J) if b is None else np.asarray(b, dtype=float)


def apply_override(doc: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value`` to a config document; value is parsed as JSON when possible."""
    if "=" not in assignment:
        raise ConfigError(assignment, "override must look like path=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    node = doc
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(path, f"{k} is not a section")
    node[keys[-1]] = value
    return doc
