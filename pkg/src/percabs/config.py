"""Scenario configuration: TOML loading, validation and the two shipped presets."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .models import Combiner, ErrorFn, UnsafeSet, VehicleKind, VehicleParams
from .partition import PartitionSpec
from .perception import EnvironmentId, NoiseKind, SyntheticPerceptionModel

PRESETS = ("gem", "agbot")


class ConfigError(ValueError):
    pass


class MarginPolicy(str, enum.Enum):
    INTERVAL_GAP = "interval_gap"
    FIXED_EPSILON = "fixed_epsilon"


@dataclass(frozen=True)
class SolverConfig:
    min_box_width: float = 1e-4
    max_nodes: int = 2_000_000
    falsifier_grid: int = 25
    nm_iters: int = 200
    margin_policy: MarginPolicy = MarginPolicy.INTERVAL_GAP
    epsilon: float = 0.0
    # branch-and-bound stops once lower >= (1 - gap_tol) * upper
    gap_tol: float = 0.02
    batch: int = 4096

    def __post_init__(self):
        object.__setattr__(self, "margin_policy", MarginPolicy(self.margin_policy))
        if not (self.min_box_width > 0 and self.max_nodes > 0 and self.falsifier_grid > 1
                and self.nm_iters >= 0 and self.batch > 0 and 0 <= self.gap_tol < 1):
            raise ConfigError("solver widths and budgets must be positive")
        if self.margin_policy is MarginPolicy.FIXED_EPSILON and not self.epsilon >= 0:
            raise ConfigError("fixed_epsilon policy needs a non-negative epsilon")


@dataclass(frozen=True)
class ScenarioConfig:
    name: str
    params: VehicleParams
    error_fn: ErrorFn
    unsafe: UnsafeSet
    initial: Tuple[Tuple[float, float], Tuple[float, float]]  # (y range, theta range) at x = 0
    partition: PartitionSpec
    percept_search: Tuple[Tuple[float, float], Tuple[float, float]]  # (d range, psi range)
    solver: SolverConfig = field(default_factory=SolverConfig)
    norm: str = "l2"
    environments: Tuple[EnvironmentId, ...] = (EnvironmentId(0, "default"),)
    perception: Optional[SyntheticPerceptionModel] = None

    def __post_init__(self):
        object.__setattr__(self, "error_fn", ErrorFn(self.error_fn))
        if self.norm not in ("l2", "linf"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        for lo, hi in (*self.initial, *self.percept_search):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo <= hi):
                raise ConfigError(f"invalid range [{lo}, {hi}]")
        for lo, hi in (self.partition.theta_range, self.initial[1]):
            if lo < -math.pi or hi > math.pi:
                raise ConfigError("theta ranges must lie within [-pi, pi]")
        ids = [e.id for e in self.environments]
        if len(set(ids)) != len(ids):
            raise ConfigError("environment ids must be unique")
        (dlo, dhi), (plo, phi) = self.percept_search
        ylo, yhi = self.partition.y_range
        tlo, thi = self.partition.theta_range
        # search box must cover the ground-truth image of the domain, d = -y, psi = -theta
        if not (dlo <= -yhi and -ylo <= dhi and plo <= -thi and -tlo <= phi):
            raise ConfigError("percept_search does not contain the ground-truth image of "
                              "the partition domain")

    @property
    def search_box(self):
        return np.array(self.percept_search, dtype=float)

    def with_error_fn(self, v) -> "ScenarioConfig":
        return replace(self, error_fn=ErrorFn(v))

    def with_partition(self, n_y, n_theta) -> "ScenarioConfig":
        return replace(self, partition=replace(self.partition, n_y=n_y, n_theta=n_theta))

    def with_solver(self, **kw) -> "ScenarioConfig":
        return replace(self, solver=replace(self.solver, **kw))

    def validate_percepts(self, data) -> None:
        """Reject datasets whose percepts fall outside the percept search box."""
        if len(data) == 0:
            return
        box = self.search_box
        p = np.vstack([data.truth, data.perceived])
        outside = (p < box[:, 0]) | (p > box[:, 1])
        if outside.any():
            raise ConfigError(f"{int(outside.any(axis=1).sum())} percepts lie outside "
                              "percept_search; enlarge the search box")


def _pair(v, what):
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a [lo, hi] pair") from None
    return lo, hi


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    try:
        p = doc["params"]
        params = VehicleParams(v_f=p["v_f"], dt=p["dt"], sat_limit=p["sat_limit"],
                               gain=p["gain"], kind=VehicleKind(p.get("kind", "bicycle")),
                               wheel_base=p.get("wheel_base"))
        u = doc["unsafe"]
        unsafe = UnsafeSet(u["y_limit"], u.get("theta_limit"), Combiner(u.get("combiner", "and")))
        part = doc["partition"]
        partition = PartitionSpec(_pair(part["y_range"], "partition.y_range"),
                                  _pair(part["theta_range"], "partition.theta_range"),
                                  int(part["n_y"]), int(part["n_theta"]))
        init = doc.get("initial", {"y": part["y_range"], "theta": part["theta_range"]})
        initial = (_pair(init["y"], "initial.y"), _pair(init["theta"], "initial.theta"))
        ps = doc["percept_search"]
        search = (_pair(ps["d"], "percept_search.d"), _pair(ps["psi"], "percept_search.psi"))
        solver = SolverConfig(**doc.get("solver", {}))
        envs, model = _perception_from_dict(doc.get("perception"))
        return ScenarioConfig(name=str(doc.get("name", "custom")), params=params,
                              error_fn=ErrorFn(doc.get("error_fn", "V1")), unsafe=unsafe,
                              initial=initial, partition=partition, percept_search=search,
                              solver=solver, norm=str(doc.get("norm", "l2")),
                              environments=envs, perception=model)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc!r}") from None


def _perception_from_dict(doc):
    if not doc:
        return (EnvironmentId(0, "default"),), SyntheticPerceptionModel.identity()
    envs: List[EnvironmentId] = []
    dist = {}
    for e in doc.get("environments", [{"id": 0, "label": "default"}]):
        envs.append(EnvironmentId(int(e["id"]), str(e.get("label", ""))))
        dist[int(e["id"])] = (e.get("A", [[1.0, 0.0], [0.0, 1.0]]), e.get("b", [0.0, 0.0]))
    model = SyntheticPerceptionModel(dist, float(doc.get("noise_bound", 0.01)),
                                     NoiseKind(doc.get("noise_kind", "uniform_ball")))
    return tuple(envs), model


def scenario_to_dict(cfg: ScenarioConfig) -> dict:
    p = cfg.params
    out = {
        "name": cfg.name,
        "error_fn": cfg.error_fn.value,
        "norm": cfg.norm,
        "params": {"kind": p.kind.value, "v_f": p.v_f, "dt": p.dt, "sat_limit": p.sat_limit,
                   "gain": p.gain},
        "unsafe": {"y_limit": cfg.unsafe.y_limit, "combiner": cfg.unsafe.combiner.value},
        "initial": {"y": list(cfg.initial[0]), "theta": list(cfg.initial[1])},
        "partition": {"y_range": list(cfg.partition.y_range),
                      "theta_range": list(cfg.partition.theta_range),
                      "n_y": cfg.partition.n_y, "n_theta": cfg.partition.n_theta},
        "percept_search": {"d": list(cfg.percept_search[0]), "psi": list(cfg.percept_search[1])},
        "solver": {"min_box_width": cfg.solver.min_box_width, "max_nodes": cfg.solver.max_nodes,
                   "falsifier_grid": cfg.solver.falsifier_grid, "nm_iters": cfg.solver.nm_iters,
                   "margin_policy": cfg.solver.margin_policy.value,
                   "epsilon": cfg.solver.epsilon, "gap_tol": cfg.solver.gap_tol,
                   "batch": cfg.solver.batch},
    }
    if p.wheel_base is not None:
        out["params"]["wheel_base"] = p.wheel_base
    if cfg.unsafe.theta_limit is not None:
        out["unsafe"]["theta_limit"] = cfg.unsafe.theta_limit
    if cfg.perception is not None:
        out["perception"] = {
            "noise_bound": cfg.perception.noise_bound,
            "noise_kind": cfg.perception.noise_kind.value,
            "environments": [
                {"id": e.id, "label": e.label,
                 "A": cfg.perception.distortions[e.id][0].tolist(),
                 "b": cfg.perception.distortions[e.id][1].tolist()}
                for e in cfg.environments if e.id in cfg.perception.distortions],
        }
    return out


def read_scenario_bytes(source) -> Tuple[bytes, str]:
    """Raw TOML bytes and a display path for a file path or a preset name."""
    if str(source) in PRESETS:
        ref = resources.files("percabs") / "presets" / f"{source}.toml"
        return ref.read_bytes(), f"preset:{source}"
    path = Path(source)
    try:
        return path.read_bytes(), str(path)
    except OSError as exc:
        raise ConfigError(f"cannot read scenario {source}: {exc.strerror}") from None


def load_scenario(source) -> ScenarioConfig:
    raw, where = read_scenario_bytes(source)
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None
    return scenario_from_dict(doc)


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()
