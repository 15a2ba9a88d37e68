"""Ground-truth/perceived percept pairs: a synthetic perception stand-in plus CSV I/O.

The synthetic model distorts the ground truth with a per-environment affine
map and adds noise bounded in l2 norm, which keeps the true center of each
cell known to tests.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .models import Percept, State, ground_truth_arrays
from .partition import Cell

CSV_COLUMNS = ("x", "y", "theta", "env_id", "d_star", "psi_star", "d_hat", "psi_hat")


class NoiseKind(str, enum.Enum):
    UNIFORM_BALL = "uniform_ball"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


class Provenance(str, enum.Enum):
    SYNTHETIC = "synthetic"
    IMPORTED_CSV = "imported_csv"


@dataclass(frozen=True)
class EnvironmentId:
    id: int
    label: str = ""


@dataclass
class SyntheticPerceptionModel:
    """Per-environment distortion ``A_e @ truth + b_e`` plus noise with norm <= noise_bound."""

    distortions: Dict[int, tuple]  # env id -> (A_e, b_e)
    noise_bound: float = 0.01
    noise_kind: NoiseKind = NoiseKind.UNIFORM_BALL

    def __post_init__(self):
        self.noise_kind = NoiseKind(self.noise_kind)
        if not (math.isfinite(self.noise_bound) and self.noise_bound >= 0):
            raise ValueError("noise_bound must be finite and non-negative")
        clean = {}
        for env, (A, b) in self.distortions.items():
            A = np.array(A, dtype=float).reshape(2, 2)
            b = np.array(b, dtype=float).reshape(2)
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
                raise ValueError(f"environment {env}: distortion must be finite")
            clean[int(env)] = (A, b)
        self.distortions = clean

    def __eq__(self, other):
        if not isinstance(other, SyntheticPerceptionModel):
            return NotImplemented
        return (self.noise_bound == other.noise_bound and self.noise_kind == other.noise_kind
                and self.distortions.keys() == other.distortions.keys()
                and all(np.array_equal(a, b) for e in self.distortions
                        for a, b in zip(self.distortions[e], other.distortions[e])))

    @classmethod
    def identity(cls, envs: Sequence[int] = (0,), noise_bound=0.0):
        return cls({e: (np.eye(2), np.zeros(2)) for e in envs}, noise_bound)

    def center(self, env: int, truth):
        A, b = self.distortions[env]
        return np.asarray(truth) @ A.T + b

    def noise(self, rng: np.random.Generator, n: int):
        if self.noise_bound == 0 or n == 0:
            return np.zeros((n, 2))
        if self.noise_kind is NoiseKind.UNIFORM_BALL:
            ang = rng.uniform(0.0, 2 * math.pi, n)
            rad = self.noise_bound * np.sqrt(rng.uniform(0.0, 1.0, n))
            return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
        out = np.empty((0, 2))
        sigma = self.noise_bound / 2
        while out.shape[0] < n:
            draw = rng.normal(0.0, sigma, size=(2 * (n - out.shape[0]) + 8, 2))
            out = np.vstack([out, draw[np.hypot(draw[:, 0], draw[:, 1]) <= self.noise_bound]])
        return out[:n]


@dataclass(frozen=True)
class PerceptSample:
    state: State
    env: int
    truth: Percept
    perceived: Percept


@dataclass
class Dataset:
    """Column-oriented sample store: ``states`` (N,3), ``env`` (N,), ``truth``/``perceived`` (N,2)."""

    states: np.ndarray
    env: np.ndarray
    truth: np.ndarray
    perceived: np.ndarray
    seed: Optional[int] = None
    provenance: Provenance = Provenance.SYNTHETIC

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float).reshape(-1, 3)
        self.env = np.asarray(self.env, dtype=np.int64).reshape(-1)
        self.truth = np.asarray(self.truth, dtype=float).reshape(-1, 2)
        self.perceived = np.asarray(self.perceived, dtype=float).reshape(-1, 2)
        n = self.states.shape[0]
        if not (self.env.shape[0] == self.truth.shape[0] == self.perceived.shape[0] == n):
            raise ValueError("dataset columns have different lengths")

    def __len__(self):
        return self.states.shape[0]

    @property
    def samples(self) -> Iterator[PerceptSample]:
        for s, e, t, p in zip(self.states, self.env, self.truth, self.perceived):
            yield PerceptSample(State(*map(float, s)), int(e), Percept(*map(float, t)),
                                Percept(*map(float, p)))

    def subset(self, mask) -> "Dataset":
        return Dataset(self.states[mask], self.env[mask], self.truth[mask], self.perceived[mask],
                       self.seed, self.provenance)

    def with_envs(self, envs: Sequence[int]) -> "Dataset":
        return self.subset(np.isin(self.env, list(envs)))

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 2)), np.zeros((0, 2)))


def sample_dataset(cells: Sequence[Cell], envs: Sequence[int], model: SyntheticPerceptionModel,
                   per_cell: int, seed: int = 0) -> Dataset:
    """Draw ``per_cell`` uniform states in every (cell, environment) pair, x fixed at 0.

    Each cell uses its own RNG stream derived from (seed, cell index), so the
    result does not depend on the order in which cells are processed.
    """
    if per_cell < 1:
        raise ValueError("per_cell must be >= 1")
    states, env_col, truth, perceived = [], [], [], []
    for cell in cells:
        rng = np.random.default_rng([seed, cell.iy, cell.itheta])
        for e in envs:
            y = rng.uniform(cell.y_bounds.lo, cell.y_bounds.hi, per_cell)
            th = rng.uniform(cell.theta_bounds.lo, cell.theta_bounds.hi, per_cell)
            d, psi = ground_truth_arrays(y, th)
            t = np.column_stack([d, psi])
            states.append(np.column_stack([np.zeros(per_cell), y, th]))
            env_col.append(np.full(per_cell, e))
            truth.append(t)
            perceived.append(model.center(e, t) + model.noise(rng, per_cell))
    return Dataset(np.vstack(states), np.concatenate(env_col), np.vstack(truth),
                   np.vstack(perceived), seed, Provenance.SYNTHETIC)


def export_csv(data: Dataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for s, e, t, p in zip(data.states, data.env, data.truth, data.perceived):
            w.writerow([repr(float(s[0])), repr(float(s[1])), repr(float(s[2])), int(e),
                        repr(float(t[0])), repr(float(t[1])), repr(float(p[0])), repr(float(p[1]))])


class DatasetError(ValueError):
    pass


def import_csv(path) -> Dataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise DatasetError(f"{path}: missing columns {missing}")
        cols = [header.index(c) for c in CSV_COLUMNS]
        rows: List[list] = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(row[i]) for i in cols]
            except (ValueError, IndexError) as exc:
                raise DatasetError(f"{path}: row {lineno}: cannot parse ({exc})") from None
            if not all(math.isfinite(v) for v in vals):
                bad = [CSV_COLUMNS[k] for k, v in enumerate(vals) if not math.isfinite(v)]
                raise DatasetError(f"{path}: row {lineno}: non-finite value in {bad}")
            if vals[3] != int(vals[3]):
                raise DatasetError(f"{path}: row {lineno}: env_id must be an integer")
            rows.append(vals)
    if not rows:
        raise DatasetError(f"{path}: empty dataset")
    arr = np.array(rows)
    data = Dataset(arr[:, 0:3], arr[:, 3].astype(np.int64), arr[:, 4:6], arr[:, 6:8],
                   None, Provenance.IMPORTED_CSV)
    d, psi = ground_truth_arrays(data.states[:, 1], data.states[:, 2])
    off = np.maximum(np.abs(d - data.truth[:, 0]), np.abs(psi - data.truth[:, 1]))
    bad = np.nonzero(off > 1e-9)[0]
    if bad.size:
        raise DatasetError(f"{path}: rows {[int(i) + 2 for i in bad[:10]]}: ground truth does "
                           "not match the state (expected d=-y, psi=-theta)")
    return data
