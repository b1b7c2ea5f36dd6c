"""Coarse-to-fine 4-DoF pose search.

The coarse stage scores every cell of a uniform (x, y, z, yaw) grid around the
prior; the fine stage runs greedy perturbation beams from the best coarse
cells, shrinking the proposal spread whenever an iteration fails to improve.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import Intrinsics, Pose4, poses_to_array, wrap_yaw
from .cost import COST_KINDS, DICE_EPS
from .kernels import PreparedQuery, PreparedScene, evaluate_poses
from .masks import MaskSet
from .raster import DEFAULT_MIN_AREA

DEFAULT_GRID_BUDGET = 50_000


class ConfigError(ValueError):
    pass


def _steps(half: float, step: float) -> int:
    return int(math.floor(half / step + 1e-9))


@dataclass(frozen=True)
class SearchSpace:
    center: Pose4
    half_range_xy: float = 30.0
    half_range_z: float = 10.0
    half_range_yaw: float = 15.0
    step_xy: float = 10.0
    step_z: float = 10.0
    step_yaw: float = 5.0

    def __post_init__(self):
        if min(self.half_range_xy, self.half_range_z, self.half_range_yaw) < 0:
            raise ConfigError("search ranges must be >= 0")
        if min(self.step_xy, self.step_z, self.step_yaw) <= 0:
            raise ConfigError("search steps must be > 0")

    def recentered(self, center: Pose4) -> "SearchSpace":
        return replace(self, center=center)

    def axis_offsets(self):
        def axis(half, step):
            k = _steps(half, step)
            return np.arange(-k, k + 1) * step

        xy = axis(self.half_range_xy, self.step_xy)
        return xy, xy, axis(self.half_range_z, self.step_z), axis(self.half_range_yaw, self.step_yaw)

    @property
    def size(self) -> int:
        return int(np.prod([len(a) for a in self.axis_offsets()]))

    def grid(self) -> list[Pose4]:
        """All grid poses, x-major then y, z, yaw."""
        c = self.center
        ox, oy, oz, oyaw = self.axis_offsets()
        return [Pose4(c.x + dx, c.y + dy, c.z + dz, c.yaw + dyaw, c.pitch, c.roll)
                for dx in ox for dy in oy for dz in oz for dyaw in oyaw]


@dataclass(frozen=True)
class RefineConfig:
    iterations: int = 40
    beams: int = 2
    candidates: int = 52
    sigma_translation: float = 1.5
    yaw_perturb: float = 2.0
    gamma: float = 0.3
    sigma_floor: float = 0.1
    yaw_floor: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if self.beams < 1 or self.candidates < 1:
            raise ConfigError("beams and candidates must be >= 1")
        if self.sigma_translation <= 0 or self.yaw_perturb <= 0:
            raise ConfigError("perturbation scales must be > 0")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class CostVolume:
    poses: list
    costs: np.ndarray
    prior: Pose4
    degenerate: bool = False

    def ranking(self) -> np.ndarray:
        """Pose indices best first: highest cost, then nearest the prior, then lowest index."""
        arr = poses_to_array(self.poses)
        dist = np.linalg.norm(arr[:, :3] - self.prior.as_array()[:3], axis=1)
        dyaw = np.abs([wrap_yaw(y - self.prior.yaw) for y in arr[:, 3]])
        idx = np.arange(len(self.poses))
        return np.lexsort((idx, dyaw, dist, -self.costs))

    @property
    def argmax(self) -> int:
        return int(self.ranking()[0])

    @property
    def best_pose(self) -> Pose4:
        return self.poses[self.argmax]

    @property
    def best_cost(self) -> float:
        return float(self.costs[self.argmax])

    def top(self, k: int) -> list[Pose4]:
        return [self.poses[i] for i in self.ranking()[:k]]

    def near_max_count(self, fraction: float = 0.95) -> int:
        m = float(self.costs.max()) if len(self.costs) else 0.0
        if m <= 0:
            return len(self.costs)
        return int(np.count_nonzero(self.costs >= fraction * m))


@dataclass
class Evaluator:
    """Scores pose lists against one query; shared by both stages."""

    scene: PreparedScene
    intr: Intrinsics
    query: PreparedQuery
    min_area: int = DEFAULT_MIN_AREA
    eps: float = DICE_EPS
    n_threads: int | None = None
    backend: str | None = None
    n_evaluations: int = 0

    @classmethod
    def build(cls, model, intr: Intrinsics, query: MaskSet, cost_kind: str, **kw) -> "Evaluator":
        if cost_kind not in COST_KINDS:
            raise ConfigError(f"unknown cost kind {cost_kind!r}")
        area_mode = kw.pop("area_mode", "bbox")
        scene = model if isinstance(model, PreparedScene) else PreparedScene.from_model(model)
        if (query.width, query.height) != (intr.width, intr.height):
            raise ValueError("query mask size differs from the render size")
        return cls(scene, intr, PreparedQuery.from_masks(query, cost_kind, area_mode), **kw)

    @property
    def degenerate(self) -> bool:
        return self.query.degenerate

    def __call__(self, poses) -> np.ndarray:
        self.n_evaluations += len(poses)
        return evaluate_poses(self.scene, self.intr, self.query, poses_to_array(poses),
                              self.min_area, self.eps, self.n_threads, backend=self.backend)


def coarse_search(evaluator: Evaluator, space: SearchSpace,
                  budget: int = DEFAULT_GRID_BUDGET) -> CostVolume:
    n = space.size
    if n > budget:
        raise ConfigError(f"search grid needs {n} poses, budget is {budget}")
    if evaluator.degenerate:
        return CostVolume([space.center], np.zeros(1), space.center, degenerate=True)
    poses = space.grid()
    return CostVolume(poses, evaluator(poses), space.center)


@dataclass(frozen=True)
class RefineResult:
    pose: Pose4
    cost: float
    beam: int
    history: tuple = field(default=())  # per beam, incumbent cost after each iteration

    def __iter__(self):
        return iter((self.pose, self.cost))


def _stream(seed: int, beam: int, iteration: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(beam, iteration)))


def refine(evaluator: Evaluator, start_poses, config: RefineConfig = RefineConfig()) -> RefineResult:
    """Greedy perturbation beams; one beam per start pose."""
    start_poses = list(start_poses)
    if not start_poses:
        raise ValueError("refine needs at least one start pose")
    best = list(start_poses)
    best_cost = [float(c) for c in evaluator(best)]
    sigma = [config.sigma_translation] * len(best)
    theta = [config.yaw_perturb] * len(best)
    history = [[c] for c in best_cost]
    n = config.candidates
    for it in range(config.iterations):
        cands = []
        for b, inc in enumerate(best):
            rng = _stream(config.rng_seed, b, it)
            dxyz = rng.normal(0.0, sigma[b], size=(n, 3))
            dyaw = rng.uniform(-theta[b], theta[b], size=n)
            cands.append([inc.moved(*d, dyaw=a) for d, a in zip(dxyz.tolist(), dyaw.tolist())])
        costs = evaluator([p for group in cands for p in group]).reshape(len(best), n)
        for b in range(len(best)):
            k = int(np.argmax(costs[b]))
            if costs[b, k] > best_cost[b]:
                best[b], best_cost[b] = cands[b][k], float(costs[b, k])
            else:
                sigma[b] = max(sigma[b] * (1.0 - config.gamma), config.sigma_floor)
                theta[b] = max(theta[b] * (1.0 - config.gamma), config.yaw_floor)
            history[b].append(best_cost[b])
    winner = int(np.argmax(best_cost))
    return RefineResult(best[winner], best_cost[winner], winner, tuple(tuple(h) for h in history))


@dataclass(frozen=True)
class LocalizationResult:
    pose: Pose4
    cost: float
    coarse_pose: Pose4
    degenerate: bool
    wall_time_ms: float = 0.0

    def to_dict(self) -> dict:
        return {"pose": self.pose.to_dict(), "cost": self.cost, "coarse_pose": self.coarse_pose.to_dict(),
                "degenerate": self.degenerate, "wall_time_ms": self.wall_time_ms}

    @classmethod
    def from_dict(cls, d: dict) -> "LocalizationResult":
        return cls(Pose4.from_dict(d["pose"]), float(d["cost"]), Pose4.from_dict(d["coarse_pose"]),
                   bool(d["degenerate"]), float(d.get("wall_time_ms", 0.0)))


def localize(evaluator: Evaluator, prior: Pose4, space: SearchSpace,
             config: RefineConfig = RefineConfig(), select: bool = True, do_refine: bool = True,
             budget: int = DEFAULT_GRID_BUDGET, volume_out: list | None = None) -> LocalizationResult:
    """Full pipeline; ``select=False`` and ``do_refine=False`` give the two ablation variants."""
    t0 = time.perf_counter()
    volume = coarse_search(evaluator, space.recentered(prior), budget)
    if volume_out is not None:
        volume_out.append(volume)
    ms = lambda: (time.perf_counter() - t0) * 1e3
    if volume.degenerate:
        return LocalizationResult(prior, 0.0, prior, True, ms())
    coarse = volume.best_pose
    if not do_refine:
        return LocalizationResult(coarse, volume.best_cost, coarse, False, ms())
    starts = volume.top(config.beams) if select else [coarse] * config.beams
    res = refine(evaluator, starts, config)
    return LocalizationResult(res.pose, res.cost, coarse, False, ms())
