"""Displacement metrics, K=1 variants, horizon curve and the turn filter."""
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

import config
from geometry.frames import wrap_angle
from scene.scene_types import Scene

logger = logging.getLogger(__name__)

PredictFn = Callable[[Scene], Tuple[np.ndarray, np.ndarray]]


def _endpoint_errors(forecast: np.ndarray, gt: np.ndarray) -> np.ndarray:
    forecast = np.asarray(forecast, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if forecast.ndim != 3 or forecast.shape[0] == 0 or forecast.shape[1] == 0:
        raise ValueError(f"forecast must have shape [K>=1, T>=1, 2], got {forecast.shape}")
    return np.linalg.norm(forecast[:, -1, :2] - gt[-1, :2], axis=-1)


def min_fde(forecast: np.ndarray, gt: np.ndarray) -> Tuple[float, int]:
    """
    Smallest endpoint error over modes.

    Args:
        forecast: [K, T, 2]
        gt: [T, 2]

    Returns:
        Tuple (minFDE, best mode); ties go to the lowest k
    """
    errors = _endpoint_errors(forecast, gt)
    best = int(np.argmin(errors))
    return float(errors[best]), best


def displacement_errors(forecast: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-mode per-step L2 errors [K, T]."""
    forecast = np.asarray(forecast, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    return np.linalg.norm(forecast[..., :2] - gt[None, :, :2], axis=-1)


def min_ade(forecast: np.ndarray, gt: np.ndarray, selection: str = "fde") -> float:
    """
    Average displacement error of the best mode.

    Args:
        selection: "fde" averages over the best-endpoint mode, "ade" takes the
            smallest average over all modes
    """
    ade = displacement_errors(forecast, gt).mean(axis=-1)
    if selection == "fde":
        return float(ade[min_fde(forecast, gt)[1]])
    if selection == "ade":
        return float(ade.min())
    raise ValueError(f"unknown minADE selection {selection!r}")


def is_miss(forecast: np.ndarray, gt: np.ndarray, threshold: float = config.MISS_THRESHOLD) -> bool:
    """True when every endpoint is farther than `threshold`; exactly `threshold` is a hit."""
    return bool((_endpoint_errors(forecast, gt) > threshold).all())


def miss_rate(
    forecasts: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    threshold: float = config.MISS_THRESHOLD,
) -> float:
    if len(forecasts) == 0:
        raise ValueError("miss_rate needs at least one case")
    misses = [is_miss(f, g, threshold) for f, g in zip(forecasts, gts)]
    return float(np.mean(misses))


def brier_min_fde(forecast: np.ndarray, probabilities: np.ndarray, gt: np.ndarray) -> float:
    """minFDE plus (1 - pi)^2, pi the probability of the best-endpoint mode."""
    value, best = min_fde(forecast, gt)
    pi = float(np.asarray(probabilities, dtype=np.float64)[best])
    return (1.0 - pi) ** 2 + value


def k1_metrics(forecast: np.ndarray, probabilities: np.ndarray, gt: np.ndarray) -> Tuple[float, float, float]:
    """
    Metrics of the most probable mode (ties to the lowest k).

    Returns:
        Tuple (FDE, ADE, miss indicator as 0.0 / 1.0)
    """
    top = int(np.argmax(np.asarray(probabilities, dtype=np.float64)))
    single = np.asarray(forecast)[top:top + 1]
    fde, _ = min_fde(single, gt)
    ade = min_ade(single, gt)
    return fde, ade, float(is_miss(single, gt))


def horizon_curve(
    forecasts: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    horizons: Sequence[int] = config.DEFAULT_HORIZONS,
) -> Dict[int, float]:
    """Mean minFDE treating each horizon's step as the endpoint."""
    curve = {}
    for h in horizons:
        values = []
        for f, g in zip(forecasts, gts):
            if h < 1 or h > np.asarray(g).shape[0]:
                raise ValueError(f"horizon {h} outside 1..{np.asarray(g).shape[0]}")
            values.append(min_fde(np.asarray(f)[:, :h], np.asarray(g)[:h])[0])
        curve[int(h)] = float(np.mean(values)) if values else float('nan')
    return curve


def heading_change(scene: Scene, agent_index: int) -> float:
    """Unwrapped heading change from the last observed state to the final future state."""
    states = scene.agents[agent_index].states[scene.t_hist - 1:]
    headings = np.array([s.heading for s in states], dtype=np.float64)
    return float(np.sum(wrap_angle(np.diff(headings))))


def filter_turns(
    scenes: Sequence[Scene],
    threshold: float = config.TURN_THRESHOLD,
) -> List[Tuple[int, int]]:
    """
    Focal agents whose ground-truth future turns by at least `threshold` radians.

    Returns:
        (scene position, agent index) pairs
    """
    kept = []
    for si, scene in enumerate(scenes):
        for ai in scene.focal_indices():
            if abs(heading_change(scene, ai)) >= threshold:
                kept.append((si, ai))
    return kept


@dataclass
class MetricReport:
    b_minfde_k: float
    minfde_k: float
    minade_k: float
    mr_k: float
    minfde_1: float
    minade_1: float
    mr_1: float
    n_scenes: int
    n_cases: int = 0
    minade_k_best_ade: Optional[float] = None

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class EvaluationCase:
    scene_id: str
    agent_id: str
    forecast: np.ndarray       # [K, T, 2]
    probabilities: np.ndarray  # [K]
    gt: np.ndarray             # [T, 2]


@dataclass
class EvaluationResult:
    report: Optional[MetricReport]
    horizons: Dict[int, float] = field(default_factory=dict)
    cases: List[EvaluationCase] = field(default_factory=list)


def aggregate(cases: Sequence[EvaluationCase], n_scenes: int) -> MetricReport:
    """Averages every metric over (scene, focal agent) cases."""
    if not cases:
        raise ValueError("no cases to aggregate")
    rows = []
    for c in cases:
        fde, _ = min_fde(c.forecast, c.gt)
        fde1, ade1, miss1 = k1_metrics(c.forecast, c.probabilities, c.gt)
        rows.append((
            brier_min_fde(c.forecast, c.probabilities, c.gt),
            fde,
            min_ade(c.forecast, c.gt),
            float(is_miss(c.forecast, c.gt)),
            fde1, ade1, miss1,
            min_ade(c.forecast, c.gt, selection="ade"),
        ))
    means = np.mean(np.array(rows, dtype=np.float64), axis=0)
    return MetricReport(
        b_minfde_k=float(means[0]),
        minfde_k=float(means[1]),
        minade_k=float(means[2]),
        mr_k=float(means[3]),
        minfde_1=float(means[4]),
        minade_1=float(means[5]),
        mr_1=float(means[6]),
        n_scenes=n_scenes,
        n_cases=len(cases),
        minade_k_best_ade=float(means[7]),
    )


def collect_cases(
    predict_fn: PredictFn,
    scenes: Sequence[Scene],
    agents: Optional[Sequence[Tuple[int, int]]] = None,
    progress: Optional[Callable] = None,
) -> List[EvaluationCase]:
    """
    Runs `predict_fn` on every scene and pairs focal-agent forecasts with ground truth.

    Args:
        predict_fn: Scene -> (trajectories [N, K, T_fut, >=2], probabilities [N, K])
        scenes: Scenes to evaluate
        agents: Optional (scene position, agent index) subset (default: all focal agents)
        progress: Optional iterable wrapper such as tqdm
    """
    wanted: Dict[int, List[int]] = {}
    if agents is None:
        for si, scene in enumerate(scenes):
            wanted[si] = list(scene.focal_indices())
    else:
        for si, ai in agents:
            wanted.setdefault(si, []).append(ai)

    iterator = sorted(wanted)
    if progress is not None:
        iterator = progress(iterator)
    cases = []
    for si in iterator:
        scene = scenes[si]
        trajectories, probabilities = predict_fn(scene)
        for ai in wanted[si]:
            future = scene.agents[ai].states[scene.t_hist:]
            if not all(s.valid for s in future):
                logger.debug("case_skipped | scene=%s | agent=%s | reason=partial_future", scene.id, scene.agents[ai].id)
                continue
            cases.append(EvaluationCase(
                scene_id=scene.id,
                agent_id=scene.agents[ai].id,
                forecast=np.asarray(trajectories[ai])[..., :2],
                probabilities=np.asarray(probabilities[ai]),
                gt=np.array([[s.x, s.y] for s in future], dtype=np.float64),
            ))
    return cases


def evaluate_forecasts(
    predict_fn: PredictFn,
    scenes: Sequence[Scene],
    agents: Optional[Sequence[Tuple[int, int]]] = None,
    horizons: Sequence[int] = config.DEFAULT_HORIZONS,
    progress: Optional[Callable] = None,
) -> EvaluationResult:
    """
    MetricReport and horizon curve over focal agents.

    Horizons beyond the scenes' future length are dropped.
    """
    cases = collect_cases(predict_fn, scenes, agents, progress)
    if not cases:
        return EvaluationResult(report=None)
    n_scenes = len({c.scene_id for c in cases})
    t_fut = min(c.gt.shape[0] for c in cases)
    usable = [h for h in horizons if h <= t_fut]
    report = aggregate(cases, n_scenes)
    curve = horizon_curve([c.forecast for c in cases], [c.gt for c in cases], usable)
    logger.info(
        "evaluation_done | scenes=%d | cases=%d | minFDE=%.4f | minADE=%.4f | MR=%.4f",
        n_scenes, len(cases), report.minfde_k, report.minade_k, report.mr_k,
    )
    return EvaluationResult(report, curve, cases)
