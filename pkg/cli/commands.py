"""Subcommands: gen, train, eval, rollout, gradcheck and bench."""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from tqdm import tqdm

import config
from cli.rollout_sketch import write_rollout_png, write_rollout_svg
from cli.run_config import RunConfig, write_run_config
from errors import ConfigError, SceneParseError, SceneValidationError, TrajPilotError
from evaluation.metrics import evaluate_forecasts, filter_turns
from evaluation.report import format_report, write_horizon_csv, write_metrics_csv
from model.donut import DonutForecaster
from network.checkpoint import apply_checkpoint, config_hash, load_checkpoint
from network.gradcheck import grad_check
from scene.generator import crop_map, generate_synthetic_scene, scene_seed, select_agents
from scene.scene_io import forecast_to_dict, load_scene, save_scene, write_forecast
from scene.scene_types import Scene
from scene.tensors import scene_to_tensors
from training.losses import compute_scene_loss
from training.trainer import train
from utils.file_handler import generate_output_filename, list_scene_files, prepare_output_dir

logger = logging.getLogger(__name__)

GRADCHECK_POLYLINES = 3
GRADCHECK_AGENTS = 2
BENCH_REPEATS = 5


def _output_dir(path: Optional[str]) -> Path:
    if not path:
        raise ConfigError("--out is required")
    ok, error = prepare_output_dir(path)
    if not ok:
        raise ConfigError(error)
    return Path(path)


def _map_jobs(fn: Callable, items: Sequence, jobs: int) -> List:
    """Order-preserving map, threaded when jobs > 1."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def load_scene_dir(data_dir: Optional[str], run: RunConfig) -> List[Scene]:
    """
    Loads every scenario file in `data_dir`; invalid files are skipped with a warning.

    Raises:
        SceneParseError: If the directory is missing or holds no usable scene
    """
    if not data_dir:
        raise ConfigError("--data is required")
    if not Path(data_dir).is_dir():
        raise SceneParseError(config.MESSAGES['missing_dir'].format(path=data_dir))

    scenes = []
    for path in list_scene_files(data_dir):
        try:
            scene = load_scene(path)
        except (SceneParseError, SceneValidationError) as e:
            logger.warning(config.MESSAGES['skipped_scene'].format(path=path, reason=e))
            continue
        if scene.t_hist != run.decoder.t_hist or scene.t_fut != run.decoder.t_fut:
            reason = f"horizons ({scene.t_hist}, {scene.t_fut}) differ from the decoder's"
            logger.warning(config.MESSAGES['skipped_scene'].format(path=path, reason=reason))
            continue
        scenes.append(scene)
    if not scenes:
        raise SceneParseError(config.MESSAGES['no_scenes'].format(path=data_dir))
    logger.info("scenes_loaded | path=%s | count=%d", data_dir, len(scenes))
    return scenes


def load_model(run: RunConfig, checkpoint: Optional[str]) -> DonutForecaster:
    """Builds the decoder of `run` and loads a checkpoint trained with the same configuration."""
    if not checkpoint:
        raise ConfigError("--checkpoint is required")
    ckpt = load_checkpoint(checkpoint, expected_hash=config_hash(run.decoder.to_dict()))
    model = DonutForecaster(run.decoder)
    apply_checkpoint(model, ckpt)
    model.eval()
    logger.info("model_loaded | path=%s | step=%d", checkpoint, ckpt.step)
    return model


def forecast_arrays(model: DonutForecaster, scene: Scene) -> Tuple[np.ndarray, np.ndarray]:
    """Inference forecast of one scene as numpy arrays ([N, K, T_fut, 3], [N, K])."""
    forecast = model.predict(scene_to_tensors(scene, dtype=model.dtype))
    return forecast.trajectories.double().numpy(), forecast.probabilities.double().numpy()


def cmd_gen(run: RunConfig, count: int, out_dir: Optional[str]) -> int:
    """Writes `count` synthetic scenes, scene i seeded from (seed, i)."""
    if count < 0:
        raise ConfigError(f"--count: must be >= 0, got {count}")
    out = _output_dir(out_dir)
    write_run_config(out, run)

    def generate(index: int) -> Path:
        scene = generate_synthetic_scene(run.generator, scene_seed(run.seed, index))
        return save_scene(scene, out / config.SCENE_FILE_PATTERN.format(index=index))

    paths = _map_jobs(generate, range(count), run.jobs)
    logger.info("scenes_generated | count=%d | path=%s", len(paths), out)
    print(f"Generated {len(paths)} scenes in {out}")
    return config.EXIT_OK


def cmd_train(run: RunConfig, data_dir: Optional[str], out_dir: Optional[str],
              resume: bool = False, progress: bool = True) -> int:
    scenes = load_scene_dir(data_dir, run)
    out = _output_dir(out_dir)
    write_run_config(out, run)
    result = train(scenes, run.decoder, run.train, out, resume=resume, progress=progress)
    last = result.epoch_rows[-1] if result.epoch_rows else None
    print(f"Trained {result.step} steps on {len(scenes)} scenes; checkpoint: {result.checkpoint}")
    if last is not None:
        print(f"Final epoch {last['epoch']}: loss {last['loss']:.4f}  "
              f"minADE {last['min_ade']:.4f}  minFDE {last['min_fde']:.4f}")
    return config.EXIT_OK


def cmd_eval(run: RunConfig, checkpoint: Optional[str], data_dir: Optional[str], out_dir: Optional[str],
             turns_only: bool = False, verbose: bool = False, progress: bool = True) -> int:
    """Evaluates a checkpoint on a scene directory and writes the metric CSVs."""
    model = load_model(run, checkpoint)
    scenes = load_scene_dir(data_dir, run)
    out = _output_dir(out_dir)
    write_run_config(out, run)

    predictions: Dict[int, Tuple[np.ndarray, np.ndarray]] = {}
    if run.jobs > 1:
        results = _map_jobs(partial(forecast_arrays, model), scenes, run.jobs)
        predictions = {id(scene): r for scene, r in zip(scenes, results)}

    def predict_fn(scene: Scene):
        if id(scene) in predictions:
            return predictions[id(scene)]
        return forecast_arrays(model, scene)

    bar = partial(tqdm, desc="evaluating", disable=not progress, leave=False)
    agents = None
    subset, metrics_name = "all", config.METRICS_FILENAME
    if turns_only:
        agents = filter_turns(scenes)
        subset, metrics_name = "turns", config.TURN_METRICS_FILENAME
        if not agents:
            logger.warning(config.MESSAGES['empty_turn_subset'])
            print(config.MESSAGES['empty_turn_subset'])
            return config.EXIT_OK

    result = evaluate_forecasts(predict_fn, scenes, agents=agents, progress=bar)
    if result.report is None:
        logger.warning("evaluation_empty | reason=no_complete_futures")
        print("No focal agent with a complete future; no report written.")
        return config.EXIT_OK

    write_metrics_csv(out / metrics_name, result.report, subset)
    write_horizon_csv(out / config.HORIZON_FILENAME, result.horizons, run.decoder.num_modes)
    title = "Turn subset" if turns_only else "Evaluation"
    print(format_report(result.report, title=title, verbose=verbose))
    return config.EXIT_OK


def cmd_rollout(run: RunConfig, checkpoint: Optional[str], scene_path: Optional[str], out_dir: Optional[str],
                svg: bool = False, png: bool = False) -> int:
    """Forecasts one scene and writes the prediction file plus optional sketches."""
    model = load_model(run, checkpoint)
    if not scene_path:
        raise ConfigError("--scene is required")
    scene = load_scene(scene_path)
    out = _output_dir(out_dir)
    write_run_config(out, run)

    trajectories, probabilities = forecast_arrays(model, scene)
    forecast_path = generate_output_filename(scene_path, "forecast.json", str(out))
    write_forecast(forecast_path, forecast_to_dict(scene, trajectories, probabilities))
    print(f"Forecast written to {forecast_path}")

    sketches = []
    if svg:
        sketches.append((write_rollout_svg, generate_output_filename(scene_path, "svg", str(out))))
    if png:
        sketches.append((write_rollout_png, generate_output_filename(scene_path, "png", str(out))))
    for writer, path in sketches:
        ok, error = writer(path, scene, trajectories, probabilities)
        if not ok:
            raise TrajPilotError(error)
        print(f"Sketch written to {path}")
    return config.EXIT_OK


def gradcheck_scene(run: RunConfig) -> Scene:
    """Small scene for the gradient check: two agents and three polylines."""
    scene = generate_synthetic_scene(run.generator, scene_seed(run.seed, 0))
    scene = crop_map(scene, GRADCHECK_POLYLINES)
    return select_agents(scene, GRADCHECK_AGENTS)


def cmd_gradcheck(run: RunConfig, inject_fault: bool = False) -> int:
    """Central-difference check of the full training loss in float64; exit 3 on failure."""
    torch.manual_seed(run.seed)
    model = DonutForecaster(run.decoder).double()
    # dropout off so repeated evaluations see the same function
    model.eval()
    scene = gradcheck_scene(run)
    st = scene_to_tensors(scene, dtype=torch.float64)

    def loss_fn() -> torch.Tensor:
        output = model.unroll_future(st, training=True)
        return compute_scene_loss(output, st, run.decoder).total

    result = grad_check(
        loss_fn, model,
        eps=config.GRADCHECK_EPS,
        num_samples=config.GRADCHECK_SAMPLES,
        seed=run.seed,
        corrupt=inject_fault,
    )
    passed = result.passed(config.GRADCHECK_TOLERANCE)
    key = 'gradcheck_pass' if passed else 'gradcheck_fail'
    print(config.MESSAGES[key].format(error=result.max_error, name=result.worst_parameter))
    print(f"Checked {result.num_checked} of {model.num_parameters()} parameters")
    return config.EXIT_OK if passed else config.EXIT_NUMERIC


def cmd_bench(run: RunConfig, scene_path: Optional[str] = None, repeats: int = BENCH_REPEATS) -> int:
    """Times inference unrolls of one scene."""
    torch.manual_seed(run.seed)
    model = DonutForecaster(run.decoder)
    model.eval()
    if scene_path:
        scene = load_scene(scene_path)
    else:
        scene = generate_synthetic_scene(run.generator, scene_seed(run.seed, 0))
    st = scene_to_tensors(scene, dtype=model.dtype)

    model.predict(st)
    timings = []
    for _ in range(max(repeats, 1)):
        start = time.perf_counter()
        model.predict(st)
        timings.append(time.perf_counter() - start)
    ms = 1000.0 * float(np.median(timings))
    logger.info("bench | agents=%d | polylines=%d | ms=%.2f", st.num_agents, st.num_polylines, ms)
    print(f"Parameters: {model.num_parameters()}")
    print(f"Scene: {st.num_agents} agents, {st.num_polylines} polylines, "
          f"{run.decoder.future_steps} decoder steps x {run.decoder.num_modes} modes")
    print(f"Inference: {ms:.2f} ms per scene (median of {len(timings)})")
    return config.EXIT_OK
