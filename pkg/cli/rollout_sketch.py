"""Static rollout sketches: map polylines, history, ground truth and predicted modes."""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import svgwrite
from PIL import Image, ImageDraw

import config
from scene.scene_types import PolylineCategory, Scene

logger = logging.getLogger(__name__)

VIEW_PADDING = 10.0  # meters around the focal agents' trajectories


@dataclass
class SketchLayer:
    """One polyline of the sketch in pixel coordinates."""
    kind: str
    points: List[Tuple[float, float]]
    opacity: float = 1.0


class _Viewport:
    """World meters to pixels, y pointing up, equal scale on both axes."""

    def __init__(self, points: np.ndarray, size: int, margin: int):
        lo = points.min(axis=0) - VIEW_PADDING
        hi = points.max(axis=0) + VIEW_PADDING
        extent = max(float(np.max(hi - lo)), 1.0)
        self.scale = (size - 2 * margin) / extent
        self.origin = lo
        self.size = size
        self.margin = margin

    def __call__(self, xy: np.ndarray) -> List[Tuple[float, float]]:
        px = (np.asarray(xy)[:, :2] - self.origin) * self.scale + self.margin
        return [(float(x), float(self.size - y)) for x, y in px]


def sketch_layers(
    scene: Scene,
    trajectories: np.ndarray,
    probabilities: np.ndarray,
    size: int = config.SKETCH_SIZE,
    margin: int = config.SKETCH_MARGIN,
) -> List[SketchLayer]:
    """
    Pixel-space layers of a rollout, drawn bottom to top.

    Args:
        scene: Scene with history and ground-truth future
        trajectories: [N, K, T_fut, >=2] forecast in scene coordinates
        probabilities: [N, K] mode probabilities
    """
    focal = scene.focal_indices()
    t0 = scene.t_hist
    tracks = []
    for ai in focal:
        states = scene.agents[ai].states
        history = np.array([[s.x, s.y] for s in states[:t0] if s.valid]).reshape(-1, 2)
        future = np.array([[s.x, s.y] for s in states[t0:] if s.valid]).reshape(-1, 2)
        tracks.append((ai, history, future))

    anchors = [np.asarray(trajectories[ai])[..., :2].reshape(-1, 2) for ai in focal]
    anchors += [h for _, h, _ in tracks] + [f for _, _, f in tracks]
    view = _Viewport(np.concatenate([a for a in anchors if len(a)], axis=0), size, margin)

    layers = []
    for polyline in scene.map.polylines:
        kind = 'crosswalk' if polyline.category == PolylineCategory.CROSSWALK else 'lane'
        layers.append(SketchLayer(kind, view(np.asarray(polyline.points))))
    for ai, history, future in tracks:
        if len(history) >= 2:
            layers.append(SketchLayer('history', view(history)))
        if len(future) >= 2:
            layers.append(SketchLayer('ground_truth', view(future)))
        last = np.array([[history[-1, 0], history[-1, 1]]]) if len(history) else np.zeros((0, 2))
        for k in range(trajectories.shape[1]):
            path = np.concatenate([last, np.asarray(trajectories[ai, k])[:, :2]], axis=0)
            opacity = 0.35 + 0.65 * float(probabilities[ai, k])
            layers.append(SketchLayer('prediction', view(path), opacity))
    return layers


def _path_data(points: Sequence[Tuple[float, float]]) -> str:
    data = [f"M {points[0][0]:.2f} {points[0][1]:.2f}"]
    data += [f"L {x:.2f} {y:.2f}" for x, y in points[1:]]
    return " ".join(data)


def write_rollout_svg(
    output_path: str,
    scene: Scene,
    trajectories: np.ndarray,
    probabilities: np.ndarray,
    size: int = config.SKETCH_SIZE,
) -> Tuple[bool, Optional[str]]:
    """
    Writes the rollout sketch as SVG; each predicted mode is one path of class "prediction".

    Returns:
        Tuple (success, error_message)
    """
    try:
        dwg = svgwrite.Drawing(output_path, size=(f"{size}px", f"{size}px"))
        dwg.add(dwg.rect(insert=(0, 0), size=(size, size), fill='white'))
        for layer in sketch_layers(scene, trajectories, probabilities, size):
            if len(layer.points) < 2:
                continue
            dwg.add(dwg.path(
                d=_path_data(layer.points),
                class_=layer.kind,
                fill='none',
                stroke=config.SKETCH_COLORS[layer.kind],
                stroke_width=1 if layer.kind in ('lane', 'crosswalk') else 2,
                stroke_opacity=f"{layer.opacity:.3f}",
            ))
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        dwg.save()
        logger.info("sketch_written | path=%s | format=svg", output_path)
        return True, None
    except (OSError, ValueError) as e:
        return False, f"Error writing SVG sketch: {e}"


def write_rollout_png(
    output_path: str,
    scene: Scene,
    trajectories: np.ndarray,
    probabilities: np.ndarray,
    size: int = config.SKETCH_SIZE,
) -> Tuple[bool, Optional[str]]:
    """Raster preview of the same layers."""
    try:
        img = Image.new('RGB', (size, size), 'white')
        draw = ImageDraw.Draw(img)
        for layer in sketch_layers(scene, trajectories, probabilities, size):
            if len(layer.points) < 2:
                continue
            width = 1 if layer.kind in ('lane', 'crosswalk') else 2
            draw.line(layer.points, fill=config.SKETCH_COLORS[layer.kind], width=width)
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        img.save(output_path, format='PNG')
        logger.info("sketch_written | path=%s | format=png", output_path)
        return True, None
    except (OSError, ValueError) as e:
        return False, f"Error writing PNG sketch: {e}"
