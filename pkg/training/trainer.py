"""Training loop: AdamW, cosine schedule, gradient accumulation, checkpoints and CSV logs."""
import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

import config
from errors import ConfigError, NumericError
from evaluation.metrics import min_ade, min_fde
from model.donut import DonutForecaster
from model.model_config import DecoderConfig
from network.checkpoint import apply_checkpoint, config_hash, load_checkpoint, load_optimizer_state, save_checkpoint
from scene.scene_types import Scene
from scene.tensors import SceneTensors, scene_to_tensors
from training.losses import LossBreakdown, compute_scene_loss, min_scale

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Optimizer and schedule settings."""
    lr: float = config.DEFAULT_LR
    weight_decay: float = config.DEFAULT_WEIGHT_DECAY
    betas: tuple = config.DEFAULT_BETAS
    eps: float = config.DEFAULT_ADAM_EPS
    epochs: int = config.DEFAULT_EPOCHS
    batch_size: int = config.DEFAULT_BATCH_SIZE
    seed: int = 0
    epoch_metrics: bool = True

    def to_dict(self) -> Dict:
        data = asdict(self)
        data['betas'] = list(self.betas)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"train: unknown keys {sorted(unknown)}")
        values = dict(data)
        if 'betas' in values:
            values['betas'] = tuple(values['betas'])
        return cls(**values)

    def validate(self):
        if self.lr <= 0:
            raise ConfigError(f"train.lr: must be > 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"train.batch_size: must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"train.epochs: must be >= 1, got {self.epochs}")
        if self.weight_decay < 0:
            raise ConfigError("train.weight_decay: must be >= 0")


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Learning rate of optimizer step `step` (1-based); reaches 0 at `total_steps`."""
    progress = min(max(step, 0), total_steps) / max(total_steps, 1)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class TrainResult:
    model: DonutForecaster
    checkpoint: Path
    step: int
    epoch_rows: List[Dict]


class _CsvLog:
    """Append-only CSV file with a fixed header."""

    def __init__(self, path: Path, columns: Sequence[str], append: bool):
        self.path = path
        self.columns = list(columns)
        fresh = not (append and path.exists())
        if fresh:
            with open(path, 'w', newline='', encoding='utf-8') as f:
                csv.writer(f).writerow(self.columns)

    def write(self, row: Dict):
        with open(self.path, 'a', newline='', encoding='utf-8') as f:
            csv.writer(f).writerow([_fmt(row[c]) for c in self.columns])


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


def training_errors(model: DonutForecaster, tensors: Sequence[SceneTensors]) -> Dict[str, float]:
    """Mean minADE/minFDE over focal agents with a full future, in inference mode."""
    fdes, ades = [], []
    for st in tensors:
        forecast = model.predict(st)
        traj = forecast.trajectories[..., :2].double().numpy()
        t0 = st.t_hist
        for n in torch.nonzero(st.focal_mask).flatten().tolist():
            if not bool(st.valid[n, t0:t0 + model.cfg.t_fut].all()):
                continue
            gt = st.positions[n, t0:t0 + model.cfg.t_fut].double().numpy()
            fdes.append(min_fde(traj[n], gt)[0])
            ades.append(min_ade(traj[n], gt))
    if not fdes:
        return {'min_fde': float('nan'), 'min_ade': float('nan')}
    return {'min_fde': float(np.mean(fdes)), 'min_ade': float(np.mean(ades))}


class Trainer:
    """
    Trains a DonutForecaster on a fixed list of scenes.

    Args:
        decoder_cfg: Model configuration
        train_cfg: Optimizer and schedule settings
        out_dir: Output directory for checkpoints and logs
        progress: Show tqdm progress bars
    """

    def __init__(self, decoder_cfg: DecoderConfig, train_cfg: TrainConfig, out_dir: Path, progress: bool = True):
        decoder_cfg.validate()
        train_cfg.validate()
        self.decoder_cfg = decoder_cfg
        self.train_cfg = train_cfg
        self.out_dir = Path(out_dir)
        self.checkpoint_dir = self.out_dir / config.CHECKPOINT_DIRNAME
        self.progress = progress

        torch.manual_seed(train_cfg.seed)
        self.model = DonutForecaster(decoder_cfg)
        self.optimizer = AdamW(
            self.model.parameters(),
            lr=train_cfg.lr,
            betas=tuple(train_cfg.betas),
            eps=train_cfg.eps,
            weight_decay=train_cfg.weight_decay,
        )
        self.total_steps = 1
        self.scheduler: Optional[LambdaLR] = None
        self.step = 0
        self.epoch = 0

    def _lr_lambda(self, index: int) -> float:
        # LambdaLR's index 0 is optimizer step 1
        return cosine_lr(1.0, index + 1, self.total_steps)

    def _setup_schedule(self, num_scenes: int):
        steps_per_epoch = math.ceil(num_scenes / self.train_cfg.batch_size)
        self.total_steps = steps_per_epoch * self.train_cfg.epochs
        self.scheduler = LambdaLR(self.optimizer, lr_lambda=self._lr_lambda)

    def resume(self) -> bool:
        """Restores parameters, optimizer moments and counters from last.ckpt."""
        path = self.checkpoint_dir / config.LAST_CHECKPOINT_FILENAME
        if not path.exists():
            logger.warning("resume_skipped | reason=no_checkpoint | path=%s", path)
            return False
        ckpt = load_checkpoint(path, expected_hash=config_hash(self.decoder_cfg.to_dict()))
        apply_checkpoint(self.model, ckpt)
        state = load_optimizer_state(path)
        if state is not None:
            self.optimizer.load_state_dict(state['optimizer'])
            self.scheduler.load_state_dict(state['scheduler'])
            torch.set_rng_state(state['torch_rng'])
        self.step, self.epoch = ckpt.step, ckpt.epoch
        logger.info("training_resumed | step=%d | epoch=%d", self.step, self.epoch)
        return True

    def _save(self, epoch: int) -> Path:
        state = {
            'optimizer': self.optimizer.state_dict(),
            'scheduler': self.scheduler.state_dict(),
            'torch_rng': torch.get_rng_state(),
        }
        cfg = self.decoder_cfg.to_dict()
        save_checkpoint(self.checkpoint_dir / f"epoch_{epoch:03d}{config.CHECKPOINT_SUFFIX}", self.model, cfg, self.step, epoch)
        return save_checkpoint(
            self.checkpoint_dir / config.LAST_CHECKPOINT_FILENAME, self.model, cfg, self.step, epoch, state,
        )

    def _scene_loss(self, st: SceneTensors) -> LossBreakdown:
        output = self.model.unroll_future(st, training=True)
        lowest = min_scale(output)
        if lowest < config.MIN_SCALE:
            raise NumericError(f"scale {lowest:.3e} below minimum {config.MIN_SCALE}")
        losses = compute_scene_loss(output, st, self.decoder_cfg)
        losses.check_finite()
        return losses

    def fit(self, scenes: Sequence[Scene], resume: bool = False) -> TrainResult:
        """
        Runs the configured number of epochs.

        Raises:
            ConfigError: If there are no scenes
            NumericError: If a loss component becomes non-finite
        """
        if not scenes:
            raise ConfigError("training needs at least one scene")
        self.checkpoint_dir.mkdir(parents=True, exist_ok=True)
        tensors = [scene_to_tensors(s) for s in scenes]
        self._setup_schedule(len(tensors))
        resumed = self.resume() if resume else False

        components = LossBreakdown.component_names()
        step_log = _CsvLog(self.out_dir / config.TRAIN_LOG_FILENAME, ('step', 'epoch', 'lr') + components + ('total',), resumed)
        epoch_log = _CsvLog(
            self.out_dir / config.EPOCH_LOG_FILENAME, ('epoch', 'loss', 'min_ade', 'min_fde'), resumed,
        )
        batch = self.train_cfg.batch_size
        epoch_rows = []
        logger.info(
            "training_started | scenes=%d | parameters=%d | total_steps=%d",
            len(tensors), self.model.num_parameters(), self.total_steps,
        )

        last_path = self.checkpoint_dir / config.LAST_CHECKPOINT_FILENAME
        for epoch in range(self.epoch, self.train_cfg.epochs):
            self.model.train()
            order = np.random.default_rng([self.train_cfg.seed, epoch]).permutation(len(tensors))
            batches = [order[i:i + batch] for i in range(0, len(order), batch)]
            epoch_losses = []
            bar = tqdm(batches, desc=f"epoch {epoch + 1}/{self.train_cfg.epochs}", disable=not self.progress, leave=False)
            for ids in bar:
                self.optimizer.zero_grad()
                totals = {name: 0.0 for name in components}
                for i in ids:
                    losses = self._scene_loss(tensors[i])
                    (losses.total / len(ids)).backward()
                    for name, value in losses.as_floats().items():
                        if name in totals:
                            totals[name] += value / len(ids)
                lr = self.scheduler.get_last_lr()[0]
                self.optimizer.step()
                self.scheduler.step()
                self.step += 1

                total = sum(totals.values())
                epoch_losses.append(total)
                step_log.write({'step': self.step, 'epoch': epoch, 'lr': lr, 'total': total, **totals})
                bar.set_postfix(loss=f"{total:.3f}")

            row = {'epoch': epoch + 1, 'loss': float(np.mean(epoch_losses))}
            if self.train_cfg.epoch_metrics:
                row.update(training_errors(self.model, tensors))
            else:
                row.update(min_ade=float('nan'), min_fde=float('nan'))
            epoch_log.write(row)
            epoch_rows.append(row)
            logger.info(
                "epoch_done | epoch=%d | loss=%.4f | min_ade=%.4f | min_fde=%.4f",
                row['epoch'], row['loss'], row['min_ade'], row['min_fde'],
            )
            self.epoch = epoch + 1
            last_path = self._save(self.epoch)

        return TrainResult(self.model, last_path, self.step, epoch_rows)


def train(
    scenes: Sequence[Scene],
    decoder_cfg: DecoderConfig,
    train_cfg: TrainConfig,
    out_dir: Path,
    resume: bool = False,
    progress: bool = True,
) -> TrainResult:
    return Trainer(decoder_cfg, train_cfg, out_dir, progress=progress).fit(scenes, resume=resume)
