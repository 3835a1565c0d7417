import csv
import statistics
from dataclasses import replace

import pytest
import torch

from cli.preset_manager import BUILTIN_PRESET_VALUES
from errors import ConfigError
from scene.generator import generate_scenes
from scene.tensors import scene_to_tensors
from training.trainer import TrainConfig, cosine_lr, train, training_errors


def _rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


@pytest.fixture
def two_scenes(tiny_generator_cfg):
    return generate_scenes(tiny_generator_cfg, 0, 2)


@pytest.fixture
def quick_cfg():
    return TrainConfig(lr=1e-3, epochs=2, batch_size=1, seed=4)


@pytest.mark.parametrize("step,expected", [(0, 1.0), (5, 0.5), (10, 0.0), (12, 0.0)])
def test_cosine_schedule(step, expected):
    assert cosine_lr(1.0, step, 10) == pytest.approx(expected, abs=1e-12)


def test_short_run_writes_logs_and_checkpoints(tmp_path, two_scenes, tiny_decoder_cfg, quick_cfg):
    result = train(two_scenes, tiny_decoder_cfg, quick_cfg, tmp_path, progress=False)

    steps = _rows(tmp_path / "train_log.csv")
    epochs = _rows(tmp_path / "epoch_log.csv")
    assert result.step == 4
    assert [int(r["step"]) for r in steps] == [1, 2, 3, 4]
    assert [int(r["epoch"]) for r in epochs] == [1, 2]
    assert float(steps[0]["lr"]) == pytest.approx(cosine_lr(1e-3, 1, 4), rel=1e-5)
    assert len(result.epoch_rows) == 2
    checkpoints = tmp_path / "checkpoints"
    for name in ("epoch_001.ckpt", "epoch_002.ckpt", "last.ckpt", "last.optim.pt"):
        assert (checkpoints / name).is_file(), name
    assert result.checkpoint == checkpoints / "last.ckpt"


def test_same_seed_gives_same_log_and_checkpoints(tmp_path, two_scenes, tiny_decoder_cfg, quick_cfg):
    cfg = replace(quick_cfg, epochs=1, epoch_metrics=False)

    train(two_scenes, tiny_decoder_cfg, cfg, tmp_path / "a", progress=False)
    train(two_scenes, tiny_decoder_cfg, cfg, tmp_path / "b", progress=False)

    first = (tmp_path / "a" / "train_log.csv").read_text(encoding="utf-8")
    assert first == (tmp_path / "b" / "train_log.csv").read_text(encoding="utf-8")
    for name in ("epoch_001.ckpt", "last.ckpt"):
        a = (tmp_path / "a" / "checkpoints" / name).read_bytes()
        assert a == (tmp_path / "b" / "checkpoints" / name).read_bytes(), name


def test_resume_continues_the_step_count(tmp_path, two_scenes, tiny_decoder_cfg, quick_cfg):
    train(two_scenes, tiny_decoder_cfg, replace(quick_cfg, epochs=1), tmp_path, progress=False)

    result = train(two_scenes, tiny_decoder_cfg, quick_cfg, tmp_path, resume=True, progress=False)

    assert result.step == 4
    assert [int(r["step"]) for r in _rows(tmp_path / "train_log.csv")] == [1, 2, 3, 4]
    assert [int(r["epoch"]) for r in _rows(tmp_path / "epoch_log.csv")] == [1, 2]


def test_training_without_scenes_fails(tmp_path, tiny_decoder_cfg, quick_cfg):
    with pytest.raises(ConfigError, match="at least one scene"):
        train([], tiny_decoder_cfg, quick_cfg, tmp_path, progress=False)


def test_train_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="unknown keys"):
        TrainConfig.from_dict({"learning_rate": 0.1})
    with pytest.raises(ConfigError, match="batch_size"):
        TrainConfig(batch_size=0).validate()


@pytest.mark.slow
def test_tiny_preset_overfits_ten_scenes(tmp_path, tiny_generator_cfg, tiny_decoder_cfg):
    scenes = generate_scenes(tiny_generator_cfg, 0, 10)
    cfg = TrainConfig.from_dict(BUILTIN_PRESET_VALUES["tiny"]["train"])

    result = train(scenes, tiny_decoder_cfg, cfg, tmp_path, progress=False)

    last = result.epoch_rows[-1]
    assert last["min_fde"] < 0.5
    assert last["min_ade"] < 0.3


@pytest.mark.slow
def test_overprediction_and_refinement_do_not_hurt_held_out_fde(tmp_path, tiny_generator_cfg, tiny_decoder_cfg):
    train_scenes = generate_scenes(tiny_generator_cfg, 0, 200)
    held_out = [scene_to_tensors(s, dtype=torch.float64) for s in generate_scenes(tiny_generator_cfg, 1000, 50)]
    plain = replace(tiny_decoder_cfg, use_overprediction=False, use_refinement=False)

    def held_out_fde(name, decoder_cfg, seed):
        cfg = TrainConfig(lr=1e-3, epochs=10, batch_size=4, seed=seed, epoch_metrics=False)
        result = train(train_scenes, decoder_cfg, cfg, tmp_path / f"{name}_{seed}", progress=False)
        return training_errors(result.model.double(), held_out)['min_fde']

    full_fde = statistics.median(held_out_fde("full", tiny_decoder_cfg, seed) for seed in (0, 1, 2))
    plain_fde = statistics.median(held_out_fde("plain", plain, seed) for seed in (0, 1, 2))

    assert full_fde <= plain_fde
