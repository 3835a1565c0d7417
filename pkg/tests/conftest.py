"""Shared fixtures: tiny configurations, generated scenes and float64 models."""
import pytest
import torch

from cli.preset_manager import BUILTIN_PRESET_VALUES
from model.donut import DonutForecaster
from model.model_config import DecoderConfig
from scene.generator import GeneratorConfig, generate_synthetic_scene
from scene.tensors import scene_to_tensors


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def isolated_home(tmp_path, monkeypatch):
    """Keeps presets.json out of the real home directory."""
    home = tmp_path / "home"
    home.mkdir()
    monkeypatch.setenv("HOME", str(home))
    return home


@pytest.fixture
def tiny_decoder_cfg() -> DecoderConfig:
    return DecoderConfig.from_dict(BUILTIN_PRESET_VALUES["tiny"]["decoder"])


@pytest.fixture
def tiny_generator_cfg() -> GeneratorConfig:
    return GeneratorConfig.from_dict(BUILTIN_PRESET_VALUES["tiny"]["generator"])


@pytest.fixture
def tiny_scene(tiny_generator_cfg):
    return generate_synthetic_scene(tiny_generator_cfg, 3)


@pytest.fixture
def tiny_tensors(tiny_scene):
    return scene_to_tensors(tiny_scene, dtype=torch.float64)


@pytest.fixture
def tiny_model(tiny_decoder_cfg) -> DonutForecaster:
    torch.manual_seed(0)
    model = DonutForecaster(tiny_decoder_cfg).double()
    model.eval()
    return model


@pytest.fixture
def scene_dict():
    """Factory for minimal scenario objects: one agent, one two-point lane."""

    def make(t_hist=2, t_fut=3, heading=0.0, num_points=2):
        states = [[t, float(t), 0.0, heading, True] for t in range(t_hist + t_fut)]
        points = [[float(i), 0.0] for i in range(num_points)]
        categories = ["start"] + ["center"] * max(num_points - 2, 0) + ["end"]
        return {
            "id": "minimal",
            "t_hist": t_hist,
            "t_fut": t_fut,
            "map": {
                "polylines": [{"points": points, "category": "lane", "point_categories": categories[:num_points]}],
                "relations": [],
            },
            "agents": [{"id": "a0", "type": "vehicle", "states": states}],
            "focal": ["a0"],
        }

    return make
