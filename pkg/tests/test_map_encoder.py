import math

import torch

from geometry.frames import polyline_frame_poses
from model.map_encoder import MapEncoder, encode_map
from scene.generator import transform_scene
from scene.scene_io import scene_from_dict
from scene.scene_types import POINT_CATEGORY_INDEX, PointCategory
from scene.tensors import scene_to_tensors


def _encoder(cfg, seed=0):
    torch.manual_seed(seed)
    encoder = MapEncoder(cfg).double()
    encoder.eval()
    return encoder


def test_one_token_per_polyline(tiny_decoder_cfg, tiny_tensors):
    tokens = encode_map(_encoder(tiny_decoder_cfg), tiny_tensors)

    assert tokens.num_polylines == tiny_tensors.num_polylines == 3
    assert tokens.tokens.shape == (3, tiny_decoder_cfg.embed_dim)
    assert tokens.frames.shape == (3, 3)
    assert torch.isfinite(tokens.tokens).all()


def test_map_tokens_do_not_depend_on_global_pose(tiny_decoder_cfg, tiny_scene):
    encoder = _encoder(tiny_decoder_cfg)
    moved = transform_scene(tiny_scene, 2.2, (-40.0, 75.0))

    before = encoder(scene_to_tensors(tiny_scene, dtype=torch.float64))
    after = encoder(scene_to_tensors(moved, dtype=torch.float64))

    assert torch.allclose(before.tokens, after.tokens, atol=1e-8)
    c, s = math.cos(2.2), math.sin(2.2)
    rot = torch.tensor([[c, -s], [s, c]], dtype=torch.float64)
    expected_xy = before.frames[:, :2] @ rot.T + torch.tensor([-40.0, 75.0], dtype=torch.float64)
    assert torch.allclose(after.frames[:, :2], expected_xy, atol=1e-9)


def test_far_polylines_do_not_interact(tiny_decoder_cfg, scene_dict):
    data = scene_dict(t_hist=10, t_fut=20, num_points=3)
    near_only = scene_to_tensors(scene_from_dict(data), dtype=torch.float64)
    far = {"points": [[1000.0, 0.0], [1002.0, 0.0]], "category": "crosswalk",
           "point_categories": ["crosswalk", "crosswalk"]}
    data["map"]["polylines"].append(far)
    with_far = scene_to_tensors(scene_from_dict(data), dtype=torch.float64)
    encoder = _encoder(tiny_decoder_cfg)

    alone = encoder(near_only).tokens
    together = encoder(with_far).tokens

    assert torch.allclose(alone[0], together[0], atol=1e-12)


def test_empty_map_gives_no_tokens(tiny_decoder_cfg, scene_dict):
    data = scene_dict(t_hist=10, t_fut=20)
    data["map"]["polylines"] = []

    tokens = _encoder(tiny_decoder_cfg)(scene_to_tensors(scene_from_dict(data), dtype=torch.float64))

    assert tokens.tokens.shape == (0, tiny_decoder_cfg.embed_dim)


def test_equally_spaced_points_share_one_token(tiny_decoder_cfg):
    encoder = _encoder(tiny_decoder_cfg)
    line = torch.tensor([[[0.0, 0.0], [1.5, 0.5], [3.0, 1.0], [4.5, 1.5]]], dtype=torch.float64)
    categories = torch.full((1, 4), POINT_CATEGORY_INDEX[PointCategory.CENTER], dtype=torch.long)
    shifted = line + torch.tensor([20.0, -7.0], dtype=torch.float64)

    tokens = encoder.encode_points(line, categories, polyline_frame_poses(line))
    moved = encoder.encode_points(shifted, categories, polyline_frame_poses(shifted))

    assert tokens.shape == (1, 3, tiny_decoder_cfg.embed_dim)
    for i in (1, 2):
        assert torch.allclose(tokens[0, i], tokens[0, 0], rtol=0.0, atol=1e-12)
    assert torch.allclose(moved, tokens, rtol=0.0, atol=1e-12)
