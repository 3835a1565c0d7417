"""Fourier feature embeddings of continuous inputs."""
import math
from typing import Optional

import torch

import config
from errors import NumericError


def frequency_bands(
    num_bands: int = config.NUM_FREQ_BANDS,
    low: float = config.FREQ_MIN,
    high: float = config.FREQ_MAX,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Fixed log-spaced frequencies (cycles per unit) shared by every embedding."""
    if num_bands == 1:
        return torch.tensor([low], dtype=dtype)
    return torch.logspace(math.log2(low), math.log2(high), num_bands, base=2.0, dtype=dtype)


def fourier_features(
    x: torch.Tensor,
    bands: torch.Tensor,
    include_input: bool = True,
    check_finite: bool = False,
) -> torch.Tensor:
    """
    Sin/cos features of every input component at every frequency.

    Layout is component-major, then frequency, sin before cos:
    [sin(2pi f0 x0), cos(2pi f0 x0), sin(2pi f1 x0), ..., cos(2pi fB x(d-1))],
    followed by the raw input when `include_input` is set.

    Args:
        x: Inputs [..., d]
        bands: Frequencies [B]
        include_input: Append the raw d components
        check_finite: Raise on non-finite inputs

    Returns:
        Tensor [..., 2*d*B (+ d)]
    """
    if check_finite and not bool(torch.isfinite(x).all()):
        raise NumericError("fourier_features: non-finite input")
    phase = 2.0 * math.pi * x[..., :, None] * bands.to(x.dtype)
    feats = torch.stack([torch.sin(phase), torch.cos(phase)], dim=-1)
    feats = feats.flatten(start_dim=-3)
    if include_input:
        feats = torch.cat([feats, x], dim=-1)
    return feats


def fourier_dim(input_dim: int, num_bands: int, include_input: bool = True) -> int:
    return 2 * input_dim * num_bands + (input_dim if include_input else 0)


def scalar_fourier_features(values, bands, include_input: Optional[bool] = True):
    """Plain-list convenience wrapper used by tooling and tests."""
    x = torch.tensor(values, dtype=torch.float64)
    f = torch.tensor(bands, dtype=torch.float64)
    return fourier_features(x, f, include_input=bool(include_input), check_finite=True).tolist()
