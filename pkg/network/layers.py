"""MLPs, Fourier embeddings, embedding lookup and weight initialization."""
from typing import Callable, Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from geometry.fourier import fourier_dim, fourier_features, frequency_bands


class MLP(nn.Module):
    """
    Affine-activation stack whose final layer is affine only.

    Args:
        widths: Layer widths including the input, e.g. (in, hidden, out)
        activation: Activation module factory (GELU by default)
        dropout: Dropout applied after each hidden activation
    """

    def __init__(self, widths: Sequence[int], activation: Callable[[], nn.Module] = nn.GELU, dropout: float = 0.0):
        super().__init__()
        if len(widths) < 2:
            raise ValueError("MLP needs at least an input and an output width")
        self.widths = tuple(widths)
        layers = []
        for i, (w_in, w_out) in enumerate(zip(widths[:-1], widths[1:])):
            layers.append(nn.Linear(w_in, w_out))
            if i < len(widths) - 2:
                layers.append(activation())
                if dropout > 0:
                    layers.append(nn.Dropout(dropout))
        self.net = nn.Sequential(*layers)

    @property
    def output_layer(self) -> nn.Linear:
        return self.net[-1]

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.widths[0]:
            raise ValueError(f"MLP input width {x.shape[-1]} does not match first layer width {self.widths[0]}")
        return self.net(x)


def mlp(x: torch.Tensor, module: MLP) -> torch.Tensor:
    return module(x)


class FourierEmbedding(nn.Module):
    """fourier_features of a continuous vector followed by an MLP to D."""

    def __init__(self, input_dim: int, embed_dim: int, num_bands: int, dropout: float = 0.0):
        super().__init__()
        self.input_dim = input_dim
        self.register_buffer('bands', frequency_bands(num_bands), persistent=False)
        self.mlp = MLP((fourier_dim(input_dim, num_bands), embed_dim, embed_dim), dropout=dropout)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.mlp(fourier_features(x, self.bands))


def embedding_lookup(table: torch.Tensor, index: torch.Tensor) -> torch.Tensor:
    """
    Rows of an embedding table; gradients only reach the looked-up rows.

    Raises:
        IndexError: If any index is outside the table
    """
    index = torch.as_tensor(index, dtype=torch.long)
    if index.numel() and (int(index.min()) < 0 or int(index.max()) >= table.shape[0]):
        raise IndexError(f"embedding index out of range for table with {table.shape[0]} rows")
    return F.embedding(index, table)


def init_weights(module: nn.Module, std: float = 0.02):
    """Truncated-normal weights, zero biases, unit LayerNorm gains."""
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.Embedding):
        nn.init.trunc_normal_(module.weight, std=std, a=-2 * std, b=2 * std)
    elif isinstance(module, nn.LayerNorm):
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


def zero_linear(layer: Optional[nn.Linear]):
    if layer is None:
        return
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
