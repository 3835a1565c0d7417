"""Multi-head attention with additive relative positional encodings."""
import math
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn

from geometry.frames import DESCRIPTOR_INPUT_DIM
from network.layers import MLP, FourierEmbedding


class RelAttentionLayer(nn.Module):
    """
    Pre-norm attention block whose keys and values are shifted by an encoding
    of the relative pose between each query and key.

    Per head: softmax(q . (k + r_k) / sqrt(D/H)) . (v + r_v), where
    r = MLP(fourier_features(rel)) (+ optional extra encoding) and r_k, r_v are
    linear projections of r. Attention and a 4*D feed-forward block are both
    wrapped in residual connections.

    Args:
        embed_dim: Token width D
        num_heads: Number of heads H (D divisible by H)
        num_bands: Fourier bands of the relative encoding
        rel_dim: Width of the relative feature vector
        dropout: Dropout on attention weights and block outputs
        ff_multiplier: Feed-forward width as a multiple of D
    """

    def __init__(
        self,
        embed_dim: int,
        num_heads: int,
        num_bands: int,
        rel_dim: int = DESCRIPTOR_INPUT_DIM,
        dropout: float = 0.0,
        ff_multiplier: int = 4,
    ):
        super().__init__()
        if embed_dim % num_heads != 0:
            raise ValueError(f"embed_dim {embed_dim} is not divisible by num_heads {num_heads}")
        if not 0.0 <= dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {dropout}")
        self.embed_dim = embed_dim
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.rel_dim = rel_dim

        self.norm_q = nn.LayerNorm(embed_dim)
        self.norm_kv = nn.LayerNorm(embed_dim)
        self.to_q = nn.Linear(embed_dim, embed_dim)
        self.to_k = nn.Linear(embed_dim, embed_dim)
        self.to_v = nn.Linear(embed_dim, embed_dim)
        self.rel_embed = FourierEmbedding(rel_dim, embed_dim, num_bands)
        self.to_rel_k = nn.Linear(embed_dim, embed_dim)
        self.to_rel_v = nn.Linear(embed_dim, embed_dim)
        self.to_out = nn.Linear(embed_dim, embed_dim)
        self.attn_drop = nn.Dropout(dropout)
        self.out_drop = nn.Dropout(dropout)

        self.norm_ff = nn.LayerNorm(embed_dim)
        self.ff = MLP((embed_dim, ff_multiplier * embed_dim, embed_dim), dropout=dropout)
        self.ff_drop = nn.Dropout(dropout)

    def forward(
        self,
        queries: torch.Tensor,
        keys: torch.Tensor,
        rel: torch.Tensor,
        mask: torch.Tensor,
        extra: Optional[torch.Tensor] = None,
        return_weights: bool = False,
    ) -> Union[torch.Tensor, Tuple[torch.Tensor, torch.Tensor]]:
        """
        Args:
            queries: Query tokens [B, Q, D]
            keys: Key/value tokens [B, K, D]
            rel: Relative features per pair [B, Q, K, rel_dim]
            mask: Allowed pairs [B, Q, K] bool
            extra: Additional pair encoding added before the r_k/r_v projections [B, Q, K, D]
            return_weights: Also return attention weights [B, Q, K, H]

        Returns:
            Tokens [B, Q, D]; queries with no allowed key are returned unchanged
        """
        b, q_len, d = queries.shape
        k_len = keys.shape[1]
        if d != self.embed_dim or keys.shape[-1] != self.embed_dim:
            raise ValueError(f"token width mismatch: expected {self.embed_dim}, got {d} and {keys.shape[-1]}")
        if rel.shape[:3] != (b, q_len, k_len) or rel.shape[-1] != self.rel_dim:
            raise ValueError(f"rel shape {tuple(rel.shape)} does not match ({b}, {q_len}, {k_len}, {self.rel_dim})")
        if mask.shape != (b, q_len, k_len):
            raise ValueError(f"mask shape {tuple(mask.shape)} does not match ({b}, {q_len}, {k_len})")

        h, hd = self.num_heads, self.head_dim
        x_q = self.norm_q(queries)
        x_kv = self.norm_kv(keys)
        q = self.to_q(x_q).view(b, q_len, h, hd)
        k = self.to_k(x_kv).view(b, 1, k_len, h, hd)
        v = self.to_v(x_kv).view(b, 1, k_len, h, hd)

        r = self.rel_embed(rel)
        if extra is not None:
            r = r + extra
        r_k = self.to_rel_k(r).view(b, q_len, k_len, h, hd)
        r_v = self.to_rel_v(r).view(b, q_len, k_len, h, hd)

        scores = torch.einsum('bqhd,bqkhd->bqkh', q, k + r_k) / math.sqrt(hd)
        scores = scores.masked_fill(~mask[..., None], torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=2) * mask[..., None].to(scores.dtype)
        attended = torch.einsum('bqkh,bqkhd->bqhd', self.attn_drop(weights), v + r_v).reshape(b, q_len, d)

        x = queries + self.out_drop(self.to_out(attended))
        x = x + self.ff_drop(self.ff(self.norm_ff(x)))

        has_key = mask.any(dim=-1, keepdim=True)
        out = torch.where(has_key, x, queries)
        if return_weights:
            return out, weights
        return out


def rel_attention(
    layer: RelAttentionLayer,
    queries: torch.Tensor,
    keys: torch.Tensor,
    rel: torch.Tensor,
    mask: torch.Tensor,
    extra: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Functional form of one relative attention layer call."""
    return layer(queries, keys, rel, mask, extra)
