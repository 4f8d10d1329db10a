"""Self-attention context over the interaction states.

Scaled dot-product attention of the interaction sequence against itself,
with one shared projection for both sides, so the relevance matrix is
symmetric.  No masking: every position may attend to past and future, which
is the point — the forward-only recurrence gets bidirectional context here.
The attended summaries are concatenated with the original states, so the
right half of the output preserves the interaction sequence bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError


@dataclass
class ContextParams:
    """Shared projection w (D×d) used for both sides of the relevance product."""

    w: ad.Tensor

    def __post_init__(self):
        if self.w.ndim != 2:
            raise ShapeError(f"projection must be a matrix, got shape {self.w.shape}")
        if self.w.shape[1] < 1:
            raise ConfigError(f"projection dimension must be positive, got {self.w.shape[1]}")

    @property
    def proj_size(self) -> int:
        return self.w.shape[1]

    def tensors(self) -> list[ad.Tensor]:
        return [self.w]


@dataclass
class ContextOutput:
    """alpha: T×T row-stochastic weights; hhat: T×D summaries; hc: T×2D concat."""

    alpha: ad.Tensor
    hhat: ad.Tensor
    hc: ad.Tensor


def init_context_params(dim: int, proj: int, rng: np.random.Generator,
                        name: str = "ctx") -> ContextParams:
    if proj < 1:
        raise ConfigError(f"projection dimension must be positive, got {proj}")
    s = 1.0 / np.sqrt(dim)
    return ContextParams(w=ad.parameter(rng.uniform(-s, s, size=(dim, proj)),
                                        name=f"{name}.w"))


def relevance_matrix(ctx: ContextParams, hm: ad.Tensor) -> ad.Tensor:
    """Z = (Hm W)(Hm W)^T / sqrt(d); symmetric because W is shared."""
    if hm.ndim != 2 or hm.shape[0] < 1:
        raise ShapeError(f"need a nonempty T×D state matrix, got shape {hm.shape}")
    p = ad.matmul(hm, ctx.w)
    return ad.affine(ad.matmul(p, ad.transpose(p)), 1.0 / np.sqrt(ctx.proj_size), 0.0)


def integrate_context(ctx: ContextParams, hm: ad.Tensor) -> ContextOutput:
    """Attend the interaction states to themselves and append the summaries."""
    alpha = ad.row_softmax(relevance_matrix(ctx, hm))
    hhat = ad.matmul(alpha, hm)
    return ContextOutput(alpha=alpha, hhat=hhat, hc=ad.concat_cols(hhat, hm))
