"""Full network assembly: encoders, interaction, context, and heads.

One forward pass takes raw video features (T×Dv) and embedded query tokens
(N×Dq) to a score grid:

    query LSTM ─┐
                ├─ word attention + interaction LSTM ─ self-attention ─ heads
    video LSTM ─┘

The context stage can be swapped for an identity pass-through (the states
concatenated with themselves) to measure what self-attention buys; the head
input width stays 2H either way.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .attention import AttentionParams, init_attention_params, match_lstm_forward
from .context import ContextParams, init_context_params, integrate_context
from .errors import CheckpointError, ConfigError, ShapeError
from .heads import AnchorSet, HeadParams, ScoreGrid, init_head_params, localization_scores
from .lstm import LstmParams, encode_sequence, hidden_matrix, init_lstm_params


class GroundingNetwork:
    """All parameters and the forward computation of the grounding model."""

    def __init__(self, query_dim: int, video_dim: int, hidden: int,
                 anchors: AnchorSet, rng: np.random.Generator,
                 attn_size: int | None = None, ctx_size: int | None = None,
                 use_context: bool = True):
        if min(query_dim, video_dim, hidden) < 1:
            raise ConfigError(f"dimensions must be >= 1, got Dq={query_dim} "
                              f"Dv={video_dim} H={hidden}")
        self.query_dim = query_dim
        self.video_dim = video_dim
        self.hidden = hidden
        self.anchors = anchors
        self.use_context = use_context
        attn_size = hidden if attn_size is None else attn_size
        ctx_size = hidden if ctx_size is None else ctx_size

        self.lstm_q = init_lstm_params(query_dim, hidden, rng, name="query_lstm")
        self.lstm_v = init_lstm_params(video_dim, hidden, rng, name="video_lstm")
        self.lstm_m = init_lstm_params(2 * hidden, hidden, rng, name="match_lstm")
        self.attn = init_attention_params(hidden, hidden, hidden, attn_size, rng,
                                          name="attn")
        self.ctx = init_context_params(hidden, ctx_size, rng, name="ctx")
        self.head = init_head_params(2 * hidden, len(anchors), rng, name="head")

    def params(self) -> list[ad.Tensor]:
        """Every trainable tensor in a stable order."""
        return (self.lstm_q.tensors() + self.lstm_v.tensors() + self.lstm_m.tensors()
                + self.attn.tensors() + self.ctx.tensors() + self.head.tensors())

    def forward(self, features: np.ndarray, query_vectors: np.ndarray,
                video_id: str = "", query_id: str = "", duration: float = 0.0,
                collect_attention: bool = False):
        """Score one (video, query) pair.

        Returns ``(grid, extras)``; extras holds the word-attention rows and,
        when requested, the T×T context weights.
        """
        if features.ndim != 2 or features.shape[1] != self.video_dim:
            raise ShapeError(f"features must be Tx{self.video_dim}, got {features.shape}")
        if query_vectors.ndim != 2 or query_vectors.shape[1] != self.query_dim:
            raise ShapeError(f"query vectors must be Nx{self.query_dim}, "
                             f"got {query_vectors.shape}")
        hq = hidden_matrix(encode_sequence(self.lstm_q, ad.constant(query_vectors)))
        hv = hidden_matrix(encode_sequence(self.lstm_v, ad.constant(features)))
        trace = match_lstm_forward(self.lstm_m, self.attn, hq, hv)
        hm = hidden_matrix(trace.states)
        if self.use_context:
            ctx_out = integrate_context(self.ctx, hm)
            hc = ctx_out.hc
        else:
            ctx_out = None
            hc = ad.concat_cols(hm, hm)
        grid = localization_scores(self.head, hc, self.anchors, video_id=video_id,
                                   query_id=query_id, duration=duration)
        extras = {"word_attention": trace.alphas}
        if collect_attention and ctx_out is not None:
            extras["context_attention"] = ctx_out.alpha.data.copy()
        return grid, extras

    # -- persistence ---------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {t.name: t.data.copy() for t in self.params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = {t.name: t for t in self.params()}
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise CheckpointError(f"parameter names disagree: missing {missing}, "
                                  f"unexpected {extra}")
        for name, tensor in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise CheckpointError(f"parameter {name}: shape {arr.shape} does not "
                                      f"match model {tensor.shape}")
            tensor.data = arr.copy()
