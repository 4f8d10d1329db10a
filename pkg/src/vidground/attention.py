"""Query-video interaction: per-step word attention feeding a match LSTM.

For each video position t, every query word j gets a relevance score

    r_tj = w_r . tanh(Ws h_j^q + Wv h_t^v + Wm h_t^m + b_r)

softmaxed over words into weights a_t, which mix the query states into an
attended summary h_att.  The interaction LSTM then consumes
concat(h_att, h_t^v), so its state at position t has seen video features
1..t and is the state used to score position t.  The attention at step t
reads the previous interaction state, as the recurrence requires.

The two projections that do not depend on the interaction state (query
states through Ws, video states through Wv plus the bias) are hoisted out
of the time loop and computed once per instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError
from .lstm import LstmParams, LstmState, hidden_matrix, lstm_step, zero_state


@dataclass
class AttentionParams:
    """Word-attention weights.

    ws: Dq×da (query projection), wv: Dv×da (video projection),
    wm: Dm×da (interaction-state projection), wr: da×1 (scoring vector),
    br: da (bias).
    """

    ws: ad.Tensor
    wv: ad.Tensor
    wm: ad.Tensor
    wr: ad.Tensor
    br: ad.Tensor

    def __post_init__(self):
        da = self.ws.shape[1]
        for label, t in (("wv", self.wv), ("wm", self.wm)):
            if t.ndim != 2 or t.shape[1] != da:
                raise ShapeError(f"{label} must project into width {da}, got {t.shape}")
        if self.wr.shape != (da, 1):
            raise ShapeError(f"wr must be {da}x1, got {self.wr.shape}")
        if self.br.shape != (da,):
            raise ShapeError(f"br must have length {da}, got {self.br.shape}")

    @property
    def attn_size(self) -> int:
        return self.ws.shape[1]

    def tensors(self) -> list[ad.Tensor]:
        return [self.ws, self.wv, self.wm, self.wr, self.br]


@dataclass
class InteractionTrace:
    """All interaction states plus the word-attention rows that produced them.

    states[t] scored video position t; alphas[t] (length N, sums to 1) is the
    word distribution used at that step.
    """

    states: list[LstmState]
    alphas: np.ndarray


def init_attention_params(query_size: int, video_size: int, state_size: int,
                          attn_size: int, rng: np.random.Generator,
                          name: str = "attn") -> AttentionParams:
    """Projections uniform ±1/sqrt(fan_in); scoring vector and bias zero."""
    def u(rows, cols):
        s = 1.0 / np.sqrt(rows)
        return rng.uniform(-s, s, size=(rows, cols))

    return AttentionParams(
        ws=ad.parameter(u(query_size, attn_size), name=f"{name}.ws"),
        wv=ad.parameter(u(video_size, attn_size), name=f"{name}.wv"),
        wm=ad.parameter(u(state_size, attn_size), name=f"{name}.wm"),
        wr=ad.parameter(np.zeros((attn_size, 1)), name=f"{name}.wr"),
        br=ad.parameter(np.zeros(attn_size), name=f"{name}.br"),
    )


def _attend(attn: AttentionParams, hq: ad.Tensor, hq_proj: ad.Tensor,
            base: ad.Tensor, hm: ad.Tensor):
    """Attention weights and attended query summary for one video step.

    ``hq_proj`` is Hq @ ws (N×da) and ``base`` is hv @ wv + br (1×da), both
    precomputed; only the hm projection runs per step.
    """
    pre = ad.add(hq_proj, ad.add(base, ad.matmul(hm, attn.wm)))
    scores = ad.transpose(ad.matmul(ad.tanh(pre), attn.wr))
    alpha = ad.row_softmax(scores)
    h_att = ad.matmul(alpha, hq)
    return alpha, h_att


def word_attention(attn: AttentionParams, hq, hv: ad.Tensor, hm: ad.Tensor):
    """Score every query word against one video step.

    ``hq`` is the N×Dq matrix of query states (or the state list itself);
    ``hv`` and ``hm`` are 1-row tensors.  Returns ``(alpha, h_att)`` where
    alpha is 1×N and sums to 1, and h_att = alpha @ Hq.
    """
    hq_mat = hq if isinstance(hq, ad.Tensor) else hidden_matrix(hq)
    if hq_mat.shape[0] < 1:
        raise ContractError("need at least one query word")
    hq_proj = ad.matmul(hq_mat, attn.ws)
    base = ad.matmul_bias(hv, attn.wv, attn.br)
    return _attend(attn, hq_mat, hq_proj, base, hm)


def match_lstm_forward(lstm_m: LstmParams, attn: AttentionParams,
                       hq, hv) -> InteractionTrace:
    """Run the interaction recurrence over the whole video.

    ``hq``/``hv`` are state lists or stacked matrices (N×Dq, T×Dv).  Step t
    attends with the previous interaction state, consumes
    concat(h_att, h_t^v), and emits the state that scores position t.
    """
    hq_mat = hq if isinstance(hq, ad.Tensor) else hidden_matrix(hq)
    hv_mat = hv if isinstance(hv, ad.Tensor) else hidden_matrix(hv)
    if hv_mat.shape[0] < 1:
        raise ContractError("cannot run interaction over an empty video")
    if hq_mat.shape[0] < 1:
        raise ContractError("need at least one query word")

    hq_proj = ad.matmul(hq_mat, attn.ws)
    base_all = ad.matmul_bias(hv_mat, attn.wv, attn.br)

    state = zero_state(lstm_m.hidden_size)
    states: list[LstmState] = []
    alpha_rows = []
    for t in range(hv_mat.shape[0]):
        hv_t = ad.slice_rows(hv_mat, t, t + 1)
        base_t = ad.slice_rows(base_all, t, t + 1)
        alpha, h_att = _attend(attn, hq_mat, hq_proj, base_t, state.h)
        state = lstm_step(lstm_m, ad.concat_cols(h_att, hv_t), state)
        states.append(state)
        alpha_rows.append(alpha.data[0].copy())
    return InteractionTrace(states=states, alphas=np.array(alpha_rows))


def write_alpha_tsv(path, alphas: np.ndarray) -> None:
    """Dump an attention-weight matrix as tab-separated reals, one row per line."""
    with open(path, "w") as fh:
        for row in np.atleast_2d(alphas):
            fh.write("\t".join(f"{v:.10g}" for v in row) + "\n")
