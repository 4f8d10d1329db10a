"""LSTM cell and unidirectional sequence encoders.

One LSTM layer per role: a query encoder over word embeddings, a video
encoder over frame features, and the interaction recurrence that consumes
attention-weighted summaries.  All three share this implementation.

The whole gate computation for one step is a single fused tape node with a
hand-derived backward pass; unfused it would be ~17 nodes per step, which
dominates training time at desk scale.  The input projection ``x @ Wx + b``
is hoisted out so ``encode_sequence`` can batch it across all steps with one
matrix product.

Weights are stored right-multiplication style: ``Wx`` is Din×4H and ``Wh``
is H×4H, with the gate blocks ordered [input, forget, candidate, output]
along the 4H axis.  States are 1×H row tensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError


@dataclass
class LstmParams:
    """Weights of one LSTM layer: wx (Din×4H), wh (H×4H), b (4H)."""

    wx: ad.Tensor
    wh: ad.Tensor
    b: ad.Tensor

    def __post_init__(self):
        if self.wh.ndim != 2 or self.wh.shape[1] != 4 * self.wh.shape[0]:
            raise ShapeError(f"hidden weights must be H x 4H, got {self.wh.shape}")
        h = self.wh.shape[0]
        if self.wx.ndim != 2 or self.wx.shape[1] != 4 * h:
            raise ShapeError(f"input weights must be Din x 4H, got {self.wx.shape} for H={h}")
        if self.b.shape != (4 * h,):
            raise ShapeError(f"bias must have length 4H={4 * h}, got {self.b.shape}")

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx.shape[0]

    def tensors(self) -> list[ad.Tensor]:
        return [self.wx, self.wh, self.b]


@dataclass
class LstmState:
    """Hidden and cell vectors of one step, each a 1×H row tensor."""

    h: ad.Tensor
    c: ad.Tensor


def init_lstm_params(input_size: int, hidden_size: int, rng: np.random.Generator,
                     name: str = "lstm") -> LstmParams:
    """Fresh weights: uniform ±1/sqrt(fan_in), zero biases, forget block 1.0."""
    sx = 1.0 / np.sqrt(input_size)
    sh = 1.0 / np.sqrt(hidden_size)
    wx = rng.uniform(-sx, sx, size=(input_size, 4 * hidden_size))
    wh = rng.uniform(-sh, sh, size=(hidden_size, 4 * hidden_size))
    b = np.zeros(4 * hidden_size)
    b[hidden_size:2 * hidden_size] = 1.0  # forget gate starts open
    return LstmParams(
        wx=ad.parameter(wx, name=f"{name}.wx"),
        wh=ad.parameter(wh, name=f"{name}.wh"),
        b=ad.parameter(b, name=f"{name}.b"),
    )


def zero_state(hidden_size: int) -> LstmState:
    return LstmState(h=ad.constant(np.zeros((1, hidden_size))),
                     c=ad.constant(np.zeros((1, hidden_size))))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def _gate_step(xp: ad.Tensor, state: LstmState, wh: ad.Tensor) -> LstmState:
    """One LSTM step given the already-projected input ``xp = x @ wx + b``.

    Emits a single tape node whose output is ``[h' | c']`` (1×2H), then
    slices the two halves apart.
    """
    hprev, cprev = state.h, state.c
    hsize = wh.shape[0]
    z = xp.data + hprev.data @ wh.data
    i = _stable_sigmoid(z[:, :hsize])
    f = _stable_sigmoid(z[:, hsize:2 * hsize])
    g = np.tanh(z[:, 2 * hsize:3 * hsize])
    o = _stable_sigmoid(z[:, 3 * hsize:])
    c_new = f * cprev.data + i * g
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(gout):
        gh = gout[:, :hsize]
        gc = gout[:, hsize:]
        dc = gh * o * (1.0 - tc * tc) + gc
        dz = np.concatenate((
            dc * g * i * (1.0 - i),
            dc * cprev.data * f * (1.0 - f),
            dc * i * (1.0 - g * g),
            gh * tc * o * (1.0 - o),
        ), axis=1)
        return [
            (xp, dz),
            (hprev, dz @ wh.data.T),
            (cprev, dc * f),
            (wh, hprev.data.T @ dz),
        ]

    packed = ad.apply_op(np.concatenate((h_new, c_new), axis=1),
                         (xp, hprev, cprev, wh), backward)
    return LstmState(h=ad.slice_cols(packed, 0, hsize),
                     c=ad.slice_cols(packed, hsize, 2 * hsize))


def lstm_step(params: LstmParams, x: ad.Tensor, state: LstmState) -> LstmState:
    """Standard LSTM recurrence for a single input row (1×Din or length Din)."""
    row = x if x.ndim == 2 else ad.Tensor(x.data.reshape(1, -1), requires_grad=x.requires_grad)
    if row is not x and x.requires_grad:
        # reshaping must not detach a tracked input from the tape
        raise ContractError("pass tracked inputs as 1xDin rows")
    if row.shape != (1, params.input_size):
        raise ShapeError(f"input must be 1x{params.input_size}, got {x.shape}")
    xp = ad.matmul_bias(row, params.wx, params.b)
    return _gate_step(xp, state, params.wh)


def encode_sequence(params: LstmParams, inputs, init: LstmState | None = None) -> list[LstmState]:
    """Run the recurrence over a whole sequence, returning every state in order.

    ``inputs`` is either a T×Din tensor or a nonempty list of input rows.
    State t depends only on inputs up to t.
    """
    if isinstance(inputs, ad.Tensor):
        xs = inputs
    else:
        rows = list(inputs)
        if not rows:
            raise ContractError("cannot encode an empty sequence")
        xs = ad.stack_rows(rows)
    if xs.shape[0] == 0:
        raise ContractError("cannot encode an empty sequence")
    if xs.shape[1] != params.input_size:
        raise ShapeError(f"inputs must be Tx{params.input_size}, got {xs.shape}")
    state = init if init is not None else zero_state(params.hidden_size)
    xp_all = ad.matmul_bias(xs, params.wx, params.b)
    states = []
    for t in range(xs.shape[0]):
        state = _gate_step(ad.slice_rows(xp_all, t, t + 1), state, params.wh)
        states.append(state)
    return states


def hidden_matrix(states: list[LstmState]) -> ad.Tensor:
    """Stack the hidden vectors of a state sequence into a T×H matrix."""
    return ad.stack_rows([s.h for s in states])
