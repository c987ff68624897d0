"""Recurrent influence-factor network.

Each event is encoded as ``[embedding(v_i), log1p(dt_i)]`` and fed through an
LSTM; the influence factor is ``w_i = sigmoid(h_i . W + b)``. Gradients are
exact, via backpropagation through time over the whole sequence.

Gate blocks in the stacked weight matrices are ordered input, forget, output,
candidate.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .domain import EventSequence

NEURAL_FIELDS = ("embedding", "W_x", "W_h", "b", "readout_W", "readout_b")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class NeuralParams:
    embedding: np.ndarray  # (K, D)
    W_x: np.ndarray  # (4H, D + 1)
    W_h: np.ndarray  # (4H, H)
    b: np.ndarray  # (4H,)
    readout_W: np.ndarray  # (H,)
    readout_b: float = 0.0

    def __post_init__(self):
        for name in NEURAL_FIELDS[:-1]:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        object.__setattr__(self, "readout_b", float(self.readout_b))
        K, D = self.embedding.shape
        H = self.W_h.shape[1]
        if D < 1 or H < 1:
            raise ValueError("embedding and hidden dimensions must be >= 1")
        if self.W_x.shape != (4 * H, D + 1) or self.W_h.shape != (4 * H, H):
            raise ValueError("gate weight shapes inconsistent with D and H")
        if self.b.shape != (4 * H,) or self.readout_W.shape != (H,):
            raise ValueError("bias or readout shape inconsistent with H")
        for name in NEURAL_FIELDS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite entries in {name}")

    @property
    def K(self):
        return self.embedding.shape[0]

    @property
    def D(self):
        return self.embedding.shape[1]

    @property
    def H(self):
        return self.W_h.shape[1]

    def arrays(self) -> dict:
        return {name: np.asarray(getattr(self, name), dtype=float) for name in NEURAL_FIELDS}

    def replace(self, **kw) -> "NeuralParams":
        return replace(self, **kw)


def init_neural(K: int, D: int = 16, H: int = 32, rng=None) -> NeuralParams:
    """Gate weights ~ U(+-1/sqrt(H)), forget bias +1, embedding ~ N(0, 0.1^2), readout 0."""
    rng = np.random.default_rng(rng)
    bound = 1.0 / np.sqrt(H)
    b = np.zeros(4 * H)
    b[H : 2 * H] = 1.0
    return NeuralParams(
        embedding=rng.normal(0.0, 0.1, size=(K, D)),
        W_x=rng.uniform(-bound, bound, size=(4 * H, D + 1)),
        W_h=rng.uniform(-bound, bound, size=(4 * H, H)),
        b=b,
        readout_W=np.zeros(H),
        readout_b=0.0,
    )


@dataclass(frozen=True)
class RecurrentState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, H: int) -> "RecurrentState":
        return cls(np.zeros(H), np.zeros(H))


@dataclass(frozen=True)
class InfluenceTrace:
    """Influence factors aligned with a sequence's events, plus the cached
    forward pass needed by :func:`influence_backward`."""

    factors: np.ndarray
    hidden_states: np.ndarray | None = None
    cache: dict | None = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.factors)

    @classmethod
    def ones(cls, n: int) -> "InfluenceTrace":
        return cls(np.ones(n))


def embed(params: NeuralParams, type_idx: int) -> np.ndarray:
    if not 0 <= type_idx < params.K:
        raise IndexError(f"type index {type_idx} out of range for K={params.K}")
    return params.embedding[type_idx].copy()


def event_inputs(params: NeuralParams, types, times) -> np.ndarray:
    """Recurrent inputs for a batch: ``(..., L)`` types/times -> ``(..., L, D+1)``."""
    types = np.asarray(types, dtype=int)
    times = np.asarray(times, dtype=float)
    gaps = np.diff(times, axis=-1, prepend=0.0)
    gaps = np.maximum(gaps, 0.0)  # padded tails may step backwards
    return np.concatenate([params.embedding[types], np.log1p(gaps)[..., None]], axis=-1)


def recurrent_step(params: NeuralParams, event_input, state: RecurrentState):
    x = np.asarray(event_input, dtype=float)
    if x.shape != (params.D + 1,):
        raise ValueError(f"event input must have length D+1={params.D + 1}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(state.hidden)) and np.all(np.isfinite(state.cell))):
        raise ValueError("non-finite recurrent input")
    H = params.H
    a = params.W_x @ x + params.W_h @ state.hidden + params.b
    i, f, o = sigmoid(a[:H]), sigmoid(a[H : 2 * H]), sigmoid(a[2 * H : 3 * H])
    g = np.tanh(a[3 * H :])
    c = f * state.cell + i * g
    h = o * np.tanh(c)
    return h, RecurrentState(h, c)


# ---------------------------------------------------------------------------
# Batched forward / backward over padded sequences


def forward_batch(params: NeuralParams, types, times):
    """Run the LSTM over ``(B, L)`` padded batches.

    Returns ``(w, cache)`` with ``w`` of shape ``(B, L)``. Padding must sit
    at the end of each row; padded positions produce values that callers
    should mask out, and never affect earlier positions.
    """
    X = event_inputs(params, types, times)
    B, L, _ = X.shape
    H = params.H
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    hs = np.zeros((B, L, H))
    cs = np.zeros((B, L, H))
    gates = np.zeros((B, L, 4 * H))
    Wx_T, Wh_T = params.W_x.T, params.W_h.T
    for k in range(L):
        a = X[:, k] @ Wx_T + h @ Wh_T + params.b
        act = np.empty_like(a)
        act[:, : 3 * H] = sigmoid(a[:, : 3 * H])
        act[:, 3 * H :] = np.tanh(a[:, 3 * H :])
        i, f, o, g = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        c = f * c + i * g
        h = o * np.tanh(c)
        hs[:, k], cs[:, k], gates[:, k] = h, c, act
    w = sigmoid(hs @ params.readout_W + params.readout_b)
    cache = {"X": X, "hs": hs, "cs": cs, "gates": gates, "w": w, "types": np.asarray(types, dtype=int)}
    return w, cache


def backward_batch(params: NeuralParams, cache: dict, dw) -> dict:
    """Gradients of ``sum(dw * w)`` with respect to every neural parameter."""
    X, hs, cs, gates, w = cache["X"], cache["hs"], cache["cs"], cache["gates"], cache["w"]
    types = cache["types"]
    dw = np.asarray(dw, dtype=float)
    B, L, H = hs.shape
    dpre = dw * w * (1.0 - w)  # (B, L)
    grads = {
        "readout_W": np.einsum("bl,blh->h", dpre, hs),
        "readout_b": np.array(dpre.sum()),
    }
    dh_out = dpre[..., None] * params.readout_W  # (B, L, H)
    dA = np.zeros((B, L, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for k in range(L - 1, -1, -1):
        act = gates[:, k]
        i, f, o, g = act[:, :H], act[:, H : 2 * H], act[:, 2 * H : 3 * H], act[:, 3 * H :]
        c = cs[:, k]
        c_prev = cs[:, k - 1] if k > 0 else np.zeros((B, H))
        tc = np.tanh(c)
        dh = dh_out[:, k] + dh_next
        dc = dc_next + dh * o * (1.0 - tc**2)
        da = dA[:, k]
        da[:, :H] = dc * g * i * (1.0 - i)
        da[:, H : 2 * H] = dc * c_prev * f * (1.0 - f)
        da[:, 2 * H : 3 * H] = dh * tc * o * (1.0 - o)
        da[:, 3 * H :] = dc * i * (1.0 - g**2)
        dh_next = da @ params.W_h
        dc_next = dc * f
    h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
    grads["W_x"] = np.einsum("blg,bld->gd", dA, X)
    grads["W_h"] = np.einsum("blg,blh->gh", dA, h_prev)
    grads["b"] = dA.sum(axis=(0, 1))
    dX = dA @ params.W_x  # (B, L, D+1)
    demb = np.zeros_like(params.embedding)
    np.add.at(demb, types.ravel(), dX[..., :-1].reshape(-1, params.D))
    grads["embedding"] = demb
    return grads


# ---------------------------------------------------------------------------
# Single-sequence API


def influence_forward(params: NeuralParams, seq: EventSequence) -> InfluenceTrace:
    n = len(seq)
    if n == 0:
        return InfluenceTrace(np.zeros(0), np.zeros((0, params.H)), None)
    seq.check_catalog(params.K)
    w, cache = forward_batch(params, seq.types[None], seq.times[None])
    return InfluenceTrace(w[0].copy(), cache["hs"][0].copy(), cache)


def influence_backward(params: NeuralParams, seq: EventSequence, upstream_grads, trace: InfluenceTrace | None = None) -> dict:
    """Gradients of ``sum_i upstream_grads[i] * w_i`` for one sequence.

    ``trace`` must be the cached output of :func:`influence_forward` for the
    same params and sequence.
    """
    upstream = np.asarray(upstream_grads, dtype=float)
    if upstream.shape != (len(seq),):
        raise ValueError("need one upstream gradient per event")
    if len(seq) == 0:
        return {k: np.zeros_like(v) for k, v in params.arrays().items()}
    if trace is None or trace.cache is None:
        raise ValueError("influence_backward needs the cached forward states of influence_forward")
    return backward_batch(params, trace.cache, upstream[None])
