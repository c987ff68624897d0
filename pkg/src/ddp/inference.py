"""Likelihood, next-event distributions, the training objective and fitting.

The per-sequence objective is

    log L(seq) - eta * l_p(seq)

where ``log L`` is the point-process log-likelihood censored at the
observation horizon and ``l_p`` the mean cross entropy of the realized next
type at each realized event time (events 2..n). The dataset objective is its
mean over sequences minus ``l1_weight * sum(alpha)``.

All heavy lifting runs on padded ``(B, L)`` batches with hand-derived
gradients; see :func:`batch_terms`.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .domain import EventSequence, history_prefix
from .intensity import ModelParams, _compensator_vector, intensities, influence_factors
from .neural import InfluenceTrace, backward_batch, forward_batch, sigmoid

log = logging.getLogger(__name__)

# rough cap on B * L * L * K entries materialized per chunk
_CHUNK_BUDGET = 2_000_000


class FitDivergence(RuntimeError):
    def __init__(self, epoch: int, message: str = "objective became non-finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 1.0
    l1_weight: float = 0.0
    learning_rate: float = 1e-3
    epochs: int = 100
    batch_size: int = 64
    seed: int = 0
    validation_fraction: float = 0.2
    early_stop_patience: int = 10
    censor: bool = True
    threads: int = 1

    def __post_init__(self):
        if self.eta < 0 or self.l1_weight < 0:
            raise ValueError("eta and l1_weight must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.epochs < 1 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("epochs, batch_size and early_stop_patience must be >= 1")


# ---------------------------------------------------------------------------
# Batching


@dataclass
class Batch:
    times: np.ndarray  # (B, L), padded with the last valid time
    types: np.ndarray  # (B, L), padded with 0
    mask: np.ndarray  # (B, L) bool
    horizon: np.ndarray  # (B,)
    context: np.ndarray  # (B, F)

    @property
    def size(self):
        return self.times.shape[0]


def make_batch(seqs, n_context: int | None = None) -> Batch:
    B = len(seqs)
    L = max((len(s) for s in seqs), default=0)
    times = np.zeros((B, L))
    types = np.zeros((B, L), dtype=int)
    mask = np.zeros((B, L), dtype=bool)
    F = len(seqs[0].context) if seqs and n_context is None else (n_context or 0)
    context = np.zeros((B, F))
    horizon = np.zeros(B)
    for b, s in enumerate(seqs):
        n = len(s)
        if n:
            times[b, :n] = s.times
            times[b, n:] = s.events[-1].t
            types[b, :n] = s.types
            mask[b, :n] = True
        if len(s.context) != F:
            raise ValueError(f"context length mismatch for {s.patient_id!r}")
        context[b] = s.context
        horizon[b] = s.horizon_T
    return Batch(times, types, mask, horizon, context)


def _chunks(seqs, K):
    """Split into consecutive chunks whose pairwise tensors fit the budget."""
    out, cur, cur_L = [], [], 0
    for s in seqs:
        L = max(cur_L, len(s), 1)
        if cur and (len(cur) + 1) * L * L * K > _CHUNK_BUDGET:
            out.append(cur)
            cur, L = [], max(len(s), 1)
        cur.append(s)
        cur_L = L
    if cur:
        out.append(cur)
    return out


# ---------------------------------------------------------------------------
# Batched terms and gradients


def batch_terms(model: ModelParams, batch: Batch, *, eta: float = 0.0, censor: bool = True,
                weights=None, need_grad: bool = False, w_override=None, keep_lambda: bool = False):
    """Per-sequence log-likelihood and prediction loss for a padded batch.

    With ``need_grad`` also returns the gradient of
    ``sum_b weights[b] * (loglik[b] - eta * ce[b])`` with respect to every raw
    model array (same keys as ``model.arrays()``).
    """
    B, L = batch.times.shape
    K = model.K
    mask = batch.mask
    maskf = mask.astype(float)
    ctx = model.model_context(batch.context)
    z = ctx @ model.theta.T + model.bias  # (B, K)
    mu = np.logaddexp(0.0, z)
    n_events = mask.sum(1)
    if censor:
        T = batch.horizon
    else:
        T = np.where(n_events > 0, batch.times[:, -1] if L else 0.0, 0.0)

    cache = None
    if w_override is not None:
        w = np.asarray(w_override, dtype=float).reshape(B, L)
    elif model.kind == "ddp" and L > 0:
        w, cache = forward_batch(model.neural, batch.types, batch.times)
    else:
        w = np.ones((B, L))
    w_eff = w * maskf

    lam = np.broadcast_to(mu[:, None, :], (B, L, K)).copy()
    if model.has_excitation and L > 0:
        A, Bt = model.alpha, model.beta
        As, Bs = A[batch.types], Bt[batch.types]  # (B, L, K) by source event
        dt = batch.times[:, :, None] - batch.times[:, None, :]  # (B, j, i)
        pair = np.tril(np.ones((L, L), dtype=bool), -1)[None] & mask[:, :, None] & mask[:, None, :]
        dt = np.where(pair, dt, 0.0)
        expo = np.where(pair[..., None], np.exp(-Bs[:, None, :, :] * dt[..., None]), 0.0)  # (B, j, i, K)
        kern = Bs[:, None] * expo
        lam += np.einsum("bjiv,biv->bjv", kern, As * w_eff[..., None])
        tau = np.where(mask, T[:, None] - batch.times, 0.0)
        ex = np.exp(-Bs * tau[..., None])
        surv = As * (1.0 - ex)  # (B, L, K)
        excite_mass = np.einsum("bi,biv->b", w_eff, surv)
    else:
        excite_mass = np.zeros(B)

    idx_b, idx_j = np.indices((B, L))
    lam_true = lam[idx_b, idx_j, batch.types]  # (B, L)
    safe_true = np.where(mask, lam_true, 1.0)
    loglik = np.sum(np.log(safe_true) * maskf, axis=1) - mu.sum(1) * T - excite_mass

    S = lam.sum(-1)
    Q = mask.copy()
    if L:
        Q[:, 0] = False
    n_pred = Q.sum(1)
    denom = np.maximum(n_pred, 1)
    safe_S = np.where(Q, S, 1.0)
    ce = np.sum(np.where(Q, np.log(safe_S) - np.log(safe_true), 0.0), axis=1) / denom

    result = {"loglik": loglik, "ce": ce, "n_pred": n_pred}
    if keep_lambda:
        result["lambda"] = lam
    if not need_grad:
        return result

    c = np.ones(B) if weights is None else np.asarray(weights, dtype=float)
    q = -eta * c / denom  # weight on ce_b
    # d objective / d lambda[b, j, v]
    g = np.zeros((B, L, K))
    g += (q[:, None] * Q / safe_S)[..., None]
    g[idx_b, idx_j, batch.types] += (c[:, None] * maskf - q[:, None] * Q) / safe_true
    dmu = g.sum(1) - (c * T)[:, None]

    grads = {}
    dz = dmu * sigmoid(z)
    grads["theta"] = dz.T @ ctx if model.uses_context else np.zeros_like(model.theta)
    grads["bias"] = dz.sum(0)

    dw = np.zeros((B, L))
    if model.has_excitation and L > 0:
        G1 = np.einsum("bjv,bjiv->biv", g, kern)
        G2 = np.einsum("bjv,bjiv->biv", g, expo)
        G3 = np.einsum("bjv,bjiv,bji->biv", g, expo, dt)
        dAs = w_eff[..., None] * G1 - c[:, None, None] * w_eff[..., None] * (1.0 - ex)
        dBs = As * w_eff[..., None] * (G2 - Bs * G3) - c[:, None, None] * w_eff[..., None] * As * tau[..., None] * ex
        dw = (np.einsum("biv,biv->bi", As, G1) - c[:, None] * surv.sum(-1)) * maskf
        onehot = np.zeros((B, L, K))
        onehot[idx_b, idx_j, batch.types] = maskf
        dA = np.einsum("bis,biv->sv", onehot, dAs)
        dB = np.einsum("bis,biv->sv", onehot, dBs)
        grads["raw_alpha"] = dA * sigmoid(model.raw_alpha)
        grads["raw_beta"] = dB * sigmoid(model.raw_beta)
    elif model.has_excitation:
        grads["raw_alpha"] = np.zeros((K, K))
        grads["raw_beta"] = np.zeros((K, K))

    if model.kind == "ddp":
        if cache is not None:
            ng = backward_batch(model.neural, cache, dw)
        else:
            ng = {k: np.zeros_like(v) for k, v in model.neural.arrays().items()}
        for k, v in ng.items():
            grads["neural." + k] = np.asarray(v, dtype=float)
    result["grads"] = grads
    return result


def _dataset_terms(model, seqs, eta, censor, need_grad, threads=1, weights_per_seq=None):
    chunks = _chunks(seqs, model.K)
    offsets = np.cumsum([0] + [len(ch) for ch in chunks])

    def run(k):
        ch = chunks[k]
        wts = None if weights_per_seq is None else weights_per_seq[offsets[k] : offsets[k + 1]]
        return batch_terms(model, make_batch(ch, model_context_len(model, ch)), eta=eta, censor=censor,
                           weights=wts, need_grad=need_grad)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(run, range(len(chunks))))
    else:
        parts = [run(k) for k in range(len(chunks))]
    loglik = np.concatenate([p["loglik"] for p in parts]) if parts else np.zeros(0)
    ce = np.concatenate([p["ce"] for p in parts]) if parts else np.zeros(0)
    grads = None
    if need_grad:
        grads = {}
        for p in parts:  # ordered reduction
            for k, v in p["grads"].items():
                grads[k] = grads[k] + v if k in grads else v.copy()
    return loglik, ce, grads


def model_context_len(model, seqs):
    return len(seqs[0].context) if seqs else 0


# ---------------------------------------------------------------------------
# Single-sequence quantities


def _check_canonical(seq: EventSequence):
    t = seq.times
    if len(t) and (np.any(np.diff(t) <= 0) or t[0] < 0 or t[-1] > seq.horizon_T):
        raise ValueError("sequence is not canonical")


def _w_for(model, seq, trace):
    if model.kind == "ddp" and trace is not None:
        return influence_factors(model, seq, trace)[None]
    return None


def log_likelihood(model: ModelParams, seq: EventSequence, trace: InfluenceTrace | None = None, *, censor: bool = True) -> float:
    """Point-process log-likelihood of ``seq`` in nats.

    Sum of ``log lambda_{v_i}(t_i-)`` minus the total compensator over
    ``[0, horizon_T]`` (or ``[0, t_n]`` with ``censor=False``). For ddp the
    trace is computed when not supplied.
    """
    _check_canonical(seq)
    res = batch_terms(model, make_batch([seq]), censor=censor, w_override=_w_for(model, seq, trace))
    return float(res["loglik"][0])


def next_type_probability(model: ModelParams, seq_prefix: EventSequence, trace: InfluenceTrace | None, t_next: float) -> np.ndarray:
    """``lambda_v(t_next) / lambda(t_next)`` for every type."""
    if len(seq_prefix) and t_next <= seq_prefix.events[-1].t:
        raise ValueError("t_next must come after the last event of the prefix")
    lam = intensities(model, t_next, seq_prefix, trace)
    return lam / lam.sum()


def next_time_density(model: ModelParams, seq_prefix: EventSequence, trace: InfluenceTrace | None, t: float) -> float:
    """Density of the next event time at ``t`` given the prefix."""
    t_last = seq_prefix.events[-1].t if len(seq_prefix) else 0.0
    if t <= t_last:
        raise ValueError("t must come after the last event")
    w = influence_factors(model, seq_prefix, trace)
    lam = intensities(model, t, seq_prefix, trace).sum()
    comp = _compensator_vector(model, t_last, t, seq_prefix, w).sum()
    return float(lam * np.exp(-comp))


def prediction_loss(model: ModelParams, seq: EventSequence, trace: InfluenceTrace | None = None) -> float:
    """Mean next-type cross entropy over events 2..n (0 for shorter sequences)."""
    _check_canonical(seq)
    res = batch_terms(model, make_batch([seq]), w_override=_w_for(model, seq, trace))
    return float(res["ce"][0])


def next_type_scores(model: ModelParams, seqs) -> list[np.ndarray]:
    """Next-type probabilities at every event position ``i >= 1`` per sequence.

    Row ``k`` of entry ``s`` is ``next_type_probability`` on the prefix of the
    first ``k + 1`` events at the time of event ``k + 2``.
    """
    out = []
    for chunk in _chunks(list(seqs), model.K):
        res = batch_terms(model, make_batch(chunk), keep_lambda=True)
        lam = res["lambda"]
        for b, s in enumerate(chunk):
            n = len(s)
            rows = lam[b, 1:n]
            out.append(rows / rows.sum(-1, keepdims=True))
    return out


# ---------------------------------------------------------------------------
# Dataset objective and gradient


def _cfg(config):
    return config if config is not None else TrainConfig()


def objective(model: ModelParams, dataset, config: TrainConfig | None = None) -> float:
    config = _cfg(config)
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    loglik, ce, _ = _dataset_terms(model, seqs, config.eta, config.censor, False, config.threads)
    return float(np.mean(loglik - config.eta * ce) - config.l1_weight * np.sum(np.abs(model.alpha)))


def value_and_gradient(model: ModelParams, dataset, config: TrainConfig | None = None):
    config = _cfg(config)
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    N = len(seqs)
    loglik, ce, grads = _dataset_terms(model, seqs, config.eta, config.censor, True, config.threads,
                                       np.full(N, 1.0 / N))
    value = float(np.mean(loglik - config.eta * ce) - config.l1_weight * np.sum(model.alpha))
    if model.has_excitation and config.l1_weight:
        # d/d raw of sum(softplus(raw)); alpha > 0 so |alpha| = alpha
        grads["raw_alpha"] = grads["raw_alpha"] - config.l1_weight * sigmoid(model.raw_alpha)
    return value, grads


def gradient(model: ModelParams, dataset, config: TrainConfig | None = None) -> dict:
    """Exact gradient of :func:`objective` w.r.t. every raw parameter array."""
    return value_and_gradient(model, dataset, config)[1]


# ---------------------------------------------------------------------------
# Fitting


@dataclass
class FitReport:
    train_objective: list
    val_objective: list
    best_epoch: int
    stop_epoch: int
    model: ModelParams = field(repr=False)
    wall_clock_seconds: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "train_objective": list(self.train_objective),
            "val_objective": list(self.val_objective),
            "best_epoch": self.best_epoch,
            "stop_epoch": self.stop_epoch,
        }
        if include_timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d

    def to_json(self, include_timing: bool = False, **extra) -> str:
        return json.dumps({**self.to_dict(include_timing), **extra}, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["epoch,train_obj,val_obj"]
        for e, (a, b) in enumerate(zip(self.train_objective, self.val_objective), start=1):
            lines.append(f"{e},{a!r},{b!r}")
        return "\n".join(lines) + "\n"


def split_dataset(seqs, fraction: float, seed: int):
    rng = np.random.default_rng([seed, 1])
    order = rng.permutation(len(seqs))
    n_val = int(round(fraction * len(seqs)))
    n_val = min(max(n_val, 1), len(seqs) - 1) if len(seqs) > 1 else 0
    val = [seqs[i] for i in sorted(order[:n_val])]
    train = [seqs[i] for i in sorted(order[n_val:])]
    return train, val


class Adam:
    """Adaptive-moment ascent on a dict of arrays."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params: dict, grads: dict) -> dict:
        self.t += 1
        out = {}
        for k, p in params.items():
            g = grads.get(k)
            if g is None:
                out[k] = p
                continue
            m = self.m.get(k, np.zeros_like(p)) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, np.zeros_like(p)) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            out[k] = p + self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return out


def fit(dataset, config: TrainConfig, init_model: ModelParams, *, callback=None) -> FitReport:
    """Minibatch Adam ascent of the objective with early stopping.

    The dataset is split once into train/validation by ``config.seed``; the
    returned model is the best-validation snapshot.
    """
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    start = time.perf_counter()
    train, val = split_dataset(seqs, config.validation_fraction, config.seed)
    if not val:
        val = train
    rng = np.random.default_rng([config.seed, 2])
    model = init_model
    params = model.arrays()
    opt = Adam(config.learning_rate)
    best_val, best_model, best_epoch, stale = -np.inf, model, 0, 0
    train_hist, val_hist = [], []
    epoch = 0
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        for s in range(0, len(train), config.batch_size):
            batch = [train[i] for i in order[s : s + config.batch_size]]
            _, grads = value_and_gradient(model, batch, config)
            params = opt.step(params, grads)
            model = model.with_arrays(params)
        tr = objective(model, train, config)
        va = objective(model, val, config)
        if not (np.isfinite(tr) and np.isfinite(va)):
            raise FitDivergence(epoch)
        train_hist.append(tr)
        val_hist.append(va)
        log.debug("epoch %d train %.6f val %.6f", epoch, tr, va)
        if callback is not None:
            callback(epoch, tr, va)
        if va > best_val:
            best_val, best_model, best_epoch, stale = va, model, epoch, 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break
    return FitReport(train_hist, val_hist, best_epoch, epoch, best_model, time.perf_counter() - start)
