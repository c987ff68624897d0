"""Thinning-based sampling of event sequences and time-rescaling diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .domain import Event, EventSequence
from .intensity import ModelParams, total_compensator
from .neural import RecurrentState, recurrent_step, sigmoid


class BoundViolation(RuntimeError):
    """The thinning bound was exceeded; indicates a bug, never data."""


@dataclass(frozen=True)
class SimConfig:
    """Sampling settings.

    ``context`` is either a fixed vector or a callable ``rng -> vector`` drawn
    once per sequence. ``prefix`` seeds every sequence with given
    ``(t, type_idx)`` events before sampling continues after them.
    ``bound_refresh`` caps how far a dominating bound is trusted; ``None``
    relies on intensities being nonincreasing between events, which holds for
    exponential kernels with fixed influence factors.
    """

    horizon_T: float
    context: Sequence[float] | Callable | None = None
    max_events: int = 10_000
    seed: int = 0
    prefix: tuple = ()
    bound_refresh: float | None = None

    def __post_init__(self):
        if not self.horizon_T > 0:
            raise ValueError("horizon_T must be positive")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")

    def draw_context(self, rng, F: int) -> np.ndarray:
        if self.context is None:
            return np.zeros(F)
        if callable(self.context):
            return np.asarray(self.context(rng), dtype=float)
        return np.asarray(self.context, dtype=float)


class _Sampler:
    """Running intensity state of one sequence under construction."""

    def __init__(self, model: ModelParams, context):
        self.model = model
        self.mu = model.mu(context)
        self.alpha, self.beta = model.alpha, model.beta
        self.times: list[float] = []
        self.types: list[int] = []
        self.coef = np.zeros((0, model.K))  # alpha * beta * w per past event
        self.rates = np.zeros((0, model.K))
        if model.kind == "ddp":
            self.state = RecurrentState.zeros(model.neural.H)

    def intensities(self, t, inclusive=False):
        if not self.times or not self.model.has_excitation:
            return self.mu.copy()
        times = np.asarray(self.times)
        keep = times <= t if inclusive else times < t
        lag = (t - times[keep])[:, None]
        return self.mu + np.sum(self.coef[keep] * np.exp(-self.rates[keep] * lag), axis=0)

    def add(self, t, v):
        w = 1.0
        if self.model.kind == "ddp":
            nn = self.model.neural
            gap = t - (self.times[-1] if self.times else 0.0)
            x = np.concatenate([nn.embedding[v], [np.log1p(gap)]])
            h, self.state = recurrent_step(nn, x, self.state)
            w = float(sigmoid(h @ nn.readout_W + nn.readout_b))
        self.times.append(float(t))
        self.types.append(int(v))
        if self.model.has_excitation:
            self.coef = np.vstack([self.coef, self.alpha[v] * self.beta[v] * w])
            self.rates = np.vstack([self.rates, self.beta[v]])


def simulate_sequence(model: ModelParams, sim: SimConfig, index: int = 0, patient_id: str | None = None) -> EventSequence:
    """Sample one sequence on ``[0, sim.horizon_T]`` by Ogata thinning.

    The generator is seeded from ``(sim.seed, index)``. If ``max_events`` is
    reached the observation window is closed at the last event.
    """
    rng = np.random.default_rng([sim.seed, index])
    context = sim.draw_context(rng, model.F if model.uses_context else 0)
    sampler = _Sampler(model, context if model.uses_context else np.zeros(0))
    T = float(sim.horizon_T)
    for t, v in sim.prefix:
        if sampler.times and t <= sampler.times[-1]:
            raise ValueError("prefix events must be strictly increasing")
        sampler.add(float(t), int(v))
    t = sampler.times[-1] if sampler.times else 0.0
    horizon = T
    while len(sampler.times) < sim.max_events:
        bound = sampler.intensities(t, inclusive=True).sum()
        gap = rng.exponential(1.0 / bound)
        if sim.bound_refresh is not None and gap > sim.bound_refresh:
            t += sim.bound_refresh
            if t >= T:
                break
            continue
        cand = t + gap
        if cand > T:
            break
        lam = sampler.intensities(cand)
        total = lam.sum()
        if total > bound * (1 + 1e-9):
            raise BoundViolation(f"intensity {total} above bound {bound} at t={cand}")
        t = cand
        if rng.uniform() * bound <= total:
            v = rng.choice(model.K, p=lam / total)
            sampler.add(cand, v)
    else:
        horizon = sampler.times[-1]
    events = tuple(Event(tt, vv) for tt, vv in zip(sampler.times, sampler.types))
    pid = patient_id if patient_id is not None else f"sim{index:06d}"
    return EventSequence(pid, events, tuple(context), horizon)


def simulate_dataset(model: ModelParams, sim: SimConfig, n: int, start: int = 0) -> list[EventSequence]:
    return [simulate_sequence(model, sim, i) for i in range(start, start + n)]


def time_rescale(model: ModelParams, seq: EventSequence, trace=None) -> np.ndarray:
    """Compensator increments ``Lambda(t_i) - Lambda(t_{i-1})`` with ``t_0 = 0``.

    Under the generating model these are i.i.d. unit exponentials.
    """
    if model.kind == "ddp" and trace is None:
        from .intensity import trace_for

        trace = trace_for(model, seq)
    out = np.empty(len(seq))
    prev = 0.0
    for i, ev in enumerate(seq.events):
        out[i] = total_compensator(model, prev, ev.t, seq, trace)
        prev = ev.t
    return out


def rescaled_gaps(model: ModelParams, seqs) -> np.ndarray:
    parts = [time_rescale(model, s) for s in seqs]
    return np.concatenate(parts) if parts else np.zeros(0)


def ks_unit_exponential(gaps) -> float:
    """p-value of a one-sample KS test of ``gaps`` against Exp(1)."""
    return float(stats.kstest(np.asarray(gaps, dtype=float), "expon").pvalue)


def random_model(kind: str, catalog, n_context: int = 0, *, rng=None, mu_range=(0.05, 0.2), density: float = 0.5,
                 alpha_range=(0.1, 0.6), beta_range=(0.5, 2.0), branching: float = 0.7, theta_scale: float = 0.5,
                 D: int = 8, H: int = 16, readout_scale: float = 2.0) -> ModelParams:
    """Random ground-truth model for synthetic cohorts.

    ``alpha`` keeps roughly a ``density`` fraction of nonzero entries and is
    rescaled so its spectral radius is at most ``branching`` (the process is
    then stationary, since kernels integrate to one and ``w <= 1``).
    """
    from .neural import init_neural

    rng = np.random.default_rng(rng)
    K = catalog.K
    mu = rng.uniform(*mu_range, size=K)
    theta = rng.normal(0.0, theta_scale, size=(K, n_context)) if kind != "hawkes" else None
    alpha = beta = neural = None
    if kind != "poisson":
        alpha = rng.uniform(*alpha_range, size=(K, K)) * (rng.uniform(size=(K, K)) < density)
        radius = np.max(np.abs(np.linalg.eigvals(alpha))) if alpha.any() else 0.0
        if radius > branching:
            alpha *= branching / radius
        beta = rng.uniform(*beta_range, size=(K, K))
    if kind == "ddp":
        neural = init_neural(K, D, H, rng)
        neural = neural.replace(readout_W=rng.normal(0.0, readout_scale, size=H), readout_b=0.5)
    return ModelParams.from_values(kind, catalog, mu=mu, theta=theta, n_context=n_context, alpha=alpha,
                                   beta=beta, neural=neural)
