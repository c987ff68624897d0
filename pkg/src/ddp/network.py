"""Comorbidity graphs from fitted models and graph-heterogeneity analytics.

Dynamic edge weights at time ``t``::

    W[v -> u](t) = sum_{i: v_i = v, t_i <= t} alpha[v, u] * gamma[v, u](t - t_i) * w_i

Static weights replace the dynamic parts by ``alpha[v, u] * E[w | v]``.
Heterogeneity is the mean weighted-Jaccard distance over patient pairs.

Hand-computed examples (two types, ``alpha[0, 1] = 0.5``, ``beta = 1``):

>>> import numpy as np
>>> from ddp.domain import DiseaseCatalog, Event, EventSequence
>>> from ddp.intensity import ModelParams
>>> from ddp.neural import InfluenceTrace, init_neural
>>> cat = DiseaseCatalog(("A", "B"))
>>> alpha = np.array([[0.0, 0.5], [0.0, 0.0]])
>>> hk = ModelParams.from_values("hawkes", cat, mu=0.1, alpha=alpha, beta=1.0)
>>> seq = EventSequence("p", (Event(1.0, 0),), (), 5.0)

An event of type A at ``t = 1`` gives the edge A -> B weight
``0.5 * gamma(0) = 0.5`` at the event itself, halved after ``ln 2`` days:

>>> dynamic_graph(hk, seq, t=1.0).edges
{(0, 1): 0.5}
>>> round(dynamic_graph(hk, seq, t=1.0 + np.log(2)).edges[(0, 1)], 12)
0.25

Before the event the graph is empty:

>>> dynamic_graph(hk, seq, t=0.5).edges
{}

Two A events at ``0`` and ``ln 2`` queried at ``ln 2``: ``0.5 * (0.5 + 1)``:

>>> two = EventSequence("q", (Event(0.0, 0), Event(float(np.log(2)), 0)), (), 5.0)
>>> round(dynamic_graph(hk, two, t=float(np.log(2))).edges[(0, 1)], 12)
0.75

With an influence factor ``w = 0.4`` the dynamic weight scales to 0.2, and
so does the static weight ``alpha * E[w | A] = 0.5 * 0.4``:

>>> dd = ModelParams.from_values("ddp", cat, mu=0.1, alpha=alpha, beta=1.0,
...                              neural=init_neural(2, 2, 2, rng=0))
>>> dynamic_graph(dd, seq, InfluenceTrace(np.array([0.4])), t=1.0).edges
{(0, 1): 0.2}
>>> w_04 = dd.neural.replace(readout_b=float(np.log(0.4 / 0.6)))  # w = 0.4 always
>>> dd_04 = ModelParams.from_values("ddp", cat, mu=0.1, alpha=alpha, beta=1.0, neural=w_04)
>>> round(static_graph(dd_04, [seq, two]).edges[(0, 1)], 12)
0.2

Without influence factors the static graph is ``alpha`` itself:

>>> static_graph(hk, [seq, two]).edges
{(0, 1): 0.5}
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .domain import EventSequence, GraphSnapshot, labels_at
from .intensity import ModelParams, influence_factors, trace_for

log = logging.getLogger(__name__)

DEFAULT_PRUNE_EPS = 1e-6
DEFAULT_PAIR_BUDGET = 50_000


@dataclass(frozen=True)
class HeterogeneityCurve:
    grid: np.ndarray
    values: np.ndarray
    n: int

    def to_csv(self) -> str:
        return "t,value\n" + "".join(f"{t!r},{v!r}\n" for t, v in zip(self.grid.tolist(), self.values.tolist()))


@dataclass(frozen=True)
class InfluencerCurve:
    disease: int
    rel_grid: np.ndarray
    delta: np.ndarray
    onset_values: np.ndarray
    baseline_values: np.ndarray
    n_onset: int

    def to_csv(self) -> str:
        rows = zip(*(a.tolist() for a in (self.rel_grid, self.delta, self.onset_values, self.baseline_values)))
        return "t,value,onset_javg,baseline_javg\n" + "".join(f"{t!r},{d!r},{a!r},{b!r}\n" for t, d, a, b in rows)


# ---------------------------------------------------------------------------
# Graph construction


def _require_network(model: ModelParams):
    if not model.has_excitation:
        raise ValueError("no network semantics for a poisson model")


def dynamic_weights(model: ModelParams, seq: EventSequence, w, t: float) -> np.ndarray:
    """Dense ``K x K`` matrix of dynamic edge weights at ``t`` (unpruned)."""
    K = model.K
    out = np.zeros((K, K))
    times, types = seq.times, seq.types
    keep = times <= t
    if not keep.any():
        return out
    A, Bt = model.alpha, model.beta
    src = types[keep]
    contrib = A[src] * Bt[src] * np.exp(-Bt[src] * (t - times[keep])[:, None]) * np.asarray(w)[keep][:, None]
    np.add.at(out, src, contrib)
    return out


def _snapshot(dense: np.ndarray, labels, t, prune_eps: float, directed: bool = True) -> GraphSnapshot:
    rows, cols = np.nonzero(dense > prune_eps if prune_eps > 0 else dense > 0)
    edges = {(int(u), int(v)): float(dense[u, v]) for u, v in zip(rows, cols)}
    return GraphSnapshot(t, labels, edges, directed)


def dynamic_graph(model: ModelParams, seq: EventSequence, trace=None, t: float = 0.0, *,
                  prune_eps: float = DEFAULT_PRUNE_EPS) -> GraphSnapshot:
    """Patient network at time ``t``; events at exactly ``t`` are included."""
    _require_network(model)
    if not 0 <= t <= seq.horizon_T:
        raise ValueError(f"t={t} outside observation window [0, {seq.horizon_T}]")
    if model.kind == "ddp" and trace is None:
        trace = trace_for(model, seq)
    w = influence_factors(model, seq, trace)
    dense = dynamic_weights(model, seq, w, t)
    return _snapshot(dense, labels_at(seq, model.K, t), t, prune_eps)


def mean_influence_by_type(model: ModelParams, dataset) -> np.ndarray:
    """Empirical mean influence factor of each type's events; 0.5 when unseen."""
    K = model.K
    total = np.zeros(K)
    count = np.zeros(K)
    for seq in dataset:
        if not len(seq):
            continue
        w = influence_factors(model, seq, trace_for(model, seq))
        np.add.at(total, seq.types, w)
        np.add.at(count, seq.types, 1)
    return np.where(count > 0, total / np.maximum(count, 1), 0.5)


def static_graph(model: ModelParams, dataset, *, prune_eps: float = 0.0) -> GraphSnapshot:
    """Population-level graph ``alpha[v, u] * E[w | v]``."""
    _require_network(model)
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    ew = mean_influence_by_type(model, seqs)
    dense = model.alpha * ew[:, None]
    return _snapshot(dense, (True,) * model.K, None, prune_eps)


def cooccurrence_graph(dataset, K: int) -> GraphSnapshot:
    """Undirected graph counting patients that have both codes."""
    seqs = list(dataset)
    if not seqs:
        raise ValueError("empty dataset")
    present = np.zeros((len(seqs), K))
    for n, seq in enumerate(seqs):
        present[n, seq.types] = 1.0
    counts = present.T @ present
    edges = {(u, v): float(counts[u, v]) for u in range(K) for v in range(u + 1, K) if counts[u, v] > 0}
    return GraphSnapshot(None, tuple(present.any(0)), edges, directed=False)


# ---------------------------------------------------------------------------
# Similarity and heterogeneity


def weighted_jaccard(g1: GraphSnapshot, g2: GraphSnapshot) -> float:
    """``sum min / sum max`` over the union of edge keys; 1 for two empty graphs."""
    if g1.K != g2.K or g1.directed != g2.directed:
        raise ValueError("graphs are over different catalogs")
    keys = set(g1.edges) | set(g2.edges)
    pairs = [(g1.edges.get(k, 0.0), g2.edges.get(k, 0.0)) for k in keys]
    # correctly rounded sums make the result independent of key order
    lo = math.fsum(min(a, b) for a, b in pairs)
    hi = math.fsum(max(a, b) for a, b in pairs)
    return 1.0 if hi == 0 else lo / hi


def _pair_jaccard(X: np.ndarray, ii: np.ndarray, jj: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Weighted Jaccard between rows ``X[ii]`` and ``X[jj]`` of flattened graphs."""
    out = np.empty(len(ii))
    for s in range(0, len(ii), chunk):
        a, b = X[ii[s : s + chunk]], X[jj[s : s + chunk]]
        lo = np.minimum(a, b).sum(1)
        hi = np.maximum(a, b).sum(1)
        out[s : s + chunk] = np.where(hi > 0, lo / np.where(hi > 0, hi, 1.0), 1.0)
    return out


def _pairs(N: int, budget: int | None, rng):
    total = N * (N - 1) // 2
    if budget is None or total <= budget:
        ii, jj = np.triu_indices(N, 1)
        return ii, jj
    ii = rng.integers(0, N, size=budget)
    jj = rng.integers(0, N - 1, size=budget)
    jj = jj + (jj >= ii)  # uniform over ordered pairs with i != j
    return ii, jj


def javg_dense(graphs: np.ndarray, pair_budget: int | None = None, rng=None) -> float:
    """Mean ``1 - J`` over pairs of dense graphs stacked as ``(N, K, K)``."""
    N = graphs.shape[0]
    if N < 2:
        raise ValueError("heterogeneity needs at least two graphs")
    X = graphs.reshape(N, -1)
    ii, jj = _pairs(N, pair_budget, np.random.default_rng(rng))
    return float(np.mean(1.0 - _pair_jaccard(X, ii, jj)))


def heterogeneity(graphs) -> float:
    """Average Jaccard distance over all unordered pairs."""
    graphs = list(graphs)
    if len(graphs) < 2:
        raise ValueError("heterogeneity needs at least two graphs")
    if len({(g.K, g.directed) for g in graphs}) != 1:
        raise ValueError("graphs are over different catalogs")
    dist = [1.0 - weighted_jaccard(a, b) for a, b in combinations(graphs, 2)]
    return math.fsum(dist) / len(dist)


def _weights_cache(model, seqs):
    return [influence_factors(model, s, trace_for(model, s)) for s in seqs]


def heterogeneity_over_time(model: ModelParams, dataset, grid, subsample_n: int | None = None, seed: int = 0,
                            *, pair_budget: int | None = DEFAULT_PAIR_BUDGET) -> HeterogeneityCurve:
    """``J_avg`` of patient networks at times measured from each patient's
    first event.

    Only patients with events whose observation window covers the whole
    grid are used. A seeded random subsample of
    ``subsample_n`` patients is used when given, and random pairs are sampled
    when the number of pairs exceeds ``pair_budget``.
    """
    _require_network(model)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty grid")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    with_events = [s for s in dataset if len(s)]
    seqs = [s for s in with_events if s.events[0].t + grid[-1] <= s.horizon_T + 1e-9]
    n_all = len(with_events)
    if len(seqs) < n_all:
        log.info("%d patients excluded: window shorter than the grid", n_all - len(seqs))
    rng = np.random.default_rng([seed, 3])
    if subsample_n is not None and subsample_n < len(seqs):
        idx = np.sort(rng.choice(len(seqs), size=subsample_n, replace=False))
        seqs = [seqs[i] for i in idx]
    if len(seqs) < 2:
        raise ValueError("need at least two patients with events whose window covers the grid")
    anchors = np.array([s.events[0].t for s in seqs])
    ws = _weights_cache(model, seqs)
    values = np.empty(grid.size)
    for k, t in enumerate(grid):
        dense = np.stack([dynamic_weights(model, s, w, a + t) for s, w, a in zip(seqs, ws, anchors)])
        values[k] = javg_dense(dense, pair_budget, rng=[seed, 4, k])
    return HeterogeneityCurve(grid, values, len(seqs))


def onset_time(seq: EventSequence, disease: int) -> float | None:
    for e in seq.events:
        if e.type_idx == disease:
            return e.t
    return None


def influencer_curve(model: ModelParams, dataset, disease: int, rel_grid, seed: int = 0,
                     *, pair_budget: int | None = DEFAULT_PAIR_BUDGET) -> InfluencerCurve:
    """Change in ``J_avg`` around the onset of ``disease``.

    For each patient with the disease, networks are evaluated at
    ``onset + r``. Each onset patient is matched with a random patient from
    the whole cohort whose network is evaluated at the same absolute time;
    ``delta`` is the onset group's ``J_avg`` minus the matched baseline's.
    Evaluation times are clipped to each patient's observation window.
    """
    _require_network(model)
    rel_grid = np.asarray(rel_grid, dtype=float)
    if rel_grid.size == 0 or not np.any(rel_grid == 0):
        raise ValueError("rel_grid must contain the onset time 0")
    seqs = list(dataset)
    onsets = [(s, onset_time(s, disease)) for s in seqs]
    onsets = [(s, t0) for s, t0 in onsets if t0 is not None]
    if len(onsets) < 2:
        raise ValueError("fewer than two patients with the disease")
    rng = np.random.default_rng([seed, 5])
    matched = rng.integers(0, len(seqs), size=len(onsets))
    group = [s for s, _ in onsets]
    t_on = np.array([t0 for _, t0 in onsets])
    base = [seqs[i] for i in matched]
    w_group = _weights_cache(model, group)
    w_base = _weights_cache(model, base)
    d_on, d_base = np.empty(rel_grid.size), np.empty(rel_grid.size)
    for k, r in enumerate(rel_grid):
        abs_t = t_on + r
        g_on = np.stack([dynamic_weights(model, s, w, np.clip(t, 0, s.horizon_T)) for s, w, t in zip(group, w_group, abs_t)])
        g_base = np.stack([dynamic_weights(model, s, w, np.clip(t, 0, s.horizon_T)) for s, w, t in zip(base, w_base, abs_t)])
        d_on[k] = javg_dense(g_on, pair_budget, rng=[seed, 6, k])
        d_base[k] = javg_dense(g_base, pair_budget, rng=[seed, 7, k])
    return InfluencerCurve(disease, rel_grid, d_on - d_base, d_on, d_base, len(group))
