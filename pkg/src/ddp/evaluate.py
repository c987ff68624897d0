"""Next-event prediction harness: instances, AUC with patient-level bootstrap
confidence intervals, and out-of-domain transfer evaluation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .domain import DataError, encode_records
from .inference import next_type_scores
from .intensity import ModelParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PredictionInstance:
    patient_id: str
    prefix_len: int
    t_query: float
    true_type: int
    scores: np.ndarray = field(compare=False)


@dataclass(frozen=True)
class AucEntry:
    code: str
    model: str
    auc: float
    ci_low: float
    ci_high: float
    n_pos: int
    n_neg: int

    @property
    def ci_halfwidth(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass
class AucReport:
    entries: list = field(default_factory=list)
    dropped_events: int = 0

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, code):
        for e in self.entries:
            if e.code == code:
                return e
        raise KeyError(code)

    def to_csv(self, header: bool = True) -> str:
        lines = ["code,model,auc,ci_halfwidth,n_pos,n_neg"] if header else []
        for e in self.entries:
            lines.append(f"{e.code},{e.model},{e.auc!r},{e.ci_halfwidth!r},{e.n_pos},{e.n_neg}")
        return "\n".join(lines) + "\n"


def build_instances(model: ModelParams, dataset) -> list[PredictionInstance]:
    """One instance per event position ``i >= 2`` of every sequence."""
    seqs = [s for s in dataset if len(s) >= 2]
    out = []
    for seq, probs in zip(seqs, next_type_scores(model, seqs)):
        for k in range(1, len(seq)):
            ev = seq.events[k]
            out.append(PredictionInstance(seq.patient_id, k, ev.t, ev.type_idx, probs[k - 1]))
    return out


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: ``P(s+ > s-) + 0.5 * P(tie)``, from midranks."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("undefined AUC: need both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def auc_report(instances, target: int, n_boot: int = 1000, seed: int = 0, *, code: str | None = None,
               model_name: str = "") -> AucEntry:
    """Point AUC for one target type with a percentile bootstrap 95% CI.

    Patients, not instances, are resampled. Replicates that lose one of the
    classes are discarded.
    """
    instances = list(instances)
    scores = np.array([inst.scores[target] for inst in instances])
    labels = np.array([inst.true_type == target for inst in instances])
    point = auc(scores, labels)
    pids = np.array([inst.patient_id for inst in instances])
    _, group = np.unique(pids, return_inverse=True)
    n_groups = group.max() + 1
    members = [np.flatnonzero(group == g) for g in range(n_groups)]
    rng = np.random.default_rng([seed, 8])
    reps = []
    for _ in range(n_boot):
        pick = rng.integers(0, n_groups, size=n_groups)
        idx = np.concatenate([members[g] for g in pick])
        yb = labels[idx]
        if yb.all() or not yb.any():
            continue
        reps.append(auc(scores[idx], yb))
    if reps:
        lo, hi = np.percentile(reps, [2.5, 97.5])
        lo, hi = min(lo, point), max(hi, point)
    else:
        lo = hi = point
    return AucEntry(code if code is not None else str(target), model_name, point, float(lo), float(hi),
                    int(labels.sum()), int((~labels).sum()))


def evaluate_targets(model: ModelParams, dataset, targets, n_boot: int = 1000, seed: int = 0,
                     model_name: str | None = None) -> AucReport:
    """AUC entries for each target code (strings or indices)."""
    instances = build_instances(model, dataset)
    name = model_name or model.kind
    report = AucReport()
    for tgt in targets:
        idx = model.catalog.index(tgt) if isinstance(tgt, str) else int(tgt)
        report.entries.append(auc_report(instances, idx, n_boot, seed, code=model.catalog.code(idx), model_name=name))
    return report


def transfer_eval(model: ModelParams, out_of_domain_records, targets, n_boot: int = 1000, seed: int = 0,
                  model_name: str | None = None) -> AucReport:
    """Evaluate a fitted model on another cohort without refitting.

    ``out_of_domain_records`` are raw records (code strings); events whose
    code is not in the model's catalog are dropped and counted.
    """
    records = list(out_of_domain_records)
    seqs, dropped = encode_records(records, model.catalog, drop_unknown=True)
    if dropped:
        log.info("dropped %d out-of-domain events with codes outside the catalog", dropped)
    if not any(len(s) for s in seqs):
        raise DataError("no events left after restricting to the model catalog")
    report = evaluate_targets(model, seqs, targets, n_boot, seed, model_name)
    report.dropped_events = dropped
    return report
