"""Intensity functions for the Poisson / Hawkes / cHawkes / DDP family.

    lambda_v(t) = mu_v(f) + sum_{t_i < t} alpha[v_i, v] * gamma[v_i, v](t - t_i) * w_i

with the exponential kernel ``gamma(dt) = beta * exp(-beta * dt)``. ``w_i`` is
the recurrent influence factor for ``ddp`` and 1 otherwise; ``poisson`` has no
triggering term and ``hawkes`` ignores the context vector.

Parameters are stored unconstrained: ``alpha = softplus(raw_alpha)``,
``beta = softplus(raw_beta) + BETA_FLOOR`` and
``mu = softplus(theta @ f + bias)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domain import DiseaseCatalog, EventSequence
from .neural import NEURAL_FIELDS, InfluenceTrace, NeuralParams, influence_forward, init_neural, sigmoid

KINDS = ("poisson", "hawkes", "chawkes", "ddp")
BETA_FLOOR = 1e-3


def softplus(x):
    return np.logaddexp(0.0, x)


def inv_softplus(y):
    y = np.asarray(y, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(y > 30, y, np.log(np.expm1(np.minimum(y, 30))))


# ---------------------------------------------------------------------------
# Parameter blocks


@dataclass(frozen=True)
class BackgroundParams:
    theta: np.ndarray  # (K, F)
    bias: np.ndarray  # (K,)

    def rates(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape[-1] != self.theta.shape[1]:
            raise ValueError(f"context has length {f.shape[-1]}, expected {self.theta.shape[1]}")
        return softplus(f @ self.theta.T + self.bias)


@dataclass(frozen=True)
class ExcitationMatrix:
    alpha: np.ndarray

    def __post_init__(self):
        if np.any(self.alpha < 0):
            raise ValueError("excitation must be nonnegative")


@dataclass(frozen=True)
class KernelParams:
    beta: np.ndarray

    def __post_init__(self):
        if np.any(self.beta <= 0):
            raise ValueError("kernel rates must be positive")


@dataclass(frozen=True)
class ModelParams:
    """Full raw parameter bundle for one model of the family."""

    kind: str
    catalog: DiseaseCatalog
    theta: np.ndarray
    bias: np.ndarray
    raw_alpha: np.ndarray | None = None
    raw_beta: np.ndarray | None = None
    neural: NeuralParams | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        K = self.catalog.K
        theta = np.asarray(self.theta, dtype=float)
        theta = theta.reshape(K, theta.size // K)
        if self.kind == "hawkes":
            theta = theta[:, :0]
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=float).reshape(K))
        if self.kind == "poisson":
            if self.raw_alpha is not None or self.raw_beta is not None:
                raise ValueError("poisson models carry no excitation")
        else:
            for name in ("raw_alpha", "raw_beta"):
                arr = getattr(self, name)
                if arr is None:
                    raise ValueError(f"{self.kind} model needs {name}")
                arr = np.asarray(arr, dtype=float)
                if arr.shape != (K, K):
                    raise ValueError(f"{name} must be {K}x{K}")
                object.__setattr__(self, name, arr)
        if (self.kind == "ddp") != (self.neural is not None):
            raise ValueError("neural parameters are required for ddp and only for ddp")
        if self.neural is not None and self.neural.K != K:
            raise ValueError("embedding table size does not match the catalog")

    # -- shapes and constrained views

    @property
    def K(self) -> int:
        return self.catalog.K

    @property
    def F(self) -> int:
        """Context length the model consumes (0 for hawkes)."""
        return self.theta.shape[1]

    @property
    def uses_context(self) -> bool:
        return self.kind != "hawkes"

    @property
    def has_excitation(self) -> bool:
        return self.kind != "poisson"

    @property
    def background(self) -> BackgroundParams:
        return BackgroundParams(self.theta, self.bias)

    @property
    def alpha(self) -> np.ndarray:
        if not self.has_excitation:
            return np.zeros((self.K, self.K))
        return softplus(self.raw_alpha)

    @property
    def beta(self) -> np.ndarray:
        if not self.has_excitation:
            return np.ones((self.K, self.K))
        return softplus(self.raw_beta) + BETA_FLOOR

    @property
    def excitation(self) -> ExcitationMatrix | None:
        return ExcitationMatrix(self.alpha) if self.has_excitation else None

    @property
    def kernel(self) -> KernelParams | None:
        return KernelParams(self.beta) if self.has_excitation else None

    def model_context(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        return f[..., :0] if not self.uses_context else f

    def mu(self, f) -> np.ndarray:
        """Background rates for context ``f`` (``(F,)`` or ``(B, F)``)."""
        return self.background.rates(self.model_context(f))

    # -- flat views used by optimizers and checkpoints

    def arrays(self) -> dict:
        out = {"theta": self.theta, "bias": self.bias}
        if self.has_excitation:
            out["raw_alpha"] = self.raw_alpha
            out["raw_beta"] = self.raw_beta
        if self.neural is not None:
            for name, arr in self.neural.arrays().items():
                out["neural." + name] = arr
        return {k: np.array(v, dtype=float) for k, v in out.items()}

    def with_arrays(self, arrays: dict) -> "ModelParams":
        kw = {k: arrays[k] for k in ("theta", "bias", "raw_alpha", "raw_beta") if k in arrays}
        neural = self.neural
        if neural is not None:
            nkw = {n: arrays["neural." + n] for n in NEURAL_FIELDS if "neural." + n in arrays}
            if "readout_b" in nkw:
                nkw["readout_b"] = float(np.asarray(nkw["readout_b"]))
            neural = neural.replace(**nkw)
        return replace(self, neural=neural, **kw)

    # -- constructors

    @classmethod
    def from_values(
        cls,
        kind: str,
        catalog: DiseaseCatalog,
        *,
        mu=None,
        bias=None,
        theta=None,
        n_context: int = 0,
        alpha=None,
        beta=None,
        neural: NeuralParams | None = None,
    ) -> "ModelParams":
        """Build a model from constrained values (``mu``, ``alpha``, ``beta``).

        ``mu`` sets the background bias so that ``mu_v(0) = mu[v]``; give
        ``bias`` instead to pass the raw value directly.
        """
        K = catalog.K
        if theta is None:
            theta = np.zeros((K, n_context))
        if bias is None:
            bias = inv_softplus(np.broadcast_to(np.asarray(1.0 if mu is None else mu, dtype=float), (K,)))
        raw_alpha = raw_beta = None
        if kind != "poisson":
            alpha = np.broadcast_to(np.asarray(0.0 if alpha is None else alpha, dtype=float), (K, K))
            beta = np.broadcast_to(np.asarray(1.0 if beta is None else beta, dtype=float), (K, K))
            if np.any(alpha < 0) or np.any(beta <= BETA_FLOOR):
                raise ValueError(f"need alpha >= 0 and beta > {BETA_FLOOR}")
            raw_alpha = inv_softplus(alpha)
            raw_beta = inv_softplus(beta - BETA_FLOOR)
        return cls(kind, catalog, theta, bias, raw_alpha, raw_beta, neural)

    @classmethod
    def initial(
        cls,
        kind: str,
        catalog: DiseaseCatalog,
        n_context: int = 0,
        *,
        D: int = 16,
        H: int = 32,
        mu0: float = 0.1,
        alpha0: float = 0.1,
        beta0: float = 1.0,
        rng=None,
    ) -> "ModelParams":
        """Starting point for fitting: flat background, weak uniform excitation."""
        rng = np.random.default_rng(rng)
        K = catalog.K
        neural = init_neural(K, D, H, rng) if kind == "ddp" else None
        alpha = alpha0 * np.exp(rng.normal(0.0, 0.1, size=(K, K))) if kind != "poisson" else None
        return cls.from_values(
            kind, catalog, mu=mu0, n_context=n_context, alpha=alpha, beta=beta0 if kind != "poisson" else None, neural=neural
        )

    def as_kind(self, kind: str) -> "ModelParams":
        """The same parameters viewed as another member of the family.

        Blocks the target kind does not use are dropped; blocks it needs but
        this model lacks are an error.
        """
        neural = self.neural if kind == "ddp" else None
        if kind == "ddp" and neural is None:
            raise ValueError("no neural parameters to build a ddp model from")
        ra, rb = (self.raw_alpha, self.raw_beta) if kind != "poisson" else (None, None)
        if kind != "poisson" and ra is None:
            raise ValueError("no excitation parameters to build from")
        return ModelParams(kind, self.catalog, self.theta, self.bias, ra, rb, neural)


# ---------------------------------------------------------------------------
# Kernel


def kernel_eval(beta_uv: float, dt: float) -> float:
    if dt < 0:
        raise ValueError("kernel lag must be >= 0")
    if beta_uv <= 0:
        raise ValueError("kernel rate must be positive")
    return beta_uv * np.exp(-beta_uv * dt)


def kernel_integral(beta_uv: float, dt0: float, dt1: float) -> float:
    """Mass of the kernel on ``[dt0, dt1]`` (``dt1`` may be ``inf``)."""
    if not 0 <= dt0 <= dt1:
        raise ValueError("need 0 <= dt0 <= dt1")
    return float(np.exp(-beta_uv * dt0) - np.exp(-beta_uv * dt1))


def background_rate(params: BackgroundParams, v: int, f) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != (params.theta.shape[1],):
        raise ValueError(f"context has length {f.size}, expected {params.theta.shape[1]}")
    return float(softplus(params.theta[v] @ f + params.bias[v]))


# ---------------------------------------------------------------------------
# Pointwise intensity and compensator


def influence_factors(model: ModelParams, seq: EventSequence, trace: InfluenceTrace | None) -> np.ndarray:
    """Per-event ``w_i`` (all ones outside ddp); ddp requires a trace."""
    if model.kind != "ddp":
        return np.ones(len(seq))
    if trace is None:
        raise ValueError("ddp intensity needs an influence trace")
    if len(trace) < len(seq):
        raise ValueError("influence trace does not cover the sequence")
    return np.asarray(trace.factors[: len(seq)], dtype=float)


def trace_for(model: ModelParams, seq: EventSequence) -> InfluenceTrace | None:
    """Influence trace when the model needs one, else ``None``."""
    return influence_forward(model.neural, seq) if model.kind == "ddp" else None


def _intensity_vector(model: ModelParams, t: float, seq: EventSequence, w: np.ndarray, inclusive: bool = False) -> np.ndarray:
    lam = model.mu(seq.context_array)
    if not model.has_excitation or len(seq) == 0:
        return lam
    times, types = seq.times, seq.types
    keep = times <= t if inclusive else times < t
    if not keep.any():
        return lam
    times, types, w = times[keep], types[keep], w[keep]
    a, b = model.alpha[types], model.beta[types]  # (n, K)
    return lam + np.sum(a * b * np.exp(-b * (t - times)[:, None]) * w[:, None], axis=0)


def intensity(model: ModelParams, v: int, t: float, seq: EventSequence, trace: InfluenceTrace | None = None) -> float:
    """``lambda_v(t)`` given the events of ``seq`` strictly before ``t``.

    At an event time this is the left limit: the event does not excite
    itself.
    """
    if not 0 <= v < model.K:
        raise IndexError(f"type {v} out of range")
    w = influence_factors(model, seq, trace)
    return float(_intensity_vector(model, t, seq, w)[v])


def intensities(model: ModelParams, t: float, seq: EventSequence, trace: InfluenceTrace | None = None) -> np.ndarray:
    """All ``K`` type intensities at ``t`` (left limit at event times)."""
    return _intensity_vector(model, t, seq, influence_factors(model, seq, trace))


def total_intensity(model: ModelParams, t: float, seq: EventSequence, trace: InfluenceTrace | None = None) -> float:
    return float(intensities(model, t, seq, trace).sum())


def _compensator_vector(model: ModelParams, t0: float, t1: float, seq: EventSequence, w: np.ndarray) -> np.ndarray:
    if t1 < t0:
        raise ValueError("need t0 <= t1")
    times, types = seq.times, seq.types
    if np.any((times > t0) & (times < t1)):
        raise ValueError("events inside the integration interval; split at event times")
    out = model.mu(seq.context_array) * (t1 - t0)
    if model.has_excitation:
        keep = times <= t0
        if keep.any():
            a, b = model.alpha[types[keep]], model.beta[types[keep]]
            lag0 = (t0 - times[keep])[:, None]
            lag1 = (t1 - times[keep])[:, None]
            out = out + np.sum(a * w[keep][:, None] * (np.exp(-b * lag0) - np.exp(-b * lag1)), axis=0)
    return out


def compensator(model: ModelParams, v: int, t0: float, t1: float, seq: EventSequence, trace: InfluenceTrace | None = None) -> float:
    """Exact integral of ``lambda_v`` over ``[t0, t1]`` with no event inside."""
    w = influence_factors(model, seq, trace)
    return float(_compensator_vector(model, t0, t1, seq, w)[v])


def total_compensator(model: ModelParams, t0: float, t1: float, seq: EventSequence, trace: InfluenceTrace | None = None) -> float:
    w = influence_factors(model, seq, trace)
    return float(_compensator_vector(model, t0, t1, seq, w).sum())
