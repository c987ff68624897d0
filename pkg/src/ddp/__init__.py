"""Deep diffusion processes: point-process models of disease onsets whose
excitation network is modulated per event by a recurrent influence factor."""
from .domain import (
    DataError,
    DiseaseCatalog,
    Event,
    EventSequence,
    GraphSnapshot,
    build_catalog,
    canonicalize_sequence,
    encode_records,
    history_prefix,
    read_jsonl,
)
from .evaluate import AucReport, PredictionInstance, auc, auc_report, build_instances, transfer_eval
from .inference import (
    FitReport,
    TrainConfig,
    fit,
    gradient,
    log_likelihood,
    next_time_density,
    next_type_probability,
    objective,
    prediction_loss,
)
from .intensity import (
    ModelParams,
    background_rate,
    compensator,
    intensity,
    kernel_eval,
    kernel_integral,
    total_intensity,
    trace_for,
)
from .network import (
    cooccurrence_graph,
    dynamic_graph,
    heterogeneity,
    heterogeneity_over_time,
    influencer_curve,
    static_graph,
    weighted_jaccard,
)
from .neural import InfluenceTrace, NeuralParams, RecurrentState, embed, influence_backward, influence_forward, init_neural, recurrent_step
from .simulate import SimConfig, random_model, simulate_dataset, simulate_sequence, time_rescale

__version__ = "0.1.0"
