"""Federated logistic regression: datasets, objectives, party protocols."""

from .data import (
    DatasetSpec,
    IngestResult,
    PartyData,
    Table,
    ingest_csv,
    inner_join,
    horizontal_split,
    load_table,
    make_minibatches,
    make_synthetic,
    vertical_split,
    write_csv,
)
from .objective import (
    CentralizedTaylorTrainer,
    MiniBatch,
    ModelState,
    exact_gradient,
    exact_loss,
    taylor_fore_gradient,
    taylor_gradient,
    taylor_gradient_from_fore,
    taylor_loss,
)
from .parties import (
    ChannelHub,
    DecryptEvent,
    EpochResult,
    FlrConfig,
    HeteroFederation,
    HomoFederation,
    Message,
    audit_trace,
)

__all__ = [
    "CentralizedTaylorTrainer", "ChannelHub", "DatasetSpec", "DecryptEvent",
    "EpochResult", "FlrConfig", "HeteroFederation", "HomoFederation",
    "IngestResult", "Message", "MiniBatch", "ModelState", "PartyData", "Table",
    "audit_trace", "exact_gradient", "exact_loss", "horizontal_split",
    "ingest_csv", "inner_join", "load_table", "make_minibatches",
    "make_synthetic", "taylor_fore_gradient", "taylor_gradient",
    "taylor_gradient_from_fore", "taylor_loss", "vertical_split", "write_csv",
]
