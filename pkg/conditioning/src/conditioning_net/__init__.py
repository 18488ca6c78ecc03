"""Provisional-image encoder and multiplicative control conditioning."""

from .interchange import (
    COLOR_PERMUTATIONS,
    Manifest,
    PacketFile,
    PairRecord,
    read_dlcp,
    read_manifest,
    read_mask,
    read_pfm,
)
from .encoder import EncoderSpec, ProvisionalEncoder, encode_provisional
from .control import (
    ConditioningBatch,
    ControlBranch,
    forward_control,
    hints_from_packet,
    load_batch,
    load_corpus_batch,
    train_overfit,
    write_metric_report,
)

__version__ = "0.1.0"
