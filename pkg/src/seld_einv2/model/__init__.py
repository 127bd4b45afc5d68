"""EINV2 network, its building blocks and output decoding."""

from seld_einv2.model.decode import decode, decode_seldnet_format, decode_trackwise, decode_with_oracle
from seld_einv2.model.einv2 import (
    EINV2,
    SeldnetPrediction,
    TrackPrediction,
    build_model,
    einv2_forward,
    predict_batch,
)

__all__ = [
    "EINV2",
    "SeldnetPrediction",
    "TrackPrediction",
    "build_model",
    "decode",
    "decode_seldnet_format",
    "decode_trackwise",
    "decode_with_oracle",
    "einv2_forward",
    "predict_batch",
]
