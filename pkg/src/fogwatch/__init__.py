"""Desk-scale edge-fog public-safety pipeline with a permissioned ledger.

Subsystems:

- tracking: IoU track association and movement features at the edge
- wire / streaming: canonical text encoding and fog-initiated HTTP streaming
- fuzzy / decision: Mamdani suspicion scoring, thresholding, alert dispatch
- persistence: daily feature logs and the append-only reference store
- ledger / security: proof-of-authority chain, identity, hashed-index
  authentication, capability grants
- scenario / harness: deterministic synthetic actors and the multi-process
  benchmark orchestrator
"""

from .tracking import (
    BoundingBox,
    Detection,
    FeatureRecord,
    FrameFeatureSet,
    Track,
    Tracker,
    TrackerConfig,
    associate,
    extract_features,
    iou,
)
from .wire import StreamDecoder, decode_frame, encode_frame
from .fuzzy import FuzzyVariable, Rule, RuleBase, defuzzify_centroid, parse_rulebase
from .decision import (
    Alert,
    AlertDispatcher,
    Context,
    SuspicionScore,
    SuspicionScorer,
    contextualize,
    default_rulebase,
)

__all__ = [
    "BoundingBox", "Detection", "FeatureRecord", "FrameFeatureSet", "Track",
    "Tracker", "TrackerConfig", "associate", "extract_features", "iou",
    "StreamDecoder", "decode_frame", "encode_frame",
    "FuzzyVariable", "Rule", "RuleBase", "defuzzify_centroid", "parse_rulebase",
    "Alert", "AlertDispatcher", "Context", "SuspicionScore", "SuspicionScorer",
    "contextualize", "default_rulebase",
]

__version__ = "0.1.0"
