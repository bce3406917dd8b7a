from ._core import (
    Bot,
    bleu,
    dist,
    ent,
    entity_score,
    meteor_lite,
    nist,
    synth_data,
    tokenize,
    train,
)

__all__ = [
    "Bot",
    "bleu",
    "dist",
    "ent",
    "entity_score",
    "meteor_lite",
    "nist",
    "synth_data",
    "tokenize",
    "train",
]
