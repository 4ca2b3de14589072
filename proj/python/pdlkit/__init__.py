"""Python bindings for the daily-living pattern discovery core."""

from . import _pdl
from ._pdl import (
    MissingArtifact,
    NotFoundError,
    ValidationError,
    __version__,
    build_knn,
    cohens_kappa,
    config_keys,
    config_text,
    cosine_similarity,
    f1_score,
    fleiss_kappa,
    kmeans,
    make_token,
    matched_accuracy,
    parse_event_log,
    synthesize,
    window_count,
)

STAGES = (
    "synth",
    "ingest",
    "pretrain",
    "neighbors",
    "cluster",
    "kmeans",
    "centroids",
    "propagate",
    "evaluate",
    "sweep_k",
    "trends",
)


def run_stage(stage, **settings):
    """Runs one pipeline stage; keyword arguments are configuration keys (see config_keys())."""
    if stage not in STAGES:
        raise ValueError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    oracle = settings.pop("oracle_raters", False)
    settings = {k: _text(v) for k, v in settings.items()}
    if stage == "propagate":
        return _pdl.propagate(settings, oracle)
    if stage == "kmeans":
        return _pdl.kmeans_stage(settings)
    return getattr(_pdl, stage)(settings)


def _text(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)
