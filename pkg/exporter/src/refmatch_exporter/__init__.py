"""Exporter that populates the refmatch JSONL interchange files.

Runs detector/segmenter and embedding backends (deterministic synthetic
ones by default, real models where available) over a referring dataset
and writes candidates, embeddings, and similarity scores in the schemas
the downstream toolkit consumes.
"""

from .backends import (BackendUnavailable, ClipEmbedder, HashEmbedder,
                       SyntheticDetector, SyntheticSegmenter, make_detector,
                       make_embedder)
from .export import ExportJob, export_candidates, export_embeddings, project_label
from .nouns import extract_noun
from .synthetic import make_scene, write_fixture

__version__ = "0.1.0"
