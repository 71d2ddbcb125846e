"""Backbone feature extraction into EMB1 embedding tables."""

from .emb1 import ExtractorError, read_emb1, write_emb1
from .extract import ExtractionJob, extract_features, read_manifest
from .synth import gen_synthetic_suite, load_spec

__version__ = "0.1.0"
