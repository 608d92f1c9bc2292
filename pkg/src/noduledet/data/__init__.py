from .annotations import AnnotationError, GroundTruthBox, format_annotations, parse_annotation_text
from .augment import AugmentParams, augment, hflip, rotate, crop, sample_rng
from .dataset import MANIFEST_NAME, list_image_ids, load_sample, read_image
from .letterbox import PAD_VALUE, LetterboxMeta, Sample, letterbox, normalize, unletterbox
from .split import DatasetManifest, ManifestError, parse_manifest, format_manifest, read_manifest, split_dataset, write_manifest
from .synth import SynthSummary, synth_generate

__all__ = [
    "AnnotationError",
    "AugmentParams",
    "DatasetManifest",
    "GroundTruthBox",
    "LetterboxMeta",
    "MANIFEST_NAME",
    "ManifestError",
    "PAD_VALUE",
    "Sample",
    "SynthSummary",
    "augment",
    "crop",
    "format_annotations",
    "format_manifest",
    "hflip",
    "letterbox",
    "list_image_ids",
    "load_sample",
    "normalize",
    "parse_annotation_text",
    "parse_manifest",
    "read_image",
    "read_manifest",
    "rotate",
    "sample_rng",
    "split_dataset",
    "synth_generate",
    "unletterbox",
    "write_manifest",
]
