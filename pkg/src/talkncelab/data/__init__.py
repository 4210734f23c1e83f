from .avsf import AVSFError, UnsupportedVersionError, read_array, write_array
from .io import (
    ManifestError,
    UnsupportedManifestVersion,
    generate_corpus,
    load_scene,
    load_split,
    read_manifest,
    save_scene,
    validate_manifest,
    write_manifest,
)
from .mel import mel_filterbank, mel_frontend
from .synth import GenConfig, generate_scenes, synthesize_scene

__all__ = [
    "AVSFError",
    "GenConfig",
    "ManifestError",
    "UnsupportedManifestVersion",
    "UnsupportedVersionError",
    "generate_corpus",
    "generate_scenes",
    "load_scene",
    "load_split",
    "mel_filterbank",
    "mel_frontend",
    "read_array",
    "read_manifest",
    "save_scene",
    "synthesize_scene",
    "validate_manifest",
    "write_array",
    "write_manifest",
]
