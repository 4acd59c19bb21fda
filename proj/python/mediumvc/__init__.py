"""PSDR-based voice conversion: pitch shifting, mel features, evaluation and the mvc CLI."""

from ._mediumvc import (
    MAX_SHIFT,
    MIN_SHIFT,
    SAMPLE_RATE,
    MediumVCError,
    compute_eer,
    convert,
    cosine,
    griffin_lim,
    make_toy_corpus,
    median_f0,
    mel_spectrogram,
    peak_normalize,
    psdr_shift,
    read_wav,
    run_cli,
    speaker_embedding,
    write_wav,
)

__all__ = [
    "MAX_SHIFT",
    "MIN_SHIFT",
    "SAMPLE_RATE",
    "MediumVCError",
    "compute_eer",
    "convert",
    "cosine",
    "griffin_lim",
    "make_toy_corpus",
    "median_f0",
    "mel_spectrogram",
    "peak_normalize",
    "psdr_shift",
    "read_wav",
    "run_cli",
    "speaker_embedding",
    "write_wav",
]
