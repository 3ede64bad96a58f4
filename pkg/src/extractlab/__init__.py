"""Desk-scale laboratory for extraction attacks on waveform speaker models."""

from .audio import (
    CANONICAL_INPUT_LEN,
    CANONICAL_SAMPLE_RATE,
    MelFilterbank,
    Spectrum,
    Waveform,
    magnitude_spectrum,
    mel_project,
    random_window,
    resample,
)
from .corpus import LabelHistogram, SpeakerCorpus, histogram, ingest_directory, subset, synth_corpus
from .models import KnaggCNN, KnaggCNNConfig, LayerMask, TrainConfig, build_classifier, train_classifier, transfer_layers
from .oracle import CoverageReport, OracleSession, RemoteOracleClient, serve
from .sampling import RetainedSet, ThresholdPolicy, apply_threshold, iterative_sample
from .wavegan import WaveGANConfig, build_wavegan, sample_generator, train_wavegan

__all__ = [
    "CANONICAL_INPUT_LEN",
    "CANONICAL_SAMPLE_RATE",
    "CoverageReport",
    "KnaggCNN",
    "KnaggCNNConfig",
    "LabelHistogram",
    "LayerMask",
    "MelFilterbank",
    "OracleSession",
    "RemoteOracleClient",
    "RetainedSet",
    "SpeakerCorpus",
    "Spectrum",
    "ThresholdPolicy",
    "TrainConfig",
    "WaveGANConfig",
    "Waveform",
    "apply_threshold",
    "build_classifier",
    "build_wavegan",
    "histogram",
    "ingest_directory",
    "iterative_sample",
    "magnitude_spectrum",
    "mel_project",
    "random_window",
    "resample",
    "sample_generator",
    "serve",
    "subset",
    "synth_corpus",
    "train_classifier",
    "train_wavegan",
    "transfer_layers",
]
