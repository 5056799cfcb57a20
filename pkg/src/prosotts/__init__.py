"""Desk-scale single-stage TTS with adversarially estimated prosody
embeddings and a prosody-conditioned monotonic aligner."""

__version__ = "0.1.0"
