"""Causal video summarization with a treatment-gated latent-confounder VAE."""

__version__ = "0.1.0"
