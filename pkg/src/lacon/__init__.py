"""Quality-conditioned flow-matching toolkit: signal extraction, soft-anchor
condition embeddings, threshold curation, a toy conditional flow model, and
quality-guided sampling."""

__version__ = "0.1.0"
