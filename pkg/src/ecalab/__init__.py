"""Source-free blended-target domain adaptation with calibrated evidential learning
and domain-weighted graph contrastive alignment, on synthetic benchmarks."""

__version__ = "0.1.0"
