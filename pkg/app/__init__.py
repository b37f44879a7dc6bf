"""Biomedical TinyML benchmark suite: kernels, apps and their characterization."""
