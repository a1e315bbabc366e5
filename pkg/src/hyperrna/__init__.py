"""Hypergraph-based RNA inverse folding on 3-bead coarse-grained backbones."""

__version__ = "0.1.0"
