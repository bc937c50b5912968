"""isomarket — classification of financial markets up to isomorphism."""

__version__ = "0.1.0"
