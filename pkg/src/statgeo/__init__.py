"""Fisher-Rao pullback geometry for decoder latent spaces."""

__version__ = "0.1.0"
