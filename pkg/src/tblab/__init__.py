"""tblab: a desk-scale laboratory for multimodal model editing."""

__version__ = "0.1.0"
