"""toxens: a desk-scale toxic-comment classification workbench."""

__version__ = "0.1.0"
