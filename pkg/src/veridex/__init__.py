"""veridex: local-first deep-research pipeline with auditable citations."""

__version__ = "0.1.0"
