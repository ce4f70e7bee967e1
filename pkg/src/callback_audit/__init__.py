"""Audit LLM callback recommendations for gender bias in job postings."""

__version__ = "0.1.0"
