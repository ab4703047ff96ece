"""Toolkit for corpus-scale (query, document) relevance annotation with
calibrated confidence scores, distillation data export, and four-dimension
evaluation of annotators and retrievers."""

__version__ = "0.1.0"
