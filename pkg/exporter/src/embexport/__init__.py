"""Embedding exporter: bridge encoders to the retrieval engine's formats."""

from .jobs import ExportJob, export_queries, export_text, export_vision

__all__ = ["ExportJob", "export_queries", "export_text", "export_vision"]
