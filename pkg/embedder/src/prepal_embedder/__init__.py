from .extract import ExtractReport, embed_texts, extract

__all__ = ["ExtractReport", "embed_texts", "extract"]
