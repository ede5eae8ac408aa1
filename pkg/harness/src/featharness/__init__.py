"""Feature and probability-map export harness for the splabel pipeline."""

from .export import ExportSpec, export_features, export_probmaps

__all__ = ["ExportSpec", "export_features", "export_probmaps"]
