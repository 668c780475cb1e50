"""Container-level power attribution for Kubernetes nodes."""

__version__ = "0.1.0"
