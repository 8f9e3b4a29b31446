"""Support-boundary diagnostics for vision-language models on multiple-choice VQA."""

__version__ = "0.1.0"

from supportscope._io import ValidationError

__all__ = ["ValidationError", "__version__"]
