"""Feature sidecar: vision-model features, logits, and LPIPS over HTTP."""

__version__ = "0.1.0"
