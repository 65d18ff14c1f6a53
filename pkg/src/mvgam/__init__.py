"""Multi-view transductive additive models."""
