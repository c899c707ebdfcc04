"""Estimation and inference for coefficient breaks in large panels with unobserved common factors."""

from __future__ import annotations

__version__ = "0.1.0"
