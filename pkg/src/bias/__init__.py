"""Popularity distributions and bias metrics."""
