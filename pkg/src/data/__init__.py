"""Ingestion, filtering, splitting and synthetic data generation."""
