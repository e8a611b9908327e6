"""Persistence layer: JSON/CSV file helpers and per-artifact repositories."""
