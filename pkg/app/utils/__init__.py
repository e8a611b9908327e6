"""Utility package: enums, parsers, formatters, error types and logging setup."""
