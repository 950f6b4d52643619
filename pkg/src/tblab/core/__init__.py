"""Ambient stack: configuration, environment, logging, errors and serialization."""
