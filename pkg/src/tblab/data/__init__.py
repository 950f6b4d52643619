"""Synthetic attribute world, corpus files, retrieval and evaluation grids."""
