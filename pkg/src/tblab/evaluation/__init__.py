"""Metric engine: cell evaluation, aggregation and table export."""
