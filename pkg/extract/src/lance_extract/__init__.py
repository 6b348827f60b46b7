"""Embedding extraction companion for the lance toolkit."""

__version__ = "0.1.0"
