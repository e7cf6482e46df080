"""Replay evaluation over measured configuration tables."""
