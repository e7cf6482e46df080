"""Profiling models, configuration space and the search algorithms."""
