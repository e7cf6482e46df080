"""Process and dataset tooling for profiling runs."""
