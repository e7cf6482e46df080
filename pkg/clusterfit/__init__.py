"""clusterfit: memory-aware search for cost-efficient cluster configurations."""

__version__ = "0.3.0"
