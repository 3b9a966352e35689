"""Transaction conflict graphs and parallelism bounds for EVM blocks."""

__version__ = "0.1.0"
