"""Nonuniform tensor parallelism: shard algebra, numerics, and cluster simulation."""

__version__ = "0.1.0"
