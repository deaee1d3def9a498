"""Monte Carlo estimate of the energy and power ratings that mobile energy
resources need to carry isolated load on a distribution feeder."""

__version__ = "0.1.0"
