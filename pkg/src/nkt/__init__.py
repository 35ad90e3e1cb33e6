"""Simulation, decoding, forecasting, and spectral evaluation for multichannel timeseries."""

__version__ = "0.1.0"
