"""Coded Kalman filters for Gauss-Markov sources over MIMO AWGN channels with feedback."""

__version__ = "0.1.0"
