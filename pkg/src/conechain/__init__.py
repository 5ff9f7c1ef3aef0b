"""Birkhoff-Hopf contraction toolkit for positive-operator chains and 1D Jellium."""
