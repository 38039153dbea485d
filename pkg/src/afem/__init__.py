"""Adaptive P1 finite elements with inexact contractive solvers."""
