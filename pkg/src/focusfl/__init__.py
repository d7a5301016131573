"""Federated optimisation under arbitrary client participation.

Stochastic-matrix models of pulling, averaging and collecting; the FOCUS and
SG-FOCUS push-pull algorithms next to FedAvg; and a seeded experiment harness.
"""

__version__ = "0.1.0"
