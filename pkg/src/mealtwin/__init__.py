"""Desk-scale digital twin of an on-demand meal delivery platform.

Hexagonal service region, per-minute shift simulation, gradient-boosted
demand forecasting, and a from-scratch deep Q-learning stack for order
dispatching and idle courier steering, with evaluation tooling to compare
policy variants against myopic and nearest-idle baselines.
"""

__version__ = "0.1.0"
