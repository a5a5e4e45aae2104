"""
Spatially extended noisy-neuron networks and their mean-field limit.

Finite-size network simulation, the self-consistent Gaussian-interaction
fixed point, path-space distances and the diagnostics tying them together.
"""

__version__ = "0.1.0"
