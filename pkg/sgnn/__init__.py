"""
Random neural architectures generated from an anisotropic Gaussian field on a
triangulated torus: field construction, neuron placement, geodesic topology,
stochastic weights, fixed-point network solves, likelihood training and the
statistical evaluation criteria.
"""

__version__ = "0.1.0"
