"""Federated learning over block-fading downlinks with product-superposition pilots."""

__version__ = "0.1.0"
