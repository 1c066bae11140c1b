"""Toy data, backbone, trainer and experiments."""
