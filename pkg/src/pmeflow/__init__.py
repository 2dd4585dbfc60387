"""Porous media flow maps."""
