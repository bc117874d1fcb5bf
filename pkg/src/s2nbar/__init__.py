"""Sentinel-2 L2A to nadir BRDF-adjusted reflectance."""
