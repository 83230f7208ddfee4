"""Seismic super-resolution GAN toolkit."""
