"""Certified bounds for control-constrained singularly perturbed LQ problems."""
