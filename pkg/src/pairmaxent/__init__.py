"""Pairwise maximum-entropy models of binary panels."""
