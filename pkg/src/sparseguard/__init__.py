"""Dynamic sparse training co-optimized against simulated membership attacks.

Train a classifier under a hard sparsity budget while an in-the-loop
membership-inference attacker scores every candidate topology; the candidate
with the best accuracy-to-attackability ratio survives each round.
"""

__version__ = "0.1.0"
