"""Verification toolkit for neural-network-controlled spacecraft docking.

Simulates Clohessy-Wiltshire relative dynamics, unrolls controller plus
dynamics into piecewise-linear computation graphs, and proves liveness and
safety properties with an internal sound-and-complete verifier: k-induction
over state regions, grid reachability with cycle/escape diagnostics, and
reach-while-avoid certificates with counterexample-guided retraining.
"""

__version__ = "0.1.0"
