"""Multirole logic laboratory.

A proof kernel for multirole sequent calculi (classical, intuitionistic and
linear variants), a session-type layer on top of the linear calculus, a
deterministic multiparty channel runtime with deadlock-freedom accounting,
and a linear typechecker/evaluator for a small multi-threaded lambda
calculus.
"""

__version__ = "0.1.0"
