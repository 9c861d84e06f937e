"""Numerical tolerances shared by the library and its checks."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    fd_step: float = 1e-5
    # floor on the denominator of the elementwise relative error
    fd_rel_floor: float = 1e-6
    grad_rel: float = 1e-4
    second_order_abs: float = 1e-3
    linearity: float = 1e-10
    prob_sum: float = 1e-9
    reconstruction: float = 1e-10
    shift: float = 1e-12


TOL = Tolerances()
