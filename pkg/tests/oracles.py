"""Brute-force reference implementations built from explicit Kronecker products.

Nothing here reuses the package's index tricks, so agreement is a real check.
"""

from __future__ import annotations

import math
from decimal import Decimal, localcontext
from functools import reduce

import numpy as np

KET = {"g": np.array([1, 0], dtype=complex), "s": np.array([0, 1], dtype=complex)}
PG = np.outer(KET["g"], KET["g"])
PS = np.outer(KET["s"], KET["s"])
I2 = np.eye(2, dtype=complex)


def ket(labels: str) -> np.ndarray:
    return reduce(np.kron, [KET[c] for c in labels])


def operator_on(n: int, factors: dict) -> np.ndarray:
    return reduce(np.kron, [factors.get(q, I2) for q in range(n)])


def single_bright_operator(n: int, a: int, b: int, chi: float = 0.0) -> np.ndarray:
    return operator_on(n, {a: PG, b: PS}) + np.exp(1j * chi) * operator_on(n, {a: PS, b: PG})


def relabel_isometry(n: int, drop: tuple) -> np.ndarray:
    """Matrix sending |x> to |x with the dropped qubits removed>."""
    keep = [q for q in range(n) if q not in drop]
    m = np.zeros((2 ** len(keep), 2**n), dtype=complex)
    for idx in range(2**n):
        bits = [(idx >> (n - 1 - q)) & 1 for q in range(n)]
        out = 0
        for q in keep:
            out = 2 * out + bits[q]
        m[out, idx] = 1.0
    return m


def pair_vector(phase: float) -> np.ndarray:
    return (ket("gs") + np.exp(1j * phase) * ket("sg")) / math.sqrt(2)


def same_up_to_phase(u: np.ndarray, v: np.ndarray, tol: float = 1e-9) -> bool:
    return abs(abs(np.vdot(u, v)) - np.linalg.norm(u) * np.linalg.norm(v)) < tol


def poisson_pmf_decimal(n: int, lam: float, digits: int = 60) -> Decimal:
    with localcontext() as ctx:
        ctx.prec = digits
        d = Decimal(lam)
        return (-d).exp() * d**n / Decimal(math.factorial(n))


def rx(theta: float) -> np.ndarray:
    c, s = math.cos(theta / 2), math.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])
