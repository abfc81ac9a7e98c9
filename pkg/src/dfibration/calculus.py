"""Symbolic dimension counts and FIO orders as exact rationals."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import DimensionError


@dataclass(frozen=True)
class StructureNumbers:
    """``(N, n, n')`` with ``N + n > N + n' > N >= n >= 2``; ``n'' = n - n'``."""

    N: int
    n: int
    n_prime: int

    def __post_init__(self):
        for v in (self.N, self.n, self.n_prime):
            if isinstance(v, bool) or not isinstance(v, int):
                raise DimensionError("structure numbers must be integers")
        N, n, n1 = self.N, self.n, self.n_prime
        if not (N + n > N + n1 > N >= n >= 2):
            raise DimensionError(f"need N + n > N + n' > N >= n >= 2, got N={N}, n={n}, n'={n1}")

    @property
    def n_dprime(self) -> int:
        return self.n - self.n_prime

    def check_excess(self, k: int) -> None:
        if self.N < 2 * self.n_dprime:
            raise DimensionError(f"N={self.N} < 2 n''={2 * self.n_dprime}")
        if isinstance(k, bool) or not isinstance(k, int) or not 1 <= k <= self.n_dprime:
            raise DimensionError(f"k={k} outside 1..n''={self.n_dprime}")


def fio_order(N: int, n: int, n_prime: int) -> Fraction:
    """Order of ``R`` as an FIO: ``-(N + 2 n' - n) / 4``."""
    s = StructureNumbers(N, n, n_prime)
    return Fraction(-(s.N + 2 * s.n_prime - s.n), 4)


@dataclass(frozen=True)
class CleanExcess:
    excess: int
    normal_order: Fraction


def clean_excess_no_conjugates(N: int, n: int, n_prime: int) -> CleanExcess:
    """Without conjugate points ``R^* R`` has excess ``N - n`` and order ``-n'``."""
    s = StructureNumbers(N, n, n_prime)
    return CleanExcess(s.N - s.n, Fraction(-s.n_prime))


@dataclass(frozen=True)
class ConjugateExcess:
    excess: int
    a_order: Fraction
    dim_E: int
    dim_CRk: int


def conjugate_excess(N: int, n: int, n_prime: int, k: int) -> ConjugateExcess:
    """Clean-intersection data for a regular degree-``k`` conjugate set."""
    s = StructureNumbers(N, n, n_prime)
    s.check_excess(k)
    e = s.N - 2 * s.n_dprime - 1 + k
    return ConjugateExcess(
        excess=e,
        a_order=Fraction(-(s.n + 1 - k), 2),
        dim_E=s.N + 2 * s.n_prime - 1 + k,
        dim_CRk=s.N + 2 * s.n_prime - 1,
    )


def grassmannian_dim(d: int, n: int) -> int:
    """Dimension ``(d + 1)(n - d)`` of the affine Grassmannian of d-planes in R^n."""
    if isinstance(d, bool) or isinstance(n, bool) or not (isinstance(d, int) and isinstance(n, int)):
        raise DimensionError("d and n must be integers")
    if not 1 <= d < n:
        raise DimensionError(f"need 1 <= d < n, got d={d}, n={n}")
    return (d + 1) * (n - d)


def grassmannian_numbers(d: int, n: int) -> StructureNumbers:
    """``(N, n, n')`` for the d-plane transform: ``N = dim G(d, n)``, ``n' = d``."""
    return StructureNumbers(grassmannian_dim(d, n), n, d)
