from fractions import Fraction

import pytest

from dfibration import calculus as calc
from dfibration.errors import DimensionError


def valid_triples(limit=12):
    for N in range(2, limit + 1):
        for n in range(2, min(N, limit) + 1):
            for n1 in range(1, n):
                yield N, n, n1


def test_fio_order_examples():
    assert calc.fio_order(2, 2, 1) == Fraction(-1, 2)
    s = calc.grassmannian_numbers(2, 3)
    assert (s.N, s.n, s.n_prime) == (3, 3, 2)
    assert calc.fio_order(s.N, s.n, s.n_prime) == -1


def test_fio_order_is_exact():
    assert isinstance(calc.fio_order(5, 3, 1), Fraction)


def test_clean_excess_examples():
    assert calc.clean_excess_no_conjugates(2, 2, 1) == calc.CleanExcess(0, Fraction(-1))
    assert calc.clean_excess_no_conjugates(4, 3, 1) == calc.CleanExcess(1, Fraction(-1))


def test_conjugate_excess_example():
    ce = calc.conjugate_excess(2, 2, 1, 1)
    assert (ce.excess, ce.a_order, ce.dim_E, ce.dim_CRk) == (0, -1, 4, 3)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_geodesic_a_orders(n):
    # geodesic transforms: n' = 1, N = 2(n - 1)
    N = max(n, 2 * (n - 1))
    for k in range(1, n):
        assert calc.conjugate_excess(N, n, 1, k).a_order == Fraction(-(n + 1 - k), 2)


def test_highest_order_part():
    for N, n, n1 in valid_triples(8):
        n2 = n - n1
        if N >= 2 * n2:
            top = calc.conjugate_excess(N, n, n1, n2).a_order
            assert top == Fraction(-(n1 + 1), 2)
            assert -n1 <= top
            assert (top == -n1) == (n1 == 1)


def test_consistency_identity_all():
    for N, n, n1 in valid_triples(12):
        e = calc.clean_excess_no_conjugates(N, n, n1)
        assert 2 * calc.fio_order(N, n, n1) + Fraction(e.excess, 2) == -n1
        assert e.normal_order == -n1
        assert e.excess == N - n >= 0


def test_conjugate_excess_nonnegative_and_monotone():
    for N, n, n1 in valid_triples(12):
        n2 = n - n1
        if N < 2 * n2:
            continue
        orders = []
        for k in range(1, n2 + 1):
            ce = calc.conjugate_excess(N, n, n1, k)
            assert ce.excess == N - 2 * n2 - 1 + k >= 0
            assert ce.dim_E == N + 2 * n1 - 1 + k
            assert ce.dim_CRk == N + 2 * n1 - 1
            orders.append(ce.a_order)
        assert all(a < b for a, b in zip(orders, orders[1:]))


@pytest.mark.parametrize("args", [(2, 2, 2), (2, 3, 1), (1, 1, 0), (3, 2, 0), (2.0, 2, 1),
                                  (True, 2, 1)])
def test_invalid_structure_numbers(args):
    with pytest.raises(DimensionError):
        calc.fio_order(*args)


@pytest.mark.parametrize("args", [(2, 2, 1, 0), (2, 2, 1, 2), (3, 3, 1, 1)])
def test_invalid_conjugate_excess(args):
    with pytest.raises(DimensionError):
        calc.conjugate_excess(*args)


def test_grassmannian():
    assert calc.grassmannian_dim(1, 2) == 2
    assert calc.grassmannian_dim(1, 3) == 4
    with pytest.raises(DimensionError):
        calc.grassmannian_dim(3, 3)
