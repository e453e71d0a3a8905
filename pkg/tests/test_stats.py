import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atmguard.stats import paired_t_test, student_two_sided_p
from atmguard.verify import t_two_sided_quadrature


def test_known_differences():
    r = paired_t_test([1, 2, 3, 4, 5], [0] * 5)
    assert r.t == pytest.approx(4.2426, abs=1e-3)
    assert r.df == 4
    assert r.p == pytest.approx(0.0132, abs=5e-4)
    assert r.p == pytest.approx(t_two_sided_quadrature(r.t, r.df), abs=1e-7)


def test_identical_samples():
    r = paired_t_test([3.0, 1.0, 4.0], [3.0, 1.0, 4.0])
    assert (r.t, r.p, r.degenerate) == (0.0, 1.0, False)


def test_constant_difference_is_degenerate():
    r = paired_t_test([6.0, 7.0, 8.0], [1.0, 2.0, 3.0])
    assert r.degenerate and r.p == 0.0 and r.mean_diff == pytest.approx(5.0)


def test_preconditions():
    with pytest.raises(ValueError):
        paired_t_test([1.0], [2.0])
    with pytest.raises(ValueError):
        paired_t_test([1.0, 2.0], [1.0])


@pytest.mark.parametrize("t,df", [(0.5, 3), (2.0, 10), (-3.1, 54), (1.96, 200)])
def test_p_against_quadrature(t, df):
    assert student_two_sided_p(t, df) == pytest.approx(t_two_sided_quadrature(t, df), abs=1e-6)


pairs = st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-100, 100), min_size=n, max_size=n),
    st.lists(st.floats(-100, 100), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(pairs)
def test_symmetry(ab):
    a, b = ab
    x, y = paired_t_test(a, b), paired_t_test(b, a)
    assert 0.0 <= x.p <= 1.0
    assert x.p == pytest.approx(y.p, abs=1e-12)
    if math.isfinite(x.t):
        assert x.t == pytest.approx(-y.t, rel=1e-9, abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(pairs, st.floats(0.01, 100))
def test_scale_invariance(ab, k):
    a, b = ab
    x = paired_t_test(a, b)
    y = paired_t_test([k * v for v in a], [k * v for v in b])
    if x.degenerate or not math.isfinite(x.t) or x.t == 0.0:
        return
    assert y.t == pytest.approx(x.t, rel=1e-6)
    assert y.p == pytest.approx(x.p, rel=1e-6, abs=1e-12)
