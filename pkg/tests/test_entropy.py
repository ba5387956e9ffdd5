import numpy as np
import pytest
from hypothesis import given, strategies as st

from eulalign import entropy as en
from eulalign.integrate import BlowUpDetected, StepControl
from eulalign.kernels import Domain, Kernel
from eulalign.particles import FlockState
from eulalign.scenarios import UnidirectionalSpec, build_unidirectional

TWO_PI = 2 * np.pi


def _dummy(N):
    return FlockState(np.zeros((N, 1)), np.zeros((N, 1)), np.ones(N), Kernel.constant())


class TestInit:
    def test_sine_on_torus(self):
        spec = UnidirectionalSpec((1.0, 0.0), "sin(x1)", f"1/(4*pi**2)", grid=16,
                                  kernel=Kernel.constant(1.0), domain=Domain.torus([TWO_PI, TWO_PI]))
        b = build_unidirectional(spec)
        expected = np.cos(b.flock.labels[:, 0]) + 1.0
        np.testing.assert_allclose(b.entropy.values, expected, atol=1e-12)
        assert b.verdict.kind == "Subcritical"

    def test_direction_required(self):
        f = build_unidirectional(UnidirectionalSpec((1.0,), "x1", "1", grid=4, box=([0.0], [1.0]))).flock
        with pytest.raises(ValueError):
            en.entropy_init(f, None, "unidirectional")
        with pytest.raises(ValueError):
            en.entropy_init(f, [2.0], "unidirectional")


class TestRhs:
    def test_riccati_value(self):
        assert en.entropy_rhs(-1.0, 0.0, 0.0) == -1.0

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_zero_entropy_gives_residual(self, c, r):
        assert en.entropy_rhs(0.0, c, r) == r


class TestClassify:
    def test_supercritical(self):
        v = en.classify(en.EntropyField(np.array([0.3, -2.0, 1.0])))
        assert (v.kind, v.witness, v.blow_up_upper_bound) == ("Supercritical", 1, 0.5)

    def test_boundary_zero(self):
        v = en.classify(en.EntropyField(np.zeros(5)))
        assert v.kind == "Subcritical" and v.blow_up_upper_bound is None

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30))
    def test_kind_matches_sign(self, vals):
        v = en.classify(en.EntropyField(np.array(vals)))
        assert (v.kind == "Supercritical") == (min(vals) < 0)
        assert (v.blow_up_upper_bound is not None) == (v.kind == "Supercritical")
        assert v.min_e0 == min(vals)


class TestResidual:
    def test_rank_one_vanishes(self):
        d = np.array([0.6, 0.8])
        g = np.array([1.5, -2.0])
        assert en.residual(np.outer(g, d)) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        assert en.residual(np.array([[1.0, 2.0], [3.0, 4.0]])) == pytest.approx(-4.0)

    @given(st.lists(st.floats(-100, 100), min_size=4, max_size=4))
    def test_twice_determinant(self, xs):
        M = np.array(xs).reshape(2, 2)
        assert en.residual(M) == pytest.approx(2 * np.linalg.det(M), abs=1e-9 * (1 + np.max(np.abs(M))) ** 2)

    def test_stack(self):
        M = np.stack([np.eye(3), np.zeros((3, 3))])
        np.testing.assert_allclose(en.residual(M), [6.0, 0.0])


class TestAdvance:
    def test_riccati_closed_form(self):
        f = en.EntropyField(np.array([-1.0]))
        ctl = StepControl(dt=0.05, method="adaptive", tol=1e-12, dt_min=1e-14)
        out = en.advance_entropy(f, _dummy(1), ctl, conv=0.0, t_target=0.9)
        assert out.values[0] == pytest.approx(-10.0, abs=1e-4)
        assert out.time == 0.9

    def test_riccati_blows_up(self):
        f = en.EntropyField(np.array([-1.0]))
        ctl = StepControl(dt=0.05, method="adaptive", tol=1e-10)
        with pytest.raises(BlowUpDetected) as info:
            en.advance_entropy(f, _dummy(1), ctl, conv=0.0, t_target=2.0)
        assert info.value.time <= 1.1

    def test_logistic_closed_form(self):
        c = 2.0
        e0 = np.array([0.1, 0.5, 1.9])
        f = en.EntropyField(e0)
        ctl = StepControl(dt=0.01)
        prev = e0
        for k in range(1, 201):
            f = en.advance_entropy(f, _dummy(3), ctl, conv=c)
            assert np.all(f.values > prev)
            prev = f.values
        t = f.time
        exact = c * e0 / (e0 + (c - e0) * np.exp(-c * t))
        np.testing.assert_allclose(f.values, exact, rtol=1e-9)

    @given(st.floats(0, 3), st.floats(0.01, 3))
    def test_sign_preserved(self, e0, c):
        f = en.EntropyField(np.array([e0]))
        out = en.advance_entropy(f, _dummy(1), StepControl(dt=0.1), conv=c, t_target=5.0)
        assert out.values[0] >= -1e-12

    def test_damped_zero_becomes_positive(self):
        f = en.EntropyField(np.zeros(1))
        out = en.advance_entropy(f, _dummy(1), StepControl(dt=0.01), conv=0.5, damping=0.2)
        assert out.values[0] > 0


def test_lower_bound():
    assert en.lower_bound(Kernel.algebraic(1.0), 3.0, 2.0) == pytest.approx(0.25)


def test_unknown_mode():
    with pytest.raises(ValueError):
        en.EntropyField(np.zeros(2), mode="other")
