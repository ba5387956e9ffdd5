import numpy as np
import pytest
from hypothesis import given, strategies as st

from eulalign import particles as pc
from eulalign.integrate import BlowUpSignal, StepControl
from eulalign.kernels import Domain, Kernel
from eulalign.particles import FlockState, Particle

FAT = Kernel.algebraic(1.0)


def _two_agents(w0=(2.0, -1.0)):
    return pc.agents([[0.0, 0.0], [1.0, 0.5]], [[0.0, 0.0], list(w0)], Kernel.constant(1.0))


def _run(flock, ctl, T):
    return pc.advance(flock, ctl, T)


def _field(x):
    """Smooth test velocity field and its gradient ``[k, l] = d_k u^l``."""
    u = np.stack([0.3 * np.sin(x[:, 1]) + 0.2 * x[:, 0], -0.1 * x[:, 0] * x[:, 1]], axis=1)
    g = np.zeros((x.shape[0], 2, 2))
    g[:, 0, 0] = 0.2
    g[:, 1, 0] = 0.3 * np.cos(x[:, 1])
    g[:, 0, 1] = -0.1 * x[:, 1]
    g[:, 1, 1] = -0.1 * x[:, 0]
    return u, g


def _tracked(pos, kernel=FAT):
    u, g = _field(pos)
    N = pos.shape[0]
    return FlockState(pos.copy(), u, np.full(N, 0.4), kernel, rho0=np.ones(N),
                      defX=np.repeat(np.eye(2)[None], N, axis=0), defV=g)


class TestForce:
    def test_middle_of_three(self):
        f = FlockState([[0.0], [1.0], [2.0]], [[1.0], [0.0], [-1.0]], [1.0, 1.0, 1.0], FAT)
        assert pc.alignment_force(1, f) == pytest.approx([0.0], abs=1e-15)

    def test_matches_backend(self, each_backend, rng):
        pos = rng.uniform(-1, 1, (9, 2))
        f = _tracked(pos)
        rates = pc.rates(f, {"pos": f.pos, "vel": f.vel, "defX": f.defX, "defV": f.defV})
        for i in range(f.size):
            np.testing.assert_allclose(rates["vel"][i], pc.alignment_force(i, f), atol=1e-14)
            dX, dV = pc.deformation_rhs(i, f)
            np.testing.assert_allclose(rates["defX"][i], dX, atol=1e-14)
            np.testing.assert_allclose(rates["defV"][i], dV, atol=1e-14)


class TestDeformation:
    def test_equal_velocities_decay(self, rng):
        pos = rng.uniform(-1, 1, (6, 2))
        f = _tracked(pos)
        f = f.replace(vel=np.tile([0.5, -0.2], (6, 1)))
        conv = np.array([np.sum(f.mass * FAT.radial(np.linalg.norm(pos[i] - pos, axis=1), 0)[0])
                         for i in range(6)])
        for i in range(6):
            _, dV = pc.deformation_rhs(i, f)
            np.testing.assert_allclose(dV, -conv[i] * f.defV[i], atol=1e-14)

    def test_label_perturbation_oracle_1d(self):
        # massless tracers at alpha +- h follow the characteristic through alpha + h
        alpha = np.array([0.0, 1.3])
        u0 = lambda x: np.sin(2 * x) + 0.5 * x
        du0 = lambda x: 2 * np.cos(2 * x) + 0.5
        h = 1e-5
        lab = np.concatenate([alpha, alpha[:1] + h, alpha[:1] - h])
        f = FlockState(lab[:, None], u0(lab)[:, None], [1.0, 1.0, 0.0, 0.0], FAT,
                       defX=np.ones((4, 1, 1)), defV=du0(lab)[:, None, None])
        out = _run(f, StepControl(dt=0.01), 2.0)
        fd_x = (out.pos[2, 0] - out.pos[3, 0]) / (2 * h)
        fd_v = (out.vel[2, 0] - out.vel[3, 0]) / (2 * h)
        assert abs(fd_x - out.defX[0, 0, 0]) <= 1e-3 * abs(out.defX[0, 0, 0])
        assert abs(fd_v - out.defV[0, 0, 0]) <= 1e-3 * max(abs(out.defV[0, 0, 0]), 1e-3)

    def test_label_perturbation_oracle_2d(self, rng):
        base = rng.uniform(-1, 1, (5, 2))
        h = 1e-5
        tr = []
        for k in range(2):
            for s in (1, -1):
                tr.append(base[0] + s * h * np.eye(2)[k])
        pos = np.vstack([base, tr])
        u, g = _field(pos)
        mass = np.concatenate([np.full(5, 0.3), np.zeros(4)])
        f = FlockState(pos, u, mass, FAT, defX=np.repeat(np.eye(2)[None], 9, axis=0), defV=g)
        out = _run(f, StepControl(dt=0.01), 1.5)
        X = np.empty((2, 2))
        V = np.empty((2, 2))
        for k in range(2):
            X[:, k] = (out.pos[5 + 2 * k] - out.pos[6 + 2 * k]) / (2 * h)
            V[k, :] = (out.vel[5 + 2 * k] - out.vel[6 + 2 * k]) / (2 * h)
        np.testing.assert_allclose(X, out.defX[0], rtol=1e-3, atol=1e-6)
        np.testing.assert_allclose(V, out.defV[0], rtol=1e-3, atol=1e-6)


class TestGradient:
    def test_hand_example(self):
        p = Particle(np.zeros(2), np.zeros(2), np.zeros(2), 1.0, 1.0,
                     np.array([[1.0, 1.0], [0.0, 1.0]]), np.array([[0.0, 1.0], [0.0, 0.0]]))
        np.testing.assert_allclose(pc.velocity_gradient(p), [[0.0, 1.0], [0.0, -1.0]])

    def test_singular_signals(self):
        p = Particle(np.zeros(2), np.zeros(2), np.zeros(2), 1.0, 1.0, np.zeros((2, 2)), np.eye(2))
        with pytest.raises(BlowUpSignal):
            pc.velocity_gradient(p)

    def test_density_uniform_expansion(self):
        c, t, n = 0.3, 2.0, 3
        p = Particle(np.zeros(n), np.zeros(n), np.zeros(n), 1.0, 2.0, np.exp(c * t) * np.eye(n), np.eye(n))
        assert pc.density_at(p) == pytest.approx(2.0 * np.exp(-n * c * t), rel=1e-14)

    def test_density_collapse_signals(self):
        p = Particle(np.zeros(1), np.zeros(1), np.zeros(1), 1.0, 1.0, np.zeros((1, 1)), np.zeros((1, 1)))
        with pytest.raises(BlowUpSignal):
            pc.density_at(p)


class TestStep:
    def test_two_agents_closed_form(self, each_backend):
        f = _two_agents()
        w0 = f.vel[1] - f.vel[0]
        out = _run(f, StepControl(dt=1e-3), 1.0)
        w = out.vel[1] - out.vel[0]
        assert np.max(np.abs(w - w0 / np.e)) < 1e-8

    def test_discrete_cs_step(self):
        f = _two_agents()
        w0 = f.vel[1] - f.vel[0]
        ctl = StepControl(dt=0.01)
        for _ in range(100):
            f = pc.discrete_cs_step(f, ctl)
        np.testing.assert_allclose(f.vel[1] - f.vel[0], w0 * np.exp(-1.0), rtol=1e-9)

    def test_fourth_order(self):
        errs = []
        w0 = np.array([2.0, -1.0])
        for dt in (0.2, 0.1, 0.05):
            out = _run(_two_agents(), StepControl(dt=dt), 4.0)
            errs.append(np.max(np.abs(out.vel[1] - out.vel[0] - w0 * np.exp(-4.0))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(np.abs(orders - 4.0) <= 0.2)

    def test_equal_velocities_stationary(self, rng):
        f = pc.agents(rng.uniform(-1, 1, (7, 2)), np.tile([0.3, 0.1], (7, 1)), FAT)
        out = _run(f, StepControl(dt=0.1), 1.0)
        np.testing.assert_allclose(out.vel, f.vel, atol=1e-15)

    def test_symmetric_middle_agent(self):
        f = pc.agents([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]], [[0.5, 0.2], [0.0, 0.0], [-0.5, -0.2]], FAT)
        out = _run(f, StepControl(dt=0.05), 3.0)
        np.testing.assert_allclose(out.vel[1], 0.0, atol=1e-15)

    def test_adaptive_step(self):
        f = _two_agents()
        out = pc.step(f, StepControl(dt=0.5, method="adaptive", tol=1e-10))
        assert 0 < out.time <= 0.5
        assert out.dt_hint is not None


@given(st.integers(0, 2**32 - 1))
def test_momentum_and_max_principle(seed):
    r = np.random.default_rng(seed)
    N = 12
    f = FlockState(r.uniform(-2, 2, (N, 2)), r.normal(size=(N, 2)), r.uniform(0.1, 1, N), FAT)
    p0 = f.momentum
    ctl = StepControl(dt=0.1)
    vmax, vmin = f.vel.max(axis=0), f.vel.min(axis=0)
    for _ in range(20):
        f = pc.step(f, ctl)
        assert np.all(f.vel.max(axis=0) <= vmax + 1e-9)
        assert np.all(f.vel.min(axis=0) >= vmin - 1e-9)
        vmax, vmin = f.vel.max(axis=0), f.vel.min(axis=0)
    assert np.max(np.abs(f.momentum - p0)) <= 1e-10 * (1 + np.max(np.abs(p0)))


def test_liouville_second_order():
    r = np.random.default_rng(3)
    pos = r.uniform(-1, 1, (10, 2))
    errs = []
    for dt in (0.1, 0.05, 0.025):
        f = _tracked(pos)
        ctl = StepControl(dt=dt)
        traces = [np.trace(pc.velocity_gradients(f), axis1=1, axis2=2)]
        for _ in range(round(2.0 / dt)):
            f = pc.step(f, ctl)
            traces.append(np.trace(pc.velocity_gradients(f), axis1=1, axis2=2))
        integral = np.trapezoid(np.array(traces), dx=dt, axis=0)
        errs.append(np.max(np.abs(np.log(np.linalg.det(f.defX)) - integral)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8)


def test_rotate_flock_round_trip(rng):
    f = _tracked(rng.uniform(-1, 1, (4, 2)))
    th = 0.7
    Q = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    g = pc.velocity_gradients(pc.rotate_flock(f, Q))
    np.testing.assert_allclose(g, Q @ pc.velocity_gradients(f) @ Q.T, atol=1e-14)
    back = pc.rotate_flock(pc.rotate_flock(f, Q), Q.T)
    np.testing.assert_allclose(back.defV, f.defV, atol=1e-14)


def test_flock_validation():
    with pytest.raises(ValueError):
        FlockState([[0.0, 0.0]], [[0.0]], [1.0], FAT)
    with pytest.raises(ValueError):
        FlockState([[0.0]], [[0.0]], [-1.0], FAT)
    with pytest.raises(ValueError):
        pc.agents(np.zeros((0, 2)), np.zeros((0, 2)), FAT)
