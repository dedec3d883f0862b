"""Adam optimizer: fixed points, first-step size, descent, state resume."""

import numpy as np
import pytest

from polysnake.optim import Adam
from polysnake.tensor import Tensor


def make_params(rng, shapes):
    return {f"p{i}": Tensor(rng.uniform(-1, 1, s).astype(np.float32),
                            requires_grad=True)
            for i, s in enumerate(shapes)}


def reference_adam(p0, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Float64 textbook Adam; returns the parameter after len(grads) steps."""
    p = p0.astype(np.float64).copy()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        g = g.astype(np.float64)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        p = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestAdamBasics:
    def test_zero_gradient_is_fixed_point(self):
        rng = np.random.default_rng(0)
        params = make_params(rng, [(3, 4), (5,)])
        before = {k: p.data.copy() for k, p in params.items()}
        opt = Adam(params)
        for p in params.values():
            p.grad = np.zeros_like(p.data)
        opt.step()
        for k, p in params.items():
            assert np.array_equal(p.data, before[k])

    def test_missing_gradient_leaves_param_unchanged(self):
        rng = np.random.default_rng(1)
        params = make_params(rng, [(2, 2), (3,)])
        before = params["p1"].data.copy()
        opt = Adam(params)
        params["p0"].grad = np.ones_like(params["p0"].data)
        opt.step()
        assert np.array_equal(params["p1"].data, before)
        assert not np.array_equal(params["p0"].data, params["p0"].data * 0)

    def test_first_step_magnitude_is_lr_times_sign(self):
        rng = np.random.default_rng(2)
        x0 = rng.uniform(-1, 1, 16).astype(np.float32)
        g = rng.uniform(0.5, 2.0, 16).astype(np.float32)
        g *= rng.choice([-1.0, 1.0], 16).astype(np.float32)
        p = Tensor(x0.copy(), requires_grad=True)
        opt = Adam({"x": p}, lr=1e-3)
        p.grad = g
        opt.step()
        delta = p.data.astype(np.float64) - x0.astype(np.float64)
        # mhat = g, vhat = g^2 on step 1, so delta = -lr * g / (|g| + eps)
        assert np.all(np.sign(delta) == -np.sign(g))
        np.testing.assert_allclose(np.abs(delta), 1e-3, rtol=1e-4)

    def test_two_steps_decrease_quadratic(self):
        p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"x": p}, lr=0.1)
        for _ in range(2):
            opt.zero_grad()
            p.grad = 2.0 * p.data
            opt.step()
        assert float(p.data[0] ** 2) < 1.0

    def test_long_run_converges_on_quadratic(self):
        p = Tensor(np.array([1.0, -2.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"x": p}, lr=0.05)
        for _ in range(400):
            p.grad = 2.0 * p.data
            opt.step()
        assert np.abs(p.data).max() < 1e-2

    def test_step_through_backward(self):
        x = Tensor(np.array([3.0, -1.0], dtype=np.float32), requires_grad=True)
        opt = Adam({"x": x})
        loss = (x * x).sum()
        loss.backward()
        np.testing.assert_allclose(x.grad, [6.0, -2.0])
        before = x.data.copy()
        opt.step()
        assert not np.array_equal(x.data, before)

    def test_nan_gradient_rejected_with_name(self):
        params = {"weight": Tensor(np.ones(3, dtype=np.float32), requires_grad=True)}
        opt = Adam(params)
        params["weight"].grad = np.array([1.0, np.nan, 0.0], dtype=np.float32)
        with pytest.raises(ValueError, match="weight"):
            opt.step()

    def test_inf_gradient_rejected(self):
        params = {"w": Tensor(np.ones(2, dtype=np.float32), requires_grad=True)}
        opt = Adam(params)
        params["w"].grad = np.array([np.inf, 0.0], dtype=np.float32)
        with pytest.raises(ValueError):
            opt.step()

    def test_rejected_step_does_not_advance_counter(self):
        params = {"w": Tensor(np.ones(2, dtype=np.float32), requires_grad=True)}
        opt = Adam(params)
        params["w"].grad = np.array([np.nan, 0.0], dtype=np.float32)
        with pytest.raises(ValueError):
            opt.step()
        assert opt.t == 0
        assert np.array_equal(params["w"].data, np.ones(2, dtype=np.float32))

    def test_invalid_hyperparameters(self):
        p = {"x": Tensor(np.ones(1, dtype=np.float32), requires_grad=True)}
        with pytest.raises(ValueError):
            Adam(p, lr=0.0)
        with pytest.raises(ValueError):
            Adam(p, beta1=1.0)
        with pytest.raises(ValueError):
            Adam(p, beta2=-0.1)
        with pytest.raises(ValueError):
            Adam(p, eps=0.0)
        with pytest.raises(ValueError):
            Adam({})

    def test_zero_grad_clears(self):
        p = {"x": Tensor(np.ones(2, dtype=np.float32), requires_grad=True)}
        opt = Adam(p)
        p["x"].grad = np.ones(2, dtype=np.float32)
        opt.zero_grad()
        assert p["x"].grad is None


class TestAdamAgainstReference:
    def test_trajectory_matches_float64_reference(self):
        for seed in range(5):
            rng = np.random.default_rng(900 + seed)
            x0 = rng.uniform(-2, 2, (4, 3)).astype(np.float32)
            grads = [rng.uniform(-1, 1, (4, 3)).astype(np.float32)
                     for _ in range(10)]
            p = Tensor(x0.copy(), requires_grad=True)
            opt = Adam({"x": p}, lr=3e-3)
            for g in grads:
                p.grad = g.copy()
                opt.step()
            ref = reference_adam(x0, grads, lr=3e-3)
            np.testing.assert_allclose(p.data, ref, rtol=1e-4, atol=1e-6)

    def test_bias_correction_early_steps(self):
        # without correction the first update would be ~lr*(1-beta1)*g/... ;
        # with it the very first step has unit-scale moments.
        x0 = np.array([0.0], dtype=np.float32)
        g = np.array([1.0], dtype=np.float32)
        p = Tensor(x0.copy(), requires_grad=True)
        opt = Adam({"x": p}, lr=1e-2)
        p.grad = g.copy()
        opt.step()
        np.testing.assert_allclose(-p.data[0], 1e-2, rtol=1e-5)


class TestAdamState:
    def test_state_roundtrip_resumes_identically(self):
        rng = np.random.default_rng(7)
        x0 = rng.uniform(-1, 1, (3, 3)).astype(np.float32)
        grads = [rng.uniform(-1, 1, (3, 3)).astype(np.float32) for _ in range(8)]

        p = Tensor(x0.copy(), requires_grad=True)
        opt = Adam({"x": p}, lr=1e-2)
        for g in grads[:4]:
            p.grad = g.copy()
            opt.step()
        snap_param = p.data.copy()
        snap_state = {k: v.copy() for k, v in opt.state_arrays().items()}
        for g in grads[4:]:
            p.grad = g.copy()
            opt.step()
        full_run = p.data.copy()

        q = Tensor(snap_param.copy(), requires_grad=True)
        opt2 = Adam({"x": q}, lr=1e-2)
        opt2.load_state(snap_state)
        assert opt2.t == 4
        for g in grads[4:]:
            q.grad = g.copy()
            opt2.step()
        assert np.array_equal(q.data, full_run)

    def test_state_arrays_names_and_shapes(self):
        p = {"a": Tensor(np.ones((2, 3), dtype=np.float32), requires_grad=True),
             "b": Tensor(np.ones(4, dtype=np.float32), requires_grad=True)}
        opt = Adam(p)
        state = opt.state_arrays()
        assert set(state) == {"step", "a.m", "a.v", "b.m", "b.v"}
        assert state["a.m"].shape == (2, 3)
        assert state["step"].shape == ()

    def test_load_state_validates_names_and_shapes(self):
        p = {"a": Tensor(np.ones(2, dtype=np.float32), requires_grad=True)}
        opt = Adam(p)
        good = opt.state_arrays()
        bad = dict(good)
        del bad["a.m"]
        with pytest.raises(ValueError, match="a.m"):
            opt.load_state(bad)
        bad = dict(good)
        bad["a.m"] = np.zeros(3, dtype=np.float32)
        with pytest.raises(ValueError, match="shape"):
            opt.load_state(bad)
        with pytest.raises(ValueError, match="step"):
            opt.load_state({k: v for k, v in good.items() if k != "step"})
