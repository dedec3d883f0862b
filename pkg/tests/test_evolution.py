import numpy as np
import pytest

from polysnake import Tensor
from polysnake.evolution import (
    EvolutionTrace,
    bilinear_sample_forward,
    evolve,
    export_trace,
    sample_field,
    step,
)
from polysnake.geometry import delaunay, init_circle

from gradsuite import CONTOUR_CHECKS


def constant_field(h, w, dx, dy):
    f = np.empty((2, h, w), dtype=np.float32)
    f[0] = dx
    f[1] = dy
    return f


class TestSampleField:
    def test_integer_coordinate_exact_texel(self):
        rng = np.random.default_rng(0)
        f = rng.standard_normal((2, 8, 8)).astype(np.float32)
        out = sample_field(Tensor(f), Tensor([[3.0, 5.0]])).numpy()
        np.testing.assert_allclose(out[0], [f[0, 5, 3], f[1, 5, 3]], rtol=1e-6)

    def test_horizontal_midpoint_average(self):
        f = np.zeros((2, 4, 4), dtype=np.float32)
        f[0, 2, 1], f[0, 2, 2] = 3.0, 5.0
        out = sample_field(Tensor(f), Tensor([[1.5, 2.0]])).numpy()
        assert out[0, 0] == pytest.approx(4.0)

    def test_out_of_range_rejected(self):
        f = Tensor(np.zeros((2, 8, 8)))
        with pytest.raises(ValueError, match="outside"):
            sample_field(f, Tensor([[7.5, 3.0]]))
        with pytest.raises(ValueError, match="outside"):
            sample_field(f, Tensor([[3.0, -0.1]]))

    def test_shape_validation(self):
        with pytest.raises(ValueError, match=r"\(2, h, w\)"):
            sample_field(Tensor(np.zeros((3, 4, 4))), Tensor([[1.0, 1.0]]))
        with pytest.raises(ValueError, match=r"\(k, 2\)"):
            sample_field(Tensor(np.zeros((2, 4, 4))), Tensor([1.0, 1.0]))

    def test_gradient_reaches_four_texels(self):
        f = Tensor(np.zeros((2, 6, 6)), requires_grad=True)
        sample_field(f, Tensor([[2.25, 3.75]])).sum().backward()
        nz = np.argwhere(f.grad[0] != 0)
        assert sorted(map(tuple, nz)) == [(3, 2), (3, 3), (4, 2), (4, 3)]
        assert f.grad[0].sum() == pytest.approx(1.0, rel=1e-5)


class TestStep:
    def test_zero_field_fixed_point(self):
        p = Tensor(init_circle(32, 32, 8, 12))
        out = step(p, Tensor(constant_field(32, 32, 0, 0)))
        np.testing.assert_allclose(out.numpy(), p.numpy(), atol=1e-6)

    def test_constant_shift(self):
        p = Tensor(init_circle(32, 32, 8, 12))
        out = step(p, Tensor(constant_field(32, 32, 1.0, 0.0)))
        np.testing.assert_allclose(out.numpy() - p.numpy(),
                                   np.tile([1.0, 0.0], (8, 1)), atol=1e-5)

    def test_truncation_at_origin(self):
        p = Tensor(np.array([[0.5, 0.5]], dtype=np.float32))
        out = step(p, Tensor(constant_field(64, 64, -2.0, -2.0)))
        np.testing.assert_array_equal(out.numpy(), [[0.0, 0.0]])

    def test_clamp_zeroes_gradient(self):
        p = Tensor(np.array([[0.5, 10.0]], dtype=np.float32), requires_grad=True)
        out = step(p, Tensor(constant_field(64, 64, -2.0, 1.0)))
        out.sum().backward()
        assert p.grad[0, 0] == 0.0   # x clamped at 0
        assert p.grad[0, 1] != 0.0   # y moved freely

    def test_nan_displacement_rejected(self):
        f = constant_field(16, 16, 0.0, 0.0)
        f[0, 8, 8] = np.nan
        with pytest.raises(ValueError, match="NaN"):
            step(Tensor(np.array([[8.0, 8.0]], dtype=np.float32)), Tensor(f))


class TestEvolve:
    def test_zero_field_identity(self):
        p0 = init_circle(32, 32, 8, 12)
        trace = evolve(p0, delaunay(p0), Tensor(constant_field(32, 32, 0, 0)), 3)
        np.testing.assert_allclose(trace.polygons[-1].numpy(), p0, atol=1e-6)

    def test_two_steps_compose(self):
        p0 = init_circle(64, 64, 6, 10)
        trace = evolve(p0, delaunay(p0), Tensor(constant_field(64, 64, 1.0, 1.0)), 2)
        np.testing.assert_allclose(trace.polygons[-1].numpy() - p0.astype(np.float32),
                                   np.tile([2.0, 2.0], (6, 1)), atol=1e-5)

    def test_split_run_equals_full_run(self):
        rng = np.random.default_rng(1)
        field = Tensor(rng.uniform(-1, 1, (2, 32, 32)).astype(np.float32))
        p0 = init_circle(32, 32, 8, 14)
        faces = delaunay(p0)
        full = evolve(p0, faces, field, 5)
        first = evolve(p0, faces, field, 2)
        resumed = evolve(first.polygons[-1].numpy(), faces, field, 3)
        np.testing.assert_allclose(full.polygons[-1].numpy(),
                                   resumed.polygons[-1].numpy(), atol=1e-5)

    def test_all_iterates_stay_in_bounds(self):
        rng = np.random.default_rng(2)
        field = Tensor((rng.standard_normal((2, 16, 16)) * 20).astype(np.float32))
        p0 = init_circle(16, 16, 12, 16)
        trace = evolve(p0, delaunay(p0), field, 4)
        for poly in trace.polygons:
            v = poly.numpy()
            assert v[:, 0].min() >= 0 and v[:, 0].max() <= 15
            assert v[:, 1].min() >= 0 and v[:, 1].max() <= 15

    def test_initial_circle_touching_border_is_clamped(self):
        # a full-size circle reaches x = w - 0.5; evolve must clamp before
        # the first sampling instead of rejecting
        p0 = init_circle(16, 16, 8, 16)
        assert p0[:, 0].max() > 15
        trace = evolve(p0, delaunay(p0), Tensor(constant_field(16, 16, 0, 0)), 1)
        assert trace.polygons[0].numpy()[:, 0].max() == 15.0

    def test_train_mode_masks_per_iteration(self):
        p0 = init_circle(32, 32, 8, 12)
        trace = evolve(p0, delaunay(p0),
                       Tensor(constant_field(32, 32, 0.5, -0.25)), 3, "train")
        assert len(trace.masks) == 3
        assert len(trace.polygons) == 4
        assert trace.hard_mask is None

    def test_eval_mode_hard_mask_only(self):
        p0 = init_circle(32, 32, 8, 12)
        trace = evolve(p0, delaunay(p0),
                       Tensor(constant_field(32, 32, 0.5, -0.25)), 3, "eval")
        assert trace.masks == []
        assert trace.hard_mask is not None
        assert set(np.unique(trace.hard_mask)) <= {0.0, 1.0}

    def test_field_gradient_accumulates_across_iterations(self):
        rng = np.random.default_rng(3)
        field = Tensor(rng.uniform(-0.5, 0.5, (2, 16, 16)).astype(np.float32),
                       requires_grad=True)
        p0 = init_circle(16, 16, 6, 8)
        trace = evolve(p0, delaunay(p0), field, 3, "train", tau=1.0)
        loss = trace.masks[0].sum()
        for m in trace.masks[1:]:
            loss = loss + m.sum()
        loss.backward()
        assert field.grad is not None
        assert np.abs(field.grad).sum() > 0

    def test_validation(self):
        p0 = init_circle(16, 16, 4, 8)
        f = Tensor(constant_field(16, 16, 0, 0))
        with pytest.raises(ValueError, match="iterations"):
            evolve(p0, delaunay(p0), f, 0)
        with pytest.raises(ValueError, match="mode"):
            evolve(p0, delaunay(p0), f, 2, "predict")


class TestGradients:
    @pytest.mark.parametrize("name", ["sample_field", "evolve"])
    def test_matches_finite_differences(self, name):
        fn, budget = CONTOUR_CHECKS[name]
        seeds = 3 if name == "evolve" else 5
        for seed in range(seeds):
            rel = fn(np.random.default_rng(4000 + seed))
            assert rel <= budget, f"{name}: rel err {rel:.2e} > {budget:.0e} (seed {seed})"


class TestExportTrace:
    def test_csv_round_trip(self, tmp_path):
        p0 = init_circle(32, 32, 5, 10)
        trace = evolve(p0, delaunay(p0), Tensor(constant_field(32, 32, 1, 0)), 2)
        path = tmp_path / "trace.csv"
        export_trace(trace, path)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "t,vertex_index,x,y"
        assert len(rows) == 1 + 3 * 5
        t, j, x, y = rows[1].split(",")
        assert (t, j) == ("0", "0")
        assert float(x) == pytest.approx(trace.polygons[0].numpy()[0, 0], abs=1e-5)
