import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowmesh import (
    BoundaryRepairWarning,
    FlowField,
    FlowFormatError,
    GridGeometry,
    enforce_zero_boundary,
    load_flow,
    sample,
    stability_estimate,
    store_flow,
)
from flowmesh.flow_field import DFF1_MAGIC, _boundary_mask

from conftest import make_gated_field, stability_oracle, trilinear_oracle


def interior_field(dims, values_fn, origin=(0.0, 0.0, 0.0), spacing=(1.0, 1.0, 1.0)):
    geometry = GridGeometry(dims, origin, spacing)
    data = np.zeros(dims + (3,), dtype=np.float32)
    values_fn(data)
    return FlowField(geometry, data)


class TestGridGeometry:
    def test_rejects_small_dims(self):
        with pytest.raises(ValueError, match="at least 2 nodes"):
            GridGeometry((1, 4, 4), (0, 0, 0), (1, 1, 1))

    def test_rejects_nonpositive_spacing(self):
        with pytest.raises(ValueError, match="strictly positive"):
            GridGeometry((4, 4, 4), (0, 0, 0), (1, 0, 1))

    def test_domain_bounds(self):
        g = GridGeometry((3, 5, 2), (1, -1, 0), (0.5, 0.25, 2.0))
        assert np.allclose(g.upper, [2.0, 0.0, 2.0])
        assert g.contains((1.5, -0.5, 1.0))
        assert not g.contains((2.5, 0.0, 0.0))


class TestSample:
    def test_zero_field_everywhere_zero(self):
        field = interior_field((4, 4, 4), lambda d: None)
        pts = [(0.3, 1.2, 2.7), (-5, 0, 0), (1, 1, 1), (100, 100, 100)]
        for p in pts:
            assert np.array_equal(sample(field, p), np.zeros(3))

    def test_node_exactness(self):
        # Dyadic origin/spacing keep node positions exactly representable.
        rng = np.random.default_rng(1)
        geometry = GridGeometry((5, 4, 6), (-2.0, 0.5, 1.0), (0.25, 0.5, 0.125))
        data = rng.normal(size=(5, 4, 6, 3)).astype(np.float32)
        field = FlowField(geometry, data)
        for i in range(5):
            for j in range(4):
                for k in range(6):
                    p = geometry.node_position(i, j, k)
                    assert np.array_equal(sample(field, p), field.data64[i, j, k])

    def test_all_boundary_grid_is_zero_at_center(self):
        field = interior_field((2, 2, 2), lambda d: None)
        assert np.array_equal(sample(field, (0.5, 0.5, 0.5)), np.zeros(3))

    def test_single_node_blend_matches_oracle(self):
        def put(d):
            d[2, 1, 2] = (0.7, -0.3, 1.1)

        field = interior_field((4, 4, 4), put)
        rng = np.random.default_rng(2)
        cell_center = np.array([1.5, 1.5, 1.5])
        pts = [cell_center] + [rng.uniform(0.2, 2.8, size=3) for _ in range(20)]
        for p in pts:
            expected = trilinear_oracle(field.geometry, field.data64, p)
            assert np.allclose(sample(field, p), expected, rtol=1e-13, atol=1e-15)

    def test_outside_support_exact_zero(self):
        field = make_gated_field((5, 5, 5), (0, 0, 0), (1, 1, 1), seed=3, steps=4)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-3, 4, size=(200, 3))
        outside = ~field.geometry.contains(pts)
        values = sample(field, pts)
        assert np.all(values[outside] == 0.0)

    def test_continuous_across_boundary(self):
        # boundary nodes are zero, so values shrink to zero approaching the
        # domain edge and the zero extension outside introduces no jump
        field = make_gated_field((6, 6, 6), (0, 0, 0), (1, 1, 1), seed=30, steps=4)
        rng = np.random.default_rng(31)
        on_boundary = np.column_stack(
            [np.zeros(100), rng.uniform(0, 1, 100), rng.uniform(0, 1, 100)]
        )
        assert np.all(sample(field, on_boundary) == 0.0)
        for eps in (1e-3, 1e-6, 1e-9):
            near = on_boundary + [eps, 0.0, 0.0]
            norms = np.linalg.norm(sample(field, near), axis=1)
            est = stability_estimate(field)
            assert np.all(norms <= est.per_axis_lipschitz[0] * eps * (1 + 1e-9))

    def test_batch_matches_single(self):
        field = make_gated_field((5, 5, 5), (0, 0, 0), (2, 2, 2), seed=5, steps=4)
        rng = np.random.default_rng(6)
        pts = rng.uniform(-0.5, 2.5, size=(50, 3))
        batch = sample(field, pts)
        for row, p in zip(batch, pts):
            assert np.array_equal(row, sample(field, p))


class TestStability:
    def test_zero_field(self):
        field = interior_field((4, 4, 4), lambda d: None)
        est = stability_estimate(field)
        assert est.lipschitz == 0.0
        assert est.max_speed == 0.0
        assert est.lipschitz_safe == 0.0

    def test_single_node_example(self):
        def put(d):
            d[1, 1, 1] = (2.0, 0.0, 0.0)

        field = interior_field((4, 4, 4), put)
        est = stability_estimate(field)
        assert est.max_speed == 2.0
        assert est.lipschitz == 2.0
        assert est.per_axis_lipschitz == (2.0, 2.0, 2.0)
        assert est.lipschitz_safe == pytest.approx(2.0 * math.sqrt(3.0), rel=1e-15)

    def test_spacing_scaling(self):
        field = make_gated_field((5, 6, 4), (0, 0, 0), (1, 1, 1), seed=7, steps=4)
        est = stability_estimate(field)
        for s in (0.5, 2.0, 4.0):
            scaled_geom = GridGeometry(
                field.geometry.dims,
                field.geometry.origin,
                tuple(d * s for d in field.geometry.spacing),
            )
            scaled = stability_estimate(FlowField(scaled_geom, field.data))
            assert scaled.lipschitz == pytest.approx(est.lipschitz / s, rel=1e-14)
            assert scaled.max_speed == est.max_speed

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_enumeration_oracle_exactly(self, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(rng.integers(4, 8, size=3))
        spacing = tuple(rng.uniform(0.3, 2.0, size=3))
        geometry = GridGeometry(dims, (0, 0, 0), spacing)
        data = rng.normal(size=dims + (3,)).astype(np.float32)
        field = FlowField(geometry, data)
        est = stability_estimate(field)
        per_axis, lipschitz, max_speed = stability_oracle(geometry, field.data64)
        assert est.per_axis_lipschitz == tuple(per_axis)
        assert est.lipschitz == lipschitz
        assert est.max_speed == max_speed

    def test_lipschitz_properties(self):
        field = make_gated_field((6, 6, 6), (0, 0, 0), (2, 2, 2), seed=8, steps=4)
        est = stability_estimate(field)
        rng = np.random.default_rng(9)
        n = 10000
        slack = 1e-6 * est.max_speed
        # per-axis bound
        for axis in range(3):
            x = rng.uniform(-0.2, 2.2, size=(n, 3))
            y = x.copy()
            y[:, axis] = rng.uniform(-0.2, 2.2, size=n)
            dv = np.linalg.norm(sample(field, x) - sample(field, y), axis=1)
            gap = np.abs(x[:, axis] - y[:, axis])
            assert np.all(dv <= est.per_axis_lipschitz[axis] * gap + slack)
        # global bound and boundedness
        x = rng.uniform(-0.2, 2.2, size=(n, 3))
        y = rng.uniform(-0.2, 2.2, size=(n, 3))
        dv = np.linalg.norm(sample(field, x) - sample(field, y), axis=1)
        assert np.all(dv <= est.lipschitz_safe * np.linalg.norm(x - y, axis=1) + slack)
        assert np.all(np.linalg.norm(sample(field, x), axis=1) <= est.max_speed + slack)


class TestJacobian:
    def test_matches_finite_differences_of_sampler(self):
        from flowmesh.flow_field import grid_jacobians

        field = make_gated_field((6, 6, 6), (0, 0, 0), (2, 2, 2), seed=21, steps=4)
        rng = np.random.default_rng(22)
        pts = rng.uniform(0.3, 1.7, size=(50, 3))
        jac = grid_jacobians(field.geometry, field.data64, pts)
        eps = 1e-7
        for axis in range(3):
            shift = np.zeros(3)
            shift[axis] = eps
            fd = (sample(field, pts + shift) - sample(field, pts - shift)) / (2 * eps)
            assert np.allclose(jac[:, :, axis], fd, rtol=1e-6, atol=1e-9)

    def test_zero_outside_domain(self):
        from flowmesh.flow_field import grid_jacobians

        field = make_gated_field((5, 5, 5), (0, 0, 0), (1, 1, 1), seed=23, steps=4)
        jac = grid_jacobians(field.geometry, field.data64, np.array([[5.0, 5.0, 5.0]]))
        assert not jac.any()


class TestBoundary:
    def test_enforce_keeps_only_interior(self):
        geometry = GridGeometry((3, 3, 3), (0, 0, 0), (1, 1, 1))
        field = FlowField(geometry, np.ones((3, 3, 3, 3), dtype=np.float32))
        fixed = enforce_zero_boundary(field)
        assert np.array_equal(fixed.data[1, 1, 1], np.ones(3, dtype=np.float32))
        mask = _boundary_mask((3, 3, 3))
        assert not fixed.data[mask].any()
        assert field.data[mask].all()  # input untouched

    def test_idempotent_on_compliant_field(self):
        field = make_gated_field((4, 4, 4), (0, 0, 0), (1, 1, 1), seed=10, steps=4)
        again = enforce_zero_boundary(field)
        assert np.array_equal(again.data, field.data)

    def test_two_cube_becomes_all_zero(self):
        geometry = GridGeometry((2, 2, 2), (0, 0, 0), (1, 1, 1))
        field = FlowField(geometry, np.ones((2, 2, 2, 3), dtype=np.float32))
        assert not enforce_zero_boundary(field).data.any()


class TestFlowFieldType:
    def test_rejects_bad_shape(self):
        geometry = GridGeometry((3, 3, 3), (0, 0, 0), (1, 1, 1))
        with pytest.raises(ValueError, match="shape"):
            FlowField(geometry, np.zeros((3, 3, 2, 3), dtype=np.float32))

    def test_rejects_non_finite(self):
        geometry = GridGeometry((3, 3, 3), (0, 0, 0), (1, 1, 1))
        data = np.zeros((3, 3, 3, 3), dtype=np.float32)
        data[1, 1, 1, 0] = np.nan
        with pytest.raises(ValueError, match="finite"):
            FlowField(geometry, data)

    def test_immutable(self):
        field = make_gated_field((3, 3, 3), (0, 0, 0), (1, 1, 1), seed=0, steps=2)
        with pytest.raises((ValueError, AttributeError)):
            field.data[0, 0, 0, 0] = 1.0

    def test_does_not_freeze_or_alias_caller_array(self):
        geometry = GridGeometry((3, 3, 3), (0, 0, 0), (1, 1, 1))
        source = np.zeros((3, 3, 3, 3), dtype=np.float32)
        field = FlowField(geometry, source)
        source[1, 1, 1] = 7.0  # caller's array stays writable
        assert not field.data[1, 1, 1].any()  # and the field saw a copy


class TestDff1:
    def test_round_trip_bit_identical(self, tmp_path):
        field = make_gated_field((5, 7, 4), (-1, 0, 2), (1, 2, 3.5), seed=11, steps=4)
        path = tmp_path / "field.dff1"
        store_flow(field, path)
        loaded = load_flow(path)
        assert loaded.geometry == field.geometry
        assert np.array_equal(loaded.data, field.data)
        assert loaded.data.dtype == np.float32

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dff1"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(FlowFormatError, match="magic") as err:
            load_flow(path)
        assert err.value.code == "bad_magic"

    def test_truncated_payload(self, tmp_path):
        field = make_gated_field((4, 4, 4), (0, 0, 0), (1, 1, 1), seed=12, steps=4)
        path = tmp_path / "trunc.dff1"
        store_flow(field, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(FlowFormatError, match="truncated") as err:
            load_flow(path)
        assert err.value.code == "truncated"

    def test_trailing_bytes_rejected(self, tmp_path):
        field = make_gated_field((4, 4, 4), (0, 0, 0), (1, 1, 1), seed=13, steps=4)
        path = tmp_path / "extra.dff1"
        store_flow(field, path)
        with open(path, "ab") as fh:
            fh.write(b"\x00\x00")
        with pytest.raises(FlowFormatError) as err:
            load_flow(path)
        assert err.value.code == "trailing_data"

    def test_bad_header_dims(self, tmp_path):
        import struct

        path = tmp_path / "dims.dff1"
        header = struct.pack("<4s3I3d3d", DFF1_MAGIC, 1, 4, 4, 0, 0, 0, 1, 1, 1)
        path.write_bytes(header)
        with pytest.raises(FlowFormatError) as err:
            load_flow(path)
        assert err.value.code == "bad_header"

    def test_non_finite_payload(self, tmp_path):
        field = make_gated_field((3, 3, 3), (0, 0, 0), (1, 1, 1), seed=14, steps=4)
        path = tmp_path / "nan.dff1"
        store_flow(field, path)
        raw = bytearray(path.read_bytes())
        # overwrite the first payload float with NaN
        raw[64:68] = np.array([np.nan], dtype="<f4").tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(FlowFormatError) as err:
            load_flow(path)
        assert err.value.code == "non_finite"

    def test_boundary_violation_and_repair(self, tmp_path):
        geometry = GridGeometry((3, 3, 3), (0, 0, 0), (1, 1, 1))
        data = np.zeros((3, 3, 3, 3), dtype=np.float32)
        data[0, 0, 0] = (1, 2, 3)
        data[1, 1, 1] = (4, 5, 6)
        path = tmp_path / "boundary.dff1"
        store_flow(FlowField(geometry, data), path)
        with pytest.raises(FlowFormatError) as err:
            load_flow(path)
        assert err.value.code == "boundary"
        with pytest.warns(BoundaryRepairWarning):
            repaired = load_flow(path, repair_boundary=True)
        assert not repaired.data[0, 0, 0].any()
        assert np.array_equal(repaired.data[1, 1, 1], np.array([4, 5, 6], np.float32))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=2**31 - 1))
def test_store_load_round_trip_property(seed):
    import tempfile

    field = make_gated_field((4, 5, 3), (0, -1, 2), (3, 1, 4), seed=seed, steps=4)
    with tempfile.TemporaryDirectory() as tmp:
        path = f"{tmp}/f.dff1"
        store_flow(field, path)
        loaded = load_flow(path)
        assert np.array_equal(loaded.data, field.data)
        assert loaded.geometry == field.geometry
