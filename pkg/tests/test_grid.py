import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudoprecip.errors import (
    DimensionMismatch,
    EmptyIntersection,
    IoFailure,
    MalformedHeader,
    MalformedInput,
    NegativeTP,
    NonFiniteValue,
)
from pseudoprecip.grid import (
    FieldKind,
    GeoGrid,
    GridSeries,
    crop,
    export_grid_csv,
    field_stats,
    import_grid_csv,
    read_grid_series,
    slice_steps,
    write_grid_series,
)

from conftest import make_series


class TestConstruction:
    def test_minimal_series(self):
        s = GridSeries(FieldKind.TP, [50.0], [0.0], np.zeros((1, 1, 1)),
                       np.ones((1, 1), bool), t0=0)
        assert s.nsteps == 1 and s.values[0, 0, 0] == 0.0

    def test_timestamps_spacing(self, small_tp):
        ts = small_tp.timestamps
        assert np.all(np.diff(ts) == 10800)

    def test_zero_steps_rejected(self):
        with pytest.raises(MalformedInput):
            make_series(np.zeros((0, 2, 2)))

    def test_bad_dt_rejected(self):
        with pytest.raises(MalformedInput):
            GridSeries(FieldKind.TP, [50.0], [0.0], np.zeros((1, 1, 1)),
                       np.ones((1, 1), bool), t0=0, dt=3600)

    def test_nonfinite_unmasked_rejected(self):
        vals = np.zeros((2, 2, 2))
        vals[1, 0, 1] = np.nan
        with pytest.raises(NonFiniteValue, match="step 1"):
            make_series(vals)

    def test_nonfinite_masked_ok(self):
        vals = np.zeros((1, 2, 2))
        vals[0, 0, 0] = np.inf
        mask = np.ones((2, 2), bool)
        mask[0, 0] = False
        s = make_series(vals, mask=mask)
        assert not s.mask[0, 0]

    def test_non_monotone_lat_rejected(self):
        with pytest.raises(MalformedInput):
            GridSeries(FieldKind.TP, [50.0, 52.0, 51.0], [0.0], np.zeros((1, 3, 1)),
                       np.ones((3, 1), bool), t0=0)

    def test_nonuniform_lon_rejected(self):
        with pytest.raises(MalformedInput):
            GridSeries(FieldKind.TP, [50.0], [0.0, 1.0, 3.0], np.zeros((1, 1, 3)),
                       np.ones((1, 3), bool), t0=0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(DimensionMismatch):
            GridSeries(FieldKind.TP, [50.0, 49.0], [0.0], np.zeros((1, 3, 1)),
                       np.ones((3, 1), bool), t0=0)

    def test_immutable_after_construction(self, small_tp):
        with pytest.raises(ValueError):
            small_tp.values[0, 0, 0] = 1.0

    def test_step_view(self, small_tp):
        g = small_tp.step(3)
        assert isinstance(g, GeoGrid)
        assert np.array_equal(g.values, small_tp.values[3])


class TestPpgRoundTrip:
    def test_minimal_file(self, tmp_path):
        s = GridSeries(FieldKind.TP, [50.0], [0.0], np.zeros((1, 1, 1)),
                       np.ones((1, 1), bool), t0=0)
        path = tmp_path / "m.ppg"
        write_grid_series(s, path)
        back = read_grid_series(path)
        assert back.nsteps == 1 and back.values[0, 0, 0] == 0.0

    def test_bit_exact_round_trip(self, small_tp, tmp_path):
        path = tmp_path / "s.ppg"
        write_grid_series(small_tp, path)
        back = read_grid_series(path)
        assert back.kind == small_tp.kind
        assert np.array_equal(back.values, small_tp.values)
        assert np.array_equal(back.lat, small_tp.lat)
        assert np.array_equal(back.lon, small_tp.lon)
        assert np.array_equal(back.mask, small_tp.mask)
        assert back.t0 == small_tp.t0 and back.dt == small_tp.dt

    def test_byte_identical_rewrite(self, small_tp, tmp_path):
        p1, p2 = tmp_path / "a.ppg", tmp_path / "b.ppg"
        write_grid_series(small_tp, p1)
        write_grid_series(read_grid_series(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_masked_series_round_trip(self, rng, tmp_path):
        mask = rng.random((5, 7)) > 0.3
        vals = np.abs(rng.standard_normal((3, 5, 7)))
        s = make_series(vals, mask=mask)
        path = tmp_path / "m.ppg"
        write_grid_series(s, path)
        assert np.array_equal(read_grid_series(path).mask, mask)

    def test_negative_tp_file_rejected(self, tmp_path):
        s = make_series(np.zeros((2, 2, 2)), kind=FieldKind.VIMD)
        path = tmp_path / "v.ppg"
        write_grid_series(s, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 0  # relabel kind as TP
        off = len(raw) - ((4 + 7) // 8) - 4 * 2 * 2 * 2
        raw[off:off + 4] = np.float32(-1.0).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(NegativeTP, match="step 0"):
            read_grid_series(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "bad.ppg"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(MalformedHeader, match="magic"):
            read_grid_series(path)

    def test_truncated_payload(self, small_tp, tmp_path):
        path = tmp_path / "t.ppg"
        write_grid_series(small_tp, path)
        path.write_bytes(path.read_bytes()[:-9])
        with pytest.raises(DimensionMismatch):
            read_grid_series(path)

    def test_unknown_kind_code(self, small_tp, tmp_path):
        path = tmp_path / "k.ppg"
        write_grid_series(small_tp, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 77
        path.write_bytes(bytes(raw))
        with pytest.raises(MalformedHeader, match="kind"):
            read_grid_series(path)

    def test_nan_payload_rejected(self, small_tp, tmp_path):
        path = tmp_path / "n.ppg"
        write_grid_series(small_tp, path)
        raw = bytearray(path.read_bytes())
        head = 17 + 8 * (small_tp.nlat + small_tp.nlon) + 16
        raw[head:head + 4] = np.float32(np.nan).tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(NonFiniteValue):
            read_grid_series(path)

    def test_unwritable_path(self, small_tp):
        with pytest.raises(IoFailure):
            write_grid_series(small_tp, "/nonexistent-dir/x.ppg")

    def test_missing_file(self, tmp_path):
        with pytest.raises(IoFailure):
            read_grid_series(tmp_path / "absent.ppg")

    def test_write_rejects_negative_tp_series(self, tmp_path):
        s = make_series(-np.ones((1, 2, 2)))  # in-memory analysis value
        with pytest.raises(NegativeTP):
            write_grid_series(s, tmp_path / "neg.ppg")


class TestCrop:
    def test_full_extent_identity(self, small_tp):
        c = crop(small_tp, (small_tp.lat.min(), small_tp.lat.max()),
                 (small_tp.lon.min(), small_tp.lon.max()))
        assert np.array_equal(c.values, small_tp.values)

    def test_nw_corner(self):
        vals = np.arange(16, dtype=float).reshape(1, 4, 4)
        s = make_series(vals)
        c = crop(s, (s.lat[1], s.lat[0]), (s.lon[0], s.lon[1]))
        assert c.values.shape == (1, 2, 2)
        assert np.array_equal(c.values[0], vals[0, :2, :2])

    def test_disjoint_range(self, small_tp):
        with pytest.raises(EmptyIntersection):
            crop(small_tp, (-80.0, -70.0), (0.0, 1.0))

    @given(st.integers(0, 3), st.integers(4, 9), st.integers(0, 2), st.integers(3, 7))
    def test_nested_crops_compose(self, i0, i1, j0, j1):
        rng = np.random.default_rng(7)
        s = make_series(np.abs(rng.standard_normal((2, 10, 8))))
        outer = crop(s, (s.lat[i1], s.lat[i0]), (s.lon[j0], s.lon[j1]))
        inner_lat = (s.lat[min(i1, i0 + 2)], s.lat[i0])
        inner_lon = (s.lon[j0], s.lon[max(j0, j1 - 1)])
        once = crop(s, inner_lat, inner_lon)
        twice = crop(outer, inner_lat, inner_lon)
        assert np.array_equal(once.values, twice.values)
        assert np.array_equal(once.lat, twice.lat)


class TestSliceSteps:
    def test_basic(self, small_tp):
        part = slice_steps(small_tp, 4, 9)
        assert part.nsteps == 5
        assert part.t0 == small_tp.t0 + 4 * 10800
        assert np.array_equal(part.values, small_tp.values[4:9])

    def test_empty_rejected(self, small_tp):
        with pytest.raises(MalformedInput):
            slice_steps(small_tp, 5, 5)


class TestFieldStats:
    def test_all_zero(self):
        st_ = field_stats(make_series(np.zeros((3, 2, 2))))
        assert st_.mean == 0 and st_.wet_fraction == 0

    def test_constant(self):
        st_ = field_stats(make_series(np.full((2, 2, 2), 3.5)))
        assert st_.mean == pytest.approx(3.5) and st_.std == 0

    def test_two_values(self):
        vals = np.array([[[0.0, 2.0]]])
        st_ = field_stats(make_series(vals))
        assert st_.mean == pytest.approx(1.0)
        assert st_.wet_fraction == pytest.approx(0.5)

    def test_wet_fraction_tp_only(self):
        st_ = field_stats(make_series(np.ones((1, 2, 2)), kind=FieldKind.VIMD))
        assert st_.wet_fraction is None

    def test_masked_cells_excluded(self):
        mask = np.array([[True, False]])
        vals = np.array([[[1.0, 100.0]]])
        st_ = field_stats(make_series(vals, mask=mask))
        assert st_.max == 1.0


class TestCsv:
    def test_round_trip(self, rng, tmp_path):
        grid = GeoGrid(FieldKind.TP, [51.0, 50.0], [0.0, 1.0, 2.0],
                       np.abs(rng.standard_normal((2, 3))).astype(np.float32),
                       np.ones((2, 3), bool))
        path = tmp_path / "g.csv"
        export_grid_csv(grid, path)
        back = import_grid_csv(path, FieldKind.TP)
        assert np.allclose(back.values, grid.values, rtol=0, atol=0)
        assert np.array_equal(back.lat, grid.lat)

    def test_mask_round_trip(self, tmp_path):
        mask = np.array([[True, False], [True, True]])
        grid = GeoGrid(FieldKind.VIMD, [51.0, 50.0], [0.0, 1.0],
                       np.ones((2, 2), np.float32), mask)
        path = tmp_path / "m.csv"
        export_grid_csv(grid, path)
        back = import_grid_csv(path, FieldKind.VIMD)
        assert np.array_equal(back.mask, mask)

    def test_too_large_rejected(self, tmp_path):
        grid = GeoGrid(FieldKind.TP, 60.0 - 0.1 * np.arange(101),
                       0.1 * np.arange(101), np.zeros((101, 101), np.float32),
                       np.ones((101, 101), bool))
        with pytest.raises(MalformedInput):
            export_grid_csv(grid, tmp_path / "big.csv")

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x,y,z\n1,2,3\n")
        with pytest.raises(MalformedHeader):
            import_grid_csv(path, FieldKind.TP)
