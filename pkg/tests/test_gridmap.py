import numpy as np
import pytest

from deskrover import gridmap as gm
from deskrover.cloud import LABEL_GROUND, LABEL_LANDER, LABEL_ROCK, PointBatch

SPEC = gm.GridSpec()


def make_batch(points):
    """points: iterable of (x, y, z, label_int)."""
    arr = np.array([(p[0], p[1], p[2]) for p in points], dtype=float).reshape(-1, 3)
    labels = np.array([p[3] for p in points], dtype=np.uint8)
    return PointBatch(arr, labels)


def rescan_oracle(points: PointBatch, spec: gm.GridSpec):
    """Naive per-cell rescan: the independent reference for both grids."""
    n = spec.cells
    heights = np.full((n, n), np.nan)
    rock = np.zeros((n, n), dtype=np.uint8)
    for i in range(n):
        for j in range(n):
            x0 = -spec.half_side + i * spec.resolution
            y0 = -spec.half_side + j * spec.resolution
            in_cell = (
                (points.positions[:, 0] >= x0)
                & (points.positions[:, 0] < x0 + spec.resolution)
                & (points.positions[:, 1] >= y0)
                & (points.positions[:, 1] < y0 + spec.resolution)
            )
            labs = points.labels[in_cell]
            zs = points.positions[in_cell, 2]
            ground = zs[labs == LABEL_GROUND]
            if len(ground):
                heights[i, j] = np.median(ground)
            n_rock = int((labs == LABEL_ROCK).sum())
            n_ground = int((labs == LABEL_GROUND).sum())
            rock[i, j] = 1 if n_rock > n_ground else 0
    return heights, rock


class TestProjectCell:
    def test_lower_corner(self):
        assert gm.project_cell(-13.5, -13.5, SPEC) == (0, 0)

    def test_origin(self):
        assert gm.project_cell(0.0, 0.0, SPEC) == (90, 90)

    def test_upper_edge_is_outside(self):
        assert gm.project_cell(13.5, 0.0, SPEC) is None
        assert gm.project_cell(0.0, 13.5, SPEC) is None

    def test_just_inside_upper_edge(self):
        assert gm.project_cell(13.499, 13.499, SPEC) == (179, 179)

    def test_outside_returns_none(self):
        assert gm.project_cell(-13.6, 0.0, SPEC) is None

    def test_side_length(self):
        assert SPEC.side == pytest.approx(27.0, abs=1e-9)

    def test_vectorized_agrees_with_scalar(self):
        rng = np.random.default_rng(0)
        xy = rng.uniform(-15, 15, size=(500, 2))
        ij, inside = gm.project_cells(xy, SPEC)
        for k in range(len(xy)):
            scalar = gm.project_cell(xy[k, 0], xy[k, 1], SPEC)
            if scalar is None:
                assert not inside[k]
            else:
                assert inside[k] and tuple(ij[k]) == scalar


class TestHeightGrid:
    def test_single_point(self):
        grid = gm.build_height_grid(make_batch([(0, 0, 0.3, LABEL_GROUND)]), SPEC)
        assert grid.values[90, 90] == pytest.approx(0.3)
        assert grid.mapped_cells() == 1

    def test_median_is_outlier_robust(self):
        pts = [(0, 0, z, LABEL_GROUND) for z in (1.0, 2.0, 100.0)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        assert grid.values[90, 90] == pytest.approx(2.0)

    def test_even_count_uses_middle_mean(self):
        pts = [(0, 0, z, LABEL_GROUND) for z in (1.0, 2.0, 3.0, 4.0)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        assert grid.values[90, 90] == pytest.approx(2.5)

    def test_rock_and_lander_points_ignored(self):
        pts = [(0, 0, 5.0, LABEL_ROCK), (0, 0, 7.0, LABEL_LANDER)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        assert grid.mapped_cells() == 0

    def test_median_within_sample_bounds(self):
        rng = np.random.default_rng(1)
        pts = [(rng.uniform(-13, 13), rng.uniform(-13, 13), rng.normal(), LABEL_GROUND)
               for _ in range(2000)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        for i, j in np.argwhere(grid.mapped_mask())[:100]:
            samples = grid.samples(i, j)
            assert samples.min() - 1e-12 <= grid.values[i, j] <= samples.max() + 1e-12

    def test_samples_retained_for_audit(self):
        pts = [(0, 0, z, LABEL_GROUND) for z in (3.0, 1.0, 2.0)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        np.testing.assert_allclose(grid.samples(90, 90), [1.0, 2.0, 3.0])


class TestRockGrid:
    def test_strict_majority(self):
        pts = [(0, 0, 0, LABEL_ROCK)] * 3 + [(0, 0, 0, LABEL_GROUND)]
        grid = gm.build_rock_grid(make_batch(pts), SPEC)
        assert grid.labels[90, 90] == 1

    def test_tie_is_not_rock(self):
        pts = [(0, 0, 0, LABEL_ROCK)] * 2 + [(0, 0, 0, LABEL_GROUND)] * 2
        grid = gm.build_rock_grid(make_batch(pts), SPEC)
        assert grid.labels[90, 90] == 0

    def test_empty_cell_is_not_rock(self):
        grid = gm.build_rock_grid(make_batch([]), SPEC)
        assert grid.labels.sum() == 0

    def test_adding_ground_never_flips_to_rock(self):
        rng = np.random.default_rng(2)
        pts = [(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0,
                LABEL_ROCK if rng.random() < 0.5 else LABEL_GROUND)
               for _ in range(300)]
        base = gm.build_rock_grid(make_batch(pts), SPEC)
        extra = pts + [(rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0, LABEL_GROUND)
                       for _ in range(100)]
        more = gm.build_rock_grid(make_batch(extra), SPEC)
        flipped_on = (base.labels == 0) & (more.labels == 1)
        assert not flipped_on.any()


class TestOracleEquivalence:
    def test_permutation_invariance(self):
        rng = np.random.default_rng(3)
        pts = [(rng.uniform(-13, 13), rng.uniform(-13, 13), rng.normal(),
                int(rng.integers(0, 2))) for _ in range(1000)]
        batch = make_batch(pts)
        perm = rng.permutation(len(pts))
        shuffled = PointBatch(batch.positions[perm], batch.labels[perm])
        a_h = gm.build_height_grid(batch, SPEC)
        b_h = gm.build_height_grid(shuffled, SPEC)
        np.testing.assert_array_equal(
            np.nan_to_num(a_h.values, nan=-999), np.nan_to_num(b_h.values, nan=-999)
        )
        a_r = gm.build_rock_grid(batch, SPEC)
        b_r = gm.build_rock_grid(shuffled, SPEC)
        np.testing.assert_array_equal(a_r.labels, b_r.labels)

    def test_matches_rescan_oracle(self):
        rng = np.random.default_rng(4)
        # cluster points so cells hold several samples incl. ties/even counts
        centers = rng.uniform(-2, 2, size=(60, 2))
        pts = []
        for cx, cy in centers:
            for _ in range(int(rng.integers(1, 8))):
                pts.append((cx + rng.uniform(-0.05, 0.05), cy + rng.uniform(-0.05, 0.05),
                            rng.normal(), int(rng.integers(0, 2))))
        batch = make_batch(pts)
        small_spec = gm.GridSpec(cells=40, resolution=0.15)
        heights, rock = rescan_oracle(batch, small_spec)
        built_h = gm.build_height_grid(batch, small_spec)
        built_r = gm.build_rock_grid(batch, small_spec)
        np.testing.assert_array_equal(
            np.nan_to_num(built_h.values, nan=-999), np.nan_to_num(heights, nan=-999)
        )
        np.testing.assert_array_equal(built_r.labels, rock)


class TestGridFiles:
    def test_height_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(5)
        pts = [(rng.uniform(-13, 13), rng.uniform(-13, 13), rng.normal(), LABEL_GROUND)
               for _ in range(500)]
        grid = gm.build_height_grid(make_batch(pts), SPEC)
        path = tmp_path / "h.grid"
        gm.write_height_grid(path, grid)
        back = gm.read_grid(path)
        assert isinstance(back, gm.HeightGrid)
        np.testing.assert_array_equal(
            np.nan_to_num(back.values, nan=-999), np.nan_to_num(grid.values, nan=-999)
        )
        # writing again reproduces the same bytes
        path2 = tmp_path / "h2.grid"
        gm.write_height_grid(path2, back)
        assert path.read_bytes() == path2.read_bytes()

    def test_rock_roundtrip(self, tmp_path):
        rng = np.random.default_rng(6)
        pts = [(rng.uniform(-2, 2), rng.uniform(-2, 2), 0.0, int(rng.integers(0, 2)))
               for _ in range(400)]
        grid = gm.build_rock_grid(make_batch(pts), SPEC)
        path = tmp_path / "r.grid"
        gm.write_rock_grid(path, grid)
        back = gm.read_grid(path)
        assert isinstance(back, gm.RockGrid)
        np.testing.assert_array_equal(back.labels, grid.labels)

    def test_rejects_malformed(self, tmp_path):
        path = tmp_path / "bad.grid"
        path.write_text("# not a gridmap\n")
        with pytest.raises(ValueError):
            gm.read_grid(path)
