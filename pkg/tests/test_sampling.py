import numpy as np
import pytest

from deformest.fem import MaterialParams, elasticity_matrix
from deformest.mesh import generate_rpp
from deformest.sampling import (
    Dataset,
    DatasetError,
    DatasetFormatError,
    DeformationSample,
    MeshHashMismatchError,
    SamplingSpec,
    build_dataset,
    dataset_to_csv,
    ellipsoid_points,
    ellipsoid_spec_for_region,
    fixed_to_contact_direction,
    grid_points,
    load_dataset,
    region_surface_normal,
    save_dataset,
)

D = elasticity_matrix(MaterialParams())


class TestGridPoints:
    def test_box_grid_point_count(self):
        pts = grid_points([0, 0, 0], (204.8, 204.8, 102.4), 5.12)
        assert pts.shape == (41 * 41 * 21, 3)
        assert len(pts) == 35301

    def test_max_center_distance(self):
        pts = grid_points([0, 0, 0], (204.8, 204.8, 102.4), 5.12)
        # exact arithmetic on the integer lattice: the farthest corner is
        # (20, 20, 10) spacings away, |.| = 30 spacings
        lattice = pts / 5.12
        n2 = np.rint(lattice[:, 0]) ** 2 + np.rint(lattice[:, 1]) ** 2 + np.rint(lattice[:, 2]) ** 2
        assert 5.12 * np.sqrt(n2.max()) == 153.6
        # naive float norms agree to a few ulp
        naive = np.linalg.norm(pts, axis=1).max()
        assert abs(naive - 153.6) <= 1e-12 * 153.6

    def test_degenerate_extents_yield_center(self):
        center = np.array([1.5, -2.0, 0.25])
        pts = grid_points(center, (0.0, 0.0, 0.0), 5.12)
        assert pts.shape == (1, 3)
        assert np.array_equal(pts[0], center)

    def test_count_formula_property(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            cells = rng.integers(0, 6, size=3)
            spacing = float(rng.uniform(0.1, 3.0))
            pts = grid_points(rng.normal(size=3), tuple(cells * spacing), spacing)
            assert len(pts) == np.prod(cells + 1)

    def test_non_divisible_extent_rejected(self):
        with pytest.raises(DatasetError, match="integer multiple"):
            grid_points([0, 0, 0], (1.0, 1.0, 0.7), 0.3)

    def test_boundary_included(self):
        pts = grid_points([0, 0, 0], (2.0, 2.0, 2.0), 1.0)
        assert pts[:, 0].min() == -1.0 and pts[:, 0].max() == 1.0


def brute_force_ellipsoid_count(r_para, r_perp, spacing):
    """Plain triple loop over the integer lattice (frame independent)."""
    count = 0
    n = int(max(r_para, r_perp) / spacing) + 2
    for i in range(-n, n + 1):
        for j in range(-n, n + 1):
            for k in range(-n, n + 1):
                d_para = i * spacing
                d_perp_sq = (j * spacing) ** 2 + (k * spacing) ** 2
                if (d_para / r_para) ** 2 + d_perp_sq / r_perp**2 <= 1.0:
                    count += 1
    return count


class TestEllipsoidPoints:
    def test_tiny_radius_keeps_only_centroid(self):
        spec = SamplingSpec(mode="ellipsoid", spacing=1.0, r_para=0.4, r_perp=0.4)
        pts = ellipsoid_points(spec, [3.0, 1.0, 2.0], [1.0, 0.0, 0.0])
        assert pts.shape == (1, 3)
        assert np.array_equal(pts[0], [3.0, 1.0, 2.0])

    def test_sphere_count_matches_bruteforce(self):
        spec = SamplingSpec(mode="ellipsoid", spacing=1.0, r_para=5.0, r_perp=5.0)
        pts = ellipsoid_points(spec, [0.0, 0.0, 0.0], [0.3, -0.2, 0.9])
        assert len(pts) == brute_force_ellipsoid_count(5.0, 5.0, 1.0)

    def test_random_spec_counts_match_bruteforce(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            spacing = float(rng.uniform(0.2, 1.0))
            r_para = float(rng.uniform(1.0, 4.0)) * spacing
            r_perp = float(rng.uniform(1.0, 4.0)) * spacing
            spec = SamplingSpec(mode="ellipsoid", spacing=spacing, r_para=r_para, r_perp=r_perp)
            v_fc = rng.normal(size=3)
            pts = ellipsoid_points(spec, rng.normal(size=3), v_fc)
            assert len(pts) == brute_force_ellipsoid_count(r_para, r_perp, spacing)

    def test_acute_angle_filter(self):
        center = np.array([0.0, 0.0, 0.0])
        v_fc = np.array([1.0, 0.0, 0.0])
        v_nv = np.array([0.0, 0.0, 1.0])
        free = ellipsoid_points(
            SamplingSpec(mode="ellipsoid", spacing=1.0, r_para=3.0, r_perp=3.0), center, v_fc
        )
        filtered = ellipsoid_points(
            SamplingSpec(
                mode="ellipsoid", spacing=1.0, r_para=3.0, r_perp=3.0, normal_filter=tuple(v_nv)
            ),
            center,
            v_fc,
        )
        assert (filtered @ v_nv > 0).all()
        want = {tuple(np.round(p, 9)) for p in free if p @ v_nv > 0}
        got = {tuple(np.round(p, 9)) for p in filtered}
        assert got == want
        # the point diametrically opposite v_nv is excluded
        assert tuple(np.round(-v_nv, 9)) not in got

    def test_zero_direction_rejected(self):
        spec = SamplingSpec(mode="ellipsoid", spacing=1.0, r_para=1.0, r_perp=1.0)
        with pytest.raises(DatasetError, match="zero length"):
            ellipsoid_points(spec, [0, 0, 0], [0.0, 0.0, 0.0])

    def test_spec_validation(self):
        with pytest.raises(DatasetError, match="mode"):
            SamplingSpec(mode="banana", spacing=1.0)
        with pytest.raises(DatasetError, match="spacing"):
            SamplingSpec(mode="box", spacing=0.0, extents=(1, 1, 1))
        with pytest.raises(DatasetError, match="radii"):
            SamplingSpec(mode="ellipsoid", spacing=1.0, r_para=1.0)
        with pytest.raises(DatasetError, match="nonzero"):
            SamplingSpec(
                mode="ellipsoid", spacing=1.0, r_para=1.0, r_perp=1.0, normal_filter=(0, 0, 0)
            )


class TestRegionGeometry:
    def test_fixed_to_contact_direction(self, paper_rpp):
        v, l = fixed_to_contact_direction(paper_rpp, "end")
        np.testing.assert_allclose(v, [1.0, 0.0, 0.0], atol=1e-12)
        assert abs(l - 1.0) <= 1e-12  # 256 mm in simulation units

    def test_region_surface_normal(self, paper_rpp):
        n = region_surface_normal(paper_rpp, "end")
        # the end face is dominated by its +x faces; corner/edge vertices tilt
        # the average but the direction must stay outward along +x
        assert n[0] > 0.5
        assert abs(np.linalg.norm(n) - 1.0) <= 1e-12

    def test_ellipsoid_spec_for_region(self, paper_rpp):
        spec = ellipsoid_spec_for_region(
            paper_rpp, "end", r_para_ratio=0.05, r_perp_ratio=0.2, spacing_ratio=0.01
        )
        l = spec.reference_length
        assert abs(spec.r_para - 0.05 * l) <= 1e-15
        assert abs(spec.r_perp - 0.2 * l) <= 1e-15
        assert abs(spec.spacing - 0.01 * l) <= 1e-15
        assert spec.normal_filter is not None

    def test_direction_requires_fixed_vertices(self):
        mesh = generate_rpp(51.2, 25.6, 25.6, fixed_spec=[], observation_spec=[])
        with pytest.raises(DatasetError, match="no fixed vertices"):
            fixed_to_contact_direction(mesh, "end")


def small_bar():
    return generate_rpp(51.2, 25.6, 25.6)


class TestBuildDataset:
    def test_single_point_at_centroid_gives_zero_field(self):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=1.0, extents=(0.0, 0.0, 0.0))
        ds = build_dataset(mesh, D, {"end": spec}, n_steps=1)
        assert ds.m == 1
        assert not ds.samples[0].u_all.any()
        assert not ds.samples[0].target_disp.any()

    def test_contact_rows_echo_target(self):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=0.02, extents=(0.04, 0.04, 0.0))
        ds = build_dataset(mesh, D, {"end": spec}, n_steps=2)
        assert ds.m == 9
        slots = np.searchsorted(ds.free_ids, mesh.contact_regions["end"])
        for s in ds.samples:
            echo = s.u_all.reshape(-1, 3)[slots]
            assert np.abs(echo - s.target_disp).max() <= 1e-9

    def test_inputs_slice_matches_u_all(self):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=0.02, extents=(0.04, 0.0, 0.0))
        ds = build_dataset(mesh, D, {"end": spec}, n_steps=2)
        flat = ds.observation_flat_indices()
        x = ds.inputs()
        for i, s in enumerate(ds.samples):
            assert np.array_equal(x[i], s.u_all[flat])

    def test_failed_samples_recorded_and_skipped(self):
        mesh = small_bar()  # bar is 0.2 units long; -0.4 compression collapses it
        spec = SamplingSpec(mode="box", spacing=0.4, extents=(0.8, 0.0, 0.0))
        ds = build_dataset(mesh, D, {"end": spec}, n_steps=4)
        assert ds.m + len(ds.failures) == 3
        assert len(ds.failures) >= 1
        assert any("volume" in f.reason for f in ds.failures)
        assert all(f.region == "end" for f in ds.failures)

    def test_unknown_region_rejected(self):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=1.0, extents=(0.0, 0.0, 0.0))
        with pytest.raises(DatasetError, match="unknown regions"):
            build_dataset(mesh, D, {"nope": spec}, n_steps=1)

    def test_deterministic_bytes(self, tmp_path):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=0.02, extents=(0.04, 0.0, 0.0))
        paths = []
        for name in ("a.ds", "b.ds"):
            ds = build_dataset(mesh, D, {"end": spec}, n_steps=2)
            p = tmp_path / name
            save_dataset(ds, p)
            paths.append(p.read_bytes())
        assert paths[0] == paths[1]

    def test_worker_count_does_not_change_results(self, tmp_path):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=0.02, extents=(0.04, 0.02, 0.0))
        serial = build_dataset(mesh, D, {"end": spec}, n_steps=2, workers=1)
        parallel = build_dataset(mesh, D, {"end": spec}, n_steps=2, workers=2)
        a, b = tmp_path / "serial.ds", tmp_path / "parallel.ds"
        save_dataset(serial, a)
        save_dataset(parallel, b)
        assert a.read_bytes() == b.read_bytes()

    def test_multi_region_order(self):
        mesh = generate_rpp(
            51.2,
            25.6,
            25.6,
            contact_specs={"tip": [(2, 1, 1)], "side": [(1, 1, 0)]},
        )
        spec = SamplingSpec(mode="box", spacing=1.0, extents=(0.0, 0.0, 0.0))
        ds = build_dataset(mesh, D, {"tip": spec, "side": spec}, n_steps=1)
        assert [s.region for s in ds.samples] == ["tip", "side"]
        assert ds.region_names == ["tip", "side"]


class TestDatasetFile:
    def make_dataset(self):
        mesh = small_bar()
        spec = SamplingSpec(mode="box", spacing=0.02, extents=(0.04, 0.0, 0.0))
        return mesh, build_dataset(mesh, D, {"end": spec}, n_steps=2)

    def test_roundtrip(self, tmp_path):
        mesh, ds = self.make_dataset()
        path = tmp_path / "data.ds"
        save_dataset(ds, path)
        loaded = load_dataset(path)
        assert loaded.mesh_hash == ds.mesh_hash
        assert loaded.mm_per_unit == ds.mm_per_unit
        assert np.array_equal(loaded.free_ids, ds.free_ids)
        assert np.array_equal(loaded.observation_ids, ds.observation_ids)
        assert loaded.m == ds.m
        for a, b in zip(loaded.samples, ds.samples):
            assert a.region == b.region
            assert np.array_equal(a.target_disp, b.target_disp)
            assert np.array_equal(a.u_all, b.u_all)
        loaded.require_mesh(mesh)

    def test_mesh_hash_mismatch(self, tmp_path):
        _, ds = self.make_dataset()
        other = generate_rpp(76.8, 25.6, 25.6)
        with pytest.raises(MeshHashMismatchError, match="mesh hash mismatch"):
            ds.require_mesh(other)

    def test_truncated_file_reports_offset(self, tmp_path):
        _, ds = self.make_dataset()
        path = tmp_path / "data.ds"
        save_dataset(ds, path)
        blob = path.read_bytes()
        cut = tmp_path / "cut.ds"
        cut.write_bytes(blob[: len(blob) - 40])
        with pytest.raises(DatasetFormatError, match="at byte") as err:
            load_dataset(cut)
        assert err.value.byte_offset == len(blob) - 40

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ds"
        path.write_bytes(b"not a dataset at all")
        with pytest.raises(DatasetFormatError, match="magic"):
            load_dataset(path)

    def test_csv_export(self, tmp_path):
        _, ds = self.make_dataset()
        path = tmp_path / "data.csv"
        dataset_to_csv(ds, path)
        lines = path.read_text().splitlines()
        assert len(lines) == ds.m + 1
        assert lines[0].startswith("region,target_x")
        first = lines[1].split(",")
        assert first[0] == "end"
        assert float(first[1]) == ds.samples[0].target_disp[0]

    def test_empty_dataset_rejected(self):
        with pytest.raises(DatasetError, match="at least one sample"):
            Dataset(
                mesh_hash="x",
                free_ids=[0, 1],
                observation_ids=[0],
                mm_per_unit=256.0,
                samples=[],
            )

    def test_observation_must_be_free(self):
        with pytest.raises(DatasetError, match="free"):
            Dataset(
                mesh_hash="x",
                free_ids=[1, 2],
                observation_ids=[0],
                mm_per_unit=256.0,
                samples=[
                    DeformationSample(
                        region="r", target_disp=np.zeros(3), u_all=np.zeros(6)
                    )
                ],
            )

    def test_max_contact_displacement(self):
        ds = Dataset(
            mesh_hash="x",
            free_ids=[0],
            observation_ids=[0],
            mm_per_unit=256.0,
            samples=[
                DeformationSample("r", np.array([0.3, 0.4, 0.0]), np.zeros(3)),
                DeformationSample("r", np.array([0.1, 0.0, 0.0]), np.zeros(3)),
            ],
        )
        assert abs(ds.max_contact_displacement() - 0.5) <= 1e-15
