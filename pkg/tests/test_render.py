import numpy as np
import pytest
import scipy.sparse as sp

from mmhaptic.errors import ConfigurationError, CoverageError, DimensionError
from mmhaptic.field import CylindricalGrid, PotentialField, build_grid
from mmhaptic.geometry import TWO_PI, Pose
from mmhaptic.phantom import PhantomSpec, phantom_surface, probe_pose_at
from mmhaptic.render import (MeasurementBatch, PointShell, ProbeSpec, QueryCounter, append_measurement,
                             batch_from_records, build_probe_pointshell, contact_rows, render_step)
from mmhaptic.scanlog import ScanRecord

from oracles import naive_wrench, random_contact_poses


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


# pointshell


@pytest.mark.parametrize("shape", ["sphere", "box", "rounded_box"])
def test_pointshell_normals_point_inward(shape):
    s = build_probe_pointshell(ProbeSpec(shape=shape, num_points=500))
    assert np.allclose(np.linalg.norm(s.normals, axis=1), 1.0)
    # inward: normals point back towards the centre
    assert np.all(np.einsum("ij,ij->i", s.points, s.normals) < 0)
    assert np.allclose(s.moments, np.cross(s.points, s.normals))


def test_sphere_shell_on_its_radius():
    s = build_probe_pointshell(ProbeSpec(shape="sphere", half_extents=(0.02, 0.02, 0.02), num_points=300))
    assert len(s) == 300
    assert np.allclose(np.linalg.norm(s.points, axis=1), 0.02)


def test_rounded_box_within_box():
    spec = ProbeSpec()
    s = build_probe_pointshell(spec)
    assert np.all(np.abs(s.points) <= np.array(spec.half_extents) + 1e-12)
    assert abs(len(s) - spec.num_points) / spec.num_points < 0.1


def test_pointshell_validation():
    with pytest.raises(ConfigurationError):
        build_probe_pointshell(ProbeSpec(shape="cone"))
    with pytest.raises(ConfigurationError):
        build_probe_pointshell(ProbeSpec(rounding=0.02))
    with pytest.raises(ConfigurationError):
        PointShell(np.zeros((2, 3)), np.array([[1.0, 0, 0], [0, 2.0, 0]]))
    with pytest.raises(DimensionError):
        PointShell(np.zeros((2, 3)), np.array([[1.0, 0, 0]]))


# rendering against the per-point oracle


def test_render_matches_naive_oracle(coarse_phantom, small_shell):
    ph = coarse_phantom
    rng = np.random.default_rng(7)
    contacts = 0
    for pose in random_contact_poses(ph.surface, 25, rng):
        res = render_step(small_shell, pose, ph.grid, ph.truth, ph.surface)
        f, tau, bins = naive_wrench(small_shell, pose, ph.grid, ph.truth.values, ph.surface)
        assert dict(res.occupied) == bins
        if bins:
            contacts += 1
            assert rel_err(res.force, f) <= 1e-12
            assert rel_err(res.torque, tau) <= 1e-12
        else:
            assert np.array_equal(res.force, np.zeros(3)) and np.array_equal(res.torque, np.zeros(3))
    assert contacts >= 10


def test_rows_reproduce_wrench(coarse_phantom, small_shell):
    ph = coarse_phantom
    pose = probe_pose_at(ph.surface, 0.3, 0.12, 0.01, 0.04)
    res = render_step(small_shell, pose, ph.grid, ph.truth, ph.surface)
    assert res.N.shape == (3, ph.grid.size) and res.W.shape == (3, ph.grid.size)
    assert np.array_equal(res.N @ ph.truth.values, res.force)
    # the rows do not depend on the field
    other = render_step(small_shell, pose, ph.grid, ph.truth.scaled(-2.0), ph.surface)
    assert (res.N != other.N).nnz == 0
    assert np.allclose(other.force, -2.0 * res.force, rtol=1e-14)


def test_no_contact_gives_zero_wrench(coarse_phantom, small_shell):
    ph = coarse_phantom
    pose = probe_pose_at(ph.surface, 1.0, 0.12, -0.02, 0.04)
    res = render_step(small_shell, pose, ph.grid, ph.truth, ph.surface)
    assert res.occupied == []
    assert np.array_equal(res.force, np.zeros(3)) and np.array_equal(res.torque, np.zeros(3))
    assert res.N.nnz == 0 and res.W.nnz == 0


def test_averaged_normals_are_not_renormalised():
    # two points with orthogonal normals in one voxel average to length 1/√2
    g = CylindricalGrid(0.1, 0.1, 3, TWO_PI / 4, 4, 0.0, 1.0 / 3, 3)
    spec = PhantomSpec((0.35, 0.35), 1.0, num_angles=8, slice_pitch=0.25)
    surface = phantom_surface(spec)
    shell = PointShell(np.array([[0.15, 0.01, 0.5], [0.16, 0.02, 0.5]]), np.array([[-1.0, 0, 0], [0, -1.0, 0]]))
    values = np.zeros(g.size)
    values[g.flat(0, 0, 1)] = 2.0
    res = render_step(shell, Pose.identity(), g, PotentialField(g, values), surface)
    assert res.occupied == [(g.flat(0, 0, 1), 2)]
    assert np.allclose(res.force, [-1.0, -1.0, 0.0])
    assert np.isclose(np.linalg.norm(res.N.toarray()[:, g.flat(0, 0, 1)]), np.sqrt(0.5))


def test_coverage_error_when_inside_point_leaves_grid():
    g = CylindricalGrid(0.1, 0.1, 3, TWO_PI / 4, 4, 0.0, 1.0 / 3, 3)
    surface = phantom_surface(PhantomSpec((0.35, 0.35), 1.0, num_angles=8, slice_pitch=0.25))
    shell = PointShell(np.array([[0.05, 0.0, 0.5]]), np.array([[-1.0, 0, 0]]))  # below r0
    with pytest.raises(CoverageError):
        render_step(shell, Pose.identity(), g, PotentialField(g, np.zeros(g.size)), surface)


def test_points_outside_grid_and_body_are_ignored():
    g = CylindricalGrid(0.1, 0.1, 3, TWO_PI / 4, 4, 0.0, 1.0 / 3, 3)
    surface = phantom_surface(PhantomSpec((0.35, 0.35), 1.0, num_angles=8, slice_pitch=0.25))
    shell = PointShell(np.array([[2.0, 0.0, 0.5]]), np.array([[-1.0, 0, 0]]))
    res = render_step(shell, Pose.identity(), g, PotentialField(g, np.ones(g.size)), surface)
    assert res.occupied == []


# voxel query count


@pytest.mark.parametrize("dr", [0.02, 0.01, 0.005])
def test_query_count_equals_points_for_any_grid(dr, small_shell):
    surface = phantom_surface(PhantomSpec((0.15, 0.11), 0.25, num_angles=60, slice_pitch=0.01))
    grid = build_grid(surface, (dr, TWO_PI / 60, 0.01))
    counter = QueryCounter()
    rng = np.random.default_rng(0)
    poses = random_contact_poses(surface, 5, rng)
    for pose in poses:
        contact_rows(small_shell, pose, grid, surface, counter)
    assert counter.renders == 5
    assert counter.voxel_queries == 5 * len(small_shell)


# measurement batches


def test_batch_stacks_rows_and_measurements(coarse_phantom, small_shell):
    ph = coarse_phantom
    batch = MeasurementBatch(ph.grid.size)
    poses = [probe_pose_at(ph.surface, 0.0, z, 0.01, 0.04) for z in (0.1, 0.12, 0.14)]
    results = [render_step(small_shell, p, ph.grid, ph.truth, ph.surface) for p in poses]
    for i, res in enumerate(results):
        append_measurement(batch, res, [i, 0, 0], [0, i, 0])
    assert batch.T == 3 and batch.N.shape == (9, ph.grid.size)
    assert np.array_equal(batch.f, [0, 0, 0, 1, 0, 0, 2, 0, 0])
    assert np.allclose(batch.N @ ph.truth.values, np.concatenate([r.force for r in results]))
    sub = batch.subset([2])
    assert sub.T == 1 and np.array_equal(sub.f, [2, 0, 0])
    assert batch.contact_count() == 3


def test_empty_batch_shapes():
    b = MeasurementBatch(10)
    assert b.T == 0 and b.N.shape == (0, 10) and b.f.shape == (0,)


def test_batch_rejects_wrong_width():
    with pytest.raises(DimensionError):
        MeasurementBatch(10).append(sp.csr_matrix((3, 9)), sp.csr_matrix((3, 10)), np.zeros(3), np.zeros(3))


def test_batch_from_records_uses_logged_wrench(coarse_phantom, small_shell):
    ph = coarse_phantom
    pose = probe_pose_at(ph.surface, 0.0, 0.12, 0.01, 0.04)
    rec = ScanRecord(0.0, pose, np.array([1.0, 2, 3]), np.array([4.0, 5, 6]))
    b = batch_from_records([rec], small_shell, ph.grid, ph.surface)
    assert np.array_equal(b.f, [1, 2, 3]) and np.array_equal(b.tau, [4, 5, 6])
    assert b.N.nnz > 0


def test_batch_from_records_reports_sample_index(coarse_phantom):
    ph = coarse_phantom
    deep = PointShell(np.array([[0.0, 0.0, 0.0]]), np.array([[0.0, 0.0, -1.0]]))
    far = Pose(np.eye(3), np.array([5.0, 0.0, 0.12]))
    inside_but_off_grid = Pose(np.eye(3), np.array([0.0, 0.0, 0.12]))  # on the axis, below r0
    recs = [ScanRecord(0.0, far, np.zeros(3), np.zeros(3)), ScanRecord(0.05, inside_but_off_grid, np.zeros(3),
                                                                        np.zeros(3))]
    with pytest.raises(CoverageError) as info:
        batch_from_records(recs, deep, ph.grid, ph.surface)
    assert info.value.sample_index == 1
