from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mgnflow.errors import InvalidArgument
from mgnflow.geomodel import (BOUNDARY_TYPE, FAULT, INJECTOR, INTERIOR, assign_cell_types,
                              exponential_covariance, make_geomodel, sample_log_perm_field,
                              sample_well_location)
from mgnflow.mesh import build_cartesian_mesh, build_voronoi_mesh, jittered_seeds


def points_mesh(centroids):
    return SimpleNamespace(centroids=np.asarray(centroids, float), n_cells=len(centroids))


def test_zero_std_gives_constant_50md():
    m = build_cartesian_mesh(4, 4, 1000.0, 1000.0)
    k = sample_log_perm_field(m, std_ln=0.0)
    np.testing.assert_array_equal(k, np.exp(3.912))
    assert k[0] == pytest.approx(50.0, abs=0.01)


def test_same_seed_same_field():
    m = build_cartesian_mesh(6, 6, 1000.0, 1000.0)
    np.testing.assert_array_equal(sample_log_perm_field(m, seed=4), sample_log_perm_field(m, seed=4))
    assert not np.array_equal(sample_log_perm_field(m, seed=4), sample_log_perm_field(m, seed=5))


def test_mean_of_log_perm_over_twenty_seeds():
    mesh = build_voronoi_mesh(jittered_seeds((1000.0, 1000.0), 22, 0.25, np.random.default_rng(1)),
                              (1000.0, 1000.0), refine_radius=0.0)
    n = mesh.n_cells
    assert n >= 480
    # effective sample size of the field mean under the declared covariance
    cov = exponential_covariance(mesh.centroids, 0.5, 200.0)
    var_mean = cov.sum() / n**2
    means = [np.log(sample_log_perm_field(mesh, seed=s)).mean() for s in range(20)]
    pooled_sd = np.sqrt(var_mean / 20)
    assert abs(np.mean(means) - 3.912) < 3 * pooled_sd
    # per-seed spread agrees with the covariance within a generous factor
    assert 0.4 < np.std(means, ddof=1) / np.sqrt(var_mean) < 1.8


def test_field_independent_of_cell_order():
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 1000, size=(60, 2))
    perm = rng.permutation(60)
    k = sample_log_perm_field(points_mesh(pts), seed=7)
    kp = sample_log_perm_field(points_mesh(pts[perm]), seed=7)
    np.testing.assert_array_equal(kp, k[perm])


def test_invalid_perm_arguments():
    m = build_cartesian_mesh(2, 2, 1.0, 1.0)
    with pytest.raises(InvalidArgument):
        sample_log_perm_field(m, std_ln=-1.0)
    with pytest.raises(InvalidArgument):
        sample_log_perm_field(m, corr_len=0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_well_inside_central_box(seed):
    x, y = sample_well_location((1000.0, 1000.0), seed)
    assert abs(x - 500) <= 100 and abs(y - 500) <= 100
    np.testing.assert_array_equal(sample_well_location((1000.0, 1000.0), seed), (x, y))


def test_well_draws_span_box():
    pts = np.array([sample_well_location((1000.0, 1000.0), s) for s in range(10_000)])
    span = pts.max(axis=0) - pts.min(axis=0)
    assert np.all(span >= 0.99 * 200) and np.all(span <= 200)


def test_well_box_too_large():
    with pytest.raises(InvalidArgument):
        sample_well_location((150.0, 1000.0), 0)


def test_single_cell_is_injector():
    types = assign_cell_types(build_cartesian_mesh(1, 1, 1.0, 1.0), 0)
    np.testing.assert_array_equal(types, [[0, 1, 0, 0]])


def test_two_cells_injector_and_boundary():
    types = assign_cell_types(build_cartesian_mesh(2, 1, 2.0, 1.0), 0)
    assert types[0, INJECTOR] == 1 and types[1, BOUNDARY_TYPE] == 1
    np.testing.assert_array_equal(types.sum(axis=1), 1)


def test_fault_beats_boundary():
    m = build_cartesian_mesh(3, 1, 3.0, 1.0, faults=[((2.0, -1.0), (2.0, 2.0))])
    types = assign_cell_types(m, 0)
    # cells 1 and 2 touch the sealed face at x = 2 and the domain edge
    assert types[1, FAULT] == 1 and types[2, FAULT] == 1
    assert types[0, INJECTOR] == 1


def test_interior_cells():
    types = assign_cell_types(build_cartesian_mesh(3, 3, 3.0, 3.0), 0)
    assert types[4, INTERIOR] == 1
    assert types[:, INJECTOR].sum() == 1


def test_invalid_well_cell():
    with pytest.raises(InvalidArgument):
        assign_cell_types(build_cartesian_mesh(2, 1, 2.0, 1.0), 5)


def test_types_equivariant_under_relabeling(desk_realizations):
    r = desk_realizations[0]
    m, geo = r.mesh, r.geomodel
    types = geo.cell_type
    # relabeling cells: classification is a function of per-cell predicates only
    perm = np.random.default_rng(0).permutation(m.n_cells)
    inv = np.argsort(perm)
    boundary = np.isin(np.arange(m.n_cells), m.boundary_cells())
    fault = np.isin(np.arange(m.n_cells), m.fault_cells())
    kind = np.where(fault, FAULT, np.where(boundary, BOUNDARY_TYPE, INTERIOR))
    kind[geo.well_cell] = INJECTOR
    relabeled = np.eye(4)[kind[perm]]
    np.testing.assert_array_equal(relabeled, types[perm])
    assert np.array_equal(relabeled[inv], types)


def test_geomodel_validation(desk_realizations):
    r = desk_realizations[0]
    with pytest.raises(InvalidArgument):
        make_geomodel(r.mesh, r.geomodel.well_point, -np.ones(r.mesh.n_cells))
    with pytest.raises(InvalidArgument):
        make_geomodel(r.mesh, r.geomodel.well_point, np.ones(r.mesh.n_cells), porosity=1.0)
    geo = r.geomodel
    assert geo.cell_type[geo.well_cell, INJECTOR] == 1
    poly = r.mesh.polygons[geo.well_cell]
    assert poly[:, 0].min() <= geo.well_point[0] <= poly[:, 0].max()
