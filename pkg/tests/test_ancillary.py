"""Contour clouds, partition checks, pivot back-solve, inversion demo."""

import json
import math

import numpy as np
import pytest

from ancontour import (
    GridSpec,
    InvalidDimensionError,
    InvalidParameterError,
    SingularInformationError,
    UnsupportedFamilyError,
    build_contour,
    cauchy_inversion_demo,
    compare_exact,
    contour_min_distance,
    exact_label,
    fit_mle,
    make_circle,
    make_location_scale,
    partition_check,
    severini_pivot,
    severini_pivot_check,
)


def test_grid_spec_parse_and_validation():
    grid = GridSpec.parse("2.5,21")
    assert grid.half_width == 2.5
    assert grid.points_per_axis == 21
    assert grid.standardized
    with pytest.raises(InvalidParameterError):
        GridSpec.parse("2.5")
    with pytest.raises(InvalidParameterError):
        GridSpec(half_width=-1.0)
    with pytest.raises(InvalidParameterError):
        GridSpec(points_per_axis=2)


def test_grid_is_row_major_with_exact_center():
    model = make_location_scale(4)
    rng = np.random.default_rng(81)
    y0 = rng.normal(0.5, 1.2, 4)
    grid = GridSpec(half_width=2.0, points_per_axis=5)
    cloud = build_contour(model, y0, grid)
    center = cloud.offsets_std[cloud.center_index]
    np.testing.assert_array_equal(center, np.zeros(2))
    # axis order: second coordinate varies fastest
    kept = cloud.offsets_std
    firsts = kept[kept[:, 0] == kept[0, 0]]
    assert np.all(np.diff(firsts[:, 1]) > 0)
    # the center row is the fitted point itself
    np.testing.assert_allclose(cloud.points[cloud.center_index],
                               model.quantile(cloud.fit.x_hat,
                                              cloud.fit.theta_hat),
                               atol=1e-14)


def test_circle_contour_is_shifted_unit_circle():
    """Unit-variance circle: the cloud is y = x_hat + u(angle) exactly."""
    model = make_circle(1.0, n=2, variance_scale=1.0)
    y0 = np.array([1.2, 0.0])
    cloud = build_contour(model, y0, GridSpec(3.0, 41))
    np.testing.assert_allclose(cloud.fit.theta_hat, [0.0], atol=1e-12)
    np.testing.assert_allclose(cloud.fit.x_hat, [0.2, 0.0], atol=1e-12)
    radii = np.linalg.norm(cloud.points - cloud.fit.x_hat, axis=1)
    np.testing.assert_allclose(radii, 1.0, atol=1e-12)
    angles = cloud.offsets[:, 0]
    expected = np.column_stack([np.cos(angles), np.sin(angles)])
    np.testing.assert_allclose(cloud.points - cloud.fit.x_hat, expected,
                               atol=1e-12)
    assert cloud.dropped_out_of_domain == 0


def test_cloud_tangent_matches_frame():
    """Five-point stencil across cloud rows reproduces the scaled velocity."""
    model = make_circle(1.0, n=2, variance_scale=1.0)
    y0 = np.array([1.2, 0.0])
    cloud = build_contour(model, y0, GridSpec(0.02, 5))
    h = 0.01
    rows = cloud.points
    fd = (-rows[4] + 8.0 * rows[3] - 8.0 * rows[1] + rows[0]) / (12.0 * h)
    scaled_velocity = cloud.frame.velocity @ cloud.standardization.scales
    np.testing.assert_allclose(fd, scaled_velocity[:, 0], atol=1e-6)
    direction = fd / np.linalg.norm(fd)
    np.testing.assert_allclose(direction, [0.0, 1.0], atol=1e-6)


def test_location_scale_cloud_lies_on_positive_ray():
    """Every cloud point is m 1 + s zhat with s > 0: the configuration is fixed."""
    model = make_location_scale(4)
    rng = np.random.default_rng(83)
    y0 = rng.normal(1.0, 2.0, 4)
    cloud = build_contour(model, y0, GridSpec(3.0, 9))
    zhat = cloud.fit.x_hat
    design = np.column_stack([np.ones(4), zhat])
    for q in cloud.points:
        coef, *_ = np.linalg.lstsq(design, q, rcond=None)
        resid = q - design @ coef
        assert np.max(np.abs(resid)) < 1e-10
        assert coef[1] > 0.0
    # sigma stays positive because offending grid rows are dropped
    assert cloud.dropped_out_of_domain > 0
    assert len(cloud.points) + cloud.dropped_out_of_domain == 81


def test_exact_label_families():
    model = make_location_scale(5)
    rng = np.random.default_rng(87)
    y = rng.normal(0, 1, 5)
    fit = fit_mle(model, y)
    np.testing.assert_allclose(exact_label(model, y),
                               (y - fit.theta_hat[0]) / fit.theta_hat[1],
                               atol=1e-12)
    circ = make_circle(1.0, n=4)
    label = exact_label(circ, np.array([0.6, 0.8, 0.3, -0.1]))
    np.testing.assert_allclose(label, [1.0, 0.3, -0.1], atol=1e-15)
    from ancontour import make_synthetic_curved
    with pytest.raises(UnsupportedFamilyError):
        exact_label(make_synthetic_curved(8), np.zeros(8))


def test_compare_exact_location_scale_spread():
    model = make_location_scale(6)
    rng = np.random.default_rng(89)
    y0 = rng.normal(-0.5, 0.8, 6)
    cloud = build_contour(model, y0, GridSpec(2.5, 11))
    report = compare_exact(model, cloud)
    assert report.label_spread < 1e-12
    assert report.radius_contour is None


def test_compare_exact_circle_radii():
    """Contour curvature radius is rho; the exact contour radius is |y0|."""
    model = make_circle(1.0, n=2, variance_scale=1.0)
    cloud = build_contour(model, np.array([1.2, 0.0]), GridSpec(3.0, 41))
    report = compare_exact(model, cloud)
    assert abs(report.radius_contour - 1.0) < 1e-8
    assert abs(report.radius_exact - 1.2) < 1e-15
    assert report.label_spread > 0.01  # the exact radius moves along the cloud


def test_partition_location_scale_exact():
    model = make_location_scale(5)
    rng = np.random.default_rng(91)
    y0 = rng.normal(0.3, 1.1, 5)
    report = partition_check(model, y0, np.array([1.0, 0.5]),
                             GridSpec(2.0, 7))
    assert report.discrepancy <= 1e-10
    assert report.theta_gap <= 1e-10
    np.testing.assert_allclose(report.theta_hat1,
                               report.theta_hat0 + report.t1_raw, atol=1e-10)


def test_partition_circle_exact_on_circle():
    model = make_circle(1.0, n=2, variance_scale=1.0 / 64.0)
    y0 = np.array([1.0, 0.0])
    report = partition_check(model, y0, np.array([1.0]), GridSpec(3.0, 21))
    assert report.discrepancy <= 1e-10
    assert report.theta_gap <= 1e-10


def test_partition_circle_positive_off_circle():
    """Away from the exact shell the rebuilt contour genuinely differs."""
    model = make_circle(1.0, n=2, variance_scale=1.0 / 64.0)
    y0 = np.array([1.2, 0.0])
    report = partition_check(model, y0, np.array([1.0]), GridSpec(3.0, 21))
    assert report.discrepancy > 1e-4


def test_partition_guards():
    model = make_location_scale(4)
    y0 = np.array([0.1, -0.4, 1.2, 0.6])
    with pytest.raises(InvalidParameterError):
        partition_check(model, y0, np.array([4.0, 0.0]))
    with pytest.raises(InvalidDimensionError):
        partition_check(model, y0, np.array([1.0]))


def test_contour_min_distance_recovers_offset():
    model = make_circle(1.0, n=2, variance_scale=1.0)
    fit = fit_mle(model, np.array([1.2, 0.0]))
    for eps in (0.05, 0.01, 0.001):
        q = fit.x_hat + (1.0 + eps) * np.array([math.cos(0.4), math.sin(0.4)])
        dist, t_at = contour_min_distance(model, fit, q, np.array([0.3]))
        assert abs(dist - eps) < 1e-9
        assert abs(t_at[0] - 0.4) < 1e-6
    on_curve = fit.x_hat + np.array([math.cos(-0.7), math.sin(-0.7)])
    dist, _ = contour_min_distance(model, fit, on_curve, np.array([-0.5]))
    assert dist < 1e-10


def test_severini_pivot_values():
    model = make_circle(1.0, n=3, variance_scale=1.0 / 36.0)
    y = np.array([1.25, 0.0, 0.15])
    pivot = severini_pivot(model, y)
    np.testing.assert_allclose(pivot, [0.25, 0.0, 0.15], atol=1e-14)
    with pytest.raises(UnsupportedFamilyError):
        severini_pivot(make_location_scale(3), y)


def test_severini_unique_pre_image():
    model = make_circle(1.0, n=3, variance_scale=1.0 / 36.0)
    y0 = np.array([1.25, 0.0, 0.15])
    report = severini_pivot_check(model, y0)
    assert report.unique_in_neighborhood
    assert not report.degenerate
    assert report.solution_set_dim == 0
    assert report.max_gap_to_y0 <= 1e-8
    assert len(report.solutions) == 1
    np.testing.assert_allclose(report.solutions[0], y0, atol=1e-8)
    # the second global pre-image sits across the center, 2 rho away
    np.testing.assert_allclose(report.antipodal_candidate, [-0.75, 0.0, 0.15],
                               atol=1e-12)
    gap = np.linalg.norm(report.antipodal_candidate - y0)
    assert abs(gap - 2.0) < 1e-12


def test_severini_degenerate_shell():
    model = make_circle(1.0, n=3, variance_scale=1.0 / 36.0)
    report = severini_pivot_check(model, np.array([1.0, 0.0, 0.15]))
    assert report.degenerate
    assert report.solution_set_dim == 1
    assert not report.unique_in_neighborhood


def test_severini_family_guard():
    with pytest.raises(UnsupportedFamilyError):
        severini_pivot_check(make_circle(1.0, n=2), np.array([1.2, 0.0]))
    with pytest.raises(UnsupportedFamilyError):
        severini_pivot_check(make_location_scale(3), np.zeros(3))


def test_inversion_demo_values():
    report = cauchy_inversion_demo()
    assert report.component_count == 3
    assert report.line_segment_count == 3
    np.testing.assert_allclose(report.theta_hat, [0.5, 1.5], atol=1e-7)
    np.testing.assert_allclose(np.sort(report.zhat), [-1.0, 1.0], atol=1e-7)
    pts = {tuple(np.round(row, 9)) for row in report.line_excluded_points}
    assert pts == {(0.0, 1.0), (-1.0, 0.0)}


def test_inversion_demo_resolution_stable():
    for resolution in (300, 640):
        report = cauchy_inversion_demo(resolution=resolution)
        assert report.component_count == 3
        assert report.line_segment_count == 3


def test_inversion_demo_guards():
    with pytest.raises(InvalidDimensionError):
        cauchy_inversion_demo(ytilde0=(1.0, 2.0, 3.0))
    with pytest.raises(InvalidParameterError):
        cauchy_inversion_demo(resolution=8)
    with pytest.raises(SingularInformationError):
        cauchy_inversion_demo(ytilde0=(1.0, 1.0))


def test_cloud_csv_and_json_formats():
    model = make_circle(1.0, n=2, variance_scale=0.5)
    cloud = build_contour(model, np.array([0.9, 0.5]), GridSpec(1.0, 5))
    csv_text = cloud.to_csv()
    lines = csv_text.strip().split("\n")
    assert lines[0] == "t_1,y_1,y_2"
    assert len(lines) == 1 + len(cloud.points)
    first = [float(v) for v in lines[1].split(",")]
    np.testing.assert_allclose(first, np.concatenate([cloud.offsets[0],
                                                      cloud.points[0]]))
    payload = json.loads(cloud.to_json())
    assert payload["family"] == "circle2d"
    pts = np.array(payload["points"]["data"]).reshape(payload["points"]["dims"])
    np.testing.assert_array_equal(pts, cloud.points)


def test_cloud_rebuild_is_bit_identical():
    model = make_location_scale(5)
    rng = np.random.default_rng(93)
    y0 = rng.normal(0, 1, 5)
    a = build_contour(model, y0, GridSpec(2.0, 9))
    b = build_contour(model, y0, GridSpec(2.0, 9))
    assert a.to_json() == b.to_json()
    assert a.to_csv() == b.to_csv()


def test_cloud_workers_do_not_change_output():
    model = make_circle(1.0, n=2, variance_scale=1.0)
    y0 = np.array([1.2, 0.0])
    serial = build_contour(model, y0, GridSpec(3.0, 81), workers=1)
    threaded = build_contour(model, y0, GridSpec(3.0, 81), workers=3)
    assert serial.points.tobytes() == threaded.points.tobytes()
    assert serial.to_json() == threaded.to_json()


def test_report_json_dicts_are_serializable():
    model = make_circle(1.0, n=3, variance_scale=1.0 / 36.0)
    report = severini_pivot_check(model, np.array([1.25, 0.0, 0.15]))
    text = json.dumps(report.to_json_dict(), sort_keys=True)
    assert json.loads(text)["unique_in_neighborhood"] is True
    demo = cauchy_inversion_demo(resolution=200)
    assert json.loads(json.dumps(demo.to_json_dict()))["component_count"] == 3
