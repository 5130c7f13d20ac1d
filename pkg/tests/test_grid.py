import math

import numpy as np
import pytest

from pxqlap.grid import Domain, DomainError, Field, build_grid, boundary_strip, integrate


def test_interval_nodes_and_distance(unit):
    g = build_grid(unit, 5)
    np.testing.assert_array_equal(g.x, [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_array_equal(g.dist.values, [0, 0.25, 0.5, 0.25, 0])
    assert g.boundary_mask.tolist() == [True, False, False, False, True]


def test_disk_center_distance():
    g = build_grid(Domain.disk(0, 0, 1), 9)
    k = np.flatnonzero((g.x == 0) & (g.y == 0))[0]
    assert g.dist.values[k] == 1.0


def test_rectangle_distance():
    g = build_grid(Domain.rectangle(0, 1, 0, 2), 5)
    k = np.flatnonzero(np.isclose(g.x, 0.5) & np.isclose(g.y, 1.0))[0]
    assert g.dist.values[k] == pytest.approx(0.5)


@pytest.mark.parametrize("dom", [Domain.interval(0, 1), Domain.rectangle(0, 1, 0, 2), Domain.disk(0.5, 0.5, 1)])
def test_distance_invariants(dom):
    g = build_grid(dom, 33)
    d = g.dist.values
    assert np.all(d[g.boundary_mask] == 0)
    assert np.all(d[g.interior] > 0)
    if g.dim == 1:
        assert np.abs(np.diff(d)).max() <= g.h + 1e-15
    else:
        D = d.reshape(g.shape[1], g.shape[0])
        assert np.abs(np.diff(D, axis=0)).max() <= g.hy + 1e-12
        assert np.abs(np.diff(D, axis=1)).max() <= g.hx + 1e-12


@pytest.mark.parametrize("bounds", [(1, 1), (0, math.inf)])
def test_degenerate_interval_rejected(bounds):
    with pytest.raises(DomainError):
        Domain("interval", bounds)


def test_degenerate_disk_and_small_n(unit):
    with pytest.raises(DomainError):
        Domain.disk(0, 0, 0)
    with pytest.raises(DomainError):
        build_grid(unit, 2)


def test_field_length_checked(unit):
    g = build_grid(unit, 5)
    with pytest.raises(ValueError):
        Field(g, np.zeros(4))


def test_strip_examples(unit):
    g = build_grid(unit, 11)
    np.testing.assert_allclose(g.x[boundary_strip(g, 0.15)], [0.1, 0.9])
    assert boundary_strip(g, 0.0).size == 0
    g = build_grid(unit, 101)
    s = boundary_strip(g, 0.05)
    # enumerate nodes with d < 0.05 directly
    expected = [i for i in range(101) if 0 < min(i, 100 - i) < 5]
    assert s.tolist() == expected and len(s) == 8


def test_strip_nested_and_warns(unit, caplog):
    g = build_grid(unit, 41)
    for d1, d2 in [(0.01, 0.05), (0.05, 0.2), (0.1, 0.1)]:
        assert set(boundary_strip(g, d1)) <= set(boundary_strip(g, d2))
    boundary_strip(g, 0.6)
    assert "whole interior" in caplog.text


def test_integrate_constant_and_affine():
    for dom, n in [(Domain.interval(0, 1), 17), (Domain.rectangle(0, 1, 0, 2), 9)]:
        g = build_grid(dom, n)
        area = 1.0 if g.dim == 1 else 2.0
        assert integrate(Field(g, np.ones(g.size))) == pytest.approx(area, abs=1e-14)
        f = 3.0 * g.x - 1.0 if g.dim == 1 else 3.0 * g.x - 2.0 * g.y + 1.0
        exact = 0.5 if g.dim == 1 else (3.0 * 0.5 * 2 - 2.0 * 2.0 + 2.0)
        assert integrate(Field(g, f)) == pytest.approx(exact, abs=1e-13)


def test_integrate_singular_weight(unit):
    g = build_grid(unit, 65)
    one = Field(g, np.ones(g.size))
    # 2 * int_0^{1/2} t^{-1/2} dt
    assert integrate(one, -0.5) == pytest.approx(2.0 * math.sqrt(2.0), rel=1e-13)
    assert math.isfinite(integrate(one, -0.999))
    with pytest.raises(ValueError):
        integrate(one, -1.0)


@pytest.mark.parametrize("a", [-0.2, -0.5, -0.8])
def test_singular_integral_converges_on_rectangle(a):
    # int over [0,1]^2 of d^a: the four triangles nearest each side each give
    # int_0^{1/2} t^a (1 - 2t) dt
    exact = 4.0 * (0.5 ** (a + 1) / (a + 1) - 2.0 * 0.5 ** (a + 2) / (a + 2))
    errs = []
    for n in (9, 17, 33, 65):
        g = build_grid(Domain.rectangle(0, 1, 0, 1), n)
        errs.append(abs(integrate(Field(g, np.ones(g.size)), a) - exact))
    assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))


def test_disk_area_converges():
    errs = []
    for n in (33, 65, 129):
        g = build_grid(Domain.disk(0, 0, 1), n)
        errs.append(abs(integrate(Field(g, np.ones(g.size))) - math.pi))
    assert errs[-1] < errs[0] and errs[-1] < 1e-3


def test_strip_plus_bulk_weights(unit):
    for dom, n in [(unit, 57), (Domain.rectangle(0, 1, 0, 1), 21), (Domain.disk(0, 0, 1), 31)]:
        g = build_grid(dom, n)
        W = g.weights(-0.3)
        parts = g.weights(-0.3, "strip", 0.113) + g.weights(-0.3, "bulk", 0.113)
        np.testing.assert_allclose(parts, W, rtol=1e-10, atol=1e-14)


def test_csv_round_trip(unit, tmp_path):
    g = build_grid(unit, 5)
    g.dist.to_csv(tmp_path / "d.csv", "d")
    rows = (tmp_path / "d.csv").read_text().splitlines()
    assert rows[0] == "x,d" and len(rows) == 6
    assert [float(r.split(",")[1]) for r in rows[1:]] == [0, 0.25, 0.5, 0.25, 0]


def test_padded_contains_nodes(unit):
    g = build_grid(unit, 33)
    big, idx = g.padded(0.25)
    np.testing.assert_allclose(big.x[idx], g.x, atol=1e-14)
    assert big.domain.bounds[0] < 0 and big.domain.bounds[1] > 1
