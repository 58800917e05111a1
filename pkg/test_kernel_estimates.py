import math

import numpy as np
import pytest

from lattice.lattice import Cube, LatticePoint
from model.kernel_estimates import (BoundQuery, BoundRow, lemma_bound, matrix_power_entry, matrix_power_tail,
                                    power_columns, verify_bound)
from model.model import InteractionKernel

ONE_MINUS_INV_E = 1.0 - math.exp(-1.0)


def test_bound_with_no_steps():
    assert lemma_bound(BoundQuery(c=0.0, n=0, d=1, dist=0, eta=0.0)) == pytest.approx(1.0 / ONE_MINUS_INV_E, rel=1e-12)
    assert lemma_bound(BoundQuery(c=2.0, n=0, d=3, dist=3, eta=1.0)) == pytest.approx(
        math.exp(-3.0) / ONE_MINUS_INV_E, rel=1e-12)


def test_bound_with_one_step():
    series = 2.0 * math.exp(-1.0) / ONE_MINUS_INV_E ** 2
    value = lemma_bound(BoundQuery(c=0.0, n=1, d=1, dist=1, eta=0.731))
    assert value == pytest.approx(0.731 * series, rel=1e-12)
    assert value == pytest.approx(1.3460, abs=1e-4)


def test_bound_is_monotone_in_distance():
    values = [lemma_bound(BoundQuery(c=1.0, n=2, d=2, dist=r, eta=0.5)) for r in range(12)]
    assert all(a >= b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("field,value", [("n", -1), ("n", 1.5), ("c", -0.1), ("eta", -1.0), ("d", 0), ("dist", -2)])
def test_bound_query_rejects_bad_arguments(field, value):
    args = dict(c=0.0, n=1, d=1, dist=0, eta=0.0)
    args[field] = value
    with pytest.raises(ValueError):
        BoundQuery(**args)


def test_zero_power_is_the_identity():
    kernel = InteractionKernel.exp_decay(1, 1.0)
    region = Cube(1, 3)
    assert matrix_power_entry(kernel, 0.7, 0, LatticePoint.of(1), LatticePoint.of(1), region) == 1.0
    assert matrix_power_entry(kernel, 0.7, 0, LatticePoint.of(1), LatticePoint.of(2), region) == 0.0


def test_square_of_the_unit_kernel_on_the_diagonal():
    kernel = InteractionKernel.exp_decay(1, 1.0)
    entry = matrix_power_entry(kernel, 0.0, 2, LatticePoint.of(0), LatticePoint.of(0), Cube(1, 2))
    assert entry == pytest.approx(2.0 / (math.e ** 2 - 1.0), rel=1e-9)


def test_zero_kernel_leaves_the_diagonal():
    kernel = InteractionKernel.zero(1)
    region = Cube(1, 2)
    assert matrix_power_entry(kernel, 1.0, 3, LatticePoint.of(0), LatticePoint.of(0), region) == 1.0
    assert matrix_power_entry(kernel, 1.0, 3, LatticePoint.of(1), LatticePoint.of(0), region) == 0.0


def test_sites_outside_the_region_are_rejected():
    kernel = InteractionKernel.exp_decay(1, 1.0)
    with pytest.raises(ValueError):
        matrix_power_entry(kernel, 0.0, 1, LatticePoint.of(5), LatticePoint.of(0), Cube(1, 2))
    with pytest.raises(ValueError):
        matrix_power_entry(kernel, 0.0, 1, LatticePoint.of(0), LatticePoint.of(5), Cube(1, 2))


def test_finite_range_powers_match_dense_matrix_powers():
    kernel = InteractionKernel.finite_range(1, 1.0, 1)
    region, big = Cube(1, 3), Cube(1, 10)
    M = 1.0 * np.eye(big.size) + kernel.matrix(big)
    positions = region.positions_in(big)
    j = LatticePoint.of(-1)
    columns = power_columns(kernel, 1.0, 3, j, region)
    for n in range(4):
        dense = np.linalg.matrix_power(M, n)[positions, big.index_of(j)]
        assert np.allclose(columns.values[n], dense, rtol=1e-12, atol=1e-15)


def test_powers_compose():
    # (M^2)_ij = sum_k M_ik M_kj, summed over a cube wide enough to hold the mass
    kernel = InteractionKernel.exp_decay(1, 0.8)
    c = 0.5
    region = Cube(1, 40)
    i, j = LatticePoint.of(1), LatticePoint.of(-2)
    first = power_columns(kernel, c, 1, j, region).values[1]
    row = np.array([matrix_power_entry(kernel, c, 1, i, region.point(k), region) for k in range(region.size)])
    assert matrix_power_entry(kernel, c, 2, i, j, region) == pytest.approx(row @ first, rel=1e-9)


def test_tail_bounds_the_missing_mass():
    kernel = InteractionKernel.exp_decay(1, 1.0)
    tail = matrix_power_tail(kernel, 0.0, 2, LatticePoint.of(0), Cube(1, 2))
    assert 0.0 <= tail < 1e-9


@pytest.mark.parametrize("beta", [0.5, 1.0])
def test_bound_holds_in_one_dimension(beta):
    report = verify_bound(InteractionKernel.exp_decay(1, beta), [0.0, 1.0], 3, Cube(1, 6), progress=False)
    assert report.passed
    assert report.max_ratio <= 1.0
    assert len(report.rows) == 2 * 13 * 13 * 4
    assert "PASS" in report.summary()


def test_bound_holds_on_a_small_square():
    report = verify_bound(InteractionKernel.exp_decay(2, 1.0), [0.5], 2, Cube(2, 2), progress=False)
    assert report.passed
    assert report.to_dict()["rows"] == 25 * 25 * 3


@pytest.mark.parametrize("d, N, n_max", [(1, 20, 4), (2, 6, 3)])
def test_bound_holds_on_the_full_regions(d, N, n_max):
    region = Cube(d, N)
    report = verify_bound(InteractionKernel.exp_decay(d, 1.0), [0.0, 1.0], n_max, region, workers=4, progress=False)
    assert report.passed
    assert report.max_ratio <= 1.0
    assert len(report.rows) == region.size ** 2 * (n_max + 1) * 2


def test_zero_kernel_passes():
    report = verify_bound(InteractionKernel.zero(1), [0.0, 1.0], 2, Cube(1, 2), progress=False)
    assert report.passed
    diagonal = [r for r in report.rows if r.i == r.j and r.c == 1.0]
    assert all(r.exact == 1.0 for r in diagonal)


def test_thread_count_does_not_change_the_report():
    kernel = InteractionKernel.exp_decay(1, 1.0)
    serial = verify_bound(kernel, [1.0], 2, Cube(1, 3), workers=1, progress=False)
    threaded = verify_bound(kernel, [1.0], 2, Cube(1, 3), workers=3, progress=False)
    assert list(serial.csv_rows()) == list(threaded.csv_rows())


def test_kernel_breaking_decay_is_refused():
    kernel = InteractionKernel.custom_table(1, [((0,), (1,), 0.9)])
    with pytest.raises(ValueError, match="exp"):
        verify_bound(kernel, [0.0], 1, Cube(1, 2), progress=False)


def test_report_rows():
    report = verify_bound(InteractionKernel.exp_decay(1, 1.0), [0.0], 1, Cube(1, 1), progress=False)
    assert report.csv_header() == ["i", "j", "n", "c", "exact", "bound", "ratio"]
    rows = list(report.csv_rows())
    assert len(rows) == 3 * 3 * 2
    assert rows[0][:3] == ["-1", "-1", 0]
    assert BoundRow((0,), (0,), 1, 0.0, 0.0, 2.0).ratio == 0.0
