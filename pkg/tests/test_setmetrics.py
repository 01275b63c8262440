import csv
import math

import numpy as np
import pytest

from roacert.setmetrics import (
    CHUNK,
    IndicatorSet,
    SharedSample,
    dv_mc,
    grid_volume,
    report_rows,
    sublevel_convergence_check,
    uniform_points,
    volume_mc,
    write_report,
)

CUBE = ((-1.0, 1.0),) * 3


def halfspace(label="x1<0"):
    return IndicatorSet(lambda X: X[:, 0] < 0, label)


def ball(r, label=None):
    return IndicatorSet(lambda X: np.linalg.norm(X, axis=1) < r, label or f"ball{r}")


def test_full_box_is_exact():
    est = volume_mc(IndicatorSet.everything(), CUBE, 10_000, seed=1)
    assert est.value == 8.0 and est.se == 0.0


def test_empty_set_is_zero():
    est = volume_mc(IndicatorSet.nothing(), CUBE, 10_000, seed=1)
    assert est.value == 0.0 and est.hits == 0


def test_halfspace_volume_within_se():
    est = volume_mc(halfspace(), CUBE, 100_000, seed=2)
    assert abs(est.value - 4.0) < 4 * est.se


def test_rectangle_dv_exact_expectation():
    # A = [0,1] x [0,1], B = [0.5,1.5] x [0,1] in [0,2]^2: symmetric difference 1.0
    box = ((0.0, 2.0), (0.0, 2.0))
    A = IndicatorSet(lambda X: (X[:, 0] < 1) & (X[:, 1] < 1), "A")
    B = IndicatorSet(lambda X: (X[:, 0] > 0.5) & (X[:, 0] < 1.5) & (X[:, 1] < 1), "B")
    est = dv_mc(A, B, box, 200_000, seed=3)
    assert abs(est.value - 1.0) < 4 * est.se
    assert grid_volume(IndicatorSet(lambda X: A(X) ^ B(X), "AxB"), box, 400) == pytest.approx(1.0, abs=1e-2)


def test_nested_dv_is_volume_difference():
    s = SharedSample(CUBE, 50_000, seed=4)
    small, big = ball(0.5), ball(0.9)
    assert s.dv(small, big).hits == s.volume(big).hits - s.volume(small).hits


def test_symmetry_and_identity():
    s = SharedSample(CUBE, 20_000, seed=5)
    a, b = ball(0.6), halfspace()
    assert s.dv(a, b).value == s.dv(b, a).value
    assert s.dv(a, a).value == 0.0


def test_triangle_inequality_holds_exactly_on_shared_sample():
    s = SharedSample(CUBE, 20_000, seed=6)
    sets = [ball(0.4), ball(0.8), halfspace(), IndicatorSet(lambda X: X[:, 2] > 0.3, "x3>0.3")]
    for a in sets:
        for b in sets:
            for c in sets:
                assert s.dv(a, c).hits <= s.dv(a, b).hits + s.dv(b, c).hits


def test_annulus_shrinks():
    s = SharedSample(CUBE, 50_000, seed=7)
    target = ball(0.7)
    vals = [s.dv(ball(0.7 + h, f"b{h}"), target).value for h in (0.2, 0.1, 0.05, 0.01)]
    assert vals == sorted(vals, reverse=True)
    # 4/3 pi ((0.71)^3 - 0.7^3)
    assert vals[-1] == pytest.approx(4 / 3 * math.pi * (0.71**3 - 0.7**3), rel=0.3)


def test_deterministic_and_seed_dependent():
    a = uniform_points(CUBE, 1000, seed=9)
    assert np.array_equal(a, uniform_points(CUBE, 1000, seed=9))
    assert not np.array_equal(a, uniform_points(CUBE, 1000, seed=10))


def test_points_depend_only_on_index():
    full = uniform_points(CUBE, 3 * CHUNK, seed=11)
    part = uniform_points(CUBE, 100, seed=11, start=CHUNK + 17)
    assert np.array_equal(part, full[CHUNK + 17: CHUNK + 117])


def test_points_inside_box():
    box = ((-2.0, 2.0), (-2.7, 2.7))
    P = uniform_points(box, 5000, seed=0)
    assert np.all(np.abs(P[:, 0]) <= 2.0) and np.all(np.abs(P[:, 1]) <= 2.7)


def test_zero_samples_rejected():
    with pytest.raises(ValueError):
        SharedSample(CUBE, 0, seed=0)


def test_grid_volume_disc():
    box = ((-1.0, 1.0), (-1.0, 1.0))
    assert grid_volume(ball(1.0), box, 800) == pytest.approx(math.pi, abs=5e-3)
    with pytest.raises(ValueError):
        grid_volume(ball(1.0), CUBE, 10)


def test_sublevel_convergence_check():
    box = ((-1.0, 1.0),)

    def V(X):
        return X[:, 0] ** 2

    family = {2: lambda X: X[:, 0] ** 2 + 0.5, 4: lambda X: X[:, 0] ** 2 + 0.1}
    rows = sublevel_convergence_check(V, family, 0.5, box, 20_000, seed=1)
    assert [r.d for r in rows] == [2, 4]
    assert rows[0].l1 == pytest.approx(1.0) and rows[1].l1 == pytest.approx(0.2)
    # {x^2 < 0.5} vs {x^2 < 0.4}: 2 (sqrt .5 - sqrt .4)
    assert rows[1].dv.value == pytest.approx(2 * (math.sqrt(0.5) - math.sqrt(0.4)), abs=0.02)
    with pytest.raises(ValueError, match="J_3"):
        sublevel_convergence_check(V, {3: lambda X: X[:, 0] ** 2 - 0.1}, 0.5, box, 100, seed=1)


def test_report_csv(tmp_path):
    s = SharedSample(CUBE, 1000, seed=12)
    rows = report_rows(s, [(ball(0.5), None), (ball(0.5), halfspace())])
    path = tmp_path / "report.csv"
    write_report(rows, path)
    with open(path) as fh:
        back = list(csv.DictReader(fh))
    assert [r["label_b"] for r in back] == ["", "x1<0"]
    assert float(back[0]["estimate"]) == s.volume(ball(0.5)).value
    assert back[1]["seed"] == "12" and back[1]["n"] == "1000"
