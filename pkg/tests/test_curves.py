import io

import numpy as np
import pytest

from leastloaded.curves import CcdfCurve, kolmogorov_distance


def make_curve(values, h=0.1):
    return CcdfCurve(h=h, values=np.asarray(values, dtype=float))


def test_validation():
    with pytest.raises(ValueError):
        make_curve([0.5, 0.8])  # rising
    with pytest.raises(ValueError):
        make_curve([1.5, 0.5])  # above one
    with pytest.raises(ValueError):
        CcdfCurve(h=-0.1, values=np.array([1.0, 0.5]))
    with pytest.raises(ValueError):
        make_curve([0.5])  # too short


def test_roundoff_is_clipped():
    c = make_curve([1.0 + 1e-12, 0.5, 0.5 + 1e-12, -1e-12])
    assert c.values[0] == 1.0
    assert c.values[-1] == 0.0
    assert np.all(np.diff(c.values) <= 0)


def test_grid_properties():
    c = make_curve([1.0, 0.5, 0.2], h=0.5)
    assert c.n == 3
    assert c.smax == 1.0
    assert np.allclose(c.s_grid, [0.0, 0.5, 1.0])
    assert c.interp(0.25) == pytest.approx(0.75)
    assert c.interp(5.0) == 0.0


def test_kolmogorov_basics():
    a = make_curve([1.0, 0.5, 0.2])
    assert kolmogorov_distance(a, a) == 0.0
    ones = make_curve([1.0, 1.0, 1.0])
    zeros = make_curve([0.0, 0.0, 0.0])
    assert kolmogorov_distance(ones, zeros) == 1.0
    with pytest.raises(ValueError):
        kolmogorov_distance(a, make_curve([1.0, 0.5], h=0.2))


def test_kolmogorov_pads_shorter_tail_with_zero():
    a = make_curve([1.0, 0.5, 0.25, 0.1])
    b = make_curve([1.0, 0.5])
    assert kolmogorov_distance(a, b) == pytest.approx(0.25)


def test_kolmogorov_triangle_inequality_random():
    rng = np.random.default_rng(5)
    for _ in range(100):
        vals = np.sort(rng.random((3, 20)), axis=1)[:, ::-1]
        a, b, c = (make_curve(v) for v in vals)
        assert kolmogorov_distance(a, c) <= kolmogorov_distance(a, b) + kolmogorov_distance(b, c) + 1e-15


def test_csv_roundtrip():
    c = make_curve([1.0, 0.7123456789012345, 0.3, 0.0], h=0.25)
    buf = io.StringIO()
    c.to_csv(buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "s,ccdf"
    back = CcdfCurve.from_csv(io.StringIO(text))
    assert back.h == pytest.approx(c.h, rel=1e-15)
    assert np.array_equal(back.values, c.values)


def test_csv_roundtrip_file(tmp_path):
    c = make_curve(np.linspace(1.0, 0.0, 11), h=0.1)
    path = tmp_path / "curve.csv"
    c.to_csv(str(path))
    back = CcdfCurve.from_csv(str(path))
    assert np.array_equal(back.values, c.values)
