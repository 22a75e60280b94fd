import numpy as np
import pytest

from semibs import ValueSurface


def make_surface():
    times = np.array([0.0, 0.5, 1.0])
    xs = np.linspace(10.0, 40.0, 4)
    values = np.array([xs * (1 + t) for t in times])
    return ValueSurface(times=times, axes=(xs,), values=values)


def test_validation():
    with pytest.raises(ValueError):
        ValueSurface(times=np.array([0.0, 0.0]), axes=(np.array([1.0, 2.0]),),
                     values=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ValueSurface(times=np.array([0.0, 1.0]), axes=(np.array([2.0, 1.0]),),
                     values=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ValueSurface(times=np.array([0.0, 1.0]), axes=(np.array([1.0, 2.0]),),
                     values=np.zeros((2, 3)))


def test_time_index_reads_forward():
    s = make_surface()
    assert s.time_index(0.0) == 0
    assert s.time_index(0.25) == 1     # earliest stored time >= t
    assert s.time_index(0.5) == 1
    assert s.time_index(2.0) == 2      # clamped to the last slice


def test_interp_and_at_1d():
    s = make_surface()
    assert s.at(0.0, 25.0) == pytest.approx(25.0)
    assert s.at(1.0, 25.0) == pytest.approx(50.0)
    # clamped at the grid edges
    assert s.at(0.0, 5.0) == pytest.approx(10.0)
    assert s.at(0.0, 100.0) == pytest.approx(40.0)


def test_interp_2d_bilinear():
    times = np.array([0.0, 1.0])
    ax = np.array([0.0, 1.0])
    vals = np.array([[[0.0, 1.0], [2.0, 3.0]]] * 2)   # v = 2 x0 + x1
    s = ValueSurface(times=times, axes=(ax, ax), values=np.array(vals))
    pts = np.array([[0.5, 0.5], [0.25, 0.75], [2.0, -1.0]])
    out = s.interp_slice(0, pts)
    assert np.allclose(out, [1.5, 1.25, 2.0])  # last point clamped to (1, 0)


def test_csv_round_trip_exact(tmp_path):
    s = make_surface()
    s.values[0, 0] = np.pi * 1e-7
    path = tmp_path / "surface.csv"
    s.to_csv(path)
    back = ValueSurface.from_csv(path)
    assert np.array_equal(back.times, s.times)
    assert np.array_equal(back.xs, s.xs)
    assert np.array_equal(back.values, s.values)


def test_csv_rejects_partial_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("t,x,v\n0,1,3\n0,2,4\n1,1,5\n")
    with pytest.raises(ValueError):
        ValueSurface.from_csv(path)
