import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import quadratic_ensemble
from sokid.dataset import (EnsembleParseError, EnsembleValidationError, SnapshotEnsemble,
                           TimeGrid, TrajectoryGroup, dumps_ensemble, load_ensemble,
                           loads_ensemble, mean_increments, save_ensemble)


def two_group():
    times = [0.0, 0.5, 1.25]
    g0 = TrajectoryGroup(0.1, [[0.1, 0.2, 0.3], [0.1, -0.4, 1e-17]])
    g1 = TrajectoryGroup(-2.0, [[-2.0, 1.0 / 3.0, 2.0]])
    return SnapshotEnsemble(TimeGrid(times), (g0, g1))


@st.composite
def ensembles(draw):
    n = draw(st.integers(1, 5))
    steps = draw(st.lists(st.floats(1e-3, 10.0), min_size=n, max_size=n))
    t0 = draw(st.floats(-100, 100))
    times = t0 + np.cumsum([0.0] + steps)
    if not np.all(np.diff(times) > 0):
        times = np.arange(n + 1, dtype=float)
    real = st.floats(-1e6, 1e6, allow_nan=False)
    groups = []
    for _ in range(draw(st.integers(1, 3))):
        k = draw(st.integers(1, 3))
        ic = draw(real)
        rest = draw(st.lists(st.lists(real, min_size=n, max_size=n), min_size=k, max_size=k))
        groups.append(TrajectoryGroup(ic, [[ic] + r for r in rest]))
    return SnapshotEnsemble(TimeGrid(times), tuple(groups))


@pytest.mark.parametrize("fmt", ["csv", "json"])
@settings(max_examples=60, deadline=None)
@given(ens=ensembles())
def test_round_trip_property(fmt, ens):
    back = loads_ensemble(dumps_ensemble(ens, fmt), fmt)
    assert back == ens
    assert dumps_ensemble(back, fmt) == dumps_ensemble(ens, fmt)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_two_group_file_round_trip(tmp_path, fmt):
    ens = two_group()
    path = tmp_path / f"e.{fmt}"
    save_ensemble(ens, path, fmt)
    loaded = load_ensemble(path)
    assert loaded.num_groups == 2
    assert loaded == ens
    again = tmp_path / f"again.{fmt}"
    save_ensemble(loaded, again, fmt)
    assert path.read_bytes() == again.read_bytes()


def test_csv_layout():
    text = dumps_ensemble(two_group(), "csv")
    lines = text.splitlines()
    assert lines[0] == "group,traj,t=0,t=0.5,t=1.25"
    assert lines[1].startswith("0,0,0.10000000000000001,")
    assert len(lines) == 4


def test_non_monotone_grid(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("group,traj,t=0.0,t=0.5,t=0.5\n0,0,1,2,3\n")
    with pytest.raises(EnsembleValidationError, match="non-monotone time grid"):
        load_ensemble(path)


def test_nan_names_location(tmp_path):
    path = tmp_path / "nan.csv"
    path.write_text("group,traj,t=0,t=1,t=2\n0,0,1,2,3\n1,0,1,2,3\n1,1,1,nan,3\n")
    with pytest.raises(EnsembleValidationError,
                       match="group 1, trajectory 1, time index 1"):
        load_ensemble(path)


def test_nan_json(tmp_path):
    path = tmp_path / "nan.json"
    path.write_text('{"times": [0, 1], "groups": [{"initial_condition": 0, '
                    '"snapshots": [[0, 1], [0, NaN]]}]}')
    with pytest.raises(EnsembleValidationError, match="trajectory 1.*time index 1"):
        load_ensemble(path)


def test_malformed_csv(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("group,traj,t=0,t=1\n0,0,1,oops\n")
    with pytest.raises(EnsembleParseError):
        load_ensemble(path)


def test_ic_column_mismatch():
    with pytest.raises(EnsembleValidationError, match="initial condition"):
        TrajectoryGroup(0.0, [[0.0, 1.0], [0.5, 1.0]])


def test_empty_groups_refused(tmp_path):
    with pytest.raises(EnsembleValidationError):
        SnapshotEnsemble(TimeGrid([0, 1]), ())
    with pytest.raises(EnsembleValidationError):
        save_ensemble(object(), tmp_path / "x.csv")


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores file permissions")
def test_read_only_destination(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        with pytest.raises(OSError):
            save_ensemble(two_group(), ro / "x.csv")
    finally:
        ro.chmod(0o700)


def test_missing_directory_is_io_error(tmp_path):
    with pytest.raises(OSError):
        save_ensemble(two_group(), tmp_path / "nope" / "x.csv")


def test_mean_increments_examples():
    const = SnapshotEnsemble.from_arrays([0, 1, 2], [np.full((3, 3), 4.2)])
    assert np.all(mean_increments(const).mean_increments == 0.0)

    ens = SnapshotEnsemble.from_arrays([0.0, 1.0], [[[0.0, 1.0], [0.0, 3.0]]])
    assert mean_increments(ens).mean_increments.tolist() == [2.0]


def test_mean_increments_loop_oracle():
    ens = quadratic_ensemble(1)
    got = mean_increments(ens)
    want = oracles.mean_increments(ens)
    assert got.mean_increments.size == ens.num_groups * ens.n == 990
    np.testing.assert_allclose(got.mean_increments, want, rtol=1e-12, atol=1e-15)
    assert got.index[0] == (0, 1) and got.index[-1] == (9, 99)


@settings(max_examples=40, deadline=None)
@given(ens=ensembles(), s=st.floats(-8, 8).filter(lambda v: abs(v) > 1e-3))
def test_mean_increments_linear(ens, s):
    scaled = SnapshotEnsemble(ens.grid, tuple(
        TrajectoryGroup(g.initial_condition * s, g.snapshots * s) for g in ens.groups))
    a = mean_increments(ens).mean_increments
    b = mean_increments(scaled).mean_increments
    assert b.size == ens.num_groups * ens.n
    np.testing.assert_allclose(b, s * a, rtol=1e-9, atol=1e-9 * (1 + np.abs(s * a).max()))


def test_functional_index_round_trip():
    ens = two_group()
    for idx in range(ens.num_functionals):
        u, i = ens.functional_location(idx)
        assert ens.functional_index(u, i) == idx
    with pytest.raises(IndexError):
        ens.functional_index(0, 0)
