import numpy as np
import pytest
from hypothesis import given, strategies as st

from kwcflow import fileio
from kwcflow.energy import free_energy
from kwcflow.grid import Grid


@given(st.sampled_from([(5,), (3, 4), (2, 7)]), st.integers(0, 2**32 - 1))
def test_field_roundtrip(tmp_path_factory, shape, seed):
    g = Grid(shape, tuple(0.1 * (k + 1) for k in range(len(shape))))
    f = np.random.default_rng(seed).normal(size=shape)
    p = tmp_path_factory.mktemp("f") / "x.field"
    fileio.write_field(p, g, f)
    g2, f2 = fileio.read_field(p)
    assert g2 == g and np.array_equal(f, f2)


def test_header_format(tmp_path):
    g = Grid((2, 3), (0.5, 0.25))
    p = fileio.write_field(tmp_path / "a.field", g, np.arange(6.0).reshape(2, 3))
    raw = p.read_bytes()
    header, payload = raw.split(b"\n", 1)
    parts = header.decode().split()
    assert parts[:5] == ["FIELD", "v1", "2", "2", "3"] and parts[-1].startswith("crc32=")
    assert np.array_equal(np.frombuffer(payload, "<f8"), np.arange(6.0))


@pytest.mark.parametrize("damage", ["flip", "truncate", "header", "nan"])
def test_corruption_detected(tmp_path, damage):
    g = Grid.unit((4,))
    p = fileio.write_field(tmp_path / "a.field", g, np.arange(4.0))
    raw = bytearray(p.read_bytes())
    if damage == "flip":
        raw[-3] ^= 0xFF
    elif damage == "truncate":
        raw = raw[:-8]
    elif damage == "header":
        raw[0:5] = b"FOELD"
    else:
        p2 = fileio.write_field(tmp_path / "b.field", g, np.array([0.0, np.nan, 1.0, 2.0]))
        raw = bytearray(p2.read_bytes())
    p.write_bytes(bytes(raw))
    with pytest.raises(fileio.SnapshotError):
        fileio.read_field(p)
    with pytest.raises(fileio.SnapshotError):
        fileio.read_field(tmp_path / "missing.field")


def test_state_roundtrip(tmp_path):
    g = Grid.unit((3, 3))
    rng = np.random.default_rng(0)
    v, th = rng.uniform(0, 1, (2, 3, 3)), rng.normal(size=(3, 3))
    fileio.write_state(tmp_path / "s", g, v, th)
    g2, v2, th2 = fileio.read_state(tmp_path / "s")
    assert g2 == g and np.array_equal(v, v2) and np.array_equal(th, th2)


def test_pgm_and_csv(tmp_path):
    a = np.array([[0.0, 1.0], [2.0, 4.0]])
    p = fileio.write_pgm(tmp_path / "a.pgm", a)
    raw = p.read_bytes()
    assert raw.startswith(b"P5\n2 2\n255\n")
    assert list(raw[-4:]) == [0, 64, 128, 255]
    assert "max = 4.0" in (tmp_path / "a.pgm.scale.txt").read_text()
    c = fileio.write_field_csv(tmp_path / "a.csv", a)
    lines = c.read_text().splitlines()
    assert lines[0] == "index,value" and len(lines) == 5 and lines[4] == "3,4.0"


def test_trace_and_trajectory(tmp_path, traj_1d):
    path = tmp_path / "trace.csv"
    with fileio.TraceWriter(path, traj_1d.grid, traj_1d.spec, traj_1d.h, 0.0) as tw:
        for r in traj_1d.records[:21]:
            tw(r)
    tr = fileio.read_trace(path)
    assert list(tr) == list(fileio.TRACE_COLUMNS)
    assert len(tr["step"]) == 21
    for k, r in enumerate(traj_1d.records[:21]):
        ref = free_energy(traj_1d.grid, r.v, r.theta, traj_1d.spec, traj_1d.norm).total
        assert tr["total"][k] == pytest.approx(ref, rel=1e-12, abs=1e-300)
    assert np.all(np.diff(tr["lyapunov"]) <= 1e-10)
    npz = fileio.save_trajectory(tmp_path / "t.npz", traj_1d, "x = 1\n")
    arr = fileio.load_trajectory_arrays(npz)
    assert np.array_equal(arr["theta"][-1], traj_1d.records[-1].theta)
