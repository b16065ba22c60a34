"""File formats: binary field snapshots, PGM previews, CSV traces, trajectory archives.

Snapshot layout: one ASCII header line

    FIELD v1 <dim> <n_1> ... <n_dim> <h_1> ... <h_dim> crc32=<8 hex digits>

followed by the cell values as little-endian float64 in row-major order.
The checksum covers the payload, so truncation or bit rot is detected on load.
"""
from __future__ import annotations

import csv
import zlib
from pathlib import Path

import numpy as np

from .grid import Grid

MAGIC = "FIELD"
VERSION = "v1"


class SnapshotError(ValueError):
    pass


def write_field(path, grid: Grid, values) -> Path:
    values = grid.check(values)
    payload = np.ascontiguousarray(values, dtype="<f8").tobytes()
    header = " ".join([MAGIC, VERSION, str(grid.dim)]
                      + [str(n) for n in grid.shape]
                      + [repr(h) for h in grid.spacing]
                      + [f"crc32={zlib.crc32(payload):08x}"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii") + b"\n")
        fh.write(payload)
    return path


def read_field(path) -> tuple[Grid, np.ndarray]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise SnapshotError(f"{path}: cannot read ({exc})") from None
    nl = raw.find(b"\n")
    if nl < 0 or nl > 512:
        raise SnapshotError(f"{path}: missing header line")
    try:
        parts = raw[:nl].decode("ascii").split()
    except UnicodeDecodeError:
        raise SnapshotError(f"{path}: header is not ASCII") from None
    if len(parts) < 3 or parts[0] != MAGIC or parts[1] != VERSION:
        raise SnapshotError(f"{path}: not a {MAGIC} {VERSION} snapshot")
    try:
        dim = int(parts[2])
        if dim not in (1, 2) or len(parts) != 4 + 2 * dim:
            raise ValueError
        shape = tuple(int(p) for p in parts[3:3 + dim])
        spacing = tuple(float(p) for p in parts[3 + dim:3 + 2 * dim])
        tag, crc = parts[-1].split("=")
        if tag != "crc32":
            raise ValueError
        crc = int(crc, 16)
        grid = Grid(shape, spacing)
    except ValueError:
        raise SnapshotError(f"{path}: malformed header {raw[:nl]!r}") from None
    payload = raw[nl + 1:]
    if len(payload) != 8 * grid.size:
        raise SnapshotError(f"{path}: payload has {len(payload)} bytes, expected {8 * grid.size}")
    if zlib.crc32(payload) != crc:
        raise SnapshotError(f"{path}: checksum mismatch (corrupted snapshot)")
    values = np.frombuffer(payload, dtype="<f8").astype(float).reshape(shape)
    if not np.all(np.isfinite(values)):
        raise SnapshotError(f"{path}: non-finite values")
    return grid, values


STATE_FIELDS = ("w", "eta", "theta")


def write_state(prefix, grid: Grid, v, theta) -> list[Path]:
    prefix = Path(prefix)
    return [write_field(prefix.with_name(f"{prefix.name}.{name}.field"), grid, f)
            for name, f in zip(STATE_FIELDS, (v[0], v[1], theta))]


def read_state(prefix) -> tuple[Grid, np.ndarray, np.ndarray]:
    prefix = Path(prefix)
    grids, fields = [], []
    for name in STATE_FIELDS:
        g, f = read_field(prefix.with_name(f"{prefix.name}.{name}.field"))
        grids.append(g)
        fields.append(f)
    if any(g != grids[0] for g in grids[1:]):
        raise SnapshotError(f"{prefix}: state fields live on different grids")
    return grids[0], np.stack(fields[:2]), fields[2]


def write_pgm(path, values) -> Path:
    """8-bit binary PGM, min-max scaled; the scaling goes to ``<path>.scale.txt``."""
    a = np.atleast_2d(np.asarray(values, dtype=float))
    lo, hi = float(np.min(a)), float(np.max(a))
    span = hi - lo
    img = np.zeros(a.shape, dtype=np.uint8) if span == 0 else \
        np.round(255.0 * (a - lo) / span).astype(np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(img.tobytes())
    Path(str(path) + ".scale.txt").write_text(
        f"min = {lo!r}\nmax = {hi!r}\n# value = min + pixel/255 * (max - min)\n")
    return path


def write_field_csv(path, values) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "value"])
        for i, x in enumerate(np.asarray(values, dtype=float).ravel()):
            w.writerow([i, repr(float(x))])
    return path


TRACE_COLUMNS = ("step", "time", "dirichlet_v", "gamma", "g", "weighted_tv", "theta_dirichlet",
                 "total", "coupling", "lyapunov", "v_inc", "theta_inc", "slack")


class TraceWriter:
    """Energy trace CSV, one row per record, fed from the stepper's per-step hook.

    ``lyapunov`` uses u_dagger = u_infinity (zero when the source has none).
    """

    def __init__(self, path, grid: Grid, spec, h: float, u_dagger):
        self.path = Path(path)
        self.grid, self.spec, self.h = grid, spec, h
        self.u_dagger = np.broadcast_to(np.asarray(u_dagger, dtype=float), grid.shape)
        self._acc = 0.0
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(TRACE_COLUMNS)
        self.rows = 0

    def __call__(self, rec):
        e = rec.energy
        g, c = self.grid, self.spec.c
        if rec.index > 0:
            du = rec.u - self.u_dagger
            self._acc += self.h * g.inner(du, du)
        lyap = e.total + c * g.inner(self.u_dagger, rec.v[0]) - c * c * self._acc
        coupling = 0.0 if e.coupling is None else e.coupling
        row = [rec.index, rec.time, e.dirichlet_v, e.potential_gamma, e.interaction_g,
               e.weighted_tv, e.theta_dirichlet, e.total, coupling, lyap,
               rec.v_increment_norm, rec.theta_increment_norm, rec.dissipation_slack]
        self._w.writerow([row[0]] + [repr(float(x)) for x in row[1:]])
        self._fh.flush()
        self.rows += 1

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_trace(path) -> dict:
    with open(path, newline="") as fh:
        r = csv.DictReader(fh)
        rows = list(r)
    return {k: np.array([float(row[k]) for row in rows]) for k in TRACE_COLUMNS}


def save_trajectory(path, traj, config_text: str = "") -> Path:
    """Archive the fields of a trajectory (plus the resolved config) for re-auditing."""
    recs = traj.records
    path = Path(path)
    np.savez_compressed(
        path,
        v=np.stack([r.v for r in recs]),
        theta=np.stack([r.theta for r in recs]),
        u=np.stack([r.u for r in recs]),
        h=np.array(traj.h),
        shape=np.array(traj.grid.shape),
        spacing=np.array(traj.grid.spacing),
        config=np.array(config_text),
    )
    return path


def load_trajectory_arrays(path) -> dict:
    try:
        with np.load(path, allow_pickle=False) as z:
            out = {k: z[k] for k in z.files}
    except (OSError, ValueError, zlib.error) as exc:
        raise SnapshotError(f"{path}: cannot load trajectory archive ({exc})") from None
    out["config"] = str(out["config"])
    return out
