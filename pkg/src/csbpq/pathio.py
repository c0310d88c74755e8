"""Serialization of simulated paths and curve tables.

Two formats: CSV for bulk data meant to be read by external analysis tools,
and a little-endian binary bundle that round-trips a SimPath losslessly
(including the noise records the CSV view drops). All float text uses repr,
so identical inputs produce byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence, TextIO

import numpy as np

from ._version import __version__
from .conditioning import MarkedAtom
from .errors import DomainError
from .laplace import qprocess_laplace, solve_u
from .mechanism import BranchingMechanism, mechanism_from_json, mechanism_to_json
from .simulate import SimConfig, SimPath

MAGIC = b"CQPATH01"

# per-epoch record: time, state, Brownian increment and jump displacement of
# the step ending at this epoch (zero on the first row)
EPOCH_FIELDS = ("t", "value", "db", "disp")
ATOM_FIELDS = ("t", "r", "nu", "u", "z_pre", "z_post", "source", "accepted")

PATH_CSV_HEADER = ("t", "value", "is_jump", "r", "nu", "u")
MARKED_CSV_HEADER = ("t", "kind", "r", "nu", "delta")
LAPLACE_CSV_HEADER = ("t", "theta", "u", "csbp_laplace", "qprocess_laplace")


def _fmt(x: float) -> str:
    # repr round-trips doubles exactly; NaN cells become empty
    return "" if np.isnan(x) else repr(float(x))


def write_csv(dest: TextIO, header: Sequence[str], rows: Iterable[Sequence]) -> int:
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(header)
    n = 0
    for row in rows:
        writer.writerow(row)
        n += 1
    return n


def path_csv_rows(path: SimPath) -> list[tuple]:
    """Per-epoch rows; accepted atoms joined on their exact epoch."""
    at_epoch: dict[float, int] = {}
    for i in range(len(path.atom_times)):
        if not path.atom_accepted[i]:
            continue
        t = float(path.atom_times[i])
        if t in at_epoch:
            raise DomainError(f"two accepted atoms share the epoch t={t}")
        at_epoch[t] = i
    grid = {float(t) for t in path.times}
    missing = [t for t in at_epoch if t not in grid]
    if missing:
        raise DomainError(f"atom epochs absent from the time grid: {missing[:3]}")
    rows = []
    for j, t in enumerate(path.times):
        t = float(t)
        i = at_epoch.get(t)
        if i is None:
            rows.append((_fmt(t), _fmt(path.values[j]), 0, "", "", ""))
        else:
            rows.append((
                _fmt(t),
                _fmt(path.values[j]),
                1,
                _fmt(path.atom_sizes[i]),
                _fmt(path.atom_nu[i]),
                _fmt(path.atom_marks[i]),
            ))
    return rows


def marked_csv_rows(marked: Sequence[MarkedAtom]) -> list[tuple]:
    rows = []
    for atom in marked:
        kind = atom.kind
        if kind == "retained":
            r, nu = atom.delta_big
            rows.append((_fmt(atom.t), kind, _fmt(r), _fmt(nu), ""))
        elif kind == "immigrant":
            rows.append((_fmt(atom.t), kind, "", "", _fmt(atom.delta_star)))
        else:
            rows.append((_fmt(atom.t), kind, "", "", ""))
    return rows


def laplace_csv_rows(
    mech: BranchingMechanism,
    x: float,
    thetas: Sequence[float],
    t_grid: Sequence[float],
) -> list[tuple]:
    """Transform table over a (theta, t) grid.

    One ODE solve per theta covers the whole t column; the conditioned
    transform still needs its own convolution per point.
    """
    rows = []
    ts = [float(t) for t in t_grid]
    horizon = max(ts)
    for theta in thetas:
        curve = solve_u(mech, float(theta), [0.0, horizon])
        for t in ts:
            u = float(curve(t))
            rows.append((
                _fmt(t),
                _fmt(float(theta)),
                _fmt(u),
                _fmt(float(np.exp(-x * u))),
                _fmt(qprocess_laplace(mech, x, float(theta), t)),
            ))
    return rows


def _header_doc(path: SimPath) -> dict:
    return {
        "format": "path-bundle",
        "version": __version__,
        "byte_order": "little",
        "kind": path.kind,
        "x0": path.x0,
        "config": {
            "T": path.config.T,
            "dt": path.config.dt,
            "eps": path.config.eps,
            "seed": path.config.seed,
            "path_index": path.config.path_index,
            "max_jumps": path.config.max_jumps,
            "keep_thinned": path.config.keep_thinned,
        },
        "mechanism": mechanism_to_json(path.mechanism),
        "absorption_time": path.absorption_time,
        "first_zero_time": path.first_zero_time,
        "n_candidates": path.n_candidates,
        "n_immigration": path.n_immigration,
        "n_epochs": int(len(path.times)),
        "n_atoms": int(len(path.atom_times)),
        "epoch_fields": list(EPOCH_FIELDS),
        "atom_fields": list(ATOM_FIELDS),
        "source_codes": {"0": "branch", "1": "immigration"},
    }


def _epoch_block(path: SimPath) -> np.ndarray:
    n = len(path.times)
    block = np.zeros((n, len(EPOCH_FIELDS)), dtype="<f8")
    block[:, 0] = path.times
    block[:, 1] = path.values
    block[1:, 2] = path.brownian_increments
    block[1:, 3] = path.jump_displacements
    return block


def _atom_block(path: SimPath) -> np.ndarray:
    m = len(path.atom_times)
    block = np.zeros((m, len(ATOM_FIELDS)), dtype="<f8")
    if m:
        block[:, 0] = path.atom_times
        block[:, 1] = path.atom_sizes
        block[:, 2] = path.atom_nu
        block[:, 3] = path.atom_marks
        block[:, 4] = path.atom_z_pre
        block[:, 5] = path.atom_z_post
        block[:, 6] = path.atom_source
        block[:, 7] = path.atom_accepted
    return block


def write_path_bundle(path: SimPath, dest: str | Path | BinaryIO) -> None:
    """Binary dump: magic, length-prefixed JSON header, then the two '<f8'
    record blocks (per-epoch, then per-atom)."""
    header = json.dumps(_header_doc(path), sort_keys=True).encode("utf-8")
    payload = (
        MAGIC
        + struct.pack("<I", len(header))
        + header
        + _epoch_block(path).tobytes()
        + _atom_block(path).tobytes()
    )
    if isinstance(dest, (str, Path)):
        Path(dest).write_bytes(payload)
    else:
        dest.write(payload)


def _read_exact(stream: BinaryIO, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise DomainError(f"truncated path bundle while reading {what}")
    return data


def read_path_bundle(src: str | Path | BinaryIO) -> SimPath:
    stream: BinaryIO
    if isinstance(src, (str, Path)):
        stream = io.BytesIO(Path(src).read_bytes())
    else:
        stream = src
    if _read_exact(stream, len(MAGIC), "magic") != MAGIC:
        raise DomainError("not a path bundle (bad magic)")
    (hlen,) = struct.unpack("<I", _read_exact(stream, 4, "header length"))
    header = json.loads(_read_exact(stream, hlen, "header"))
    n, m = header["n_epochs"], header["n_atoms"]
    epochs = np.frombuffer(
        _read_exact(stream, 8 * len(EPOCH_FIELDS) * n, "epoch records"), dtype="<f8"
    ).reshape(n, len(EPOCH_FIELDS))
    atoms = np.frombuffer(
        _read_exact(stream, 8 * len(ATOM_FIELDS) * m, "atom records"), dtype="<f8"
    ).reshape(m, len(ATOM_FIELDS))
    return SimPath(
        kind=header["kind"],
        x0=header["x0"],
        config=SimConfig(**header["config"]),
        mechanism=mechanism_from_json(header["mechanism"]),
        times=epochs[:, 0].copy(),
        values=epochs[:, 1].copy(),
        brownian_increments=epochs[1:, 2].copy(),
        jump_displacements=epochs[1:, 3].copy(),
        atom_times=atoms[:, 0].copy(),
        atom_sizes=atoms[:, 1].copy(),
        atom_nu=atoms[:, 2].copy(),
        atom_marks=atoms[:, 3].copy(),
        atom_z_pre=atoms[:, 4].copy(),
        atom_z_post=atoms[:, 5].copy(),
        atom_source=atoms[:, 6].astype(np.int64),
        atom_accepted=atoms[:, 7].astype(bool),
        absorption_time=header["absorption_time"],
        first_zero_time=header["first_zero_time"],
        n_candidates=header["n_candidates"],
        n_immigration=header["n_immigration"],
    )
