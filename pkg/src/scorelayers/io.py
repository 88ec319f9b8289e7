"""File formats: model JSON, matrix CSV, Jacobian binary, report JSON.

All formats are deterministic (sorted keys, fixed float repr) so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .graph import (
    Dag,
    GraphError,
    Mechanism,
    Scm,
    affine_mechanism,
    make_mechanism,
)
from .jacobians import JacobianBatch, center

_MAGIC = b"SLJB"
_VERSION = 1


# ---------------------------------------------------------------------------
# structural models
# ---------------------------------------------------------------------------


def mechanism_to_dict(mech: Mechanism) -> dict:
    if mech.kind.startswith("affine:"):
        p = mech.params
        return {
            "kind": "affine",
            "base": mechanism_to_dict(p["base"]),
            "out_scale": float(p["out_scale"]),
            "out_shift": float(p["out_shift"]),
            "parent_scale": [float(v) for v in p["parent_scale"]],
            "parent_shift": [float(v) for v in p["parent_shift"]],
        }
    out = {"kind": mech.kind}
    if mech.kind == "constant":
        out["value"] = float(mech.params["value"])
    return out


def mechanism_from_dict(spec: dict, arity: int) -> Mechanism:
    kind = spec["kind"]
    if kind == "affine":
        base = mechanism_from_dict(spec["base"], arity)
        return affine_mechanism(
            base,
            spec["out_scale"],
            spec["out_shift"],
            np.asarray(spec["parent_scale"], dtype=float),
            np.asarray(spec["parent_shift"], dtype=float),
        )
    params = {k: v for k, v in spec.items() if k != "kind"}
    return make_mechanism(kind, arity, **params)


def scm_to_dict(scm: Scm) -> dict:
    return {
        "n": scm.dag.n,
        "edges": [[p, c] for c in range(scm.dag.n) for p in scm.dag.parents[c]],
        "mechanisms": [mechanism_to_dict(m) for m in scm.mechanisms],
        "noise_vars": [float(v) for v in scm.noise_vars],
    }


def scm_from_dict(data: dict) -> Scm:
    n = int(data["n"])
    edges = [(int(p), int(c)) for p, c in data["edges"]]
    dag = Dag.from_edges(n, edges)
    mechs = []
    for i, spec in enumerate(data["mechanisms"]):
        mechs.append(mechanism_from_dict(spec, len(dag.parents[i])))
    scm = Scm(dag, tuple(mechs), np.asarray(data["noise_vars"], dtype=float))
    return scm


def save_scm(path, scm: Scm) -> None:
    Path(path).write_text(json.dumps(scm_to_dict(scm), indent=2, sort_keys=True) + "\n")


def load_scm(path) -> Scm:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or "edges" not in data:
        raise GraphError(f"{path} is not a structural model file")
    return scm_from_dict(data)


# ---------------------------------------------------------------------------
# matrices
# ---------------------------------------------------------------------------


def save_matrix_csv(path, M: np.ndarray, prefix: str = "c") -> None:
    """Write a 2-D array as CSV with a generated header row."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2:
        raise ValueError("only 2-D arrays are written as CSV")
    header = ",".join(f"{prefix}{j}" for j in range(M.shape[1]))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in M:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def load_matrix_csv(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise ValueError(f"{path} is empty")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    return data


# ---------------------------------------------------------------------------
# Jacobian batches
# ---------------------------------------------------------------------------


def save_jacobians(path, batch: JacobianBatch) -> None:
    """Binary batch format: magic, version, space tag, flags, N, d, raw data."""
    tag = batch.space.encode("ascii")
    if len(tag) > 32:
        raise ValueError("space tag too long")
    flags = 1 if batch.is_centered else 0
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IB", _VERSION, flags))
        fh.write(struct.pack("<B", len(tag)))
        fh.write(tag.ljust(32, b"\x00"))
        fh.write(struct.pack("<QQ", batch.n_samples, batch.dim))
        fh.write(np.ascontiguousarray(batch.raw, dtype="<f8").tobytes())


def load_jacobians(path) -> JacobianBatch:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path} is not a Jacobian batch file")
    version, flags = struct.unpack("<IB", raw[4:9])
    if version != _VERSION:
        raise ValueError(f"unsupported batch version {version}")
    (tag_len,) = struct.unpack("<B", raw[9:10])
    tag = raw[10 : 10 + tag_len].decode("ascii")
    N, d = struct.unpack("<QQ", raw[42:58])
    body = np.frombuffer(raw[58:], dtype="<f8")
    if body.size != N * d * d:
        raise ValueError("truncated Jacobian batch file")
    batch = JacobianBatch(body.reshape(N, d, d).copy(), space=tag)
    if flags & 1:
        batch = center(batch)
    return batch


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def save_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_json(path) -> dict:
    return json.loads(Path(path).read_text())
