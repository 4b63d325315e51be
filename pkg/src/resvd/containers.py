"""On-disk formats.

A model is a directory: ``manifest.json`` describing layers plus one raw
tensor file per matrix entry (little-endian, row-major; factored entries
store u_hat then v_hat back to back). Calibration sets are either the
binary container (magic ``ERCC``) or bare numeric CSV. Plans and error
reports are deterministic JSON and CSV.

Matrices tagged f32 are upconverted to f64 in memory and written back as
f32, so a load/save cycle is byte-identical either way.
"""

from __future__ import annotations

import json
import math
import re
import struct
from pathlib import Path

import numpy as np

from .calibration import CalibrationSet
from .errors import FormatError
from .linalg import FactorPair
from .model import ACTIVATIONS, STORE_DTYPES, Layer, MatrixEntry, SequentialModel
from .planner import CandidateResult, CompressionPlan

MODEL_FORMAT = "resvd-model"
MODEL_VERSION = 1
PLAN_FORMAT = "resvd-plan"
PLAN_VERSION = 1

CALIB_MAGIC = b"ERCC"
CALIB_VERSION = 1
_CALIB_HEADER = struct.Struct("<4sIQQ")

_FILE_RE = re.compile(r"^[A-Za-z0-9._-]+$")
_NP_DTYPE = {"f64": "<f8", "f32": "<f4"}

ERROR_CSV_HEADER = "layer_index,relative_error"


def _dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _json_float(v: float) -> float | None:
    return None if math.isnan(v) else v


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise FormatError(f"{where}: missing key {key!r}")
    return doc[key]


# --- model directories ---


def save_model(model: SequentialModel, path: str | Path) -> None:
    """Write ``manifest.json`` plus one tensor file per matrix entry."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    layers_doc = []
    seen_files: set[str] = set()
    for layer in model.layers:
        matrices = []
        for e in layer.entries:
            fname = f"{layer.name}__{e.name}.bin"
            if fname in seen_files:
                raise FormatError(f"tensor file name collision: {fname}")
            seen_files.add(fname)
            np_dtype = _NP_DTYPE[e.store_dtype]
            if e.is_factored:
                blob = (
                    e.factors.u_hat.astype(np_dtype).tobytes()
                    + e.factors.v_hat.astype(np_dtype).tobytes()
                )
                entry_doc = {
                    "name": e.name,
                    "rows": e.rows,
                    "cols": e.cols,
                    "dtype": e.store_dtype,
                    "kind": "factored",
                    "rank": e.factors.rank,
                    "file": fname,
                }
            else:
                blob = e.dense.astype(np_dtype).tobytes()
                entry_doc = {
                    "name": e.name,
                    "rows": e.rows,
                    "cols": e.cols,
                    "dtype": e.store_dtype,
                    "kind": "dense",
                    "file": fname,
                }
            (root / fname).write_bytes(blob)
            matrices.append(entry_doc)
        layers_doc.append(
            {"name": layer.name, "activation": layer.activation, "matrices": matrices}
        )
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_dim": model.input_dim,
        "meta": model.meta,
        "layers": layers_doc,
    }
    (root / "manifest.json").write_text(_dump_json(doc))


def _read_tensor(root: Path, entry_doc: dict, where: str) -> np.ndarray:
    fname = _require(entry_doc, "file", where)
    if not isinstance(fname, str) or not _FILE_RE.match(fname):
        raise FormatError(f"{where}: bad tensor file name {fname!r}")
    fpath = root / fname
    if not fpath.is_file():
        raise FormatError(f"{where}: tensor file {fname} is missing")
    return np.frombuffer(fpath.read_bytes(), dtype=_NP_DTYPE[entry_doc["dtype"]])


def _load_entry(root: Path, entry_doc: dict, where: str) -> MatrixEntry:
    name = _require(entry_doc, "name", where)
    rows = _require(entry_doc, "rows", where)
    cols = _require(entry_doc, "cols", where)
    dtype = _require(entry_doc, "dtype", where)
    kind = _require(entry_doc, "kind", where)
    if dtype not in STORE_DTYPES:
        raise FormatError(f"{where}: unknown dtype {dtype!r}")
    if not (isinstance(rows, int) and isinstance(cols, int) and rows > 0 and cols > 0):
        raise FormatError(f"{where}: bad shape {rows!r} x {cols!r}")
    flat = _read_tensor(root, entry_doc, where)
    if kind == "dense":
        if flat.size != rows * cols:
            raise FormatError(
                f"{where}: expected {rows * cols} values, file holds {flat.size}"
            )
        dense = flat.reshape(rows, cols).astype(np.float64)
        return MatrixEntry(name=name, rows=rows, cols=cols, dense=dense, store_dtype=dtype)
    if kind == "factored":
        rank = _require(entry_doc, "rank", where)
        if not (isinstance(rank, int) and 1 <= rank <= min(rows, cols)):
            raise FormatError(f"{where}: bad rank {rank!r} for {rows}x{cols}")
        want = rows * rank + rank * cols
        if flat.size != want:
            raise FormatError(f"{where}: expected {want} values, file holds {flat.size}")
        u_hat = flat[: rows * rank].reshape(rows, rank).astype(np.float64)
        v_hat = flat[rows * rank :].reshape(rank, cols).astype(np.float64)
        pair = FactorPair(u_hat=u_hat, v_hat=v_hat, rank=rank)
        return MatrixEntry(name=name, rows=rows, cols=cols, factors=pair, store_dtype=dtype)
    raise FormatError(f"{where}: unknown kind {kind!r}")


def load_model(path: str | Path) -> SequentialModel:
    root = Path(path)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise FormatError(f"{root}: no manifest.json")
    try:
        doc = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: not valid JSON ({exc})") from exc
    where = str(mpath)
    if _require(doc, "format", where) != MODEL_FORMAT:
        raise FormatError(f"{where}: format is {doc['format']!r}, expected {MODEL_FORMAT!r}")
    if _require(doc, "version", where) != MODEL_VERSION:
        raise FormatError(f"{where}: unsupported version {doc['version']!r}")
    input_dim = _require(doc, "input_dim", where)
    meta = doc.get("meta", {})
    if not isinstance(meta, dict):
        raise FormatError(f"{where}: meta must be an object")
    layers = []
    for ldoc in _require(doc, "layers", where):
        lname = _require(ldoc, "name", where)
        activation = _require(ldoc, "activation", where)
        if activation not in ACTIVATIONS:
            raise FormatError(f"{where}: unknown activation {activation!r}")
        entries = tuple(
            _load_entry(root, edoc, f"{where} [{lname}]")
            for edoc in _require(ldoc, "matrices", where)
        )
        layers.append(Layer(name=lname, entries=entries, activation=activation))
    try:
        return SequentialModel(layers=tuple(layers), input_dim=input_dim, meta=meta)
    except (ValueError, TypeError) as exc:
        raise FormatError(f"{where}: inconsistent model ({exc})") from exc


# --- calibration sets ---


def save_calibration(calib: CalibrationSet, path: str | Path) -> None:
    """Binary container: ERCC magic, version, rows, cols, then f64 payload."""
    rows, cols = calib.samples.shape
    header = _CALIB_HEADER.pack(CALIB_MAGIC, CALIB_VERSION, rows, cols)
    Path(path).write_bytes(header + calib.samples.astype("<f8").tobytes())


def load_calibration(path: str | Path) -> CalibrationSet:
    raw = Path(path).read_bytes()
    if len(raw) < _CALIB_HEADER.size:
        raise FormatError(f"{path}: too short for a calibration header")
    magic, version, rows, cols = _CALIB_HEADER.unpack_from(raw)
    if magic != CALIB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != CALIB_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    want = rows * cols * 8
    payload = raw[_CALIB_HEADER.size :]
    if len(payload) != want:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, expected {want}")
    if rows < 1 or cols < 1:
        raise FormatError(f"{path}: empty calibration set")
    samples = np.frombuffer(payload, dtype="<f8").reshape(rows, cols)
    return CalibrationSet(samples=samples.astype(np.float64), source=str(path))


def save_calibration_csv(calib: CalibrationSet, path: str | Path) -> None:
    lines = [",".join("%.17g" % v for v in row) for row in calib.samples]
    Path(path).write_text("\n".join(lines) + "\n")


def load_calibration_csv(path: str | Path) -> CalibrationSet:
    rows: list[list[float]] = []
    for ln, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: not numeric ({exc})") from exc
    if not rows:
        raise FormatError(f"{path}: no samples")
    width = len(rows[0])
    for ln, row in enumerate(rows, start=1):
        if len(row) != width:
            raise FormatError(f"{path}:{ln}: expected {width} columns, got {len(row)}")
    return CalibrationSet(samples=np.array(rows, dtype=np.float64), source=str(path))


def load_calibration_auto(path: str | Path) -> CalibrationSet:
    """Binary when the file starts with the container magic, CSV otherwise."""
    with open(path, "rb") as fh:
        head = fh.read(len(CALIB_MAGIC))
    if head == CALIB_MAGIC:
        return load_calibration(path)
    return load_calibration_csv(path)


# --- plans ---


def save_plan(
    plan: CompressionPlan,
    path: str | Path,
    tool: dict | None = None,
    config: dict | None = None,
) -> None:
    """Deterministic JSON. Failed candidates carry null for final_error."""
    doc = {
        "format": PLAN_FORMAT,
        "version": PLAN_VERSION,
        "tool": tool or {},
        "config": config or {},
        "n_layers": plan.n_layers,
        "overall_ratio": plan.overall_ratio,
        "beta": plan.beta,
        "seed": plan.seed,
        "k": plan.k,
        "layer_ratio": plan.layer_ratio,
        "chosen_error": plan.chosen_error,
        "candidates": [
            {
                "k": row.k,
                "layer_ratio": row.layer_ratio,
                "final_error": _json_float(row.final_error),
                "status": row.status,
                "reason": row.reason,
            }
            for row in plan.candidate_table
        ],
    }
    Path(path).write_text(_dump_json(doc))


def load_plan(path: str | Path) -> CompressionPlan:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc
    where = str(path)
    if _require(doc, "format", where) != PLAN_FORMAT:
        raise FormatError(f"{where}: format is {doc['format']!r}, expected {PLAN_FORMAT!r}")
    if _require(doc, "version", where) != PLAN_VERSION:
        raise FormatError(f"{where}: unsupported version {doc['version']!r}")
    rows = []
    for rdoc in _require(doc, "candidates", where):
        err = rdoc.get("final_error")
        rows.append(
            CandidateResult(
                k=_require(rdoc, "k", where),
                layer_ratio=_require(rdoc, "layer_ratio", where),
                final_error=math.nan if err is None else float(err),
                status=rdoc.get("status", "ok"),
                reason=rdoc.get("reason", ""),
            )
        )
    try:
        return CompressionPlan(
            k=_require(doc, "k", where),
            layer_ratio=_require(doc, "layer_ratio", where),
            candidate_table=tuple(rows),
            chosen_error=_require(doc, "chosen_error", where),
            n_layers=_require(doc, "n_layers", where),
            overall_ratio=_require(doc, "overall_ratio", where),
            beta=_require(doc, "beta", where),
            seed=_require(doc, "seed", where),
        )
    except TypeError as exc:
        raise FormatError(f"{where}: malformed plan ({exc})") from exc


# --- layer error reports ---


def save_error_report(per_layer: tuple[float, ...] | list[float], path: str | Path) -> None:
    """CSV with a fixed header; values keep full precision, nan is legal."""
    lines = [ERROR_CSV_HEADER]
    lines += ["%d,%.17g" % (i, v) for i, v in enumerate(per_layer, start=1)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_error_report(path: str | Path) -> list[float]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != ERROR_CSV_HEADER:
        raise FormatError(f"{path}: missing header {ERROR_CSV_HEADER!r}")
    out: list[float] = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 2:
            raise FormatError(f"{path}:{ln}: expected 2 columns")
        try:
            idx, val = int(parts[0]), float(parts[1])
        except ValueError as exc:
            raise FormatError(f"{path}:{ln}: not numeric ({exc})") from exc
        if idx != len(out) + 1:
            raise FormatError(f"{path}:{ln}: layer_index {idx} out of order")
        out.append(val)
    if not out:
        raise FormatError(f"{path}: no data rows")
    return out
