"""File formats: JSON artifacts with 17-significant-digit floats, CSV tables.

Every writer goes through a temporary file in the target directory followed
by an atomic rename, so a failed command never leaves a partial file.
Loaders check structure and report the offending field path.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import math
import os
import tempfile

import numpy as np

from .analysis import ExperimentRecord
from .datasets import Dataset
from .errors import SchemaError, ValidationError
from .network import IEBN_KINDS, NetworkConfig, ResidualNet, init_network
from .ode import Trajectory

SCHEMAS = ("trajectory", "model", "dataset", "records", "linear_system")


# -- encoding ---------------------------------------------------------------------

def format_float(x):
    return format(float(x), ".17g")


def _encode(obj, depth=0):
    pad = "  " * (depth + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        # JSON has no infinities; an undefined relative change becomes null
        return format_float(obj) if math.isfinite(obj) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist(), depth)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, depth + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + "  " * depth + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v, depth) for v in obj) + "]"
    raise ValidationError(f"cannot serialize {type(obj).__name__}")


def dumps(obj):
    return _encode(obj) + "\n"


def atomic_write_text(path, text):
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write_text(path, dumps(obj))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None


# -- field checks -------------------------------------------------------------------

def _require(d, key, path):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    if key not in d:
        raise SchemaError(f"{path}.{key}", "missing field")
    return d[key]


def _array(value, path, ndim=None):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise SchemaError(path, "expected a (rectangular) numeric array") from None
    if ndim is not None and arr.ndim != ndim:
        raise SchemaError(path, f"expected {ndim}-d array, got {arr.ndim}-d")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(path, "non-finite entry")
    return arr


# -- trajectories ---------------------------------------------------------------------

def trajectory_to_dict(traj):
    return {
        "source": traj.source,
        "states": list(traj.states),
        "step_sizes": list(traj.step_sizes),
        "stage_boundaries": list(traj.stage_boundaries),
    }


def trajectory_from_dict(d, path="$"):
    states = _require(d, "states", path)
    steps = _require(d, "step_sizes", path)
    if not isinstance(states, list) or not isinstance(steps, list):
        raise SchemaError(f"{path}.states", "states and step_sizes must be arrays")
    st = [_array(s, f"{path}.states[{i}]", 1) for i, s in enumerate(states)]
    sz = []
    for i, s in enumerate(steps):
        if isinstance(s, list):
            sz.append(_array(s, f"{path}.step_sizes[{i}]", 1))
        elif isinstance(s, (int, float)) and not isinstance(s, bool):
            sz.append(float(s))
        else:
            raise SchemaError(f"{path}.step_sizes[{i}]", "expected a number or an array")
    if len(sz) != len(st) - 1:
        raise SchemaError(
            f"{path}.step_sizes", f"length {len(sz)} does not match length(states)-1 = {len(st) - 1}"
        )
    bounds = d.get("stage_boundaries", [0])
    try:
        return Trajectory(st, sz, bounds, d.get("source", "ode"))
    except ValidationError as exc:
        raise SchemaError(path, str(exc)) from None


def save_trajectory(path, traj):
    write_json(path, trajectory_to_dict(traj))


def load_trajectory(path):
    return trajectory_from_dict(read_json(path))


def load_trajectories(path):
    """A trajectory file, a JSON list of trajectories, or a directory of files."""
    path = os.fspath(path)
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
        if not names:
            raise ValidationError(f"{path}: no .json trajectory files")
        return [load_trajectory(os.path.join(path, n)) for n in names]
    data = read_json(path)
    if isinstance(data, list):
        return [trajectory_from_dict(d, f"$[{i}]") for i, d in enumerate(data)]
    return [trajectory_from_dict(data)]


def save_trajectories(path, trajs):
    write_json(path, [trajectory_to_dict(t) for t in trajs])


def load_linear_system(path):
    d = read_json(path)
    matrix = _array(_require(d, "matrix", "$"), "$.matrix", 2)
    u0 = _array(_require(d, "u0", "$"), "$.u0", 1)
    if matrix.shape[0] != matrix.shape[1]:
        raise SchemaError("$.matrix", f"matrix must be square, got {matrix.shape}")
    if u0.size != matrix.shape[0]:
        raise SchemaError("$.u0", f"length {u0.size} does not match matrix size {matrix.shape[0]}")
    return matrix, u0


# -- models -------------------------------------------------------------------------

def model_to_dict(model):
    cfg = model.config
    iebn = {}
    if cfg.adaptor in IEBN_KINDS:
        for _, key in cfg.block_keys():
            iebn[key] = {
                "running_mean": model.buffers[f"{key}.bn_mean"],
                "running_var": model.buffers[f"{key}.bn_var"],
            }
    return {
        "config": cfg.to_dict(),
        "params": dict(sorted(model.params.items())),
        "iebn": iebn,
        "fixed": dict(sorted(model.fixed.items())),
        "seed": cfg.seed,
    }


def model_from_dict(d):
    raw_cfg = _require(d, "config", "$")
    try:
        cfg = NetworkConfig.from_dict(raw_cfg)
    except (KeyError, TypeError) as exc:
        raise SchemaError("$.config", f"missing or invalid field {exc}") from None
    except ValidationError as exc:
        raise SchemaError("$.config", str(exc)) from None
    template = init_network(cfg)
    raw_params = _require(d, "params", "$")
    params = {}
    for name, ref in template.params.items():
        arr = _array(_require(raw_params, name, "$.params"), f"$.params.{name}")
        if arr.shape != ref.shape:
            raise SchemaError(f"$.params.{name}", f"shape {arr.shape} does not match expected {ref.shape}")
        params[name] = arr
    extra = sorted(set(raw_params) - set(template.params))
    if extra:
        raise SchemaError(f"$.params.{extra[0]}", "unexpected parameter")
    buffers = {}
    if cfg.adaptor in IEBN_KINDS:
        iebn = _require(d, "iebn", "$")
        for _, key in cfg.block_keys():
            block = _require(iebn, key, "$.iebn")
            for field, buf in (("running_mean", "bn_mean"), ("running_var", "bn_var")):
                arr = _array(_require(block, field, f"$.iebn.{key}"), f"$.iebn.{key}.{field}", 1)
                if arr.shape != template.buffers[f"{key}.{buf}"].shape:
                    raise SchemaError(f"$.iebn.{key}.{field}", "dimension mismatch")
                if buf == "bn_var" and np.any(arr < 0):
                    raise SchemaError(f"$.iebn.{key}.{field}", "negative variance")
                buffers[f"{key}.{buf}"] = arr
    fixed = {}
    raw_fixed = d.get("fixed", {})
    for name, ref in template.fixed.items():
        arr = _array(raw_fixed[name], f"$.fixed.{name}") if name in raw_fixed else ref
        if arr.shape != ref.shape:
            raise SchemaError(f"$.fixed.{name}", "shape mismatch")
        fixed[name] = arr
    return ResidualNet(cfg, params, buffers, fixed)


def save_model(path, model):
    write_json(path, model_to_dict(model))


def load_model(path):
    return model_from_dict(read_json(path))


# -- datasets ---------------------------------------------------------------------

def dataset_from_dict(d):
    for key in ("name", "num_classes", "X_train", "y_train", "X_test", "y_test"):
        _require(d, key, "$")
    Xtr = _array(d["X_train"], "$.X_train", 2)
    Xte = _array(d["X_test"], "$.X_test", 2) if d["X_test"] else np.zeros((0, Xtr.shape[1]))
    if Xte.shape[1] != Xtr.shape[1]:
        raise SchemaError("$.X_test", "feature dimension differs from X_train")
    ytr = np.asarray(d["y_train"], dtype=np.int64)
    yte = np.asarray(d["y_test"], dtype=np.int64)
    if ytr.shape != (Xtr.shape[0],):
        raise SchemaError("$.y_train", "length does not match X_train")
    if yte.shape != (Xte.shape[0],):
        raise SchemaError("$.y_test", "length does not match X_test")
    k = int(d["num_classes"])
    for name, y in (("y_train", ytr), ("y_test", yte)):
        if y.size and (y.min() < 0 or y.max() >= k):
            raise SchemaError(f"$.{name}", f"labels must lie in [0, {k})")
    return Dataset(str(d["name"]), Xtr, ytr, Xte, yte, k)


def save_dataset(path, ds):
    write_json(path, ds.to_dict())


def load_dataset(path):
    return dataset_from_dict(read_json(path))


# -- CSV tables -------------------------------------------------------------------

RECORD_COLUMNS = ["model_id", "adaptor", "seed", "accuracy", "tns"]
PROFILE_COLUMNS = ["input_id", "stage", "block", "nsi", "included"]


def _csv_text(header, rows):
    buf = _stdio.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def records_csv(records):
    rows = [
        [r.model_id, r.adaptor, r.seed, format_float(r.test_accuracy), format_float(r.tns_value)]
        for r in sorted(records, key=lambda r: r.model_id)
    ]
    return _csv_text(RECORD_COLUMNS, rows)


def save_records(path, records):
    atomic_write_text(path, records_csv(records))


def load_records(path, dataset=""):
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise ValidationError(f"{path}: file not found") from None
    if not rows or rows[0] != RECORD_COLUMNS:
        raise SchemaError("header", f"expected columns {','.join(RECORD_COLUMNS)}")
    out = []
    for i, row in enumerate(rows[1:], start=2):
        if len(row) != len(RECORD_COLUMNS):
            raise SchemaError(f"line {i}", f"expected {len(RECORD_COLUMNS)} fields, got {len(row)}")
        try:
            out.append(ExperimentRecord(int(row[0]), row[1], int(row[2]), float(row[3]), float(row[4]), dataset))
        except ValueError as exc:
            raise SchemaError(f"line {i}", str(exc)) from None
    return out


def profile_csv(profiles):
    """``profiles[i]`` is the list of stage statistics of input ``i``."""
    rows = []
    for i, stages in enumerate(profiles):
        for st in stages:
            for b, (v, keep) in enumerate(zip(st.values, st.included)):
                rows.append([i, st.stage_index, b, format_float(v), int(keep)])
    return _csv_text(PROFILE_COLUMNS, rows)


def save_profiles(path, profiles):
    atomic_write_text(path, profile_csv(profiles))


def validate_and_load(path, schema):
    """Schema-checked load; raises :class:`SchemaError` naming the bad field."""
    loaders = {
        "trajectory": load_trajectory,
        "model": load_model,
        "dataset": load_dataset,
        "records": load_records,
        "linear_system": load_linear_system,
    }
    if schema not in loaders:
        raise ValidationError(f"unknown schema {schema!r}; expected one of {SCHEMAS}")
    if not os.path.exists(path):
        raise ValidationError(f"{path}: file not found")
    return loaders[schema](path)
