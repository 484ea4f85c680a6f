# utils/report_writer.py
# Trace CSV, result JSON and batch summary output

import json
import math
import os

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.17g"


def _encode(value, indent, level):
    """JSON text with every float written at 17 significant digits."""
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(value, (bool, np.bool_)) or value is None or isinstance(value, str):
        return json.dumps(value.item() if isinstance(value, np.bool_) else value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return "null"
        return FLOAT_FORMAT % value
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        value = list(value)
        if not value:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in value):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in value) + "]"
        items = [pad + _encode(v, indent, level + 1) for v in value]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(value, indent=2):
    return _encode(value, indent, 0) + "\n"


def result_record(result, model, include_timing=False):
    """Result JSON body: assignment, energy, status, resolved config and wall time."""
    record = {
        "assignment": list(result.rounded.labels),
        "energy": result.rounded_energy,
        "status": result.status,
        "summary": result.summary(model),
        "config": result.config.to_dict(),
        "wall_time": result.wall_time if include_timing else None,
    }
    return record


def write_result(path, result, model, include_timing=False):
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps(result_record(result, model, include_timing)))
    return path


def write_trace(path, trace, include_timing=False):
    """One CSV row per CCCP iteration; `seconds` is left empty unless timing is included."""
    _ensure_parent(path)
    frame = trace.to_frame(include_timing=include_timing)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    return path


def write_batch_summary(path, rows):
    """One row per solved instance, sorted by file name."""
    _ensure_parent(path)
    frame = pd.DataFrame(rows)
    if not frame.empty:
        frame = frame.sort_values("instance").reset_index(drop=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, na_rep="")
    return frame


def _ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent and not os.path.exists(parent):
        os.makedirs(parent)
