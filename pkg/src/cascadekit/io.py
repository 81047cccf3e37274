"""JSON/CSV plumbing: complex numbers as ``[re, im]`` pairs, atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile

import numpy as np


def cnum(z):
    z = complex(z)
    return [_clean(z.real), _clean(z.imag)]


def _clean(x):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return 0.0 if x == 0.0 else x


def cvec(v):
    return [cnum(z) for z in np.ravel(v)]


def cmat(A):
    return [cvec(row) for row in np.atleast_2d(A)]


def parse_cnum(x):
    if isinstance(x, (list, tuple)):
        if len(x) != 2:
            raise ValueError(f"complex number must be [re, im], got {x!r}")
        return complex(float(x[0]), float(x[1]))
    return complex(float(x))


def parse_cvec(v, m=None):
    if not isinstance(v, (list, tuple)):
        v = [v]
    # a bare [re, im] pair for m == 1
    if m == 1 and len(v) == 2 and all(isinstance(a, (int, float)) for a in v):
        v = [v]
    out = np.array([parse_cnum(z) for z in v], dtype=complex)
    if m is not None and out.size != m:
        raise ValueError(f"expected a vector of length {m}, got {out.size}")
    return out


def parse_cmat(rows):
    return np.array([[parse_cnum(z) for z in row] for row in rows], dtype=complex)


def jsonable(obj):
    """Recursively turn results into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        if np.iscomplexobj(obj):
            return jsonable(obj.tolist())
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (complex, np.complexfloating)):
        return cnum(obj)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _clean(obj)
    if hasattr(obj, "to_dict"):
        return jsonable(obj.to_dict())
    if hasattr(obj, "to_json"):
        return jsonable(obj.to_json())
    return obj


def dumps(obj):
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def fmt(x):
    return format(float(x), ".17g")


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def atomic_write(path, text):
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
