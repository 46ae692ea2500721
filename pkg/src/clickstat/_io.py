"""CSV and JSON helpers shared by the command line tools.

Sample files hold one value per line. A first line that does not parse is
taken as a header; blank lines and ``#`` comments are skipped. Reports are
written with sorted keys so identical inputs give byte-identical files.
"""
from importlib import resources
import json
import math

import numpy as np

from .exceptions import IngestionError

SCHEMA_VERSION = "1.0"


def _read_lines(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read().splitlines()
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path}: not a text file ({exc.reason})") from None
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror or exc}") from None


def _parse_rows(path, dtype, n_cols):
    rows = []
    header_seen = False
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        fields = [f.strip() for f in line.replace(";", ",").split(",")]
        try:
            if len(fields) not in n_cols:
                raise ValueError
            values = [dtype(f) for f in fields]
            if dtype is int and any(v < 0 for v in values):
                raise ValueError
            if dtype is float and not all(math.isfinite(v) for v in values):
                raise ValueError
        except ValueError:
            if not rows and not header_seen:
                header_seen = True
                continue
            raise IngestionError(f"{path}: line {lineno}: cannot parse {raw.strip()!r}") from None
        rows.append(values)
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise IngestionError(f"{path}: rows have inconsistent column counts")
    return np.array(rows, dtype=float if dtype is float else np.int64)


def read_values(path):
    """One finite real per line, e.g. pulse areas."""
    return _parse_rows(path, float, (1,))[:, 0]


def read_click_counts(path, n_pixels):
    """Click histogram from ``k`` per line or ``k,count`` rows.

    Returns
    -------
    ndarray of length ``n_pixels + 1``
    """
    data = _parse_rows(path, int, (1, 2))
    if data.shape[1] == 1:
        k, w = data[:, 0], None
    else:
        k, w = data[:, 0], data[:, 1]
    if k.max() > n_pixels:
        raise IngestionError(f"{path}: click number {int(k.max())} exceeds {n_pixels} pixels")
    return np.bincount(k, weights=w, minlength=n_pixels + 1).astype(np.int64)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(doc):
    return json.dumps(_clean(doc), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_text(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IngestionError(f"{path}: {exc.strerror or exc}") from None


def format_table(header, columns):
    """CSV text with a header; floats keep full precision."""
    cols = [np.asarray(c) for c in columns]
    lines = [",".join(header)]
    for row in zip(*cols):
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def _fmt(v):
    if isinstance(v, (np.integer, int)):
        return str(int(v))
    return repr(float(v))


def load_schema(name):
    text = resources.files("clickstat").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def read_config(path):
    """``key = value`` lines; keys may use dashes or underscores."""
    out = {}
    for lineno, raw in enumerate(_read_lines(path), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise IngestionError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out
