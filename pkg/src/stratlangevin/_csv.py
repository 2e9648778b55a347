"""CSV writing: header row, ``#`` metadata lines, 17 significant digits."""

import csv
import numbers

import numpy as np


def fmt(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, numbers.Integral):
        return str(int(v))
    v = float(v)
    if not np.isfinite(v):
        return str(v)
    return np.format_float_positional(v, precision=17, unique=False, fractional=False, trim="-")


def write_csv(path, header, rows, meta=()):
    with open(path, "w", newline="") as fh:
        for line in meta:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows([fmt(v) for v in row] for row in rows)


def read_csv(path):
    """Return ``(meta_lines, header, rows)`` with rows as lists of strings."""
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    meta = [l[1:].strip() for l in lines if l.startswith("#")]
    table = list(csv.reader(l for l in lines if l and not l.startswith("#")))
    return meta, table[0], table[1:]
