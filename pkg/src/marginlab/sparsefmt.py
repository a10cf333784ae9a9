"""Plain-text sparse format for distributions and trained hyperplanes.

Distribution files::

    dim 17
    radius 4
    # any comment line, e.g. "# kind: small_tau"
    1 0.0625 3:2.8284271247461903 16:2.8284271247461903

Each atom line is ``label probability index:value ...``.  Hyperplane files use
``dim``, ``norm`` and a single ``w index:value ...`` line.
"""
from __future__ import annotations

import io
import os
from decimal import Decimal
from typing import Iterable, TextIO

from .core import (AtomDistribution, FiniteDistribution, Hyperplane, LabeledExample,
                   SparseVector)


def fmt_float(x: float) -> str:
    """Exact decimal when it fits in 17 significant digits, else ``%.17g``."""
    x = float(x)
    if x == 0:
        return "0"
    d = Decimal(x).normalize()
    if len(d.as_tuple().digits) <= 17:
        s = format(d, "f") if -7 <= d.adjusted() <= 16 else format(d, "E")
        return s
    return format(x, ".17g")


def _entries(v: SparseVector) -> str:
    return " ".join(f"{i}:{fmt_float(x)}" for i, x in v.entries())


def _open(target, mode):
    if isinstance(target, (str, os.PathLike)):
        try:
            return open(target, mode, encoding="utf-8", newline="\n"), True
        except OSError as exc:
            raise OSError(f"{target}: {exc.strerror}") from exc
    return target, False


def write_distribution(D: AtomDistribution, target, meta: dict | None = None) -> None:
    fh, own = _open(target, "w")
    try:
        fh.write(f"dim {D.dim}\n")
        fh.write(f"radius {fmt_float(D.radius)}\n")
        for key, val in (meta or {}).items():
            fh.write(f"# {key}: {val}\n")
        for ex, p in D.atoms():
            fh.write(f"{ex.label} {fmt_float(p)} {_entries(ex.point)}".rstrip() + "\n")
    finally:
        if own:
            fh.close()


def _header(lines: Iterable[str]) -> tuple[dict, dict, list[str]]:
    fields, meta, body = {}, {}, []
    for raw in lines:
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, val = line[1:].partition(":")
            meta[key.strip()] = val.strip()
            continue
        head = line.split(None, 1)[0]
        if head in ("dim", "radius", "norm"):
            fields[head] = line.split()[1]
        else:
            body.append(line)
    return fields, meta, body


def _parse_entries(tokens: list[str], dim: int) -> SparseVector:
    pairs = [t.split(":") for t in tokens]
    return SparseVector(dim, [int(i) for i, _ in pairs], [float(v) for _, v in pairs])


def read_distribution(source) -> tuple[FiniteDistribution, dict]:
    fh, own = _open(source, "r")
    try:
        fields, meta, body = _header(fh)
    finally:
        if own:
            fh.close()
    try:
        dim = int(fields["dim"])
        radius = float(fields["radius"])
    except KeyError as exc:
        raise ValueError(f"missing header field {exc.args[0]!r}") from None
    atoms = []
    for line in body:
        tok = line.split()
        atoms.append((LabeledExample(_parse_entries(tok[2:], dim), int(tok[0])), float(tok[1])))
    return FiniteDistribution(atoms, radius), meta


def write_hyperplane(w: Hyperplane, target, meta: dict | None = None) -> None:
    fh, own = _open(target, "w")
    try:
        fh.write(f"dim {w.dim}\n")
        fh.write(f"norm {fmt_float(w.norm)}\n")
        for key, val in (meta or {}).items():
            fh.write(f"# {key}: {val}\n")
        fh.write(f"w {_entries(w.weights)}".rstrip() + "\n")
    finally:
        if own:
            fh.close()


def read_hyperplane(source) -> tuple[Hyperplane, dict]:
    fh, own = _open(source, "r")
    try:
        fields, meta, body = _header(fh)
    finally:
        if own:
            fh.close()
    dim = int(fields["dim"])
    weights = [line for line in body if line.split(None, 1)[0] == "w"]
    if len(weights) != 1:
        raise ValueError("expected exactly one 'w' line")
    w = Hyperplane(_parse_entries(weights[0].split()[1:], dim))
    if "norm" in fields and abs(float(fields["norm"]) - w.norm) > 1e-9 * max(1.0, w.norm):
        raise ValueError("stored norm does not match the weights")
    return w, meta


def dumps_distribution(D: AtomDistribution, meta: dict | None = None) -> str:
    buf = io.StringIO()
    write_distribution(D, buf, meta)
    return buf.getvalue()
