"""Plain-text PGM images, sinogram CSV and solver trace CSV."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from rbftomo.projector import Sinogram

SINOGRAM_HEADER = ("angle_index", "det_index", "value")
TRACE_HEADER = ("iter", "objective", "grad_norm", "lambda", "tau", "backtracks")


class FormatError(ValueError):
    """Malformed input file; ``line`` is the 1-based line of the problem."""

    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        where = f"{path}: " if path else ""
        if line is not None:
            where += f"line {line}: "
        super().__init__(where + message)


def write_pgm(image, path) -> None:
    """Write a 2-D image with values in [0, 1] as ASCII PGM (P2, maxval 255)."""
    img = np.asarray(image, dtype=float)
    if img.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min(initial=0.0) < 0 or img.max(initial=0.0) > 1:
        raise ValueError("PGM image values must lie in [0, 1]")
    samples = np.rint(255.0 * img).astype(int)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines += [" ".join(str(v) for v in row) for row in samples]
    Path(path).write_text("\n".join(lines) + "\n")


def _pgm_tokens(text: str):
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0]
        for tok in line.split():
            yield lineno, tok


def read_pgm(path) -> np.ndarray:
    """Read an ASCII PGM written by :func:`write_pgm`; returns values in [0, 1]."""
    text = Path(path).read_text()
    n_lines = len(text.splitlines())
    tokens = list(_pgm_tokens(text))
    if not tokens or tokens[0][1] != "P2":
        raise FormatError("expected magic 'P2'", tokens[0][0] if tokens else 1, path)

    def header_int(i, what):
        if i >= len(tokens):
            raise FormatError(f"missing {what} in header", n_lines, path)
        lineno, tok = tokens[i]
        try:
            return int(tok), lineno
        except ValueError:
            raise FormatError(f"{what} {tok!r} is not an integer", lineno, path) from None

    w, _ = header_int(1, "width")
    h, lineno = header_int(2, "height")
    if w < 1 or h < 1:
        raise FormatError(f"bad image size {w}x{h}", lineno, path)
    maxval, lineno = header_int(3, "maxval")
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", lineno, path)

    body = tokens[4:]
    if len(body) < w * h:
        missing_row = len(body) // w + 1
        raise FormatError(
            f"expected {w * h} samples, found {len(body)}; "
            f"image row {missing_row} is incomplete at end of file",
            n_lines + 1,
            path,
        )
    if len(body) > w * h:
        raise FormatError(f"expected {w * h} samples, found {len(body)}", body[w * h][0], path)
    values = np.empty(w * h)
    for k, (lineno, tok) in enumerate(body):
        try:
            v = int(tok)
        except ValueError:
            raise FormatError(f"sample {tok!r} is not an integer", lineno, path) from None
        if not 0 <= v <= 255:
            raise FormatError(f"sample {v} outside 0..255", lineno, path)
        values[k] = v
    return (values / 255.0).reshape(h, w)


def write_sinogram_csv(sino: Sinogram, path) -> None:
    vals = sino.as_2d()
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SINOGRAM_HEADER)
        for a in range(sino.n_angles):
            for d in range(sino.n_det):
                out.writerow((a, d, format(float(vals[a, d]), ".17g")))


def read_sinogram_csv(path) -> Sinogram:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(c.strip() for c in rows[0]) != SINOGRAM_HEADER:
        raise FormatError("missing header 'angle_index,det_index,value'", 1, path)
    entries: dict[tuple[int, int], float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, found {len(row)}", lineno, path)
        try:
            a, d, v = int(row[0]), int(row[1]), float(row[2])
        except ValueError:
            raise FormatError(f"non-numeric field in {','.join(row)!r}", lineno, path) from None
        if a < 0 or d < 0:
            raise FormatError("negative index", lineno, path)
        if not math.isfinite(v):
            raise FormatError(f"non-finite value {row[2]!r}", lineno, path)
        if (a, d) in entries:
            raise FormatError(f"duplicate entry for angle {a}, detector {d}", lineno, path)
        entries[(a, d)] = v
    if not entries:
        return Sinogram(np.empty(0), 0, 0)
    n_angles = max(a for a, _ in entries) + 1
    n_det = max(d for _, d in entries) + 1
    if len(entries) != n_angles * n_det:
        raise FormatError(
            f"{len(entries)} entries do not fill a {n_angles}x{n_det} sinogram", None, path
        )
    values = np.empty((n_angles, n_det))
    for (a, d), v in entries.items():
        values[a, d] = v
    return Sinogram(values.ravel(), n_angles, n_det)


def write_trace_csv(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TRACE_HEADER)
        for row in trace:
            out.writerow(
                (
                    row.iter,
                    format(row.objective, ".17g"),
                    format(row.grad_norm, ".17g"),
                    format(row.step, ".17g"),
                    format(row.tau, ".17g"),
                    row.backtracks,
                )
            )


def read_trace_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (int(v) if k in ("iter", "backtracks") else float(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_mask_csv(mask, path) -> None:
    """One row per pixel: ``iy,ix,value`` with value 0 or 1."""
    m = np.asarray(mask, dtype=bool)
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(("iy", "ix", "value"))
        for iy, ix in np.ndindex(*m.shape):
            out.writerow((iy, ix, int(m[iy, ix])))
