"""Bit-exact file formats: HMAT matrix dumps, CSV schemas, JSON records,
PGM previews, and run manifests.

HMAT v1 is a text format: header line `HMAT 1 <rows> <cols>`, then one line
per row of 17-significant-digit decimals, which round-trip 64-bit floats
exactly. CSV files use '.' decimals, LF newlines, and a mandatory header;
NaN cells are written empty. JSON is UTF-8 with sorted keys.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


class MalformedHeaderError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class ParseFailureError(ValueError):
    pass


def _fmt(x: float) -> str:
    if math.isnan(x):
        return ""
    return format(float(x), ".17g")


def write_matrix_dump(path, M: np.ndarray) -> None:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise ValueError("HMAT stores 2-D matrices")
    rows, cols = M.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"HMAT 1 {rows} {cols}\n")
        for r in range(rows):
            fh.write(" ".join(format(v, ".17g") for v in M[r]))
            fh.write("\n")


def read_matrix_dump(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "HMAT" or header[1] != "1":
            raise MalformedHeaderError(f"bad HMAT header in {path}")
        try:
            rows, cols = int(header[2]), int(header[3])
        except ValueError as exc:
            raise MalformedHeaderError(f"bad HMAT dimensions in {path}") from exc
        body = [line.split() for line in fh.read().splitlines() if line.strip()]
    if len(body) != rows or any(len(line) != cols for line in body):
        raise DimensionMismatchError(f"{path}: body disagrees with {rows}x{cols} header")
    try:
        return np.array([[float(v) for v in line] for line in body], dtype=np.float64)
    except ValueError as exc:
        raise ParseFailureError(f"{path}: non-numeric entry") from exc


def write_labels_csv(path, labels: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,label\n")
        for i, lab in enumerate(labels):
            fh.write(f"{i},{int(lab)}\n")


def read_labels_csv(path) -> np.ndarray:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "index,label":
            raise MalformedHeaderError(f"bad label CSV header in {path}")
        out = []
        for line in fh:
            if not line.strip():
                continue
            idx, lab = line.strip().split(",")
            out.append(int(lab))
    return np.asarray(out, dtype=np.int64)


CONCENTRATION_HEADER = "case,C,trial,H11,H12,r,Htilde11,Htilde12,rtilde"
DECAY_HEADER = "case,C,mean_ratio,std_ratio,trials"
TRACE_HEADER = "step,loss,diag_ww,diag_vv,circ_wv"


def write_concentration_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CONCENTRATION_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.case},{r.C},{r.trial},{_fmt(r.H11)},{_fmt(r.H12)},{_fmt(r.r)},"
                f"{_fmt(r.Htilde11)},{_fmt(r.Htilde12)},{_fmt(r.rtilde)}\n"
            )


def write_decay_csv(path, fit) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(DECAY_HEADER + "\n")
        for C, mean, std in zip(fit.C_grid, fit.ratios, fit.std_ratios):
            fh.write(f"{fit.case},{C},{_fmt(mean)},{_fmt(std)},{fit.trials}\n")


def write_trace_csv(path, trace) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in trace.records:
            fh.write(
                f"{r.step},{_fmt(r.loss)},{_fmt(r.diag_ww)},{_fmt(r.diag_vv)},{_fmt(r.circ_wv)}\n"
            )


def write_spectrum_csv(path, eigenvalues: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("eigenvalue\n")
        for v in eigenvalues:
            fh.write(_fmt(float(v)) + "\n")


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def write_pgm(path, M: np.ndarray) -> dict:
    """8-bit P2 preview with min-max scaling; returns the scaling sidecar dict."""
    M = np.asarray(M, dtype=np.float64)
    lo, hi = float(M.min()), float(M.max())
    span = hi - lo
    pix = np.zeros_like(M) if span == 0 else np.round((M - lo) / span * 255.0)
    pix = pix.astype(int)
    rows, cols = M.shape
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"P2\n{cols} {rows}\n255\n")
        for r in range(rows):
            fh.write(" ".join(str(v) for v in pix[r]))
            fh.write("\n")
    return {"min": lo, "max": hi, "rows": rows, "cols": cols}


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    parameters: dict
    root_seed: int
    tool_version: str
    outputs: list = field(default_factory=list)  # (path, kind, checksum)

    def add_output(self, path, kind: str) -> None:
        self.outputs.append({"path": str(path), "kind": kind, "checksum": sha256_of(path)})

    def write(self, path) -> None:
        write_json(path, {
            "command": self.command,
            "parameters": self.parameters,
            "root_seed": self.root_seed,
            "tool_version": self.tool_version,
            "outputs": self.outputs,
        })
