"""Readers for the hesslab file formats.

This package talks to the numerical core only through its files: HMAT matrix
dumps, the concentration/decay/trace CSV schemas, and JSON records. The
parsers here are deliberately independent re-implementations of those
contracts.
"""

import json
import math

import numpy as np


class SchemaMismatchError(ValueError):
    pass


class MissingInputError(FileNotFoundError):
    pass


CONCENTRATION_COLUMNS = ["case", "C", "trial", "H11", "H12", "r",
                         "Htilde11", "Htilde12", "rtilde"]
DECAY_COLUMNS = ["case", "C", "mean_ratio", "std_ratio", "trials"]
TRACE_COLUMNS = ["step", "loss", "diag_ww", "diag_vv", "circ_wv"]


def read_hmat(path):
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingInputError(str(exc)) from exc
    with fh:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["HMAT", "1"]:
            raise SchemaMismatchError(f"{path}: not an HMAT v1 file")
        rows, cols = int(header[2]), int(header[3])
        body = [line.split() for line in fh.read().splitlines() if line.strip()]
    if len(body) != rows or any(len(r) != cols for r in body):
        raise SchemaMismatchError(f"{path}: body does not match {rows}x{cols}")
    return np.array([[float(v) for v in r] for r in body])


def _read_csv(path, expected_columns):
    try:
        fh = open(path, "r", encoding="utf-8")
    except FileNotFoundError as exc:
        raise MissingInputError(str(exc)) from exc
    with fh:
        header = fh.readline().strip()
        if header.split(",") != expected_columns:
            raise SchemaMismatchError(f"{path}: header {header!r} does not match schema")
        rows = []
        for line in fh:
            if not line.strip():
                continue
            toks = line.rstrip("\n").split(",")
            if len(toks) != len(expected_columns):
                raise SchemaMismatchError(f"{path}: ragged row {line!r}")
            rows.append(toks)
    return rows


def _num(tok):
    return math.nan if tok == "" else float(tok)


def read_concentration_csv(path):
    rows = _read_csv(path, CONCENTRATION_COLUMNS)
    return [
        {
            "case": r[0],
            "C": int(r[1]),
            "trial": int(r[2]),
            "H11": _num(r[3]),
            "H12": _num(r[4]),
            "r": _num(r[5]),
            "Htilde11": _num(r[6]),
            "Htilde12": _num(r[7]),
            "rtilde": _num(r[8]),
        }
        for r in rows
    ]


def read_decay_csv(path):
    rows = _read_csv(path, DECAY_COLUMNS)
    return [
        {
            "case": r[0],
            "C": int(r[1]),
            "mean_ratio": _num(r[2]),
            "std_ratio": _num(r[3]),
            "trials": int(r[4]),
        }
        for r in rows
    ]


def read_trace_csv(path):
    rows = _read_csv(path, TRACE_COLUMNS)
    return [
        {
            "step": int(r[0]),
            "loss": _num(r[1]),
            "diag_ww": _num(r[2]),
            "diag_vv": _num(r[3]),
            "circ_wv": _num(r[4]),
        }
        for r in rows
    ]


def read_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise MissingInputError(str(exc)) from exc
