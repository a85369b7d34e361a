"""Scenario files: TOML with matrix literals and optional CSV sidecars."""

from __future__ import annotations

import csv
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import InvalidArgument, ParseError, ScenarioValidationError, ValidationError
from .fracspace import MatrixPath, PiecewiseLinear, Position, Problem

DEFAULT_TOLERANCES = {
    "hjb": 5e-3,
    "oracle_rel": 0.02,
    "feedback_gap": 0.05,
    "feedback_floor": 1e-3,
    "kappa": 1e-4,
    "symmetry_K": 1e-3,
    "symmetry_M": 1e-6,
    "nonnegative": 1e-8,
}


@dataclass(frozen=True)
class Scenario:
    problem: Problem
    position: Position
    nodes: int = 256
    grading: float = 2.0
    vartheta_frac: float = 0.95
    steps: int = 200
    output: Path = Path("out")
    seed: int = 0
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    source: Path | None = None


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^\s*{re.escape(key)}\s*=", re.MULTILINE)
    match = pat.search(text)
    return None if match is None else text.count("\n", 0, match.start()) + 1


def _require(table: dict, key: str, where: str, text: str):
    if key not in table:
        raise ParseError(f"missing required field '{key}'", field=f"{where}{key}", line=None)
    return table[key]


def _number(value, name: str, text: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError("expected a number", field=name, line=_line_of(text, name.split(".")[-1]))
    return float(value)


def _matrix_literal(value, name: str, text: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError("matrix literal must be a row-major list of numeric rows", field=name,
                         line=_line_of(text, name.split(".")[-1])) from exc
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ParseError("matrix literal must be two-dimensional", field=name, line=_line_of(text, name.split(".")[-1]))
    return arr


def _read_samples(path: Path, name: str) -> tuple[np.ndarray, np.ndarray]:
    """CSV rows ``time, v_1, ..., v_k``; lines starting with ``#`` are skipped."""
    if not path.is_file():
        raise ParseError(f"sample file {path} does not exist", field=name)
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header row
                raise ParseError(f"non-numeric entry in {path.name}", field=name, line=lineno) from None
    if not rows or len({len(r) for r in rows}) != 1 or len(rows[0]) < 2:
        raise ParseError(f"{path.name} must hold rows of equal length 'time, values...'", field=name)
    data = np.asarray(rows)
    return data[:, 0], data[:, 1:]


def _matrix_path(value, name: str, shape_hint, base: Path, text: str) -> MatrixPath:
    if not isinstance(value, dict):
        return MatrixPath.constant(_matrix_literal(value, name, text))
    kind = value.get("kind")
    if kind == "constant":
        return MatrixPath.constant(_matrix_literal(_require(value, "value", name + ".", text), name, text))
    if kind == "polynomial":
        coeffs = _require(value, "coeffs", name + ".", text)
        try:
            arr = np.asarray(coeffs, dtype=float)
        except (TypeError, ValueError) as exc:
            raise ParseError("polynomial coefficients must be a list of matrices", field=name) from exc
        if arr.ndim != 3:
            raise ParseError("polynomial coefficients must be a list of matrices", field=name)
        return MatrixPath.polynomial(arr)
    if kind == "samples":
        path = base / str(_require(value, "file", name + ".", text))
        times, vals = _read_samples(path, name)
        rows, cols = shape_hint(vals.shape[1])
        if rows * cols != vals.shape[1]:
            raise ParseError(f"{path.name}: {vals.shape[1]} entries per row do not fit the expected shape", field=name)
        return MatrixPath.samples(times, vals.reshape(-1, rows, cols))
    raise ParseError(f"unknown matrix kind {kind!r}", field=name, line=_line_of(text, name.split(".")[-1]))


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file; every problem invariant is checked here."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read scenario: {exc}") from exc
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise ParseError(f"malformed scenario: {exc}", line=int(match.group(1)) if match else None) from exc
    base = path.parent

    alpha = _number(_require(data, "alpha", "", text), "alpha", text)
    T = _number(_require(data, "T", "", text), "T", text)
    theta = data.get("theta")
    theta = None if theta is None else _number(theta, "theta", text)
    seed = int(data.get("seed", 0))

    pos_tab = _require(data, "position", "", text)
    w0 = np.atleast_1d(np.asarray(_require(pos_tab, "w0", "position.", text), dtype=float))
    n = w0.size

    mats = _require(data, "matrices", "", text)
    for key in "ABPQR":
        _require(mats, key, "matrices.", text)
    A = _matrix_path(mats["A"], "matrices.A", lambda k: (n, n), base, text)
    B = _matrix_path(mats["B"], "matrices.B", lambda k: (n, k // n), base, text)
    m = B.shape[1]
    Q = _matrix_path(mats["Q"], "matrices.Q", lambda k: (n, n), base, text)
    R = _matrix_path(mats["R"], "matrices.R", lambda k: (m, m), base, text)
    P = _matrix_literal(mats["P"], "matrices.P", text)

    try:
        problem = Problem(alpha, T, A, B, P, Q, R, theta=theta)
    except ValidationError as exc:
        raise ScenarioValidationError(str(exc)) from exc
    except InvalidArgument as exc:
        raise ParseError(str(exc)) from exc

    t = _number(pos_tab.get("t", 0.0), "position.t", text)
    try:
        if "f_file" in pos_tab:
            times, vals = _read_samples(base / str(pos_tab["f_file"]), "position.f_file")
            if vals.shape[1] != n or times[0] != 0.0 or abs(times[-1] - t) > 1e-12 * max(1.0, T):
                raise ParseError("history samples must cover [0, t] with one column per state", field="position.f_file")
            position = Position(alpha, t, w0, PiecewiseLinear.from_nodes(times, vals))
        else:
            f = pos_tab.get("f")
            position = problem.position(w0, t=t, f=None if f is None else np.asarray(f, dtype=float))
    except (InvalidArgument, ValueError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(str(exc), field="position") from exc

    grid_tab = data.get("grid", {})
    fb = data.get("feedback", {})
    out = data.get("output", {})
    tol = dict(DEFAULT_TOLERANCES)
    for key, value in data.get("tolerances", {}).items():
        if key not in tol:
            raise ParseError(f"unknown tolerance '{key}'", field=f"tolerances.{key}", line=_line_of(text, key))
        tol[key] = _number(value, f"tolerances.{key}", text)
    nodes = grid_tab.get("nodes", 256)
    if isinstance(nodes, bool) or not isinstance(nodes, int) or nodes < 2:
        raise ParseError("grid.nodes must be an integer >= 2", field="grid.nodes", line=_line_of(text, "nodes"))
    return Scenario(
        problem=problem,
        position=position,
        nodes=nodes,
        grading=_number(grid_tab.get("grading", 2.0), "grid.grading", text),
        vartheta_frac=_number(fb.get("vartheta_frac", 0.95), "feedback.vartheta_frac", text),
        steps=int(fb.get("steps", 200)),
        output=base / str(out.get("dir", "out")),
        seed=seed,
        tolerances=tol,
        source=path,
    )
