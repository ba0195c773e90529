"""Plain-text file formats: datasets, coefficient files, tuning grids, scenarios."""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .core import FitResult, GroupedCoefficients, GroupedDesign

FLOAT_FMT = "%.17g"


class InputError(ValueError):
    """Malformed input file; the message names the file and line."""


def fmt(x: float) -> str:
    return FLOAT_FMT % x


def _split(line: str) -> list[str]:
    line = line.strip()
    if "," in line:
        return [tok.strip() for tok in line.split(",")]
    return line.split()


def _parse_floats(tokens, path, lineno):
    try:
        vals = [float(t) for t in tokens]
    except ValueError:
        raise InputError(f"{path}:{lineno}: non-numeric cell in {tokens!r}") from None
    if not all(np.isfinite(vals)):
        raise InputError(f"{path}:{lineno}: non-finite value")
    return vals


@dataclass(frozen=True)
class Dataset:
    design: GroupedDesign
    y: np.ndarray
    # design column (0-based, as in the file after y) for each grouped column
    column_order: tuple[int, ...]
    group_labels: tuple[str, ...]


def read_dataset(path) -> Dataset:
    """Read ``y, x_1, ..., x_r`` rows with optional ``#groups: g p`` or ``#group_map:`` lines.

    Without a directive every column is its own group. A group map assigns a
    label to each design column; columns are reordered so groups are
    contiguous, in order of first appearance.
    """
    rows, groups_gp, group_map = [], None, None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                m = re.match(r"#\s*groups\s*:\s*(\d+)\s+(\d+)\s*$", line)
                if m:
                    groups_gp = (int(m.group(1)), int(m.group(2)), lineno)
                    continue
                m = re.match(r"#\s*group_map\s*:\s*(.+)$", line)
                if m:
                    group_map = (_split(m.group(1)), lineno)
                continue
            vals = _parse_floats(_split(line), path, lineno)
            if rows and len(vals) != len(rows[0][1]):
                raise InputError(
                    f"{path}:{lineno}: expected {len(rows[0][1])} columns, found {len(vals)}"
                )
            rows.append((lineno, vals))
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = np.array([v for _, v in rows])
    if data.shape[1] < 2:
        raise InputError(f"{path}: need a response column and at least one design column")
    y, X = data[:, 0], data[:, 1:]
    r = X.shape[1]
    if group_map is not None:
        labels, lineno = group_map
        if len(labels) != r:
            raise InputError(f"{path}:{lineno}: group map has {len(labels)} entries for {r} columns")
        uniq = list(dict.fromkeys(labels))
        members = [[k for k, lab in enumerate(labels) if lab == u] for u in uniq]
        sizes = {len(m) for m in members}
        if len(sizes) != 1:
            raise InputError(f"{path}:{lineno}: groups must all have the same size")
        order = tuple(k for m in members for k in m)
        design = GroupedDesign(X[:, order], g=len(uniq), p=sizes.pop())
        return Dataset(design, y, order, tuple(uniq))
    if groups_gp is not None:
        g, p, lineno = groups_gp
        if g * p != r:
            raise InputError(f"{path}:{lineno}: g*p = {g * p} but file has {r} design columns")
        return Dataset(GroupedDesign(X, g, p), y, tuple(range(r)), tuple(str(j + 1) for j in range(g)))
    return Dataset(GroupedDesign(X, r, 1), y, tuple(range(r)), tuple(str(j + 1) for j in range(r)))


def write_dataset(path, design: GroupedDesign, y) -> None:
    with open(path, "w") as fh:
        fh.write(f"#groups: {design.g} {design.p}\n")
        for yi, row in zip(np.asarray(y), design.values):
            fh.write(",".join(fmt(v) for v in (yi, *row)) + "\n")


def write_coefficients(path_or_fh, fit: FitResult, dataset: Dataset | None = None, meta: dict | None = None) -> None:
    beta = fit.coefficients
    order = dataset.column_order if dataset else tuple(range(beta.g * beta.p))
    labels = dataset.group_labels if dataset else tuple(str(j + 1) for j in range(beta.g))
    lines = ["# gqnet coefficients"]
    header = dict(meta or {})
    header.update(
        g=beta.g, p=beta.p, converged=str(fit.converged).lower(), status=fit.status,
        iterations=fit.iterations, active_set=" ".join(labels[j] for j in fit.active_set),
        objective_penalized=fmt(fit.objective_penalized),
        objective_quantile=fmt(fit.objective_quantile),
    )
    for k, v in header.items():
        lines.append(f"# {k} = {fmt(v) if isinstance(v, float) else v}")
    lines.append("group\tcolumn\tcoefficient")
    for idx, val in enumerate(beta.flat):
        j = idx // beta.p
        lines.append(f"{labels[j]}\t{order[idx] + 1}\t{fmt(val)}")
    text = "\n".join(lines) + "\n"
    if hasattr(path_or_fh, "write"):
        path_or_fh.write(text)
    else:
        with open(path_or_fh, "w") as fh:
            fh.write(text)


def read_coefficients(path, dataset: Dataset | None = None):
    """Return ``(GroupedCoefficients, metadata dict)``.

    Rows are matched to the dataset's grouped layout by design column.
    """
    meta, entries = {}, []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line == "# gqnet coefficients":
                continue
            if line.startswith("#"):
                key, sep, val = line[1:].partition("=")
                if sep:
                    meta[key.strip()] = val.strip()
                continue
            parts = line.split("\t") if "\t" in line else line.split()
            if parts[:3] == ["group", "column", "coefficient"]:
                continue
            if len(parts) != 3:
                raise InputError(f"{path}:{lineno}: expected 'group column coefficient'")
            try:
                col, val = int(parts[1]) - 1, float(parts[2])
            except ValueError:
                raise InputError(f"{path}:{lineno}: malformed row {line!r}") from None
            entries.append((col, val))
    try:
        g, p = int(meta["g"]), int(meta["p"])
    except (KeyError, ValueError):
        raise InputError(f"{path}: missing g/p header") from None
    if len(entries) != g * p:
        raise InputError(f"{path}: {len(entries)} coefficients for g*p = {g * p}")
    by_col = dict(entries)
    order = dataset.column_order if dataset else tuple(range(g * p))
    if dataset is not None and (dataset.design.g, dataset.design.p) != (g, p):
        raise InputError(
            f"{path}: coefficients are ({g}, {p}) but dataset groups are "
            f"({dataset.design.g}, {dataset.design.p})"
        )
    try:
        flat = [by_col[c] for c in order]
    except KeyError as exc:
        raise InputError(f"{path}: no coefficient for design column {exc.args[0] + 1}") from None
    return GroupedCoefficients.from_flat(flat, g, p), meta


def read_grid_pairs(path):
    """(lambda1, lambda2) rows; returns ``(unique sorted pairs, duplicate count)``."""
    pairs = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            vals = _parse_floats(_split(line), path, lineno)
            if len(vals) != 2:
                raise InputError(f"{path}:{lineno}: expected 'lambda1 lambda2'")
            if min(vals) <= 0:
                raise InputError(f"{path}:{lineno}: tuning parameters must be positive")
            pairs.append(tuple(vals))
    uniq = sorted(set(pairs))
    return uniq, len(pairs) - len(uniq)


SCENARIO_KEYS = {
    "n", "g", "p", "error", "sigma", "tau", "reps", "seed", "beta", "sn",
    "constants", "sweep", "sigma_source", "rho",
}


def read_scenario_file(path) -> dict:
    """``key = value`` lines; unknown keys raise :class:`InputError` naming the key."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key = key.strip().lower()
            if not sep:
                raise InputError(f"{path}:{lineno}: expected 'key = value'")
            if key not in SCENARIO_KEYS:
                raise InputError(f"{path}:{lineno}: unknown scenario key {key!r}")
            out[key] = val.strip()
    return out
