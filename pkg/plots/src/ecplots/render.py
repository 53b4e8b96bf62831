"""Standard figures from simulation ledger CSVs and report JSONs.

Read-only consumers of the documented file contracts: no science happens
here beyond least-squares fits for display.  Four figure kinds:

    decay        energy ledger CSV -> norm series vs t (log y)
    moments      energy ledger CSV -> accumulated budget integrals vs t
    contraction  coupling ledger CSV -> omega^2 / omega^2(0) vs t (log y),
                 fitted exponential slope annotated
    tails        diagnostics JSON -> exceedance frequency vs threshold R
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXIT_OK = 0
EXIT_SCHEMA = 2

KINDS = ("decay", "moments", "contraction", "tails")


class SchemaError(ValueError):
    pass


@dataclass
class FigureSpec:
    kind: str
    inputs: list[str]
    output: str
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")
        if not self.inputs:
            raise SchemaError("at least one input file is required")


def read_ledger_csv(path: str) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if not header or header[0] != "t":
            raise SchemaError(f"{path}: not a ledger CSV (first column must be 't')")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.size == 0:
        raise SchemaError(f"{path}: ledger has no rows")
    if data.shape[1] != len(header):
        raise SchemaError(f"{path}: row width does not match header")
    return {name: data[:, i] for i, name in enumerate(header)}


def need(table: dict, path: str, *names: str) -> list[np.ndarray]:
    out = []
    for name in names:
        if name not in table:
            raise SchemaError(f"{path}: missing column {name!r}")
        out.append(table[name])
    return out


def cumtrapz(y, t):
    out = np.zeros_like(y, dtype=float)
    if len(t) > 1:
        out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(t))
    return out


def fit_log_slope(t, y, rel_floor=1e-24):
    """Least-squares slope of log y; None when fewer than 3 usable points."""
    y = np.asarray(y, dtype=float)
    keep = y > rel_floor * max(float(y[0]), 1e-300)
    if keep.sum() < 3:
        return None
    A = np.stack([t[keep], np.ones(int(keep.sum()))], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(y[keep]), rcond=None)
    return float(coef[0])


def _render_decay(spec: FigureSpec, ax) -> dict:
    info = {}
    for path in spec.inputs:
        table = read_ledger_csv(path)
        t, q_hm12, u_l2, q_l2 = need(table, path, "t", "q_hm12", "u_l2", "q_l2")
        energy = q_hm12**2 + u_l2**2
        ax.plot(t, energy, label=f"{_short(path)}: weak energy")
        ax.plot(t, q_l2**2, "--", label=f"{_short(path)}: charge L2^2")
        info[_short(path)] = {"final_energy": float(energy[-1])}
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.set_title(spec.title or "energy decay")
    return info


def _render_moments(spec: FigureSpec, ax) -> dict:
    info = {}
    for path in spec.inputs:
        table = read_ledger_csv(path)
        t, q_l2, u_h1, q_l4 = need(table, path, "t", "q_l2", "u_h1", "q_l4")
        acc_weak = cumtrapz(q_l2**2 + u_h1**2, t)
        acc_l4 = cumtrapz(q_l4**4, t)
        ax.plot(t, acc_weak, label=f"{_short(path)}: int (q_L2^2 + grad u^2)")
        ax.plot(t, acc_l4, "--", label=f"{_short(path)}: int q_L4^4")
        slope = None
        if len(t) > 2:
            sel = t >= t[-1] / 4
            A = np.stack([t[sel], np.ones(int(sel.sum()))], axis=1)
            coef, *_ = np.linalg.lstsq(A, acc_weak[sel], rcond=None)
            slope = float(coef[0])
            ax.plot(t, coef[0] * t + coef[1], ":", alpha=0.7)
        info[_short(path)] = {"weak_slope": slope}
    ax.set_xlabel("t")
    ax.set_ylabel("accumulated integral")
    ax.set_title(spec.title or "moment growth")
    return info


def _render_contraction(spec: FigureSpec, ax) -> dict:
    info = {}
    for path in spec.inputs:
        table = read_ledger_csv(path)
        t, omega = need(table, path, "t", "omega_h_sq")
        base = omega[0] if omega[0] > 0 else 1.0
        ax.plot(t, np.maximum(omega / base, 1e-300), label=_short(path))
        slope = fit_log_slope(t, omega)
        info[_short(path)] = {"slope": slope}
        if slope is not None:
            ax.annotate(
                f"slope = {slope:.2f}",
                xy=(t[-1], max(omega[-1] / base, 1e-300)),
                xytext=(-60, 10),
                textcoords="offset points",
                fontsize=9,
            )
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("omega^2 / omega^2(0)")
    ax.set_title(spec.title or "coupling contraction")
    return info


def _render_tails(spec: FigureSpec, ax) -> dict:
    info = {}
    for path in spec.inputs:
        with open(path) as fh:
            try:
                report = json.load(fh)
            except json.JSONDecodeError as e:
                raise SchemaError(f"{path}: not valid JSON: {e}") from e
        block = report.get("tail_events", report)
        for key in ("r_grid", "empirical_e", "empirical_f", "bound_e", "bound_f"):
            if key not in block:
                raise SchemaError(f"{path}: missing column {key!r}")
        r = np.asarray(block["r_grid"], dtype=float)
        floor = 1e-12
        ax.step(r, np.maximum(block["empirical_e"], floor), where="post", label="empirical E")
        ax.step(r, np.maximum(block["empirical_f"], floor), where="post", label="empirical F")
        ax.plot(r, np.maximum(block["bound_e"], floor), "--", label="bound E")
        ax.plot(r, np.maximum(block["bound_f"], floor), "--", label="bound F")
        info[_short(path)] = {
            "max_empirical": float(
                max(np.max(block["empirical_e"]), np.max(block["empirical_f"]))
            )
        }
    ax.set_yscale("log")
    ax.set_xlabel("threshold R")
    ax.set_ylabel("exceedance frequency")
    ax.set_title(spec.title or "tail-event frequencies")
    return info


def _short(path: str) -> str:
    return path.rsplit("/", 1)[-1]


_RENDERERS = {
    "decay": _render_decay,
    "moments": _render_moments,
    "contraction": _render_contraction,
    "tails": _render_tails,
}


def render(spec: FigureSpec) -> dict:
    """Render one figure; returns fit/summary info for the caller."""
    fig, ax = plt.subplots(figsize=(7.0, 4.5), dpi=110)
    try:
        info = _RENDERERS[spec.kind](spec, ax)
        ax.legend(fontsize=8, loc="best")
        fig.tight_layout()
        fig.savefig(spec.output)
    finally:
        plt.close(fig)
    return info


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ecspde-render", description=__doc__)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument(
        "--in", dest="inputs", required=True, action="append",
        help="input CSV/JSON (repeatable)",
    )
    parser.add_argument("--out", required=True)
    parser.add_argument("--title", default=None)
    args = parser.parse_args(argv)
    try:
        spec = FigureSpec(kind=args.kind, inputs=args.inputs, output=args.out, title=args.title)
        info = render(spec)
    except (SchemaError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_SCHEMA
    print(f"wrote {args.out}: {json.dumps(info, sort_keys=True)}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
