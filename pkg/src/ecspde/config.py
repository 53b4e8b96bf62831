"""Run configuration: a single JSON document with every default recorded.

Field specs name initial data and static fields:

    {"kind": "zero"}
    {"kind": "modes", "modes": [{"k": [1, 0], "type": "cos", "amp": 0.5}]}
    {"kind": "random", "amplitude": 0.5, "alpha": 2.0, "kmax": 5, "seed": 1}

Vector specs use the same shapes; mode entries ride the divergence-free
unit carrier k-perp/|k|, and random vectors come from a random stream
function, so every configured vector field is exactly solenoidal.
"""

from __future__ import annotations

import copy
import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .dynamics import DynamicsError, ModelParams, StepSchedule, SystemState
from .noise import NoiseConfig, NoiseConfigError, build_noise_basis
from .spectral import (
    FourierGrid,
    ScalarField,
    SpectralError,
    VectorField,
    leray_project,
    random_divfree_field,
    random_scalar_field,
    strip_mean,
)


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "grid": {"n": 32},
    "params": {"eps": 0.0, "phi": {"kind": "zero"}, "f": {"kind": "zero"}},
    "noise": {"scalar_kmax_sq": 4, "vector_kmax_sq": 4, "sigma": 0.1, "alpha": 2.0},
    "schedule": {"dt": 0.005, "t_final": 1.0, "snapshot_stride": 100, "ledger_stride": 10},
    "initial": {
        "q": {"kind": "random", "amplitude": 0.5, "alpha": 2.0, "kmax": 5, "seed": 1},
        "u": {"kind": "random", "amplitude": 0.5, "alpha": 2.0, "kmax": 5, "seed": 2},
    },
    "ergodicity": {
        "burn_in_frac": 0.25,
        "windows": 8,
        "observables": ["q_l2_sq", "q_l4_4", "q_h12_sq", "u_h1_sq"],
        "rel_tol": 0.10,
        "ks_modes": [[1, 0], [0, 1], [1, 1], [2, 0]],
    },
    "coupling": {
        "shell_m": 4,
        "lambda": None,  # default: 2 sqrt(lambda_next(shell_m))
        "budget_k": 1e6,
        "r_threshold": None,
        "contraction_target": 1e-3,
        "slaved_initial": {
            "q": {"kind": "random", "amplitude": 0.1, "alpha": 2.0, "kmax": 4, "seed": 11},
            "u": {"kind": "random", "amplitude": 0.1, "alpha": 2.0, "kmax": 4, "seed": 12},
        },
    },
    "hk_list": [1.0],
    "lowmodes": [],
    "seed": 0,
    "output_dir": "out",
}


def _merge(defaults, user, path=""):
    if not isinstance(user, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(defaults[key], dict) and defaults[key].get("kind") is None and not _is_fieldspec(val):
            out[key] = _merge(defaults[key], val, path=path + key + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


def _is_fieldspec(val):
    return isinstance(val, dict) and "kind" in val


def resolve_config(user: dict) -> dict:
    """Expand every default; the result is the reproducibility artifact."""
    cfg = _merge(DEFAULTS, user)
    validate_config(cfg)
    return cfg


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except FileNotFoundError as e:
        raise ConfigError(f"config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
    return resolve_config(user)


def validate_config(cfg: dict):
    n = cfg["grid"]["n"]
    if not isinstance(n, int) or n < 8 or n % 2:
        raise ConfigError(f"grid.n must be an even integer >= 8, got {n}")
    noise = cfg["noise"]
    for key in ("scalar_kmax_sq", "vector_kmax_sq"):
        cutoff = noise[key]
        if cutoff < 0:
            raise ConfigError(f"noise.{key} must be >= 0")
        if cutoff > 0 and math.isqrt(cutoff) > n // 3:
            raise ConfigError(
                f"noise.{key}={cutoff} forces modes outside the dealias mask "
                f"(|k| <= {n // 3} for n={n})"
            )
    if noise["sigma"] < 0 or noise["alpha"] < 0:
        raise ConfigError("noise.sigma and noise.alpha must be >= 0")
    sched = cfg["schedule"]
    if sched["dt"] <= 0:
        raise ConfigError("schedule.dt must be > 0")
    if sched["t_final"] < 0:
        raise ConfigError("schedule.t_final must be >= 0")
    steps = round(sched["t_final"] / sched["dt"])
    if abs(steps * sched["dt"] - sched["t_final"]) > 1e-9 * max(sched["dt"], sched["t_final"]):
        raise ConfigError("schedule.t_final must be an integer multiple of schedule.dt")
    if cfg["params"]["eps"] < 0:
        raise ConfigError("params.eps must be >= 0")
    erg = cfg["ergodicity"]
    if not (0 <= erg["burn_in_frac"] < 1):
        raise ConfigError("ergodicity.burn_in_frac must be in [0, 1)")
    coup = cfg["coupling"]
    if coup["shell_m"] < 0 or coup["budget_k"] < 0:
        raise ConfigError("coupling.shell_m and coupling.budget_k must be >= 0")


def write_resolved(cfg: dict, out_dir: str):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved_config.json"), "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# field construction


def scalar_field_from_spec(grid: FourierGrid, spec: dict, mean_zero=True) -> ScalarField:
    kind = spec.get("kind")
    if kind == "zero":
        return ScalarField.zeros(grid)
    if kind == "modes":
        try:
            modes = [
                (tuple(m["k"]), float(m["amp"]), m.get("type", "cos")) for m in spec["modes"]
            ]
            f = ScalarField.from_modes(grid, modes)
        except (KeyError, SpectralError, TypeError) as e:
            raise ConfigError(f"bad mode spec: {e}") from e
        return strip_mean(f) if mean_zero else f
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return random_scalar_field(
            grid,
            rng,
            kmax=int(spec.get("kmax", grid.kmax_dealias)),
            amplitude=float(spec.get("amplitude", 1.0)),
            alpha=float(spec.get("alpha", 2.0)),
        )
    raise ConfigError(f"unknown field kind {kind!r}")


def vector_field_from_spec(grid: FourierGrid, spec: dict) -> VectorField:
    kind = spec.get("kind")
    if kind == "zero":
        return VectorField.zeros(grid)
    if kind == "modes":
        v = VectorField.zeros(grid)
        for m in spec.get("modes", []):
            k = tuple(int(x) for x in m["k"])
            kabs = math.hypot(*k)
            if kabs == 0:
                raise ConfigError("vector mode at k = 0 is not divergence-free data")
            carrier = ScalarField.from_modes(
                grid, [(k, float(m["amp"]) / kabs, m.get("type", "cos"))]
            )
            v.coef[0] += -k[1] * carrier.coef
            v.coef[1] += k[0] * carrier.coef
        return leray_project(v)
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return random_divfree_field(
            grid,
            rng,
            kmax=int(spec.get("kmax", grid.kmax_dealias)),
            amplitude=float(spec.get("amplitude", 1.0)),
            alpha=float(spec.get("alpha", 2.0)),
        )
    raise ConfigError(f"unknown field kind {kind!r}")


@dataclass
class RunSetup:
    cfg: dict
    grid: FourierGrid
    params: ModelParams
    basis: object
    schedule: StepSchedule
    state0: SystemState


def build_run(cfg: dict) -> RunSetup:
    grid = FourierGrid(cfg["grid"]["n"])
    phi_spec = cfg["params"]["phi"]
    phi = None
    if phi_spec and phi_spec.get("kind") != "zero":
        phi = scalar_field_from_spec(grid, phi_spec, mean_zero=False)
    f_spec = cfg["params"]["f"]
    f = None
    if f_spec and f_spec.get("kind") != "zero":
        f = vector_field_from_spec(grid, f_spec)
    try:
        params = ModelParams(phi=phi, f=f, eps=float(cfg["params"]["eps"]))
        schedule = StepSchedule(
            dt=float(cfg["schedule"]["dt"]),
            t_final=float(cfg["schedule"]["t_final"]),
            snapshot_stride=int(cfg["schedule"]["snapshot_stride"]),
            ledger_stride=int(cfg["schedule"]["ledger_stride"]),
        )
        basis = build_noise_basis(
            grid,
            NoiseConfig(
                scalar_kmax_sq=int(cfg["noise"]["scalar_kmax_sq"]),
                vector_kmax_sq=int(cfg["noise"]["vector_kmax_sq"]),
                sigma=float(cfg["noise"]["sigma"]),
                alpha=float(cfg["noise"]["alpha"]),
            ),
        )
    except (DynamicsError, NoiseConfigError) as e:
        raise ConfigError(str(e)) from e
    q0 = scalar_field_from_spec(grid, cfg["initial"]["q"])
    u0 = vector_field_from_spec(grid, cfg["initial"]["u"])
    state0 = SystemState(q0, u0, 0.0)
    return RunSetup(cfg, grid, params, basis, schedule, state0)


def env_threads() -> int:
    raw = os.environ.get("ECSPDE_THREADS", "1")
    try:
        val = int(raw)
    except ValueError as e:
        raise ConfigError(f"ECSPDE_THREADS must be an integer, got {raw!r}") from e
    return max(1, val)
