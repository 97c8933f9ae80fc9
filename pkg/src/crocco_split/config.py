"""YAML run configuration.

Minimal file::

    scenario: burgers-fan

Everything else has defaults; unknown keys are rejected with their path.
Grid sizes are cell counts (a 16-cell axis has 17 nodes).
"""
from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .driver import MODES, RunConfig, VerificationOptions
from .errors import ConfigError
from .geometry import Domain2D, GridSpec
from .porous import PorousParams
from .scenarios import FIELD_KEYS, PRESETS, Scenario, load_preset
from .transport import TransportParams

DEFAULTS = {
    "scenario": None,
    "mode": None,
    "workers": 1,
    "grid": {"nx": 16, "ny": 16, "nz": 32, "T": 1.0, "n_split": 8},
    "domain": {"kind": "rectangle", "x": [0.0, 1.0], "y": [0.0, 1.0], "vertices": None},
    "porous": {
        "epsilon": 1e-6, "inner_steps": 8, "theta": 1.0, "newton_tol": 1e-10,
        "newton_max_iter": 25, "max_bisections": 4,
    },
    "transport": {"ode_substeps": 8, "damping_factor": 2, "tol_cross": 1e-12},
    "verification": {
        "bounds": True, "bv": True, "weak_residual": True, "beta": None, "beta_tilde": None,
        "history_stride": 1, "bound_tol": 1e-10,
    },
    "fields": None,
    "cutoff": {"mode": None, "d0": None},
    "output": {
        "dir": "out", "physical": False, "physical_nz": 65, "physical_zmax": 8.0,
        "probes": [[0.5, 0.5]],
    },
}

_TYPES = {
    "workers": int,
    "grid.nx": int, "grid.ny": int, "grid.nz": int, "grid.T": float, "grid.n_split": int,
    "porous.epsilon": float, "porous.inner_steps": int, "porous.theta": float,
    "porous.newton_tol": float, "porous.newton_max_iter": int, "porous.max_bisections": int,
    "transport.ode_substeps": int, "transport.damping_factor": float, "transport.tol_cross": float,
    "verification.bounds": bool, "verification.bv": bool, "verification.weak_residual": bool,
    "verification.beta": (float, type(None)), "verification.beta_tilde": (float, type(None)),
    "verification.history_stride": int, "verification.bound_tol": float,
    "cutoff.d0": (float, type(None)),
    "output.physical": bool, "output.physical_nz": int, "output.physical_zmax": float,
}


def _coerce(key, val):
    want = _TYPES.get(key)
    if want is None:
        return val
    kinds = want if isinstance(want, tuple) else (want,)
    if val is None and type(None) in kinds:
        return None
    if bool in kinds:
        if isinstance(val, bool):
            return val
        raise ConfigError(f"expected true/false, got {val!r}", key=key)
    if int in kinds:
        if isinstance(val, bool) or not isinstance(val, int):
            if isinstance(val, float) and val.is_integer():
                return int(val)
            raise ConfigError(f"expected an integer, got {val!r}", key=key)
        return val
    if float in kinds:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(f"expected a number, got {val!r}", key=key)
        return float(val)
    return val


def _merge(defaults, given, path=""):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        key = f"{path}{k}"
        if k not in defaults:
            raise ConfigError("unknown key", key=key)
        d = defaults[k]
        if isinstance(d, dict):
            if not isinstance(v, dict):
                raise ConfigError("expected a mapping", key=key)
            out[k] = _merge(d, v, key + ".")
        else:
            out[k] = _coerce(key, v)
    return out


def config_from_dict(raw):
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at top level")
    fields = raw.get("fields")
    raw_nf = {k: v for k, v in raw.items() if k != "fields"}
    c = _merge({k: v for k, v in DEFAULTS.items() if k != "fields"}, raw_nf)
    c["fields"] = fields

    name = c["scenario"]
    if fields is not None:
        if not isinstance(fields, dict):
            raise ConfigError("expected a mapping of expressions", key="fields")
        for k in fields:
            if k not in FIELD_KEYS:
                raise ConfigError("unknown key", key=f"fields.{k}")
        base = dict(PRESETS[name].fields) if name in PRESETS else {}
        base.update({k: str(v) for k, v in fields.items()})
        preset = PRESETS.get(name)
        sc = Scenario.from_exprs(
            name or "custom", base,
            mode=preset.mode if preset else "split",
            cutoff=preset.cutoff if preset else "bump",
            note=(preset.note + " (fields overridden)") if preset else "user-defined fields",
        )
    elif name is None:
        raise ConfigError("required (a preset name, or a fields mapping)", key="scenario")
    else:
        sc = load_preset(name)

    mode = c["mode"] or sc.mode
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}", key="mode")

    g = c["grid"]
    if g["n_split"] % 2:
        raise ConfigError(
            "n_split must be even: porous and transport intervals alternate in pairs", key="grid.n_split"
        )
    spec = GridSpec(g["nx"], g["ny"], g["nz"], g["T"], g["n_split"])

    d = c["domain"]
    if d["kind"] == "rectangle":
        x, y = d["x"], d["y"]
        if not (isinstance(x, list) and isinstance(y, list) and len(x) == 2 and len(y) == 2):
            raise ConfigError("rectangle needs x: [min, max] and y: [min, max]", key="domain")
        domain = Domain2D.rectangle(float(x[0]), float(x[1]), float(y[0]), float(y[1]))
    elif d["kind"] == "polygon":
        if not d["vertices"]:
            raise ConfigError("polygon needs a vertices list", key="domain.vertices")
        domain = Domain2D.polygon([[float(a) for a in v] for v in d["vertices"]])
    else:
        raise ConfigError(f"unknown domain kind {d['kind']!r}", key="domain.kind")

    p = c["porous"]
    if not p["epsilon"] > 0:
        raise ConfigError("must be > 0 (the regularization keeps the column problem uniformly parabolic)",
                          key="porous.epsilon")
    porous = PorousParams(**p)
    transport = TransportParams(**c["transport"])
    v = c["verification"]
    if v["history_stride"] < 1:
        raise ConfigError("must be >= 1", key="verification.history_stride")
    ver = VerificationOptions(**v)
    cut = c["cutoff"]
    if cut["mode"] not in (None, "bump", "one", "zero"):
        raise ConfigError("expected bump, one or zero", key="cutoff.mode")
    if c["workers"] < 1:
        raise ConfigError("must be >= 1", key="workers")
    o = c["output"]
    if not isinstance(o["probes"], list) or any(
        not (isinstance(q, list) and len(q) == 2) for q in o["probes"]
    ):
        raise ConfigError("expected a list of [xi, eta] pairs", key="output.probes")

    cfg = RunConfig(
        scenario=sc, grid=spec, domain=domain, mode=mode, porous=porous, transport=transport,
        verification=ver, cutoff=cut["mode"], d0=cut["d0"], workers=c["workers"],
        # the worker count and output location never change results, so they stay out of the echo
        echo={k: v for k, v in c.items() if k not in ("workers", "output")},
        output=o,
    )
    return cfg


def parse_config(path):
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    return config_from_dict(raw)
