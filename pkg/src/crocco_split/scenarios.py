"""Closed-form scenario presets and expression-defined custom scenarios.

Fields are written as sympy expressions in ``t, x, y, zeta`` (``xi``, ``eta``
and ``z`` are accepted aliases); every derivative the solver needs is taken
symbolically, so presets never fall back to finite differences.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import sympy as sp
from sympy.parsing.sympy_parser import (
    implicit_multiplication_application,
    parse_expr,
    standard_transformations,
)

from .coefficients import BoundaryData, EulerTrace, KField
from .errors import ConfigError

t_, x_, y_, z_ = sp.symbols("t x y zeta", real=True)
_LOCALS = {
    "t": t_, "x": x_, "y": y_, "zeta": z_, "xi": x_, "eta": y_, "z": z_,
    "pi": sp.pi, "E": sp.E,
}
_TRANSFORMS = standard_transformations + (implicit_multiplication_application,)

FIELD_KEYS = ("k", "U", "p_x", "p_y", "W0", "W1")


def parse(text, key=None):
    try:
        expr = parse_expr(str(text), local_dict=dict(_LOCALS), transformations=_TRANSFORMS)
    except Exception as exc:  # noqa: BLE001 - sympy raises many types
        raise ConfigError(f"cannot parse expression {text!r}: {exc}", key=key) from exc
    extra = expr.free_symbols - {t_, x_, y_, z_}
    if extra:
        names = ", ".join(sorted(str(s) for s in extra))
        raise ConfigError(f"unknown symbol(s) {names} in {text!r}", key=key)
    return expr


def _lambdify(expr, args):
    fn = sp.lambdify(args, expr, modules="numpy")

    def call(*vals):
        vals = [np.asarray(v, dtype=float) for v in vals]
        out = np.asarray(fn(*vals), dtype=float)
        shape = np.broadcast_shapes(*(v.shape for v in vals)) if vals else ()
        return np.broadcast_to(out, shape) if out.shape != shape else out

    call.expr = expr
    return call


@dataclass
class ScenarioPreset:
    name: str
    fields: dict
    note: str
    mode: str = "split"
    cutoff: str = "bump"
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    exact: bool = False  # W1 is the exact solution everywhere

    def describe(self):
        return {
            "name": self.name,
            "exact": self.exact,
            "note": self.note,
            "mode": self.mode,
            "cutoff": self.cutoff,
            "fields": dict(self.fields),
        }


_G_SHIFT = "(1 - zeta)*(1 + sin(pi*({s}))*cos(pi*y)/4)"

PRESETS = {
    p.name: p
    for p in [
        ScenarioPreset(
            "uniform-shear",
            {"k": "0", "U": "1", "p_x": "0", "p_y": "0", "W0": "1 - zeta", "W1": "1 - zeta"},
            "constant outer flow, zero pressure gradient, linear shear W = 1-zeta; "
            "the zeta=0 flux condition W W_zeta = 0 is not met by 1-zeta",
        ),
        ScenarioPreset(
            "accelerating-shear",
            {"k": "0", "U": "exp(t)", "p_x": "-exp(t)", "p_y": "0",
             "W0": "1 - zeta", "W1": "1 - zeta"},
            "uniformly accelerating outer flow with f = 1; W = 1-zeta is an exact "
            "steady state of both sub-steps, flux condition included",
            cutoff="one",
            exact=True,
        ),
        ScenarioPreset(
            "burgers-fan",
            {"k": "y/(1 + x)", "U": "1", "p_x": "0", "p_y": "0",
             "W0": "1 - zeta", "W1": "1 - zeta"},
            "direction field k = y/(1+x) solving inviscid Burgers; straight "
            "characteristic lines fan out from (-1, 0)",
        ),
        ScenarioPreset(
            "decel-outer",
            {"k": "0", "U": "sqrt(1 + 2*x)", "p_x": "-1", "p_y": "0",
             "W0": "1 - zeta", "W1": "1 - zeta"},
            "steady outer flow U = sqrt(1+2x) with favorable gradient p_x = -1 (U U_x = 1)",
        ),
        ScenarioPreset(
            "transport-only",
            {"k": "0", "U": "1", "p_x": "0", "p_y": "0",
             "W0": _G_SHIFT.format(s="x"), "W1": _G_SHIFT.format(s="x - zeta*t")},
            "pure transport with U = 1, k = 0 and b = b1 = 0; exact solution is the "
            "shifted profile G(x - zeta t, y, zeta)",
            mode="transport-only",
            cutoff="zero",
            exact=True,
        ),
        ScenarioPreset(
            "porous-only",
            {"k": "0", "U": "sqrt(1 + 2*x)", "p_x": "-1", "p_y": "0",
             "W0": "(1 - zeta)*(1 + zeta/2)", "W1": "(1 - zeta)*(1 + zeta/2)"},
            "column-wise porous-medium problem on decelerating-outer data with a "
            "non-equilibrium initial profile",
            mode="porous-only",
        ),
    ]
}


def list_presets():
    return [PRESETS[k].describe() for k in sorted(PRESETS)]


@dataclass
class Scenario:
    """Compiled scenario: callables for every field and derivative."""

    name: str
    exprs: dict
    kfield: KField
    trace: EulerTrace
    data: BoundaryData
    mode: str = "split"
    cutoff: str = "bump"
    note: str = ""
    domain: tuple = (0.0, 1.0, 0.0, 1.0)
    U_constant: bool = field(default=False)
    U_value: float = field(default=float("nan"))
    exact: bool = False

    @classmethod
    def from_exprs(
        cls, name, fields, mode="split", cutoff="bump", note="", domain=(0.0, 1.0, 0.0, 1.0), exact=False
    ):
        missing = [k for k in FIELD_KEYS if k not in fields]
        if missing:
            raise ConfigError(f"missing field expression(s): {', '.join(missing)}", key="fields")
        unknown = set(fields) - set(FIELD_KEYS)
        if unknown:
            raise ConfigError(f"unknown field(s): {', '.join(sorted(unknown))}", key="fields")
        e = {k: parse(v, key=f"fields.{k}") for k, v in fields.items()}
        allowed = {
            "k": {x_, y_},
            "U": {t_, x_, y_},
            "p_x": {t_, x_, y_},
            "p_y": {t_, x_, y_},
            "W0": {x_, y_, z_},
            "W1": {t_, x_, y_, z_},
        }
        for key, syms in allowed.items():
            bad = e[key].free_symbols - syms
            if bad:
                raise ConfigError(
                    f"{key} may only depend on {sorted(map(str, syms))}", key=f"fields.{key}"
                )
        xy, txy, xyz, txyz = (x_, y_), (t_, x_, y_), (x_, y_, z_), (t_, x_, y_, z_)
        k = e["k"]
        kfield = KField(
            _lambdify(k, xy), _lambdify(sp.diff(k, x_), xy), _lambdify(sp.diff(k, y_), xy)
        )
        U = e["U"]
        trace = EulerTrace(
            _lambdify(U, txy),
            _lambdify(sp.diff(U, t_), txy),
            _lambdify(sp.diff(U, x_), txy),
            _lambdify(sp.diff(U, y_), txy),
            _lambdify(e["p_x"], txy),
            _lambdify(e["p_y"], txy),
        )
        W1 = e["W1"]
        W1_z = sp.diff(W1, z_)
        data = BoundaryData(
            _lambdify(e["W0"], xyz),
            _lambdify(W1, txyz),
            _lambdify(sp.diff(W1, t_), txyz),
            _lambdify(W1_z, txyz),
            _lambdify(sp.diff(W1_z, z_), txyz),
            _lambdify(sp.diff(W1_z, t_), txyz),
        )
        U_const = not U.free_symbols
        return cls(
            name, {k: str(v) for k, v in e.items()}, kfield, trace, data, mode, cutoff, note,
            tuple(domain), U_const, float(U) if U_const else float("nan"), exact,
        )


def load_preset(name):
    if name not in PRESETS:
        raise ConfigError(
            f"unknown scenario {name!r}; available: {', '.join(sorted(PRESETS))}", key="scenario"
        )
    p = PRESETS[name]
    return Scenario.from_exprs(p.name, p.fields, p.mode, p.cutoff, p.note, p.domain, p.exact)
