"""Command-line interface: ``twoscale-ldp <command> [options]``.

Commands write CSV tables (``#``-prefixed metadata lines, then a header)
into ``--out`` and, with ``--svg``, a line chart next to each table.  The
same config and seed always produce byte-identical files.

Exit codes: 0 success, 1 acceptance failure, 2 configuration error,
3 numeric failure.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import hamiltonian as ham
from . import hjb, mc, rate, scenarios
from .errors import ConfigError, LdpError, NumericFailure, UnsupportedError
from .fastgen import GridSpec, fast_generator
from .levy import FiniteAtoms
from .model import CoefficientSet, HalfLine, ModelSpec, PolyCoefficient, RealLine

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = ["main", "parse_config", "RunConfig", "RunReport", "emit_outputs", "SCHEMA"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


# --- configuration -------------------------------------------------------------------

def _pos(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _finite(v):
    return math.isfinite(v)


def _terms_ok(v):
    return all(i >= 0 and j >= 0 for i, j, _ in v)


def _atoms_ok(v):
    return all(m > 0 and z != 0 for z, m in v)


# verify presets: name -> (check numbers, tol_scale); "" leaves the config as is
PRESETS = {
    "": None,
    "acceptance": (tuple(range(1, 11)), 1.0),
    "quick": ((1, 2, 3, 5, 6, 9, 10), 1.0),
}

# section -> key -> (type, default, predicate, description of the invariant)
SCHEMA = {
    "": {
        "scenario": (str, "bns", lambda v: v in ("bns", "gene", "custom"),
                     "one of bns, gene, custom"),
        "seed": (int, 20240917, _nonneg, "a nonnegative integer"),
        "workers": (int, 1, _pos, "a positive integer"),
    },
    "bns": {
        "a": (float, 1.0, _pos, "a > 0"), "b": (float, 1.0, _pos, "b > 0"),
        "r": (float, 0.0, _finite, "finite"), "x0": (float, 0.0, _finite, "finite"),
        "y0": (float, 1.0, _nonneg, "y0 >= 0"), "K": (float, math.e ** 0.5, _pos, "K > 0"),
        "t": (float, 1.0, _pos, "t > 0"),
    },
    "gene": {
        "kappa1": (float, 1.0, _pos, "kappa1 > 0"), "kappa_m1": (float, 1.0, _pos, "kappa_m1 > 0"),
        "kappa2": (float, 1.0, _pos, "kappa2 > 0"), "kappa3": (float, 1.0, _pos, "kappa3 > 0"),
        "x0": (float, 0.5, _pos, "x0 > 0"), "y0": (float, 1.0, lambda v: v in (0.0, 1.0), "0 or 1"),
        "t": (float, 1.0, _pos, "t > 0"),
    },
    "custom": {
        "x0": (float, 0.0, _finite, "finite"), "y0": (float, 0.0, _finite, "finite"),
        "fast_domain": (str, "real", lambda v: v in ("real", "half"), "one of real, half"),
        "b": ("terms", [], _terms_ok, "a list of [i, j, c] polynomial terms"),
        "b0": ("terms", [], _terms_ok, "a list of [i, j, c] polynomial terms"),
        "sigma": ("terms", [], _terms_ok, "a list of [i, j, c] polynomial terms"),
        "b1": ("terms", [[0, 1, -1.0]], _terms_ok, "a list of [i, j, c] polynomial terms"),
        "sigma1": ("terms", [[0, 0, 1.0]], _terms_ok, "a list of [i, j, c] polynomial terms"),
        "sigma_sqrt": (bool, False, lambda v: True, "true or false"),
        "sigma1_sqrt": (bool, False, lambda v: True, "true or false"),
        "rho": (float, 0.0, lambda v: -1 <= v <= 1, "-1 <= rho <= 1"),
        "nu1_atoms": ("terms2", [], _atoms_ok, "a list of [location, mass] pairs, mass > 0"),
        "nu2_atoms": ("terms2", [], _atoms_ok, "a list of [location, mass] pairs, mass > 0"),
    },
    "hamiltonian": {
        "backend": (str, "closed", lambda v: v in ("closed", "printed", "pdmp", "matrix", "fk"),
                    "one of closed, printed, pdmp, matrix, fk"),
        "x": (list, [1.0], lambda v: len(v) > 0, "a non-empty list of numbers"),
        "p_min": (float, -1.0, _finite, "finite"), "p_max": (float, 1.0, _finite, "finite"),
        "n_p": (int, 21, lambda v: v >= 2, "n_p >= 2"),
        "fk_T": (float, 100.0, _pos, "fk_T > 0"), "fk_dt": (float, 1e-3, _pos, "fk_dt > 0"),
        "fk_paths": (int, 20_000, lambda v: v >= 2, "fk_paths >= 2"),
    },
    "grid": {
        "ymin": (float, 0.0, _finite, "finite"), "ymax": (float, 40.0, _finite, "finite"),
        "n": (int, 1200, lambda v: v >= 3, "n >= 3"),
    },
    "rate": {
        "q_min": (float, -2.0, _finite, "finite"), "q_max": (float, 2.0, _finite, "finite"),
        "n_q": (int, 41, lambda v: v >= 2, "n_q >= 2"),
        "dx_min": (float, -1.0, _finite, "finite"), "dx_max": (float, 1.0, _finite, "finite"),
        "n_x": (int, 41, lambda v: v >= 2, "n_x >= 2"),
    },
    "hjb": {
        "xmin": (float, -4.0, _finite, "finite"), "xmax": (float, 4.0, _finite, "finite"),
        "dx": (float, 0.01, _pos, "dx > 0"), "t": (float, 0.5, _pos, "t > 0"),
        "initial": (str, "gaussian-bump", lambda v: v in ("gaussian-bump", "capped-linear"),
                    "one of gaussian-bump, capped-linear"),
        "beta": (float, 0.5, _finite, "finite"), "cap": (float, 1.0, _pos, "cap > 0"),
        "center": (float, 0.0, _finite, "finite"),
        "slope_cap": (float, 0.0, _nonneg, ">= 0 (0 selects the automatic cap)"),
    },
    "mc": {
        "epsilons": (list, [0.4, 0.2, 0.1], lambda v: len(v) > 0 and all(e > 0 for e in v),
                     "a non-empty list of positive numbers"),
        "n_paths": (int, 100_000, _pos, "n_paths > 0"),
        "dt_over_eps": (float, 0.05, lambda v: 0 < v <= 0.1, "0 < dt_over_eps <= 0.1"),
        "substeps": (int, 1, _pos, "substeps > 0"),
        "threshold_offset": (float, 0.5, _finite, "finite"),
        "t": (float, 1.0, _pos, "t > 0 (horizon for custom models)"),
    },
    "verify": {
        "preset": (str, "", lambda v: v in PRESETS, "one of " + ", ".join(p for p in PRESETS if p)),
        "checks": (list, [], lambda v: True, "a list of check numbers or names"),
        "tol_scale": (float, 1.0, _nonneg, "tol_scale >= 0"),
    },
}


@dataclass(frozen=True)
class RunConfig:
    command: str
    values: dict  # section -> {key: value}, fully populated
    out_dir: str
    svg: bool = False
    check: str | None = None
    dump_generator: bool = False

    def section(self, name: str) -> dict:
        return self.values[name]

    def echo(self) -> list:
        lines = []
        for sec in sorted(self.values):
            for k in sorted(self.values[sec]):
                if not sec and k == "workers":
                    continue  # results do not depend on it
                key = k if not sec else f"{sec}.{k}"
                lines.append(f"{key}={_fmt_value(self.values[sec][k])}")
        return lines


def _fmt_value(v):
    if isinstance(v, list):
        return "[" + ",".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, float):
        return format(v, ".12g")
    return str(v)


def _coerce(sec, key, raw):
    typ, _, pred, desc = SCHEMA[sec][key]
    name = key if not sec else f"{sec}.{key}"
    if typ is float:
        if isinstance(raw, bool) or not isinstance(raw, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {type(raw).__name__}")
        val = float(raw)
    elif typ is int:
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise ConfigError(f"{name}: expected an integer, got {type(raw).__name__}")
        val = raw
    elif typ is bool:
        if not isinstance(raw, bool):
            raise ConfigError(f"{name}: expected true or false, got {type(raw).__name__}")
        val = raw
    elif typ in ("terms", "terms2"):
        width = 3 if typ == "terms" else 2
        ok = isinstance(raw, list) and all(
            isinstance(t, list) and len(t) == width
            and all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in t)
            for t in raw)
        if not ok:
            raise ConfigError(f"{name}: expected a list of {width}-element numeric lists")
        if typ == "terms":
            if not all(float(i).is_integer() and float(j).is_integer() for i, j, _ in raw):
                raise ConfigError(f"{name}: polynomial exponents must be integers")
            val = [[int(i), int(j), float(c)] for i, j, c in raw]
        else:
            val = [[float(z), float(m)] for z, m in raw]
    elif typ is str:
        if not isinstance(raw, str):
            raise ConfigError(f"{name}: expected a string, got {type(raw).__name__}")
        val = raw
    else:
        if not isinstance(raw, list):
            raise ConfigError(f"{name}: expected a list, got {type(raw).__name__}")
        if sec == "verify":
            val = [x if isinstance(x, (int, str)) else None for x in raw]
            if None in val:
                raise ConfigError(f"{name}: expected check numbers or names")
        else:
            if not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in raw):
                raise ConfigError(f"{name}: expected a list of numbers")
            val = [float(x) for x in raw]
    if not pred(val):
        raise ConfigError(f"{name}={_fmt_value(val)} violates: {desc}")
    return val


def parse_config(raw: dict, overrides: dict | None = None) -> dict:
    """Validate a raw nested mapping against :data:`SCHEMA`; fill defaults.

    Unknown sections or keys raise :class:`ConfigError` naming the key.
    """
    values = {sec: {k: spec[1] for k, spec in keys.items()} for sec, keys in SCHEMA.items()}
    for key, val in raw.items():
        if isinstance(val, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"unknown section [{key}]; known: "
                                  f"{', '.join(s for s in SCHEMA if s)}")
            for k, v in val.items():
                if k not in SCHEMA[key]:
                    raise ConfigError(f"unknown key {key}.{k}; expected one of "
                                      f"{', '.join(SCHEMA[key])}")
                values[key][k] = _coerce(key, k, v)
        else:
            if key not in SCHEMA[""]:
                raise ConfigError(f"unknown key {key}; expected one of {', '.join(SCHEMA[''])} "
                                  f"or a section")
            values[""][key] = _coerce("", key, val)
    for (sec, k), v in (overrides or {}).items():
        values[sec][k] = _coerce(sec, k, v)
    preset = PRESETS[values["verify"]["preset"]]
    if preset is not None:
        values["verify"]["checks"] = list(preset[0])
        values["verify"]["tol_scale"] = preset[1]
    _cross_checks(values)
    return values


def _cross_checks(v):
    for sec, lo, hi in (("hamiltonian", "p_min", "p_max"), ("grid", "ymin", "ymax"),
                        ("rate", "q_min", "q_max"), ("rate", "dx_min", "dx_max"),
                        ("hjb", "xmin", "xmax")):
        if not v[sec][lo] < v[sec][hi]:
            raise ConfigError(f"{sec}.{lo} must be below {sec}.{hi}")
    n = (v["hjb"]["xmax"] - v["hjb"]["xmin"]) / v["hjb"]["dx"]
    if n < 2:
        raise ConfigError("hjb window holds fewer than 3 nodes")
    try:
        _bns_params(v)
        _gene_params(v)
        if v[""]["scenario"] == "custom":
            _custom_model(v)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _bns_params(v) -> scenarios.BnsParams:
    return scenarios.BnsParams(**v["bns"])


def _gene_params(v) -> scenarios.GeneParams:
    return scenarios.GeneParams(**v["gene"])


def _custom_model(v) -> ModelSpec:
    c = v["custom"]

    def poly(key, sqrt=False):
        return PolyCoefficient(tuple(tuple(t) for t in c[key]), sqrt)

    def atoms(key):
        if not c[key]:
            return None
        z, m = zip(*c[key])
        return FiniteAtoms(tuple(z), tuple(m))

    coeffs = CoefficientSet(b=poly("b"), b0=poly("b0"), sigma=poly("sigma", c["sigma_sqrt"]),
                            b1=poly("b1"), sigma1=poly("sigma1", c["sigma1_sqrt"]),
                            rho=c["rho"], nu1=atoms("nu1_atoms"), nu2=atoms("nu2_atoms"))
    domain = RealLine() if c["fast_domain"] == "real" else HalfLine(0.0)
    return ModelSpec(coeffs, c["x0"], c["y0"], domain, name="custom")


# --- outputs ------------------------------------------------------------------------

@dataclass
class RunReport:
    command: str
    config_echo: list
    checks: list = field(default_factory=list)  # (name, passed, summary)
    artifacts: list = field(default_factory=list)
    exit_code: int = EXIT_OK
    wall_clock: float = 0.0


def _fmt_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        f = float(v)
        if math.isnan(f):
            return "nan"
        if math.isinf(f):
            return "inf" if f > 0 else "-inf"
        return format(f, ".12g")
    return str(v)


def write_csv(path: str, header, rows, meta) -> str:
    lines = [f"# {m}" for m in meta]
    lines.append(",".join(header))
    lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _svg_chart(title, x, series, xlabel, ylabel) -> str:
    """Self-contained line chart; ``series`` is a list of (label, y values)."""
    W, H, L, R, T, B = 640, 400, 70, 20, 40, 50
    xs = np.asarray(x, dtype=float)
    ys_all = np.concatenate([np.asarray(y, dtype=float) for _, y in series])
    ys_all = ys_all[np.isfinite(ys_all)]
    x0, x1 = float(xs.min()), float(xs.max())
    y0, y1 = (float(ys_all.min()), float(ys_all.max())) if ys_all.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    sx = lambda v: L + (v - x0) / (x1 - x0) * (W - L - R)
    sy = lambda v: H - B - (v - y0) / (y1 - y0) * (H - T - B)
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
           f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">',
           f'<rect width="{W}" height="{H}" fill="white"/>',
           f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
           f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>']
    for k in range(5):
        xv = x0 + k * (x1 - x0) / 4
        yv = y0 + k * (y1 - y0) / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{H - B + 16}" text-anchor="middle">{xv:.3g}</text>')
        out.append(f'<text x="{L - 6}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
    out.append(f'<text x="{(L + W - R) / 2:.1f}" y="{H - 10}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="16" y="{(T + H - B) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(T + H - B) / 2:.1f})">{ylabel}</text>')
    for i, (label, y) in enumerate(series):
        y = np.asarray(y, dtype=float)
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, y) if math.isfinite(b))
        c = colors[i % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{W - R - 4}" y="{T + 14 * (i + 1)}" text-anchor="end" fill="{c}">'
                   f'{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_outputs(tables: dict, cfg: RunConfig, charts: dict | None = None) -> list:
    """Write ``name.csv`` for each table and, with ``cfg.svg``, ``name.svg`` charts.

    ``tables``: name -> (header, rows); ``charts``: name -> (title, x column,
    [y columns], xlabel, ylabel).
    """
    try:
        os.makedirs(cfg.out_dir, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out_dir}: {exc}") from None
    if not os.access(cfg.out_dir, os.W_OK):
        raise ConfigError(f"output directory {cfg.out_dir} is not writable")
    meta = [f"twoscale-ldp {__version__} {cfg.command}"] + cfg.echo()
    files = []
    for name in sorted(tables):
        header, rows = tables[name]
        try:
            files.append(write_csv(os.path.join(cfg.out_dir, f"{name}.csv"), header, rows, meta))
        except OSError as exc:
            raise ConfigError(f"cannot write {name}.csv: {exc}") from None
        if cfg.svg and charts and name in charts:
            title, xcol, ycols, xl, yl = charts[name]
            cols = list(header)
            data = np.array([[float(r[cols.index(c)]) for c in [xcol] + ycols] for r in rows])
            if data.size:
                order = np.argsort(data[:, 0], kind="stable")
                data = data[order]
                svg = _svg_chart(title, data[:, 0], [(c, data[:, 1 + i]) for i, c in
                                                    enumerate(ycols)], xl, yl)
                path = os.path.join(cfg.out_dir, f"{name}.svg")
                with open(path, "w", newline="\n", encoding="utf-8") as fh:
                    fh.write(svg)
                files.append(path)
    return files


# --- commands ----------------------------------------------------------------------

def _grid(v) -> GridSpec:
    return GridSpec(v["grid"]["ymin"], v["grid"]["ymax"], v["grid"]["n"])


def _model_for(v) -> ModelSpec:
    sc = v[""]["scenario"]
    if sc == "bns":
        return scenarios.bns_model(_bns_params(v))
    if sc == "gene":
        return scenarios.gene_model(_gene_params(v))
    return _custom_model(v)


def _handle_for(cfg: RunConfig):
    v = cfg.values
    hs = v["hamiltonian"]
    backend = hs["backend"]
    if v[""]["scenario"] == "custom":
        m = _custom_model(v)
        if backend == "matrix":
            return ham.matrix_handle(m, _grid(v))
        if backend == "fk":
            return ham.fk_handle(m, hs["fk_T"], hs["fk_dt"], hs["fk_paths"], v[""]["seed"],
                                 workers=v[""]["workers"])
        raise ConfigError(f"hamiltonian.backend={backend} is not available for scenario custom; "
                          f"use matrix or fk")
    if v[""]["scenario"] == "bns":
        p = _bns_params(v)
        if backend == "closed":
            return ham.bns_handle(p.a, p.b)
        if backend == "matrix":
            grid = _grid(v)
            bound = scenarios.bns_finite_bound(p.b)
            return ham.matrix_handle(scenarios.bns_model(p), grid, p_domain=(-bound, bound))
        if backend == "fk":
            return ham.fk_handle(scenarios.bns_model(p), hs["fk_T"], hs["fk_dt"], hs["fk_paths"],
                                 v[""]["seed"], workers=v[""]["workers"])
        raise ConfigError(f"hamiltonian.backend={backend} is not available for scenario bns")
    g = _gene_params(v)
    if backend in ("closed", "printed", "pdmp"):
        return ham.gene_handle(g, "consistent" if backend == "closed" else backend)
    if backend == "matrix":
        return ham.matrix_handle(scenarios.gene_model(g))
    return ham.fk_handle(scenarios.gene_model(g), hs["fk_T"], hs["fk_dt"], hs["fk_paths"],
                         v[""]["seed"], workers=v[""]["workers"])


def cmd_hamiltonian(cfg: RunConfig, report: RunReport):
    hs = cfg.section("hamiltonian")
    h = _handle_for(cfg)
    ps = np.linspace(hs["p_min"], hs["p_max"], hs["n_p"])
    rows = []
    for x in hs["x"]:
        for p in ps:
            rows.append((x, float(p), ham.hamiltonian_eval(h, x, float(p)), hs["backend"]))
    tables = {"hamiltonian": (("x", "p", "value", "backend"), rows)}
    if cfg.dump_generator:
        v = cfg.values
        x, p = hs["x"][0], float(ps[0])
        m = _model_for(v)
        G = fast_generator(m, x, p, None if m.is_chain else _grid(v))
        Q = G.Q
        ii, jj = np.nonzero(Q)
        tables["generator"] = (("i", "j", "y_i", "y_j", "rate"),
                               [(int(i), int(j), G.states[i], G.states[j], Q[i, j])
                                for i, j in zip(ii, jj)])
    charts = {"hamiltonian": ("Hamiltonian", "p", ["value"], "p", "H")}
    report.artifacts += emit_outputs(tables, cfg, charts)


def cmd_rate(cfg: RunConfig, report: RunReport):
    if cfg.values[""]["scenario"] != "bns":
        raise ConfigError("rate needs an x-independent Hamiltonian: use scenario = \"bns\"")
    rs = cfg.section("rate")
    p = _bns_params(cfg.values)
    h = ham.bns_handle(p.a, p.b)
    Hp = lambda s: ham.hamiltonian_eval(h, 0.0, s)
    qs = np.linspace(rs["q_min"], rs["q_max"], rs["n_q"])
    lbar = [(float(q), rate.legendre(Hp, h.p_domain, float(q)),
             scenarios.bns_rate(float(q), p.a, p.b)) for q in qs]
    ds = np.linspace(rs["dx_min"], rs["dx_max"], rs["n_x"])
    irows = [(p.x0 + float(d), rate.rate_xfree(h, p.x0, p.t, p.x0 + float(d))) for d in ds]
    tables = {"rate_lbar": (("q", "Lbar", "Lbar_closed_form"), lbar),
              "rate_I": (("x", "I"), irows)}
    charts = {"rate_lbar": ("Legendre transform", "q", ["Lbar"], "q", "Lbar"),
              "rate_I": ("Rate function", "x", ["I"], "x", "I")}
    report.artifacts += emit_outputs(tables, cfg, charts)


def cmd_hjb(cfg: RunConfig, report: RunReport):
    hs = cfg.section("hjb")
    h = _handle_for(cfg)
    n = int(round((hs["xmax"] - hs["xmin"]) / hs["dx"])) + 1
    if hs["initial"] == "gaussian-bump":
        f = lambda x: np.exp(-(x - hs["center"]) ** 2)
    else:
        f = rate.capped_linear(hs["beta"], hs["center"], hs["cap"])
    h0 = hjb.GridFunction.from_function(f, hs["xmin"], hs["xmax"], n)
    scheme = hjb.SchemeConfig(slope_cap=hs["slope_cap"] or None)
    sol = hjb.solve_cauchy(h, h0, hs["t"], scheme)
    cols = [h0.x, h0.values, sol.values]
    header = ["x", "h0", "u"]
    if h.x_independent and cfg.values[""]["scenario"] == "bns":
        p = _bns_params(cfg.values)
        ref = hjb.hopf_lax(h0, lambda q: scenarios.bns_rate(q, p.a, p.b), hs["t"])
        cols.append(ref.values)
        header.append("hopf_lax")
    rows = list(zip(*cols))
    tables = {"hjb": (tuple(header), rows),
              "hjb_info": (("quantity", "value"), sorted(sol.info.items()))}
    if sol.info["clamps"]:
        print(f"warning: {sol.info['clamps']} slope clamp events; solution flagged unreliable",
              file=sys.stderr)
    charts = {"hjb": ("Cauchy problem", "x", header[1:], "x", "u")}
    report.artifacts += emit_outputs(tables, cfg, charts)


def cmd_simulate(cfg: RunConfig, report: RunReport):
    v = cfg.values
    ms = v["mc"]
    seed, workers = v[""]["seed"], v[""]["workers"]
    urows, trows = [], []
    for k, eps in enumerate(ms["epsilons"]):
        dt = eps * ms["dt_over_eps"]
        if v[""]["scenario"] == "bns":
            p = _bns_params(v)
            sc = mc.SimConfig(eps, p.t, dt, ms["n_paths"], seed + k, ms["substeps"], workers)
            s = mc.simulate_bns(p, eps, sc)
            x0 = p.x0
        elif v[""]["scenario"] == "gene":
            g = _gene_params(v)
            sc = mc.SimConfig(eps, g.t, dt, ms["n_paths"], seed + k, ms["substeps"], workers)
            s = mc.simulate_gene(g, eps, sc)
            x0 = g.x0
        else:
            m = _custom_model(v)
            sc = mc.SimConfig(eps, ms["t"], dt, ms["n_paths"], seed + k, ms["substeps"], workers)
            s = mc.simulate_general(m, sc)
            x0 = m.x0
        u = mc.estimate_u_eps(s, lambda x: np.exp(-(x - x0) ** 2), eps)
        thr = x0 + ms["threshold_offset"]
        tail = mc.estimate_tail(s, thr, eps)
        urows.append((eps, u.u_hat, u.stderr, s.n_paths, dt, s.y0))
        trows.append((eps, thr, tail.log_prob_scaled, tail.n_hits))
    tables = {"u_eps": (("epsilon", "u_hat", "stderr", "n_paths", "dt", "y0"), urows),
              "tail": (("epsilon", "threshold", "log_prob_scaled", "n_hits"), trows)}
    charts = {"u_eps": ("u_eps ladder", "epsilon", ["u_hat"], "epsilon", "u")}
    report.artifacts += emit_outputs(tables, cfg, charts)


def cmd_scenario(cfg: RunConfig, report: RunReport):
    v = cfg.values
    tables, charts = {}, {}
    if cfg.command.endswith("bns"):
        p = _bns_params(v)
        bound = scenarios.bns_finite_bound(p.b)
        ps = np.linspace(-0.99 * bound, 0.99 * bound, 101)
        qs = np.linspace(-2.0, 2.0, 81)
        tables["bns_hamiltonian"] = (("p", "H"), [(float(s), scenarios.bns_hamiltonian(s, p.a, p.b))
                                                  for s in ps])
        tables["bns_rate"] = (("q", "Lbar"), [(float(q), scenarios.bns_rate(q, p.a, p.b)) for q in qs])
        rows = []
        if math.exp(p.x0) < p.K:
            rows.append(("otm_call_asymptote", scenarios.otm_call_asymptote(p)))
        rows.append(("finite_p_bound", bound))
        tables["bns_summary"] = (("quantity", "value"), rows)
        charts["bns_hamiltonian"] = ("gamma-OU Hamiltonian", "p", ["H"], "p", "H")
        charts["bns_rate"] = ("gamma-OU Lbar", "q", ["Lbar"], "q", "Lbar")
    else:
        g = _gene_params(v)
        ps = np.linspace(-1.5, 1.5, 61)
        x = g.x0
        rows = []
        for s in ps:
            s = float(s)
            pd = scenarios.gene_pdmp_hamiltonian(x, s, g) if g.kappa1 == g.kappa_m1 else math.nan
            rows.append((x, s, scenarios.gene_hamiltonian_consistent(x, s, g), pd,
                         scenarios.gene_hamiltonian_printed(x, s, g)))
        tables["gene_pdmp"] = (("x", "p", "H_diffusion", "H_pdmp", "H_printed"), rows)
        charts["gene_pdmp"] = ("gene switch Hamiltonians", "p",
                               ["H_diffusion", "H_pdmp", "H_printed"], "p", "H")
    report.artifacts += emit_outputs(tables, cfg, charts)


def _summary_without_time(res) -> str:
    # the evidence files stay byte-identical; timings go to stdout only
    status = "PASS" if res.passed else "FAIL"
    bad = [f"{m.label}={m.value:.6g} (need {m.kind} {m.bound})"
           for m in res.measurements if not m.passed]
    if res.elapsed > res.budget:
        bad.append(f"runtime over budget {res.budget:.0f}s")
    return f"[{status}] check {res.number} {res.name}" + (": " + "; ".join(bad) if bad else "")


def cmd_verify(cfg: RunConfig, report: RunReport):
    from . import verify

    vs = cfg.section("verify")
    keys = [cfg.check] if cfg.check else (vs["checks"] or [c.number for c in verify.CHECKS])
    try:
        specs = [verify.find_check(k) for k in keys]
    except KeyError as exc:
        raise ConfigError(str(exc.args[0])) from None
    tables = {}
    lines = []
    numeric = False
    for spec in specs:
        try:
            res = verify.run_check(spec.number, vs["tol_scale"], cfg.values[""]["seed"])
        except (NumericFailure, UnsupportedError) as exc:
            numeric = True
            line = f"[ERROR] check {spec.number} {spec.name}: numeric failure: {exc}"
            report.checks.append((spec.name, False, line))
            lines.append(line)
            print(line, flush=True)
            continue
        line = res.summary()
        report.checks.append((spec.name, res.passed, line))
        lines.append(_summary_without_time(res))
        for note in res.notes:
            lines.append(f"    note: {note}")
        print(line, flush=True)
        tables[f"check{spec.number:02d}_measurements"] = (
            ("label", "value", "bound", "kind", "passed"),
            [(m.label, m.value, _fmt_value(m.bound) if not isinstance(m.bound, tuple)
              else f"[{m.bound[0]};{m.bound[1]}]", m.kind, m.passed) for m in res.measurements])
        for tname, (header, rows) in res.tables.items():
            tables[f"check{spec.number:02d}_{tname}"] = (header, rows)
    report.artifacts += emit_outputs(tables, cfg)
    path = os.path.join(cfg.out_dir, "verify_report.txt")
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    report.artifacts.append(path)
    if numeric:
        report.exit_code = EXIT_NUMERIC
    elif not all(ok for _, ok, _ in report.checks):
        report.exit_code = EXIT_FAIL


COMMANDS = {
    "hamiltonian": cmd_hamiltonian, "rate": cmd_rate, "hjb": cmd_hjb,
    "simulate": cmd_simulate, "scenario-bns": cmd_scenario, "scenario-gene": cmd_scenario,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML configuration file")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--svg", action="store_true", help="also write SVG line charts")
    common.add_argument("--workers", type=int, help="worker threads for Monte Carlo")
    parser = argparse.ArgumentParser(prog="twoscale-ldp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("hamiltonian", parents=[common], help="tabulate the effective Hamiltonian")
    p.add_argument("--dump-generator", action="store_true",
                   help="also write the fast generator at the first (x, p)")
    sub.add_parser("rate", parents=[common], help="Legendre transform and rate function")
    sub.add_parser("hjb", parents=[common], help="solve the limiting Cauchy problem")
    sub.add_parser("simulate", parents=[common], help="pre-limit Monte Carlo ladder")
    sc = sub.add_parser("scenario", help="worked examples")
    ssub = sc.add_subparsers(dest="scenario_name", required=True)
    for name, help_ in (("bns", "gamma-OU stochastic volatility"),
                        ("gene", "self-regulating gene switch")):
        sp = ssub.add_parser(name, parents=[common], help=help_)
        for key, (typ, default, _, desc) in SCHEMA[name].items():
            sp.add_argument(f"--{key}", type=typ, default=None, dest=f"param_{key}",
                            help=f"{desc} (default {default})")
    v = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    v.add_argument("--check", metavar="NAME", help="run only this check (number or name)")
    return parser


def _load(args) -> RunConfig:
    raw = {}
    if args.config:
        try:
            with open(args.config, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from None
    overrides = {}
    if args.seed is not None:
        overrides[("", "seed")] = args.seed
    if getattr(args, "workers", None) is not None:
        overrides[("", "workers")] = args.workers
    command = args.command
    if command == "scenario":
        command = f"scenario-{args.scenario_name}"
        overrides[("", "scenario")] = args.scenario_name
        for key in SCHEMA[args.scenario_name]:
            val = getattr(args, f"param_{key}")
            if val is not None:
                overrides[(args.scenario_name, key)] = val
    values = parse_config(raw, overrides)
    return RunConfig(command, values, args.out, args.svg, getattr(args, "check", None),
                     getattr(args, "dump_generator", False))


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    t0 = time.perf_counter()
    try:
        cfg = _load(args)
        report = RunReport(cfg.command, cfg.echo())
        COMMANDS[cfg.command](cfg, report)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, UnsupportedError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except LdpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report.wall_clock = time.perf_counter() - t0
    for path in report.artifacts:
        print(path)
    if report.checks:
        n_pass = sum(ok for _, ok, _ in report.checks)
        print(f"{n_pass}/{len(report.checks)} checks passed in {report.wall_clock:.1f}s")
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
