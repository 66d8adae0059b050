"""Command-line entry point.

Each experiment is a subcommand of ``dr``.  Flags are compiled into one
JSON parameter document before anything executes; a ``--config FILE`` can
supply the same document directly, with explicit flags winning on
conflict, so both paths go through a single validation layer.  Without
``--out`` the primary artifact is printed to stdout; with ``--out DIR``
artifacts are written as files next to a ``manifest.json`` that echoes
the compiled document (rerunning from that echo reproduces the files
byte for byte).

Floats are printed as shortest round-trip decimals, exact quantities as
``num/den`` strings.  Exit codes: 0 success, 1 bad input or
configuration, 2 capacity or overflow, 3 filesystem trouble.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .coupling import bridge_check, make_coupling
from .criticality import (
    DEFAULT_TAIL_CAP,
    PowerTailLaw,
    critical_p,
    pm_asymptotics_scan,
)
from .dist import (
    BACKEND_F64,
    BACKEND_RATIONAL,
    LatticeDist,
    SystemSpec,
    mix,
    read_dist,
    validate_star,
)
from .errors import (
    CapacityError,
    MomentOverflowError,
    PreconditionError,
    ValidationError,
)
from .evolution import TruncationPolicy, evolve
from .free_energy import (
    EpsilonPoint,
    FreeEnergyBounds,
    _bound_str,
    epsilon_scan,
    fit_exponent,
    free_energy,
    parse_bound,
)
from .regularity import regularity_report, truncated_regularity_scan
from .treemc import (
    joint_law,
    mc_path_functional,
    path_indicator,
    product_formula_check,
    product_weight,
)

_SCAN_HEADER = ["epsilon", "F_lower", "F_upper", "n_used", "status"]


# ---------------------------------------------------------------------------
# value conversion (shared by flags and config documents)


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{name} must be an integer, got {value!r}") from None


def _as_float(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    try:
        return float(value)
    except ValueError:
        raise ValidationError(f"{name} must be a number, got {value!r}") from None


def _as_str(value, name: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{name} must be a non-empty string, got {value!r}")
    return value


def _as_bool(value, name: str) -> bool:
    if not isinstance(value, bool):
        raise ValidationError(f"{name} must be true or false, got {value!r}")
    return value


def _as_numstr(value, name: str) -> str:
    """Canonicalize a number-like value to text, deferring exact parsing.

    Weights may be rational, and converting a config's ``"1/5"`` through
    float would quietly destroy exactness, so they stay textual in the
    compiled document and are interpreted per backend at run time.
    """
    if isinstance(value, bool):
        raise ValidationError(f"{name} must be a number, got {value!r}")
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str) and value.strip():
        return value.strip()
    raise ValidationError(f"{name} must be a number or num/den string, got {value!r}")


def _as_int_list(value, name: str) -> List[int]:
    if isinstance(value, str):
        toks = [t for t in value.split(",") if t.strip()]
        return [_as_int(t.strip(), name) for t in toks]
    if isinstance(value, list):
        return [_as_int(v, name) for v in value]
    raise ValidationError(f"{name} must be a comma list of integers, got {value!r}")


def _choice(*options: str) -> Callable[[object, str], str]:
    def convert(value, name: str) -> str:
        text = _as_str(value, name)
        if text not in options:
            raise ValidationError(
                f"{name} must be one of {', '.join(options)}, got {text!r}"
            )
        return text

    return convert


def _weight(text: str, backend: str, name: str = "p"):
    """Parse a mixing weight; the rational backend keeps it exact."""
    try:
        frac = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(
            f"{name} must be a decimal or num/den string, got {text!r}"
        ) from None
    if backend == BACKEND_RATIONAL:
        return frac
    return float(frac)


def _numstr_out(value) -> str:
    if isinstance(value, Fraction):
        if value.denominator == 1:
            return str(value.numerator)
        return f"{value.numerator}/{value.denominator}"
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def _json_text(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# star sources


def star_parse(source: str, m: int, backend: str) -> LatticeDist:
    """Build a spread law from its command-line description.

    Three source forms are understood.  ``delta:K`` is the point mass at
    K.  ``geom-mtail:alpha=A,cap=K`` is the capped power-tilted family
    P(k) proportional to m^-k k^-A on 1 <= k <= K, normalized at parse
    time (cap defaults to 50000; float backend only).  ``file:path.json``
    loads a stored law.  Whatever the source, the result must satisfy the
    spread-law standing assumptions, so ``delta:1`` is rejected.
    """
    if source.startswith("delta:"):
        k = _as_int(source[len("delta:") :], "delta height")
        star = LatticeDist.delta(k, backend)
        validate_star(star)
        return star
    if source.startswith("geom-mtail:"):
        if backend == BACKEND_RATIONAL:
            raise ValidationError(
                "geom-mtail laws are float-only; their normalizer is not rational"
            )
        alpha: Optional[float] = None
        cap = DEFAULT_TAIL_CAP
        for part in source[len("geom-mtail:") :].split(","):
            key, sep, val = part.partition("=")
            if not sep:
                raise ValidationError(f"geom-mtail field {part!r} is not key=value")
            if key == "alpha":
                alpha = _as_float(val, "alpha")
            elif key == "cap":
                cap = _as_int(val, "cap")
            else:
                raise ValidationError(f"unknown geom-mtail field {key!r}")
        if alpha is None:
            raise ValidationError("geom-mtail needs an alpha=A field")
        star = PowerTailLaw(m=m, alpha=alpha, K_max=cap).to_dist()
        validate_star(star)
        return star
    if source.startswith("file:"):
        path = source[len("file:") :]
        if not os.path.isfile(path):
            raise ValidationError(f"star file not found: {path}")
        star = read_dist(path)
        if backend == BACKEND_RATIONAL and not star.is_rational:
            raise ValidationError(
                f"{path} holds a float law but the rational backend was requested"
            )
        if backend == BACKEND_F64 and star.is_rational:
            star = star.to_f64()
        validate_star(star)
        return star
    raise ValidationError(
        f"unrecognized star source {source!r}; "
        "expected delta:K, geom-mtail:alpha=A,cap=K or file:path.json"
    )


def _parse_policy(text: str, hard_cap: Optional[int]) -> TruncationPolicy:
    if text == "none":
        if hard_cap is None:
            return TruncationPolicy.none()
        return TruncationPolicy.none(hard_cap)
    if text.startswith("cap:"):
        cap = _as_int(text[len("cap:") :], "policy cap")
        if hard_cap is None:
            return TruncationPolicy.fixed_cap(cap)
        return TruncationPolicy.fixed_cap(cap, hard_cap)
    if text.startswith("budget:"):
        budget = _as_float(text[len("budget:") :], "policy budget")
        if hard_cap is None:
            return TruncationPolicy.budgeted(budget)
        return TruncationPolicy.budgeted(budget, hard_cap)
    raise ValidationError(
        f"unknown policy {text!r}; expected none, cap:K or budget:B"
    )


def _parse_grid(text: str) -> List[float]:
    if text.startswith("log:"):
        parts = text[len("log:") :].split(":")
        if len(parts) != 3:
            raise ValidationError("log grid must look like log:LO:HI:COUNT")
        lo = _as_float(parts[0], "grid low")
        hi = _as_float(parts[1], "grid high")
        count = _as_int(parts[2], "grid count")
        if not 0.0 < lo < hi:
            raise ValidationError(f"log grid needs 0 < LO < HI, got {lo!r}..{hi!r}")
        if count < 2:
            raise ValidationError(f"log grid needs at least 2 points, got {count}")
        return [float(x) for x in np.geomspace(lo, hi, count)]
    vals = [_as_float(tok.strip(), "epsilon") for tok in text.split(",") if tok.strip()]
    if not vals:
        raise ValidationError("empty epsilon grid")
    return vals


def _parse_window(text: Optional[str]) -> Optional[Tuple[float, float]]:
    if text is None:
        return None
    lo_s, sep, hi_s = text.partition(":")
    if not sep:
        raise ValidationError(f"window must look like LO:HI, got {text!r}")
    lo = _as_float(lo_s, "window low")
    hi = _as_float(hi_s, "window high")
    if not lo < hi:
        raise ValidationError(f"window needs LO < HI, got {text!r}")
    return lo, hi


# ---------------------------------------------------------------------------
# parameter schemas


@dataclass(frozen=True)
class _Field:
    convert: Callable[[object, str], object]
    required: bool = False
    default: object = None


_BACKENDS = _choice(BACKEND_F64, BACKEND_RATIONAL)
_RHO_CHOICES = _choice("keep", "zero", "randomized")

_SCHEMAS: Dict[str, Dict[str, _Field]] = {
    "critical": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "backend": _Field(_BACKENDS, default=BACKEND_F64),
    },
    "iterate": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "p": _Field(_as_numstr, required=True),
        "n": _Field(_as_int, required=True),
        "backend": _Field(_BACKENDS, default=BACKEND_F64),
        "policy": _Field(_as_str, default="none"),
        "hard_cap": _Field(_as_int),
    },
    "free-energy": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "p": _Field(_as_numstr, required=True),
        "tol": _Field(_as_float, default=1e-3),
        "tol_abs": _Field(_as_float),
        "n_max": _Field(_as_int, default=100_000),
        "budget": _Field(_as_float, default=0.0),
        "hard_cap": _Field(_as_int, default=1 << 15),
    },
    "scan": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "eps_grid": _Field(_as_str, required=True),
        "tol": _Field(_as_float, default=1e-3),
        "n_max": _Field(_as_int, default=100_000),
        "budget": _Field(_as_float, default=0.0),
        "hard_cap": _Field(_as_int, default=1 << 15),
        "p_c": _Field(_as_float),
        "workers": _Field(_as_int),
        "fit": _Field(_as_bool, default=False),
        "window": _Field(_as_str),
    },
    "fit": {
        "scan_csv": _Field(_as_str, required=True),
        "window": _Field(_as_str),
    },
    "tree": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "p": _Field(_as_numstr, required=True),
        "depth": _Field(_as_int, required=True),
        "size": _Field(_as_int, required=True),
        "seed": _Field(_as_int, default=0),
        "functional": _Field(_as_str, default="root"),
        "product_check": _Field(_as_int),
    },
    "bridge": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str, required=True),
        "backend": _Field(_BACKENDS, default=BACKEND_F64),
        "p_upper": _Field(_as_numstr, required=True),
        "p_lower": _Field(_as_numstr),
        "n": _Field(_as_int, required=True),
        "k": _Field(_as_int, required=True),
        "r": _Field(_as_int, required=True),
        "ell": _Field(_as_int, required=True),
        "eta": _Field(_as_numstr),
        "mode": _Field(_choice("exact", "mc"), default="exact"),
        "mc_size": _Field(_as_int, default=200_000),
        "seed": _Field(_as_int, default=0),
    },
    "regularity": {
        "m": _Field(_as_int, required=True),
        "star": _Field(_as_str),
        "p": _Field(_as_numstr),
        "beta": _Field(_as_float),
        "backend": _Field(_BACKENDS, default=BACKEND_F64),
        "alpha": _Field(_as_float),
        "cap": _Field(_as_int),
        "Ms": _Field(_as_int_list),
        "rho": _Field(_RHO_CHOICES),
    },
    "pm-scan": {
        "m": _Field(_as_int, required=True),
        "alpha": _Field(_as_float, required=True),
        "cap": _Field(_as_int),
        "Ms": _Field(_as_int_list, required=True),
        "rho": _Field(_RHO_CHOICES, default="keep"),
    },
}


def _load_config_doc(path: str) -> dict:
    if not os.path.isfile(path):
        raise ValidationError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"config file {path} must hold a JSON object")
    return doc


def _compile(experiment: str, ns: argparse.Namespace) -> dict:
    """Merge flags over the config document into one validated dict."""
    fields = _SCHEMAS[experiment]
    doc: dict = {}
    if getattr(ns, "config", None):
        doc = dict(_load_config_doc(ns.config))
        stated = doc.pop("experiment", experiment)
        if stated != experiment:
            raise ValidationError(
                f"config names experiment {stated!r} but the subcommand is {experiment!r}"
            )
        unknown = sorted(set(doc) - set(fields))
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {}
    for key, field in fields.items():
        value = getattr(ns, key)
        if value is None and key in doc:
            value = doc[key]
        if value is None:
            if field.required:
                raise ValidationError(
                    f"missing required parameter: --{key.replace('_', '-')}"
                )
            cfg[key] = field.default
        else:
            cfg[key] = field.convert(value, key.replace("_", "-"))
    return cfg


# ---------------------------------------------------------------------------
# runners

Artifacts = List[Tuple[str, str]]


def _run_critical(cfg: dict) -> Tuple[str, Artifacts]:
    star = star_parse(cfg["star"], cfg["m"], cfg["backend"])
    p_c = critical_p(star, cfg["m"])
    doc = {
        "m": cfg["m"],
        "star": cfg["star"],
        "backend": cfg["backend"],
        "p_c": _numstr_out(p_c),
    }
    return _numstr_out(p_c) + "\n", [("critical.json", _json_text(doc))]


def _run_iterate(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    star = star_parse(cfg["star"], m, cfg["backend"])
    p = _weight(cfg["p"], cfg["backend"])
    policy = _parse_policy(cfg["policy"], cfg["hard_cap"])
    trace = evolve(mix(SystemSpec(m=m, p=p, star=star)), m, cfg["n"], policy)
    buf = io.StringIO()
    trace.to_csv(buf)
    text = buf.getvalue()
    return text, [("trace.csv", text)]


def _run_free_energy(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    star = star_parse(cfg["star"], m, BACKEND_F64)
    spec = SystemSpec(m=m, p=_weight(cfg["p"], BACKEND_F64), star=star)
    b = free_energy(
        spec,
        tol_rel=cfg["tol"],
        n_max=cfg["n_max"],
        budget=cfg["budget"],
        hard_cap=cfg["hard_cap"],
        tol_abs=cfg["tol_abs"],
    )
    doc = {
        "m": m,
        "star": cfg["star"],
        "p": cfg["p"],
        "tol_rel": cfg["tol"],
        "budget": cfg["budget"],
        "F_lower": _bound_str(b.lower, b.log_lower),
        "F_upper": _bound_str(b.upper, b.log_upper),
        "ledger": _bound_str(b.ledger_cost, b.log_ledger),
        "n_used": b.n_used,
        "status": b.status,
    }
    text = _json_text(doc)
    return text, [("free_energy.json", text)]


def _run_scan(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    star = star_parse(cfg["star"], m, BACKEND_F64)
    scan = epsilon_scan(
        star,
        m,
        _parse_grid(cfg["eps_grid"]),
        tol_rel=cfg["tol"],
        n_max=cfg["n_max"],
        budget=cfg["budget"],
        hard_cap=cfg["hard_cap"],
        p_c=cfg["p_c"],
        workers=cfg["workers"],
    )
    buf = io.StringIO()
    scan.to_csv(buf)
    csv_text = buf.getvalue()
    artifacts: Artifacts = [("scan.csv", csv_text)]
    stdout = csv_text
    if cfg["fit"]:
        rec = fit_exponent(scan, window=_parse_window(cfg["window"]))
        doc = {"m": m, "p_c": scan.p_c}
        doc.update(rec.to_json_dict())
        fit_text = _json_text(doc)
        artifacts.append(("fit.json", fit_text))
        stdout = csv_text + fit_text
    return stdout, artifacts


def _read_scan_csv(path: str) -> Tuple[EpsilonPoint, ...]:
    if not os.path.isfile(path):
        raise ValidationError(f"scan file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != _SCAN_HEADER:
        raise ValidationError(
            f"{path} does not look like a scan table (expected header "
            f"{','.join(_SCAN_HEADER)})"
        )
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 5:
            raise ValidationError(f"{path}:{lineno}: expected 5 columns, got {len(row)}")
        try:
            eps = float(row[0])
            lower, log_lower = parse_bound(row[1])
            upper, log_upper = parse_bound(row[2])
            n_used = int(row[3])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
        bounds = FreeEnergyBounds(
            lower=lower,
            upper=upper,
            log_lower=log_lower,
            log_upper=log_upper,
            n_used=n_used,
            ledger_cost=0.0,
            log_ledger=float("-inf"),
            status=row[4],
        )
        points.append(EpsilonPoint(epsilon=eps, bounds=bounds))
    return tuple(points)


def _run_fit(cfg: dict) -> Tuple[str, Artifacts]:
    points = _read_scan_csv(cfg["scan_csv"])
    rec = fit_exponent(points, window=_parse_window(cfg["window"]))
    text = _json_text(rec.to_json_dict())
    return text, [("fit.json", text)]


def _parse_functional(text: str):
    """Split a tree functional spec into its kind and (r, k) arguments."""
    if text in ("root", "product-weight"):
        return text, None
    if text.startswith("indicator:"):
        fields = {}
        for part in text[len("indicator:") :].split(","):
            key, eq, val = part.partition("=")
            if not eq:
                raise ValidationError(
                    f"bad indicator field {part!r}; expected indicator:r=R,k=K"
                )
            fields[key.strip()] = val.strip()
        if set(fields) != {"r", "k"}:
            raise ValidationError(
                f"indicator functional needs exactly the fields r and k, "
                f"got {sorted(fields)}"
            )
        try:
            return "indicator", (int(fields["r"]), int(fields["k"]))
        except ValueError:
            raise ValidationError(
                f"indicator fields must be integers, got {text!r}"
            ) from None
    raise ValidationError(
        f"unknown functional {text!r}; expected root, product-weight, "
        f"or indicator:r=R,k=K"
    )


def _run_tree(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    star = star_parse(cfg["star"], m, BACKEND_F64)
    d0 = mix(SystemSpec(m=m, p=_weight(cfg["p"], BACKEND_F64), star=star))
    kind, rk = _parse_functional(cfg["functional"])
    if kind == "root":
        fn = lambda y, nz, nt: y.astype(np.float64)  # noqa: E731
    elif kind == "product-weight":
        fn = product_weight(m)
    else:
        fn = path_indicator(*rk)
    res = mc_path_functional(d0, m, cfg["depth"], cfg["size"], cfg["seed"], fn)
    doc = {
        "m": m,
        "star": cfg["star"],
        "p": cfg["p"],
        "depth": cfg["depth"],
        "size": cfg["size"],
        "seed": cfg["seed"],
        "functional": cfg["functional"],
        "mean": repr(res.mean),
        "stderr": repr(res.stderr),
        "variance": repr(res.variance),
        "exact_mean": None,
        "z": None,
    }
    extra: Artifacts = []
    # reference value by direct computation, while its cost stays cheap
    exact = None
    if kind == "root":
        if d0.support_max * m ** cfg["depth"] <= (1 << 16):
            exact = float(evolve(d0, m, cfg["depth"]).expectations[-1])
    elif m ** cfg["depth"] <= 256:
        jl = joint_law(d0, m, cfg["depth"])
        if kind == "product-weight":
            exact = jl.open_path_weighted_mean()
        else:
            exact = jl.bridge_expectation(*rk)
        buf = io.StringIO()
        jl.to_csv(buf)
        extra.append(("joint.csv", buf.getvalue()))
    if exact is not None:
        doc["exact_mean"] = repr(exact)
        if res.stderr > 0.0:
            doc["z"] = repr((res.mean - exact) / res.stderr)
    if cfg["product_check"] is not None:
        rep = product_formula_check(d0, m, cfg["product_check"])
        doc["product_check"] = {
            "n": rep.n_steps,
            "lhs": repr(rep.lhs),
            "rhs": repr(rep.rhs),
            "rel_err": repr(rep.rel_err),
            "backend": rep.backend,
        }
    text = _json_text(doc)
    return text, [("tree.json", text)] + extra


def _run_bridge(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    backend = cfg["backend"]
    star = star_parse(cfg["star"], m, backend)
    p_upper = _weight(cfg["p_upper"], backend, "p-upper")
    if cfg["p_lower"] is None:
        p_lower = critical_p(star, m)
    else:
        p_lower = _weight(cfg["p_lower"], backend, "p-lower")
    x0 = mix(SystemSpec(m=m, p=p_upper, star=star))
    y0 = mix(SystemSpec(m=m, p=p_lower, star=star))
    coupling = make_coupling(x0, y0)
    eta = None if cfg["eta"] is None else _weight(cfg["eta"], BACKEND_F64, "eta")
    rep = bridge_check(
        coupling,
        m,
        cfg["n"],
        cfg["r"],
        cfg["k"],
        cfg["ell"],
        eta=eta,
        mode=cfg["mode"],
        mc_size=cfg["mc_size"],
        seed=cfg["seed"],
    )
    doc = {
        "m": m,
        "star": cfg["star"],
        "backend": backend,
        "p_upper": cfg["p_upper"],
        "p_lower": _numstr_out(p_lower),
        "n": rep.n,
        "k": rep.k,
        "ell": rep.ell,
        "r": rep.r,
        "eta": repr(rep.eta),
        "mode": rep.mode,
        "lhs_lower": repr(rep.lhs_lower),
        "rhs": repr(rep.rhs),
        "rhs_stderr": repr(rep.rhs_stderr),
        "slack": repr(rep.slack()),
        "passed": rep.passed,
    }
    text = _json_text(doc)
    return text, [("bridge.json", text)]


def _run_regularity(cfg: dict) -> Tuple[str, Artifacts]:
    m = cfg["m"]
    single = any(cfg[key] is not None for key in ("star", "p", "beta"))
    family = any(cfg[key] is not None for key in ("alpha", "Ms"))
    if single == family:
        raise ValidationError(
            "give either --star/--p/--beta (one law) "
            "or --alpha/--Ms (truncated family scan)"
        )
    if single:
        for key in ("star", "p", "beta"):
            if cfg[key] is None:
                raise ValidationError(f"single-law mode needs --{key}")
        star = star_parse(cfg["star"], m, cfg["backend"])
        law = mix(SystemSpec(m=m, p=_weight(cfg["p"], cfg["backend"]), star=star))
        rep = regularity_report(law, m, cfg["beta"])
        doc = {
            "m": m,
            "star": cfg["star"],
            "p": cfg["p"],
            "backend": cfg["backend"],
            "beta": cfg["beta"],
            "chi": _numstr_out(rep.chi),
            "Lambda": _numstr_out(rep.lam),
            "xi": [_numstr_out(x) for x in rep.xi],
            "xi_limit": _numstr_out(rep.xi_limit),
            "argmin_j": rep.argmin_j,
            "note": rep.note,
        }
        text = _json_text(doc)
        return text, [("regularity.json", text)]
    for key in ("alpha", "Ms"):
        if cfg[key] is None:
            raise ValidationError(f"family mode needs --{key}")
    cap = cfg["cap"] if cfg["cap"] is not None else DEFAULT_TAIL_CAP
    scan = truncated_regularity_scan(
        PowerTailLaw(m=m, alpha=cfg["alpha"], K_max=cap), cfg["Ms"], rho_mode=cfg["rho"]
    )
    buf = io.StringIO()
    scan.to_csv(buf)
    csv_text = buf.getvalue()
    json_text = _json_text(scan.to_json_dict())
    return csv_text + json_text, [
        ("regularity_scan.csv", csv_text),
        ("regularity_scan.json", json_text),
    ]


def _run_pm_scan(cfg: dict) -> Tuple[str, Artifacts]:
    cap = cfg["cap"] if cfg["cap"] is not None else DEFAULT_TAIL_CAP
    res = pm_asymptotics_scan(
        PowerTailLaw(m=cfg["m"], alpha=cfg["alpha"], K_max=cap),
        cfg["Ms"],
        rho_mode=cfg["rho"],
    )
    buf = io.StringIO()
    res.to_csv(buf)
    csv_text = buf.getvalue()
    json_text = _json_text(res.to_json_dict())
    return csv_text + json_text, [
        ("pm_scan.csv", csv_text),
        ("pm_scan.json", json_text),
    ]


_RUNNERS: Dict[str, Callable[[dict], Tuple[str, Artifacts]]] = {
    "critical": _run_critical,
    "iterate": _run_iterate,
    "free-energy": _run_free_energy,
    "scan": _run_scan,
    "fit": _run_fit,
    "tree": _run_tree,
    "bridge": _run_bridge,
    "regularity": _run_regularity,
    "pm-scan": _run_pm_scan,
}


def _execute(experiment: str, cfg: dict, out: Optional[str]) -> None:
    t0 = time.perf_counter()
    stdout_text, artifacts = _RUNNERS[experiment](cfg)
    wall = time.perf_counter() - t0
    if out is None:
        sys.stdout.write(stdout_text)
        return
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for fname, text in artifacts:
        (out_dir / fname).write_text(text, encoding="utf-8")
    manifest = {
        "tool": "dr",
        "version": __version__,
        "experiment": experiment,
        "config": cfg,
        "seed": cfg.get("seed"),
        "outputs": [fname for fname, _ in artifacts],
        "wall_time_s": round(wall, 6),
    }
    (out_dir / "manifest.json").write_text(_json_text(manifest), encoding="utf-8")


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, but 2 means capacity here;
    # route the message through the normal validation path instead
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="dr",
        description="Numerical experiments on the max-type recursion lattice model.",
    )
    parser.add_argument("--version", action="version", version=f"dr {__version__}")
    sub = parser.add_subparsers(dest="experiment", metavar="experiment", required=True)

    def add(name: str, summary: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument(
            "--config",
            metavar="FILE",
            help="JSON parameter document; explicit flags override its entries",
        )
        p.add_argument(
            "--out",
            metavar="DIR",
            help="write artifacts plus manifest.json here instead of stdout",
        )
        return p

    p = add("critical", "critical mixing weight of a spread law")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law: delta:K, geom-mtail:alpha=A,cap=K or file:PATH")
    p.add_argument("--backend", help="f64 or rational (default f64)")

    p = add("iterate", "push a mixture through n recursion steps, one CSV row per step")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law source")
    p.add_argument("--p", help="mixing weight (decimal or num/den)")
    p.add_argument("--n", help="step count")
    p.add_argument("--backend", help="f64 or rational (default f64)")
    p.add_argument("--policy", help="none (default), cap:K or budget:B")
    p.add_argument("--hard-cap", dest="hard_cap", help="support ceiling override")

    p = add("free-energy", "two-sided enclosure of the growth limit at one weight")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law source")
    p.add_argument("--p", help="mixing weight")
    p.add_argument("--tol", help="relative pinch target (default 1e-3)")
    p.add_argument("--tol-abs", dest="tol_abs", help="absolute pinch target (default: same as --tol)")
    p.add_argument("--n-max", dest="n_max", help="iteration ceiling (default 100000)")
    p.add_argument("--budget", help="elective truncation allowance in limit units (default 0)")
    p.add_argument("--hard-cap", dest="hard_cap", help="support ceiling (default 32768)")

    p = add("scan", "free-energy enclosures on a grid of weights above critical")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law source")
    p.add_argument("--eps-grid", dest="eps_grid", help="log:LO:HI:COUNT or a comma list of epsilons")
    p.add_argument("--tol", help="relative pinch target per point (default 1e-3)")
    p.add_argument("--n-max", dest="n_max", help="iteration ceiling per point")
    p.add_argument("--budget", help="truncation allowance per point")
    p.add_argument("--hard-cap", dest="hard_cap", help="support ceiling per point")
    p.add_argument("--p-c", dest="p_c", help="critical weight override")
    p.add_argument("--workers", help="process pool size (default: DR_WORKERS or cpu count)")
    p.add_argument("--fit", action="store_const", const=True, help="also fit the collapse exponent")
    p.add_argument("--window", help="epsilon window LO:HI for the fit")

    p = add("fit", "collapse-exponent fit from a stored scan table")
    p.add_argument("--scan-csv", dest="scan_csv", help="CSV written by the scan subcommand")
    p.add_argument("--window", help="epsilon window LO:HI")

    p = add("tree", "Monte Carlo over sampled hierarchies, with an exact cross-check")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law source")
    p.add_argument("--p", help="mixing weight")
    p.add_argument("--depth", help="generations per sampled tree")
    p.add_argument("--size", help="number of sampled trees")
    p.add_argument("--seed", help="RNG seed (default 0)")
    p.add_argument(
        "--functional",
        help="root (default), product-weight, or indicator:r=R,k=K",
    )
    p.add_argument(
        "--product-check",
        dest="product_check",
        metavar="N",
        help="also verify the open-path product identity after N steps (critical laws only)",
    )

    p = add("bridge", "open-path lower bound against the evolved mean")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law shared by both weights")
    p.add_argument("--backend", help="f64 or rational (default f64)")
    p.add_argument("--p-upper", dest="p_upper", help="supercritical mixing weight")
    p.add_argument("--p-lower", dest="p_lower", help="dominated mixing weight (default: critical)")
    p.add_argument("--n", help="open-path counting depth")
    p.add_argument("--k", help="conditioning value of the dominated root")
    p.add_argument("--r", help="open-path count threshold")
    p.add_argument("--ell", help="extra depth, an integer in [0, r*eta/2]")
    p.add_argument("--eta", help="gap parameter (default: maximal admissible)")
    p.add_argument("--mode", help="exact (default) or mc")
    p.add_argument("--mc-size", dest="mc_size", help="coupled trees in mc mode (default 200000)")
    p.add_argument("--seed", help="RNG seed for mc mode (default 0)")

    p = add("regularity", "growth-functional floor of one law, or of the truncated family")
    p.add_argument("--m", help="branching number")
    p.add_argument("--star", help="spread law source (single-law mode)")
    p.add_argument("--p", help="mixing weight (single-law mode)")
    p.add_argument("--beta", help="regularity exponent in [0, 2] (single-law mode)")
    p.add_argument("--backend", help="f64 or rational (default f64)")
    p.add_argument("--alpha", help="tail exponent in [2, 4] (family mode)")
    p.add_argument("--cap", help="family support cap (default 50000)")
    p.add_argument("--Ms", help="comma list of truncation heights (family mode)")
    p.add_argument("--rho", help="bottom-atom handling: keep, zero or randomized")

    p = add("pm-scan", "critical-weight asymptotics of the truncated family")
    p.add_argument("--m", help="branching number")
    p.add_argument("--alpha", help="tail exponent in [2, 4]")
    p.add_argument("--cap", help="family support cap (default 50000)")
    p.add_argument("--Ms", help="comma list of truncation heights, strictly increasing")
    p.add_argument("--rho", help="bottom-atom handling (default keep)")

    return parser


def _fail(code: int, category: str, message: str) -> int:
    print(f"dr: {category} error: {message}", file=sys.stderr)
    return code


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
        cfg = _compile(ns.experiment, ns)
        _execute(ns.experiment, cfg, ns.out)
    except (CapacityError, MomentOverflowError) as exc:
        return _fail(2, "capacity", str(exc))
    except (ValidationError, PreconditionError) as exc:
        return _fail(1, "validation", str(exc))
    except json.JSONDecodeError as exc:
        return _fail(1, "validation", f"invalid JSON: {exc}")
    except OSError as exc:
        return _fail(3, "io", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
