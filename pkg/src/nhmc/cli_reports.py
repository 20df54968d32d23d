"""Experiment configs, dispatch to the analyses, and byte-stable report emission.

Configs are JSON. A minimal clt config::

    {"state_count": 2, "initial": [0.5, 0.5],
     "schedule": {"kind": "homogeneous", "matrix": [[0.5, 0.5], [0.5, 0.5]]},
     "observable": {"values": [0, 1]},
     "analysis": "clt", "params": {"n": 2000, "N": 50000}}
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .chain_model import (
    ChainSpec,
    EpsilonSchedule,
    Observable,
    TransitionSchedule,
    expected_sum,
    make_perturbed_schedule,
    validate_matrix,
)
from .errors import (
    ConfigError,
    ConfigSyntaxError,
    DimensionMismatch,
    HorizonExceeded,
    NotIrreducible,
    SchemaError,
    UnsupportedFormat,
)

ANALYSES = ("validate", "diagnose", "clt", "mdp", "oracle")
DEFAULT_TOLERANCES = {"row": 1e-12, "stationary": 1e-10, "ergodic": 1e-10, "occupation": 0.01}


@dataclass(frozen=True)
class Params:
    n: int = 1000
    N: int = 10000
    seed: int = 42
    alpha: float = 0.75
    x_grid: tuple = (0.5, 1.0)
    n_grid: tuple = (1024, 4096)
    m_max: int = 64
    horizon: int = 4096
    tolerances: tuple = tuple(sorted(DEFAULT_TOLERANCES.items()))
    ks_threshold: float = 0.02

    def tol(self, name: str) -> float:
        return dict(self.tolerances)[name]


@dataclass(frozen=True)
class ExperimentConfig:
    state_count: int
    initial: tuple
    schedule: dict = field(hash=False)
    observable: dict = field(hash=False)
    analysis: str
    params: Params = Params()

    def canonical(self) -> dict:
        d = dataclasses.asdict(self)
        d["initial"] = list(self.initial)
        p = dataclasses.asdict(self.params)
        p["x_grid"] = list(p["x_grid"])
        p["n_grid"] = list(p["n_grid"])
        p["tolerances"] = dict(self.params.tolerances)
        d["params"] = p
        return d

    def digest(self) -> str:
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **kw) -> "ExperimentConfig":
        return dataclasses.replace(self, **kw)

    def build_spec(self) -> ChainSpec:
        return ChainSpec(np.array(self.initial), build_schedule(self.schedule))

    def build_observable(self) -> Observable:
        return Observable(np.array(self.observable["values"]), self.observable.get("bound"))


@dataclass
class ReportEnvelope:
    config_digest: str
    tool_version: str
    analysis: str
    results: dict
    warnings: list = field(default_factory=list)
    verdict: str | None = None
    # CSV view: label -> (header, rows); not part of the JSON payload.
    tables: dict = field(default_factory=dict, repr=False)

    def payload(self) -> dict:
        return {
            "analysis": self.analysis,
            "config_digest": self.config_digest,
            "results": self.results,
            "tool_version": self.tool_version,
            "verdict": self.verdict,
            "warnings": list(self.warnings),
        }


# ---------------------------------------------------------------- parsing


def _req(obj: dict, key: str, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{path}.{key}" if path else key, "missing")
    return obj[key]


def _num(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SchemaError(path, "must be a finite number")
    return float(v)


def _int(v, path: str, lo: int = 0) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise SchemaError(path, "must be an integer")
    if v < lo:
        raise SchemaError(path, f"must be >= {lo}")
    return v


def _vector(v, path: str, K: int) -> list:
    if not isinstance(v, list):
        raise SchemaError(path, "must be an array")
    if len(v) != K:
        raise SchemaError(path, "length mismatch")
    return [_num(x, f"{path}[{i}]") for i, x in enumerate(v)]


def _matrix(v, path: str, K: int) -> list:
    if not isinstance(v, list) or len(v) != K:
        raise SchemaError(path, f"must be a {K}x{K} array")
    rows = [_vector(r, f"{path}[{i}]", K) for i, r in enumerate(v)]
    try:
        validate_matrix(rows)
    except ConfigError as exc:
        raise SchemaError(path, str(exc)) from exc
    return rows


def _epsilon(v, path: str) -> dict:
    form = _req(v, "form", path)
    out = {"form": form}
    for key in ("c", "p", "r"):
        if key in v:
            out[key] = _num(v[key], f"{path}.{key}")
    if "values" in v:
        if not isinstance(v["values"], list):
            raise SchemaError(f"{path}.values", "must be an array")
        out["values"] = [_num(x, f"{path}.values[{i}]") for i, x in enumerate(v["values"])]
    try:
        _make_eps(out)
    except ConfigError as exc:
        raise SchemaError(path, str(exc)) from exc
    return out


def _make_eps(d: dict) -> EpsilonSchedule:
    kw = {k: d[k] for k in ("c", "p", "r") if k in d}
    return EpsilonSchedule(d["form"], values=tuple(d.get("values", ())), **kw)


def build_schedule(d: dict) -> TransitionSchedule:
    kind = d["kind"]
    if kind == "homogeneous":
        return TransitionSchedule.homogeneous(d["matrix"])
    if kind == "explicit":
        return TransitionSchedule.explicit(d["matrices"])
    return make_perturbed_schedule(d["base"], d["alt"], _make_eps(d["epsilon"]))


def _schedule(v, K: int) -> dict:
    path = "schedule"
    kind = _req(v, "kind", path)
    if kind == "homogeneous":
        return {"kind": kind, "matrix": _matrix(_req(v, "matrix", path), f"{path}.matrix", K)}
    if kind == "explicit":
        mats = _req(v, "matrices", path)
        if not isinstance(mats, list) or not mats:
            raise SchemaError(f"{path}.matrices", "must be a non-empty array of matrices")
        return {"kind": kind, "matrices": [_matrix(m, f"{path}.matrices[{i}]", K) for i, m in enumerate(mats)]}
    if kind == "perturbed":
        return {
            "kind": kind,
            "base": _matrix(_req(v, "base", path), f"{path}.base", K),
            "alt": _matrix(_req(v, "alt", path), f"{path}.alt", K),
            "epsilon": _epsilon(_req(v, "epsilon", path), f"{path}.epsilon"),
        }
    raise SchemaError(f"{path}.kind", f"unknown kind {kind!r}")


def _params(v, analysis: str) -> Params:
    if v is None:
        v = {}
    if not isinstance(v, dict):
        raise SchemaError("params", "must be an object")
    known = {f.name for f in dataclasses.fields(Params)}
    extra = set(v) - known
    if extra:
        raise SchemaError(f"params.{sorted(extra)[0]}", "unknown parameter")
    kw = {}
    for key in ("n", "N", "m_max", "horizon"):
        if key in v:
            kw[key] = _int(v[key], f"params.{key}", lo=1)
    if "seed" in v:
        kw["seed"] = _int(v["seed"], "params.seed") & ((1 << 64) - 1)
    if "alpha" in v:
        kw["alpha"] = _num(v["alpha"], "params.alpha")
    if "ks_threshold" in v:
        kw["ks_threshold"] = _num(v["ks_threshold"], "params.ks_threshold")
        if not 0 < kw["ks_threshold"] <= 1:
            raise SchemaError("params.ks_threshold", "must lie in (0,1]")
    for key, conv in (("x_grid", _num), ("n_grid", None)):
        if key in v:
            if not isinstance(v[key], list) or not v[key]:
                raise SchemaError(f"params.{key}", "must be a non-empty array")
            if conv is None:
                kw[key] = tuple(_int(x, f"params.{key}[{i}]", lo=1) for i, x in enumerate(v[key]))
            else:
                kw[key] = tuple(conv(x, f"params.{key}[{i}]") for i, x in enumerate(v[key]))
    tol = dict(DEFAULT_TOLERANCES)
    if "tolerances" in v:
        if not isinstance(v["tolerances"], dict):
            raise SchemaError("params.tolerances", "must be an object")
        for k, x in v["tolerances"].items():
            if k not in tol:
                raise SchemaError(f"params.tolerances.{k}", "unknown tolerance")
            tol[k] = _num(x, f"params.tolerances.{k}")
    for k, x in tol.items():
        if not x > 0:
            raise SchemaError(f"params.tolerances.{k}", "must be > 0")
    kw["tolerances"] = tuple(sorted(tol.items()))
    p = Params(**kw)
    if analysis == "mdp" and not 0.5 < p.alpha < 1.0:
        raise SchemaError("params.alpha", "must lie in (0.5,1)")
    if analysis in ("clt", "mdp") and p.N < 100:
        raise SchemaError("params.N", "must be >= 100")
    return p


def parse_config(text) -> ExperimentConfig:
    """Parse and fully validate a JSON experiment config, filling defaults."""
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(exc.lineno, exc.msg) from exc
    if not isinstance(raw, dict):
        raise SchemaError("$", "top level must be an object")
    K = _int(_req(raw, "state_count", ""), "state_count", lo=2)
    initial = _vector(_req(raw, "initial", ""), "initial", K)
    if any(w < 0 for w in initial) or abs(sum(initial) - 1.0) > 1e-12:
        raise SchemaError("initial", "must be a probability vector")
    schedule = _schedule(_req(raw, "schedule", ""), K)
    obs_raw = _req(raw, "observable", "")
    values = _vector(_req(obs_raw, "values", "observable"), "observable.values", K)
    observable = {"values": values}
    if "bound" in obs_raw:
        bound = _num(obs_raw["bound"], "observable.bound")
        if max(abs(x) for x in values) > bound:
            raise SchemaError("observable.bound", "smaller than max |f|")
        observable["bound"] = bound
    analysis = _req(raw, "analysis", "")
    if analysis not in ANALYSES:
        raise SchemaError("analysis", f"must be one of {', '.join(ANALYSES)}")
    params = _params(raw.get("params"), analysis)
    extra = set(raw) - {"state_count", "initial", "schedule", "observable", "analysis", "params"}
    if extra:
        raise SchemaError(sorted(extra)[0], "unknown field")
    return ExperimentConfig(K, tuple(initial), schedule, observable, analysis, params)


def dump_config(cfg: ExperimentConfig) -> bytes:
    """Canonical JSON for ``cfg``; ``parse_config`` reads it back unchanged."""
    return _render(cfg.canonical()).encode()


# ---------------------------------------------------------------- analyses


def _curve_rows(curve) -> list:
    return [[n, v] for n, v in curve.points]


def _limit_structure(p, params: Params) -> tuple[dict, list]:
    from .ergodic_analysis import check_periodic_strong_ergodicity, dobrushin_delta, period_and_classes

    warnings = []
    out = {"delta": dobrushin_delta(p)}
    try:
        d, classes = period_and_classes(p)
    except NotIrreducible as exc:
        out.update(irreducible=False, certified=False)
        warnings.append(str(exc))
        return out, warnings
    out.update(irreducible=True, period=d, classes=[list(c) for c in classes])
    try:
        rep = check_periodic_strong_ergodicity(p, params.horizon, params.tol("ergodic"))
    except HorizonExceeded as exc:
        out["certified"] = False
        warnings.append(str(exc))
        return out, warnings
    out.update(
        certified=True,
        pi=rep.pi.tolist(),
        horizon=params.horizon,
        class_residual_steps=[c.points[-1][0] for c in rep.strong_ergodicity_residuals],
    )
    return out, warnings


def _run_validate(cfg, spec, f, env):
    sched = spec.schedule
    mats = {"limit": sched.limit_matrix()}
    if sched.kind == "perturbed":
        mats["alt"] = sched.alt
    out = {}
    ok = True
    for name, p in mats.items():
        rep, warns = _limit_structure(p, cfg.params)
        out[name] = rep
        env.warnings.extend(f"{name}: {w}" for w in warns)
        ok = ok and (rep["certified"] or name != "limit")
    out["schedule_kind"] = sched.kind
    out["observable_bound"] = f.bound
    env.results = out
    env.verdict = "PASS" if ok else "FAIL"
    env.tables["summary"] = (["key", "value"], [[k, out["limit"].get(k)] for k in ("delta", "period", "certified")])


def _run_diagnose(cfg, spec, f, env):
    from .ergodic_analysis import (
        cesaro_uniform_diagnostic,
        condition4_diagnostic,
        condition6_diagnostic,
        constant_matrix,
        stationary_distribution,
        strong_ergodicity_curve,
    )
    from .limit_quantities import drift_bound_check

    p = spec.schedule.limit_matrix()
    pr = cfg.params
    r = constant_matrix(stationary_distribution(p, pr.tol("stationary")))
    curves = [
        cesaro_uniform_diagnostic(spec.schedule, r, pr.n, pr.m_max),
        condition4_diagnostic(spec.schedule, p, pr.n, pr.m_max),
        condition6_diagnostic(spec.schedule, pr.n),
        strong_ergodicity_curve(spec.schedule, r, 0, pr.n),
        drift_bound_check(spec, f, pr.n),
    ]
    env.warnings.append(f"sup over m truncated at m_max={pr.m_max} in cesaro_eq3 and cond4")
    env.results = {"curves": {c.label: _curve_rows(c) for c in curves}, "m_max": pr.m_max, "n_max": pr.n}
    for c in curves:
        env.tables[c.label] = (["n", "value"], _curve_rows(c))


def _limit_theta(spec, f, params):
    from .ergodic_analysis import stationary_distribution
    from .limit_quantities import theta

    p = spec.schedule.limit_matrix()
    pi = stationary_distribution(p, params.tol("stationary"))
    return theta(p, pi, f), pi


def _run_clt(cfg, spec, f, env, spill=None):
    from .monte_carlo import simulate_batch, write_samples

    pr = cfg.params
    th, pi = _limit_theta(spec, f, pr)
    s = simulate_batch(spec, f, pr.n, pr.N, pr.seed, th)
    occ_dev = float(np.max(np.abs(s.occupation - pi)))
    passed = s.ks_distance <= pr.ks_threshold and occ_dev <= pr.tol("occupation")
    env.results = {
        "n": s.n,
        "N": s.N,
        "seed": s.seed,
        "theta_used": s.theta_used,
        "e_sn_used": s.e_sn_used,
        "ks_distance": s.ks_distance,
        "ks_threshold": pr.ks_threshold,
        "occupation": s.occupation.tolist(),
        "pi": pi.tolist(),
        "occupation_max_deviation": occ_dev,
        "v_over_n_mean": s.v_over_n_mean,
        "var_s_over_n": s.var_s_over_n,
        "var_w_over_n": s.var_w_over_n,
        "standardized_mean": float(np.mean(s.standardized_samples)),
        "standardized_variance": float(np.var(s.standardized_samples)),
    }
    if spill is not None:
        write_samples(spill, s.standardized_samples)
        env.results["samples_file"] = {"format": "uint64 LE count, then float64 LE values", "count": s.N}
    env.verdict = "PASS" if passed else "FAIL"
    env.tables["clt"] = (["key", "value"], [[k, env.results[k]] for k in ("ks_distance", "ks_threshold", "theta_used", "var_s_over_n", "var_w_over_n")])


def _run_mdp(cfg, spec, f, env):
    from .monte_carlo import mdp_estimate

    pr = cfg.params
    th, _ = _limit_theta(spec, f, pr)
    est = mdp_estimate(spec, f, pr.n_grid, pr.alpha, pr.x_grid, pr.N, pr.seed, th)
    rows = [[c.n, c.x, c.p_hat, c.normalized_log, c.reference] for c in est.grid]
    env.results = {
        "a_exponent": est.a_exponent,
        "N_per_cell": est.N_per_cell,
        "theta_used": th,
        "grid": [dataclasses.asdict(c) for c in est.grid],
    }
    env.warnings.extend(est.warnings)
    env.warnings.extend(f"cell n={c.n} x={c.x}: no path reached the threshold" for c in est.grid if c.flagged)
    env.tables["mdp"] = (["n", "x", "p_hat", "normalized_log", "reference"], rows)


def _run_oracle(cfg, spec, f, env):
    from .limit_quantities import enumerate_exact

    n = cfg.params.n
    ex = enumerate_exact(spec, f, n)
    es = expected_sum(spec, f, n)
    diff = abs(es - ex.mean)
    env.results = {
        "n": n,
        "support": ex.support.tolist(),
        "probabilities": ex.probabilities.tolist(),
        "mean": ex.mean,
        "variance": ex.variance,
        "expected_sum": es,
        "mean_discrepancy": diff,
    }
    env.verdict = "PASS" if diff <= 1e-12 * max(1.0, abs(ex.mean)) else "FAIL"
    env.tables["oracle"] = (["s", "probability"], [[s, p] for s, p in zip(ex.support.tolist(), ex.probabilities.tolist())])


_DISPATCH = {
    "validate": _run_validate,
    "diagnose": _run_diagnose,
    "clt": _run_clt,
    "mdp": _run_mdp,
    "oracle": _run_oracle,
}


def run_experiment(cfg: ExperimentConfig, spill=None) -> ReportEnvelope:
    """Run the selected analysis. ``spill`` is an optional path for clt's standardized samples."""
    spec = cfg.build_spec()
    f = cfg.build_observable()
    if len(f) != spec.K:
        raise DimensionMismatch("observable length differs from state count")
    env = ReportEnvelope(cfg.digest(), __version__, cfg.analysis, {})
    if cfg.analysis == "clt":
        _run_clt(cfg, spec, f, env, spill)
    else:
        _DISPATCH[cfg.analysis](cfg, spec, f, env)
    return env


# ---------------------------------------------------------------- emission


def _fmt_float(x: float) -> str:
    if not math.isfinite(x):
        return "null"
    if x == int(x) and abs(x) < 1e16:
        return repr(float(x))
    return format(x, ".17g")


def _render(obj, indent: int = 0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_render(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(_render(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _render(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else format(float(v), ".17g")
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return str(v)


def emit_report(env: ReportEnvelope, fmt: str = "json") -> bytes:
    """Serialize a report. ``json``: canonical key order, 17 significant digits.
    ``csv``: one ``# label`` block per table with its header row."""
    if fmt == "json":
        return (_render(env.payload()) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        buf.write(f"# config_digest={env.config_digest} tool_version={env.tool_version} analysis={env.analysis}\n")
        for label in sorted(env.tables):
            header, rows = env.tables[label]
            buf.write(f"\n# {label}\n")
            buf.write(",".join(header) + "\n")
            for row in rows:
                buf.write(",".join(_csv_cell(v) for v in row) + "\n")
        return buf.getvalue().encode()
    raise UnsupportedFormat(f"unsupported format {fmt!r}")
