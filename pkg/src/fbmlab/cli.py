"""Command-line front end.

Every subcommand takes the same run configuration, read from an optional
``key = value`` file and overridden by flags. Outputs are CSV files with a
``#`` metadata block, JSON envelopes and gnuplot ``.dat`` files. Expensive
quadrature results are cached on disk under a hash of (operation, config,
version); set FBMLAB_CACHE_DIR to move the cache.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaincc

from . import __version__
from . import asymlab, estim, hinner
from .bvfunc import ParseError, parse_bv
from .quad import QuadConfig, QuadratureError, SingularityHint, integrate_1d, integrate_semi_inf
from .specfun import ModelParams, gamma_fn, norm_slope

CACHE_ENV = "FBMLAB_CACHE_DIR"
EXIT_OK, EXIT_INTERNAL, EXIT_USER, EXIT_ACCEPT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


def _default_cache() -> str:
    return os.environ.get(CACHE_ENV) or str(Path.home() / ".cache" / "fbmlab")


@dataclass(frozen=True)
class RunConfig:
    h: float = 0.3
    theta: float = 1.0
    sigma: float = 1.0
    t_grid: tuple = (25.0, 50.0, 100.0, 200.0)
    delta: float = 1.0 / 16.0
    n_reps: int = 20000
    seed: int = 20240601
    tol_abs: float = 1e-14  # adaptive quadrature tolerances
    tol_rel: float = 1e-12
    threads: int = 1
    cache_dir: str = field(default_factory=_default_cache)
    out: str = "."

    def validate(self) -> "RunConfig":
        if not 0.0 < self.h < 0.5:
            raise ConfigError(f"h must lie in (0, 1/2), got {self.h}")
        if self.theta <= 0 or self.sigma <= 0 or self.delta <= 0:
            raise ConfigError("theta, sigma and delta must be positive")
        if not self.t_grid or any(t <= 0 for t in self.t_grid):
            raise ConfigError("t_grid must be a non-empty list of positive values")
        if list(self.t_grid) != sorted(set(self.t_grid)):
            raise ConfigError("t_grid must be strictly increasing")
        if self.n_reps < 1:
            raise ConfigError("n_reps must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.tol_abs <= 0 or self.tol_rel <= 0:
            raise ConfigError("tolerances must be positive")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        return self

    def numeric(self) -> dict:
        """Fields that determine results (paths excluded)."""
        d = dataclasses.asdict(self)
        d.pop("cache_dir")
        d.pop("out")
        d["t_grid"] = list(self.t_grid)
        return d

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        d["t_grid"] = list(self.t_grid)
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, text: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        if key == "t_grid":
            return tuple(float(x) for x in text.replace(",", " ").split())
        if key in ("n_reps", "seed", "threads"):
            return int(text, 0)
        if key in ("cache_dir", "out"):
            return text
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key] = _coerce(key.replace("-", "_"), val)
    return out


def build_config(args) -> RunConfig:
    values = read_config_file(args.config) if args.config else {}
    for key in _FIELDS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = _coerce(key, v) if isinstance(v, str) else v
    return RunConfig(**values).validate()


# ------------------------------------------------------------------ output helpers


class Cache:
    def __init__(self, root: str):
        self.root = Path(root)
        self.hits = 0

    @staticmethod
    def key(op: str, payload: dict) -> str:
        blob = json.dumps({"op": op, "config": payload, "version": __version__}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    def get_or_compute(self, op: str, payload: dict, fn):
        path = self.root / f"{self.key(op, payload)}.json"
        if path.exists():
            self.hits += 1
            return json.loads(path.read_text())
        value = fn()
        self.root.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        # json writes floats with repr, so they round-trip bit for bit
        tmp.write_text(json.dumps(value))
        tmp.replace(path)
        return value


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, header, rows, meta: dict) -> None:
    buf = io.StringIO()
    for k, v in meta.items():
        buf.write(f"# {k} = {json.dumps(v)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h)) for h in header])
    path.write_text(buf.getvalue())


def read_csv(path) -> tuple[dict, list[dict]]:
    """Parse a file written by write_csv back into (metadata, rows)."""
    meta, body = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, v = line[1:].split("=", 1)
            meta[k.strip()] = json.loads(v)
        else:
            body.append(line)
    rows = list(csv.DictReader(body))
    return meta, rows


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    """Strict JSON; nan and inf become null."""
    path.write_text(json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _meta(cfg: RunConfig, op: str) -> dict:
    return {"operation": op, "version": __version__, "config": cfg.echo()}


def _envelope(cfg, op, outputs, t0, cache) -> dict:
    return {
        "operation": op,
        "version": __version__,
        "config": cfg.echo(),
        "outputs": outputs,
        "wall_clock": time.time() - t0,
        "cache_hits": cache.hits,
    }


def _outdir(cfg: RunConfig) -> Path:
    p = Path(cfg.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


# ------------------------------------------------------------------ subcommands


def cmd_innerprod(cfg: RunConfig, args) -> int:
    T = args.horizon
    try:
        f = parse_bv(args.f, T)
        g = parse_bv(args.g, T)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    methods = ["jolis", "window", "fourier", "grid"] if args.method == "all" else [args.method]
    vals = {}
    for m in methods:
        kw = {"n": args.grid_n} if m == "grid" else {}
        try:
            if m == "fourier":
                vals[m] = hinner.ip_fourier(f, g, cfg.h)
            else:
                vals[m] = hinner.inner_product(f, g, cfg.h, m, **kw)
        except hinner.OverlapError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USER
    for m, v in vals.items():
        print(f"{m:8s} {v:.15g}")
    ref = methods[0]
    deltas = {m: vals[m] - vals[ref] for m in methods[1:]}
    for m, d in deltas.items():
        print(f"{m} - {ref}: {d:.3e}")
    write_json(_outdir(cfg) / "innerprod.json", {"f": args.f, "g": args.g, "horizon": T, "values": vals, "deltas": deltas, **_meta(cfg, "innerprod")})
    return EXIT_OK


def _ft_row(cfg, cache, T):
    payload = {**cfg.numeric(), "T": T}

    def compute():
        b = asymlab.norm_ft_sq(asymlab.FtKernelParams(T, cfg.theta, cfg.h))
        return {"m11": b.m11, "m12": b.m12, "m31": b.m31, "m32": b.m32, "m33": b.m33, "total": b.total}

    return cache.get_or_compute("ftnorm", payload, compute)


def _grid_oracle(T, theta, h, n=1024):
    F = hinner.tensor_cell_averages(lambda t, s: np.exp(-theta * np.abs(t - s)), T, n)
    return hinner.tensor_ip_grid_oracle(F, F, h, n, T / n)


def cmd_ftnorm(cfg: RunConfig, args) -> int:
    t0 = time.time()
    cache = Cache(cfg.cache_dir)
    slope = norm_slope(cfg.h) * cfg.theta ** (1.0 - 4.0 * cfg.h)
    header = ["T", "H", "theta", "m11", "m12", "m31", "m32", "m33", "total", "residual", "status"]
    if args.oracle:
        header.insert(-1, "oracle")
    rows = []
    for T in cfg.t_grid:
        row = {"T": T, "H": cfg.h, "theta": cfg.theta}
        try:
            row.update(_ft_row(cfg, cache, T))
            row["residual"] = row["total"] - slope * T
            if args.oracle:
                row["oracle"] = _grid_oracle(T, cfg.theta, cfg.h)
            row["status"] = "ok"
        except (QuadratureError, ArithmeticError, ValueError) as exc:
            row["status"] = f"failed: {exc}"
        rows.append(row)
    out = _outdir(cfg)
    write_csv(out / "ftnorm.csv", header, rows, _meta(cfg, "ftnorm"))
    write_json(out / "ftnorm.json", _envelope(cfg, "ftnorm", {"slope": slope, "rows": rows}, t0, cache))
    return EXIT_OK


def cmd_asymptote(cfg: RunConfig, args) -> int:
    t0 = time.time()
    cache = Cache(cfg.cache_dir)
    slope = norm_slope(cfg.h) * cfg.theta ** (1.0 - 4.0 * cfg.h)
    samples, rows = [], []
    for T in cfg.t_grid:
        try:
            tot = _ft_row(cfg, cache, T)["total"]
            samples.append((T, tot))
            rows.append({"T": T, "total": tot, "residual": tot - slope * T, "status": "ok"})
        except (QuadratureError, ArithmeticError, ValueError) as exc:
            rows.append({"T": T, "status": f"failed: {exc}"})
    summary = {"target_slope": slope}
    try:
        fit = asymlab.fit_asymptote(samples)
        steps = [abs(b["residual"] - a["residual"]) for a, b in zip(rows[:-1], rows[1:]) if "residual" in a and "residual" in b]
        summary.update(
            fitted_slope=fit.slope,
            intercept=fit.intercept,
            rel_err=abs(fit.slope - slope) / slope,
            residual_steps=steps,
            steps_decreasing=all(b < a for a, b in zip(steps[:-1], steps[1:])),
        )
    except asymlab.AsymptoteError as exc:
        summary["error"] = str(exc)
    out = _outdir(cfg)
    write_csv(out / "asymptote.csv", ["T", "total", "residual", "status"], rows, _meta(cfg, "asymptote"))
    write_json(out / "asymptote.json", _envelope(cfg, "asymptote", summary, t0, cache))
    print(json.dumps(_finite(summary), indent=2))
    return EXIT_OK


def cmd_appendix(cfg: RunConfig, args) -> int:
    t0 = time.time()
    cache = Cache(cfg.cache_dir)
    ids = [asymlab.AppendixIntegralId(i) for i in args.ids] if args.ids else [i for i in asymlab.AppendixIntegralId if i.name != "D"]
    rows = []
    for ident in ids:
        closed = asymlab.closed_form_slope(ident, cfg.h)
        vals, block = [], []
        for T in cfg.t_grid:
            row = {"id": ident.value, "T": T, "closed_slope": closed}
            try:
                v = cache.get_or_compute("appendix", {**cfg.numeric(), "id": ident.value, "T": T}, lambda: asymlab.eval_appendix_integral(ident, T, cfg.h))
                row.update(value=v, status="ok")
                vals.append((T, v))
            except (asymlab.AppendixQuadratureError, QuadratureError, ValueError) as exc:
                row["status"] = f"failed: {exc}"
            block.append(row)
        try:
            fitted = asymlab.fit_asymptote(vals).slope
            for row in block:
                row["fitted_slope"] = fitted
                row["rel_err"] = abs(fitted - closed) / abs(closed)
        except asymlab.AsymptoteError:
            pass
        rows.extend(block)
    out = _outdir(cfg)
    header = ["id", "T", "value", "fitted_slope", "closed_slope", "rel_err", "status"]
    write_csv(out / "appendix.csv", header, rows, _meta(cfg, "appendix"))
    write_json(out / "appendix.json", _envelope(cfg, "appendix", rows, t0, cache))
    return EXIT_OK


def cmd_identity(cfg: RunConfig, args) -> int:
    chk = asymlab.identity_check(cfg.h)
    res = {"H": cfg.h, "lhs": chk.lhs, "rhs": chk.rhs, "rel_err": chk.rel_err}
    write_json(_outdir(cfg) / "identity.json", {**res, **_meta(cfg, "identity")})
    print(json.dumps(res))
    return EXIT_OK


def cmd_be_rate(cfg: RunConfig, args) -> int:
    t0 = time.time()
    p = ModelParams(cfg.theta, cfg.sigma, cfg.h, cfg.t_grid[0])
    try:
        s = estim.be_experiment(p, cfg.t_grid, cfg.n_reps, cfg.delta, cfg.seed, cfg.threads, allow_small=True)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    rows = []
    for i, T in enumerate(s.t_grid):
        rows.append({
            "T": T, "n_reps": s.n_reps, "dk_lse": s.dk_lse[i], "dk_mm": s.dk_mm[i],
            "var_norm_lse": s.var_norm_lse[i], "var_norm_mm": s.var_norm_mm[i], "mc_floor": s.mc_floor,
        })
    out = _outdir(cfg)
    header = ["T", "n_reps", "dk_lse", "dk_mm", "var_norm_lse", "var_norm_mm", "mc_floor"]
    write_csv(out / "be.csv", header, rows, _meta(cfg, "be-rate"))
    flag = lambda b: "ok" if math.isfinite(b) else "unreliable"
    summary = {
        "beta_lse": s.beta_lse, "beta_lse_se": s.beta_lse_se, "beta_lse_status": flag(s.beta_lse),
        "beta_mm": s.beta_mm, "beta_mm_se": s.beta_mm_se, "beta_mm_status": flag(s.beta_mm),
        "mc_floor": s.mc_floor, "failures": {str(k): v for k, v in s.failures.items()},
        "rate_table": estim.rate_table(s, cfg.h),
    }
    env = _envelope(cfg, "be-rate", summary, t0, Cache(cfg.cache_dir))
    env.pop("wall_clock")  # keep be.json byte-identical across reruns
    write_json(out / "be.json", env)
    lines = ["# log(T) log(dk_lse) log(dk_mm)"]
    for r in rows:
        if r["dk_lse"] and r["dk_mm"]:
            lines.append(f"{math.log(r['T']):.10g} {math.log(r['dk_lse']):.10g} {math.log(r['dk_mm']):.10g}")
    (out / "be_rate.dat").write_text("\n".join(lines) + "\n")
    print(json.dumps(_finite({k: v for k, v in summary.items() if k != "rate_table"}), indent=2))
    return EXIT_OK


# ------------------------------------------------------------------ selftest


def _check_methods(cfg):
    worst = 0.0
    for _, f, g in hinner.standard_battery()[:6]:
        ref = hinner.ip_jolis(f, g, cfg.h)
        scale = max(1.0, abs(ref))
        worst = max(worst, abs(ref - hinner.ip_window(f, g, cfg.h)) / scale, abs(ref - hinner.ip_fourier(f, g, cfg.h)) / scale)
    return worst <= 1e-5, f"max scaled deviation {worst:.2e}"


def _check_identity(cfg):
    h = 0.3
    qc = QuadConfig(cfg.tol_abs, cfg.tol_rel)
    # the one-fold slope pieces at the requested tolerance against series values
    i1, _ = integrate_semi_inf(lambda u: np.exp(-u) * u ** (2 * h - 2), 1.0, cfg=qc)
    i1_ref = (gamma_fn(2 * h) * gammaincc(2 * h, 1.0) - math.exp(-1.0)) / (2 * h - 1)
    b = 2 * h - 1
    im, _ = integrate_1d(lambda x: (np.exp(x) - np.exp(-x)) * x**b, 0.0, 1.0, [SingularityHint(0.0, b)], qc)
    im_ref = 2.0 * math.fsum(1.0 / (math.factorial(k) * (k + b + 1.0)) for k in range(1, 40, 2))
    pieces_ok = abs(i1 - i1_ref) <= 1e-9 * abs(i1_ref) and abs(im - im_ref) <= 1e-9 * abs(im_ref)
    chk = asymlab.identity_check(h)
    return chk.rel_err <= 1e-4 and pieces_ok, f"rel_err {chk.rel_err:.2e}"


def _check_q_slope(cfg):
    Q = asymlab.AppendixIntegralId.Q
    fit = asymlab.fit_asymptote([(T, asymlab.eval_appendix_integral(Q, T, 0.3)) for T in (50.0, 100.0, 150.0, 200.0)])
    exact = 6.0 * math.exp(-2.0) + 2.0
    rel = abs(fit.slope - exact) / exact
    return rel <= 1e-2 and asymlab.closed_form_slope(Q, 0.3) == exact, f"fitted {fit.slope:.8f} vs {exact:.8f}"


def _check_chaos_variance(cfg):
    T, n_reps = 10.0, 20000
    p = ModelParams(1.0, 1.0, 0.3, T)
    b = estim.draw_many(p, int(T * 16), (estim.derive_seed(cfg.seed, i) for i in range(n_reps)))
    target = 0.5 * asymlab.norm_ft_sq(asymlab.FtKernelParams(T, 1.0, 0.3)).total
    rel = abs(np.var(b.numerator) / target - 1.0)
    return rel <= 0.05, f"MC variance / target - 1 = {rel:.3f}"


SELFTESTS = (
    ("method agreement", _check_methods),
    ("slope identity", _check_identity),
    ("Q appendix slope", _check_q_slope),
    ("chaos variance", _check_chaos_variance),
)


def run_selftest(cfg: RunConfig, checks=SELFTESTS) -> list[tuple[str, bool, str]]:
    report = []
    for name, fn in checks:
        try:
            ok, msg = fn(cfg)
        except (QuadratureError, hinner.TailBoundError) as exc:
            ok, msg = False, f"budget exceeded: {exc}"
        report.append((name, bool(ok), msg))
    return report


def cmd_selftest(cfg: RunConfig, args) -> int:
    t0 = time.time()
    report = run_selftest(cfg)
    for name, ok, msg in report:
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {msg}")
    print(f"elapsed {time.time() - t0:.1f} s")
    return EXIT_OK if all(ok for _, ok, _ in report) else EXIT_ACCEPT


# ------------------------------------------------------------------ entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--h", type=float)
    common.add_argument("--theta", type=float)
    common.add_argument("--sigma", type=float)
    common.add_argument("--t-grid", dest="t_grid", help="comma separated horizons")
    common.add_argument("--delta", type=float)
    common.add_argument("--n-reps", dest="n_reps", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--tol-abs", dest="tol_abs", type=float)
    common.add_argument("--tol-rel", dest="tol_rel", type=float)
    common.add_argument("--threads", type=int)
    common.add_argument("--cache-dir", dest="cache_dir")
    common.add_argument("--out")

    ap = argparse.ArgumentParser(prog="fbmlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    ip = sub.add_parser("innerprod", parents=[common], help="inner product of two BV functions")
    ip.add_argument("--f", required=True)
    ip.add_argument("--g", required=True)
    ip.add_argument("--method", default="all", choices=["all", "jolis", "window", "fourier", "grid", "disjoint"])
    ip.add_argument("--horizon", type=float, default=4.0)
    ip.add_argument("--grid-n", dest="grid_n", type=int, default=8192)
    ip.set_defaults(func=cmd_innerprod)

    ft = sub.add_parser("ftnorm", parents=[common], help="M-term breakdown of ||f_T||^2")
    ft.add_argument("--oracle", action="store_true", help="add a grid oracle column (small T only)")
    ft.set_defaults(func=cmd_ftnorm)

    sub.add_parser("asymptote", parents=[common], help="fitted slope of ||f_T||^2").set_defaults(func=cmd_asymptote)

    apx = sub.add_parser("appendix", parents=[common], help="slopes of the auxiliary integrals")
    apx.add_argument("--ids", nargs="*", choices=[i.value for i in asymlab.AppendixIntegralId])
    apx.set_defaults(func=cmd_appendix)

    sub.add_parser("identity", parents=[common], help="slope identity check").set_defaults(func=cmd_identity)
    sub.add_parser("be-rate", parents=[common], help="Berry-Esseen Monte Carlo").set_defaults(func=cmd_be_rate)
    sub.add_parser("selftest", parents=[common], help="fast acceptance subset").set_defaults(func=cmd_selftest)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USER if exc.code else EXIT_OK
    try:
        cfg = build_config(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    try:
        return args.func(cfg, args)
    except (ConfigError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
