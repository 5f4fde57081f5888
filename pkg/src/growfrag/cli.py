"""Command-line front end.

Every output file starts with ``#`` header lines carrying the seed, model
label, build id and a parameter echo.  ``--no-timestamp`` drops the only
run-dependent header line, making reruns byte-identical.  Results do not
depend on ``--threads``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

EXIT_OK, EXIT_VALIDATION, EXIT_ESTIMATION, EXIT_IO = 0, 2, 3, 4


def _build_id() -> str:
    try:
        from importlib.metadata import version

        ver = version("artifact")
    except Exception:
        ver = "0.0.0"
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--abbrev=12"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=5)
        tag = out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        tag = ""
    return f"{ver}-g{tag}" if tag else ver


def _floats(s: str) -> list[float]:
    return [float(v) for v in s.split(",") if v.strip()]


def _grid_spec(s: str):
    lo, hi, k = s.split(":")
    return float(lo), float(hi), int(k)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")

    p = argparse.ArgumentParser(prog="growfrag", description="Growth-fragmentation spectral toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check a model config")
    s.add_argument("config")

    s = sub.add_parser("simulate", parents=[common], help="simulate paths of the tagged fragment")
    s.add_argument("--model", required=True)
    s.add_argument("--x", type=float, default=None)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--n", type=int, default=10)
    s.add_argument("--events", action="store_true", help="also write every jump to events.csv")

    s = sub.add_parser("semigroup", parents=[common], help="Feynman-Kac estimate of T_t f(x)")
    s.add_argument("--model", required=True)
    s.add_argument("--x", type=float, default=None)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--f", required=True, help="bump:center,C;width,W | bump:C;W | plateau:LO;HI | id")
    s.add_argument("--n", type=int, default=100000)

    s = sub.add_parser("find-rho", parents=[common], help="estimate the spectral radius")
    s.add_argument("--model", required=True)
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--tmax", type=float, default=2000.0)
    s.add_argument("--x0", type=float, default=None)

    s = sub.add_parser("ell", parents=[common], help="tabulate the eigenfunction")
    s.add_argument("--model", required=True)
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--grid", type=_grid_spec, default=(0.5, 2.0, 7), help="LO:HI:K, log-spaced")
    s.add_argument("--n", type=int, default=20000)
    s.add_argument("--tmax", type=float, default=200.0)

    for name, hlp in (("profile", "asymptotic profile exp(-rho t) T_t f(x)"),
                      ("stationary", "stationary law of the tilted process")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--model", required=True)
        s.add_argument("--rho", type=float, default=None, help="default: closed form or estimated")
        s.add_argument("--ell-table", default=None, help="CSV written by the ell command")
        s.add_argument("--rho-n", type=int, default=20000)
        s.add_argument("--tmax", type=float, default=2000.0)
        s.add_argument("--ell-n", type=int, default=2000)
        if name == "profile":
            s.add_argument("--f", required=True)
            s.add_argument("--x", type=float, default=None)
            s.add_argument("--t", type=_floats, required=True, help="T1,T2,...")
            s.add_argument("--n", type=int, default=100000)
        else:
            s.add_argument("--trun", type=float, required=True)
            s.add_argument("--tburn", type=float, default=100.0)
            s.add_argument("--bins", type=int, default=32)
            s.add_argument("--lo", type=float, default=0.1)
            s.add_argument("--hi", type=float, default=10.0)
            s.add_argument("--n-curve", type=int, default=20000)

    s = sub.add_parser("levy-analytic", parents=[common], help="closed-form values for the Levy case")
    s.add_argument("--a", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--beta", type=float, required=True)
    s.add_argument("--q", type=_floats, default=None, help="q values for the L(q) table")

    s = sub.add_parser("pde-solve", parents=[common], help="finite-difference Tbar_t f")
    s.add_argument("--model", required=True)
    s.add_argument("--f", required=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--n-grid", type=int, default=None)
    s.add_argument("--x-min", type=float, default=None)
    s.add_argument("--x-max", type=float, default=None)
    s.add_argument("--cfl", type=float, default=None)
    s.add_argument("--quad-nodes", type=int, default=None)

    s = sub.add_parser("check-ergodicity", parents=[common], help="Foster-Lyapunov drift report")
    s.add_argument("--model", required=True)
    s.add_argument("--A", type=float, default=1.0)
    s.add_argument("--B", type=float, default=1.0)
    return p


class Run:
    def __init__(self, args, params: dict):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.params = params
        self.label = ""

    def header(self) -> list[str]:
        lines = [f"growfrag {self.args.command}", f"seed={self.args.seed}", f"model={self.label}",
                 f"build={_build_id()}", "params=" + json.dumps(self.params, sort_keys=True)]
        if not self.args.no_timestamp:
            lines.append("timestamp=" + datetime.now(timezone.utc).isoformat(timespec="seconds"))
        return lines

    def path(self, name: str) -> Path:
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        doc = {"header": self.header(), **obj}
        self.path(name).write_text(_dumps(doc, indent=2) + "\n")

    def write_csv(self, name: str, cols: list[str], rows) -> None:
        import csv

        with open(self.path(name), "w", newline="") as fh:
            for line in self.header():
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


def _clean(o):
    """Strict JSON: non-finite floats become null."""
    import numpy as np

    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (float, np.floating)):
        return float(o) if math.isfinite(o) else None
    return o


def _dumps(obj, **kw) -> str:
    return json.dumps(_clean(obj), sort_keys=True, default=_json_default, allow_nan=False, **kw)


def _json_default(o):
    import numpy as np

    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def _params(args) -> dict:
    skip = {"out", "threads", "no_timestamp", "command", "seed"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


# -- commands -------------------------------------------------------------------


def cmd_validate(run: Run):
    from . import model as M

    spec = M.load_spec(run.args.config)
    run.label = spec.label
    M.validate(spec)
    report = {"valid": True, "label": spec.label, "violations": []}
    print(_dumps(report))
    run.write_json("validation.json", report)


def _load(run: Run):
    from . import model as M

    m = M.load_model(run.args.model)
    run.label = m.label
    return m


def cmd_simulate(run: Run):
    from . import pdmp

    a = run.args
    m = _load(run)
    x = m.x0 if a.x is None else a.x
    paths = [pdmp.simulate_path(m, x, a.t, a.seed, i) for i in range(a.n)]
    run.write_csv("trajectories.csv", ["path_id", "start", "end_time", "end_mass", "n_events", "log_E"],
                  [(i, tr.start, tr.end_time, tr.end_mass, len(tr.event_times), tr.log_E)
                   for i, tr in enumerate(paths)])
    if a.events:
        run.write_csv("events.csv", ["path_id", "event_time", "pre_mass", "post_mass"],
                      [(i, t, p, q) for i, tr in enumerate(paths) for t, p, q in tr.events])


def cmd_semigroup(run: Run):
    from . import pdmp
    from .functions import parse_function

    a = run.args
    m = _load(run)
    x = m.x0 if a.x is None else a.x
    f = parse_function(a.f)
    e = pdmp.feynman_kac(m, x, a.t, f, a.n, a.seed)
    run.write_csv("semigroup.csv", ["x", "t", "estimate", "stderr", "N"], [(x, a.t, e.mean, e.stderr, e.n)])
    print(_dumps({"estimate": e.mean, "stderr": e.stderr, "N": e.n}))


def cmd_find_rho(run: Run):
    from . import spectral

    a = run.args
    m = _load(run)
    est, _ = spectral.estimate_rho(m, a.n, a.tmax, a.seed, a.x0)
    spectral.write_spectral(run.path("spectral.csv"), est, run.header())
    print(_dumps(est.as_row() | {"divergent": est.divergent, "bias_direction": est.bias_direction}))


def cmd_ell(run: Run):
    from . import spectral

    a = run.args
    m = _load(run)
    lo, hi, k = a.grid
    tab = spectral.build_ell_table(m, a.rho, spectral.log_grid(lo, hi, k), a.n, a.tmax, a.seed)
    spectral.write_ell_table(run.path("ell_table.csv"), tab, run.header())


def _read_ell_table(path, x0: float, rho: float):
    import numpy as np

    from .spectral import EllTable

    data = np.genfromtxt(path, delimiter=",", comments="#", names=True)
    return EllTable(np.atleast_1d(data["x"]), np.atleast_1d(data["ell_hat"]), np.atleast_1d(data["stderr"]),
                    rho, x0)


def _tilted(run: Run, m):
    """Closed form for the Levy family, otherwise rho and ell from tables or fresh estimates."""
    from . import spectral, tilt
    from .levy import LevyParams

    a = run.args
    if a.rho is None and a.ell_table is None:
        try:
            LevyParams.from_model(m)
            return tilt.from_levy(m)
        except ValueError:
            pass
    rho = a.rho
    if rho is None:
        rho = spectral.estimate_rho(m, a.rho_n, a.tmax, a.seed)[0].rho_hat
    if a.ell_table is not None:
        table = _read_ell_table(a.ell_table, m.x0, rho)
    else:
        grid = spectral.log_grid(0.05, 20.0, 13)
        table = spectral.build_ell_table(m, rho, grid, a.ell_n, a.tmax, a.seed + 1)
    return tilt.from_table(m, table)


def cmd_profile(run: Run):
    from . import tilt
    from .functions import parse_function

    a = run.args
    m = _load(run)
    tm = _tilted(run, m)
    f = parse_function(a.f)
    x = m.x0 if a.x is None else a.x
    rows = [tilt.asymptotic_profile(tm, f, x, t, a.n, a.seed) for t in a.t]
    tilt.write_profile(run.path("profile.csv"), rows, run.header())


def cmd_stationary(run: Run):
    from . import tilt

    a = run.args
    m = _load(run)
    tm = _tilted(run, m)
    st = tilt.stationary_density(tm, a.tburn, a.trun, a.bins, a.lo, a.hi, N_curve=a.n_curve, seed=a.seed)
    tilt.write_stationary(run.path("stationary.csv"), st, run.header())
    print(_dumps({"chi2": st.chi2, "critical": st.critical, "df": st.df, "passed": st.passed,
                      "outside_fraction": st.outside_fraction}))


def cmd_levy_analytic(run: Run):
    from . import levy

    a = run.args
    from .model import ModelError

    try:
        p = levy.LevyParams(a.a, a.lam, a.beta)
    except ValueError as exc:
        raise ModelError(str(exc)) from exc
    run.label = f"levy(a={a.a},lambda={a.lam},beta={a.beta})"
    summary = levy.oracle_summary(p, a.q) if a.q else levy.oracle_summary(p)
    print(_dumps(summary))
    run.write_json("levy.json", summary)


def cmd_pde_solve(run: Run):
    from . import model as M
    from . import pde
    from .functions import parse_function

    a = run.args
    m = _load(run)
    cfg = M.read_config(M.resolve_config(a.model))

    def pick(flag, key, default, cast):
        v = getattr(a, flag)
        return cast(v if v is not None else cfg.get(key, default))

    grid = pde.PdeGrid(pick("x_min", "pde.x_min", 1e-2, float), pick("x_max", "pde.x_max", 1e2, float),
                       pick("n_grid", "pde.n", 512, int), pick("quad_nodes", "pde.quad_nodes", 32, int),
                       pick("cfl", "pde.cfl", 0.5, float))
    f = parse_function(a.f)
    g = pde.evolve_backward(m, f, a.t, grid)
    pde.write_solution(run.path("pde_solution.csv"), g, run.header())


def cmd_check_ergodicity(run: Run):
    from . import ergo

    a = run.args
    m = _load(run)
    rep = ergo.check_assumptions(m, a.A, a.B)
    spec = ergo.LyapunovSpec(a.A, a.B)
    drift = ergo.drift_profile(m, spec)
    doc = {"assumptions": rep.as_dict(), "drift": drift.as_dict()}
    print(_dumps(doc))
    run.write_json("ergodicity.json", doc)


COMMANDS = {
    "validate": cmd_validate, "simulate": cmd_simulate, "semigroup": cmd_semigroup, "find-rho": cmd_find_rho,
    "ell": cmd_ell, "profile": cmd_profile, "stationary": cmd_stationary, "levy-analytic": cmd_levy_analytic,
    "pde-solve": cmd_pde_solve, "check-ergodicity": cmd_check_ergodicity,
}


def _exit_code(exc: BaseException) -> int:
    from .model import ModelError

    if isinstance(exc, ModelError):
        return EXIT_VALIDATION
    if isinstance(exc, OSError):
        return EXIT_IO
    # module errors and anything unexpected during estimation
    return EXIT_ESTIMATION


def _report(exc: BaseException, code: int) -> None:
    doc = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    violations = getattr(exc, "violations", None)
    if violations:
        doc["violations"] = [{"code": v.code, "detail": v.detail, "where": v.where} for v in violations]
        doc["error"] = violations[0].code
    sys.stderr.write(json.dumps(doc, sort_keys=True, default=str) + "\n")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads or os.cpu_count() or 1
    # must be set before numba is first imported
    os.environ.setdefault("NUMBA_NUM_THREADS", str(max(threads, os.cpu_count() or 1)))
    from .pdmp import set_threads

    set_threads(threads)
    try:
        run = Run(args, _params(args))
        COMMANDS[args.command](run)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a structured exit
        code = _exit_code(exc)
        _report(exc, code)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
