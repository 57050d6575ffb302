"""Command-line entry point: ``conflab <command> [flags]``.

Exit status: 0 when every asserted property holds, 1 when one fails,
2 for configuration or input errors, 3 when a table would exceed the budget.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from . import __version__
from .calibration import (
    Calibrator,
    apply_calibrator,
    apply_e_to_p,
    is_calibrator,
)
from .conformal import as_table, conformal_predict, make_score, prediction_set
from .gaps import (
    binomial_gap,
    exchangeability_flatness,
    limitation_check,
    mc_coverage,
    permutation_gap,
)
from .instances import instance_rng, random_instance
from .oracles import TOL_EXCH, TOL_IID, ClassLabel, check_class
from .space import DEFAULT_BUDGET, BudgetExceeded, Distribution, FnTable, ObservationSpace, check_budget
from .tableio import TableFormatError, load_table, report_csv, report_json, save_table
from .universality import (
    ChainStageError,
    compare_chain_bounds,
    corollary_kolmogorov_chain,
    decompose,
    full_p_chain,
    kolmogorov_constant,
    train_invariant_p_chain,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3

P_TO_E = {"PR": "ER", "PX": "EX", "PtR": "EtR", "PtX": "EtX"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    space: tuple[int, int] | None = None
    n: int | None = None
    seed: int = 0
    tol_exch: float = TOL_EXCH
    tol_iid: float = TOL_IID
    budget: int = DEFAULT_BUDGET
    out: str | None = None
    format: str = "json"
    options: dict[str, Any] = field(default_factory=dict)


# -- helpers ---------------------------------------------------------------


def _space(cfg: RunConfig) -> ObservationSpace:
    if cfg.space is None:
        raise ConfigError("--space is required")
    return ObservationSpace(*cfg.space)


def _n(cfg: RunConfig) -> int:
    if cfg.n is None or cfg.n < 0:
        raise ConfigError("--n must be a nonnegative integer")
    return cfg.n


def _tables(cfg: RunConfig, make: Callable[[ObservationSpace, int, np.random.Generator], FnTable]):
    """Yield ``(instance id, table)`` from ``--table`` or ``--random K``."""
    opts = cfg.options
    if opts.get("table"):
        table = load_table(opts["table"])
        check_budget(table.space.z_card, table.N, cfg.budget)
        yield "table", table
        return
    count = opts.get("random")
    if not count:
        raise ConfigError("give --table PATH or --random K")
    space, n = _space(cfg), _n(cfg)
    check_budget(space.z_card, n + 1, cfg.budget)
    for i in range(count):
        yield i, make(space, n, instance_rng(cfg.seed, i))


def _chain_failure(exc: ChainStageError) -> dict:
    return {"ok": False, "stage": exc.stage, "message": str(exc),
            "report": None if exc.report is None else exc.report.to_dict()}


# -- commands --------------------------------------------------------------


def cmd_verify(cfg: RunConfig) -> list[dict]:
    label = ClassLabel(cfg.options["cls"])
    results = []
    for key, table in _tables(cfg, lambda s, n, rng: random_instance(label, s, n, rng)):
        rep = check_class(table, label, cfg.tol_exch, cfg.tol_iid)
        results.append({"instance": key, **rep.to_dict()})
    return results


def cmd_decompose(cfg: RunConfig) -> list[dict]:
    results = []
    for key, table in _tables(cfg, lambda s, n, rng: random_instance("ER", s, n, rng)):
        try:
            dec = decompose(table, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
            chain = corollary_kolmogorov_chain(table, check_input=False,
                                               tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
        except ChainStageError as exc:
            results.append({"instance": key, **_chain_failure(exc)})
            continue
        c = kolmogorov_constant(dec.F_inv)
        bound = math.e * (table.space.y_card - 1)
        results.append({
            "instance": key,
            "ok": dec.ok and chain.verified and c <= bound * (1 + cfg.tol_iid),
            "E_exch": dec.exch_report.to_dict(),
            "F_iid": dec.iid_report.to_dict(),
            "F_invariant": dec.invariant,
            "reconstructs": dec.reconstructs,
            "kolmogorov_G": chain.G_report.to_dict(),
            "kolmogorov_pointwise": chain.pointwise.holds,
            "kolmogorov_constant": c,
            "kolmogorov_bound": bound,
        })
    return results


def _kolmogorov_chains(cfg: RunConfig) -> list[dict]:
    results = []
    for key, E in _tables(cfg, lambda s, n, rng: random_instance("ER", s, n, rng)):
        try:
            chain = corollary_kolmogorov_chain(E, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
        except ChainStageError as exc:
            results.append({"instance": key, **_chain_failure(exc)})
            continue
        results.append({
            "instance": key, "ok": chain.verified,
            "decomposition_ok": chain.decomposition.ok,
            "G": chain.G_report.to_dict(),
            "pointwise": asdict(chain.pointwise),
        })
    return results


def cmd_chain(cfg: RunConfig) -> list[dict]:
    mode, delta = cfg.options["mode"], cfg.options["delta"]
    if not 0.0 < delta < 1.0:
        raise ConfigError("--delta must lie in (0, 1)")
    if mode == "kolmogorov":
        return _kolmogorov_chains(cfg)
    label = "PR" if mode == "full" else "PtR"
    results = []
    for key, P in _tables(cfg, lambda s, n, rng: random_instance(label, s, n, rng)):
        try:
            if mode == "full":
                cert = full_p_chain(P, delta, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
                results.append({"instance": key, "ok": cert.verified, **cert.to_dict()})
            elif mode == "traininv":
                cert = train_invariant_p_chain(P, delta, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
                results.append({"instance": key, "ok": cert.verified, **cert.to_dict()})
            else:
                full = full_p_chain(P, delta, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
                ti = train_invariant_p_chain(P, delta, tol_exch=cfg.tol_exch, tol_iid=cfg.tol_iid)
                cmp = compare_chain_bounds(full, ti)
                results.append({
                    "instance": key,
                    "ok": full.verified and ti.verified and cmp.at_least_as_tight,
                    "full": full.to_dict(), "traininv": ti.to_dict(), "comparison": asdict(cmp),
                })
        except ChainStageError as exc:
            results.append({"instance": key, **_chain_failure(exc)})
    return results


def _maybe_save(opts: dict, table: FnTable, single: bool) -> None:
    if opts.get("table_out"):
        if not single:
            raise ConfigError("--table-out needs a single --table input")
        save_table(table, opts["table_out"])


def cmd_calibrate(cfg: RunConfig) -> list[dict]:
    opts = cfg.options
    results = []
    single = bool(opts.get("table"))
    if opts.get("e_to_p") or opts.get("calibrator") == "e2p":
        label = opts.get("cls") or "ER"
        target = {v: k for k, v in P_TO_E.items()}.get(label)
        if target is None:
            raise ConfigError(f"--class must be an e-class among {sorted(P_TO_E.values())}")
        for key, E in _tables(cfg, lambda s, n, rng: random_instance(label, s, n, rng)):
            src = check_class(E, label, cfg.tol_exch, cfg.tol_iid)
            out = apply_e_to_p(E)
            _maybe_save(opts, out, single)
            rep = check_class(out, target, cfg.tol_exch, cfg.tol_iid)
            results.append({"instance": key, "ok": (not src.ok) or rep.ok,
                            "input": src.to_dict(), "output": rep.to_dict()})
        return results

    kind, param = opts["calibrator"], opts.get("param")
    if kind == "power" and param is None:
        param = 0.5
    if kind == "kappa" and param is None:
        param = 1.0
    cal = Calibrator(kind, None if kind == "shafer" else param)
    admissible = is_calibrator(cal)
    results.append({"instance": "calibrator", "kind": kind, "param": param, **admissible.to_dict()})
    if opts.get("table") or opts.get("random"):
        label = opts.get("cls") or "PR"
        if label not in P_TO_E:
            raise ConfigError(f"--class must be a p-class among {sorted(P_TO_E)}")
        for key, P in _tables(cfg, lambda s, n, rng: random_instance(label, s, n, rng)):
            src = check_class(P, label, cfg.tol_exch, cfg.tol_iid)
            out = apply_calibrator(cal, P)
            _maybe_save(opts, out, single)
            rep = check_class(out, P_TO_E[label], cfg.tol_exch, cfg.tol_iid)
            results.append({"instance": key, "ok": (not src.ok) or rep.ok,
                            "input": src.to_dict(), "output": rep.to_dict()})
    return results


def _score(cfg: RunConfig, space: ObservationSpace):
    return make_score(cfg.options.get("score", "knn"), space, cfg.options.get("score_file"))


def cmd_conformal_demo(cfg: RunConfig) -> list[dict]:
    space = _space(cfg)
    A = _score(cfg, space)
    opts = cfg.options
    if opts.get("train") is not None:
        try:
            train = [int(t) for t in opts["train"].split(",") if t.strip()]
        except ValueError:
            raise ConfigError("--train must be comma-separated integer codes") from None
        n = len(train) if cfg.n is None else _n(cfg)
        if len(train) != n:
            raise ConfigError(f"--train has {len(train)} observations, --n is {n}")
        if any(not 0 <= z < space.z_card for z in train):
            raise ConfigError("training observations must be codes in [0, z_card)")
        out = conformal_predict(A, train, opts["x"], opts.get("tau"))
        p_map = out.smoothed_p if out.smoothed_p is not None else out.p
        return [{"instance": "prediction", "ok": True, "p": out.p, "e": out.e,
                 "smoothed_p": out.smoothed_p, "epsilon": opts["epsilon"],
                 "prediction_set": sorted(prediction_set(p_map, opts["epsilon"]))}]
    n = _n(cfg)
    check_budget(space.z_card, n + 1, cfg.budget)
    P = as_table(A, n, "p")
    E = as_table(A, n, "e")
    px = check_class(P, "PtX", cfg.tol_exch, cfg.tol_iid)
    ex = check_class(E, "EtX", cfg.tol_exch, cfg.tol_iid)
    lim = limitation_check(A, n, cfg.budget)
    return [{"instance": A.name, "ok": px.ok and ex.ok and lim.ok,
             "p_table": px.to_dict(), "e_table": ex.to_dict(), "limitation": lim.to_dict()}]


def cmd_gaps(cfg: RunConfig) -> list[dict]:
    opts = cfg.options
    exp = opts["experiment"]
    if exp == "permutation":
        N = opts.get("N") or 3
        rep = permutation_gap(N, cfg.budget, cfg.tol_iid)
        return [{"instance": f"N={N}", **rep.to_dict()}]
    if exp == "binomial":
        N = opts.get("N") or 3
        k = opts.get("k")
        if k is None:
            k = N // 2
        rep = binomial_gap(N, k, cfg.budget, cfg.tol_iid)
        return [{"instance": f"N={N},k={k}", **rep.to_dict()}]
    if exp == "flatness":
        if opts.get("table"):
            E = load_table(opts["table"])
        else:
            space, n = _space(cfg), _n(cfg)
            check_budget(space.z_card, n + 1, cfg.budget)
            E = as_table(_score(cfg, space), n, "e")
        return [{"instance": "flatness", **exchangeability_flatness(E, cfg.tol_exch).to_dict()}]
    space, n = _space(cfg), _n(cfg)
    return [{"instance": "limitation", **limitation_check(_score(cfg, space), n, cfg.budget).to_dict()}]


def cmd_coverage(cfg: RunConfig) -> list[dict]:
    opts = cfg.options
    try:
        q = tuple(float(v) for v in opts["q"].split(","))
        Q = Distribution(q)
    except ValueError as exc:
        raise ConfigError(f"bad --q: {exc}") from None
    space = ObservationSpace(*cfg.space) if cfg.space else ObservationSpace(1, len(q))
    A = _score(cfg, space)
    n = cfg.n if cfg.n is not None else 20
    rep = mc_coverage(A, Q, n, opts["epsilon"], opts["trials"], cfg.seed,
                      smoothed=not opts.get("deterministic"))
    return [{"instance": "coverage", **rep.to_dict()}]


COMMANDS = {
    "verify": cmd_verify,
    "decompose": cmd_decompose,
    "chain": cmd_chain,
    "calibrate": cmd_calibrate,
    "conformal-demo": cmd_conformal_demo,
    "gaps": cmd_gaps,
    "coverage": cmd_coverage,
}


def run(cfg: RunConfig) -> dict:
    """Dispatch a command and assemble its report."""
    start = time.perf_counter()
    results = COMMANDS[cfg.command](cfg)
    passed = sum(bool(r.get("ok")) for r in results)
    return {
        "config": {**{k: v for k, v in asdict(cfg).items() if k != "options"}, **cfg.options},
        "results": results,
        "aggregate": {"ok": passed == len(results), "passed": passed, "total": len(results)},
        "wall_time": time.perf_counter() - start,
        "version": __version__,
    }


# -- argument parsing ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _space_arg(text: str) -> tuple[int, int]:
    try:
        s = ObservationSpace.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    return s.x_card, s.y_card


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--tol-exch", type=float, default=TOL_EXCH)
    g.add_argument("--tol-iid", type=float, default=TOL_IID)
    g.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    g.add_argument("--out", "--report", dest="out", help="write the report here instead of stdout")
    g.add_argument("--format", choices=("json", "csv"), default="json")
    g.add_argument("--space", type=_space_arg, help="XxY, e.g. 1x3")
    g.add_argument("--n", type=int, help="number of training observations")

    tables = argparse.ArgumentParser(add_help=False)
    tables.add_argument("--table", "--input", "--in", dest="table", help="JSON table file")
    tables.add_argument("--random", type=int, help="number of seeded random instances")

    parser = _Parser(prog="conflab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("verify", parents=[common, tables], help="oracle verdicts for a class")
    p.add_argument("--class", dest="cls", required=True, choices=[c.value for c in ClassLabel])

    sub.add_parser("decompose", parents=[common, tables],
                   help="split IID e-variables and check the Kolmogorov step")

    p = sub.add_parser("chain", parents=[common, tables], help="p-predictor reduction certificates")
    p.add_argument("--mode", choices=("full", "traininv", "compare", "kolmogorov"), default="full")
    p.add_argument("--delta", type=float, default=0.5)

    p = sub.add_parser("calibrate", parents=[common, tables], help="calibrator admissibility and transport")
    p.add_argument("--kind", "--calibrator", dest="calibrator",
                   choices=("power", "kappa", "shafer", "e2p"), default="power")
    p.add_argument("--param", type=float)
    p.add_argument("--class", dest="cls", help="class of the input tables")
    p.add_argument("--e-to-p", action="store_true", help="same as --kind e2p")
    p.add_argument("--table-out", help="write the transported table of a single --table input here")

    p = sub.add_parser("conformal-demo", parents=[common], help="conformal p/e-values and validity")
    p.add_argument("--score", choices=("binary", "knn", "custom"), default="knn")
    p.add_argument("--score-file")
    p.add_argument("--train", help="comma-separated observation codes")
    p.add_argument("--x", type=int, default=0)
    p.add_argument("--tau", type=float)
    p.add_argument("--epsilon", type=float, default=0.2)

    p = sub.add_parser("gaps", parents=[common], help="exact IID-versus-exchangeability gaps")
    p.add_argument("--experiment", choices=("permutation", "binomial", "flatness", "limitation"),
                   default="permutation")
    p.add_argument("--N", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--table")
    p.add_argument("--score", choices=("binary", "knn", "custom"), default="knn")
    p.add_argument("--score-file")

    p = sub.add_parser("coverage", parents=[common], help="Monte Carlo coverage of conformal sets")
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--trials", type=int, default=100_000)
    p.add_argument("--q", default="0.3,0.7")
    p.add_argument("--score", choices=("binary", "knn", "custom"), default="knn")
    p.add_argument("--score-file")
    p.add_argument("--deterministic", action="store_true")
    return parser


GLOBAL_KEYS = {"command", "seed", "tol_exch", "tol_iid", "budget", "out", "format", "space", "n"}


def config_from_args(args: argparse.Namespace) -> RunConfig:
    ns = vars(args)
    return RunConfig(
        command=args.command, space=args.space, n=args.n, seed=args.seed,
        tol_exch=args.tol_exch, tol_iid=args.tol_iid, budget=args.budget,
        out=args.out, format=args.format,
        options={k: v for k, v in ns.items() if k not in GLOBAL_KEYS},
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = config_from_args(args)
    try:
        report = run(cfg)
    except BudgetExceeded as exc:
        print(f"conflab: budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ConfigError, TableFormatError, ValueError, KeyError, OSError) as exc:
        print(f"conflab: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = report_csv(report) if cfg.format == "csv" else report_json(report)
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text + ("" if text.endswith("\n") else "\n"))
    return EXIT_OK if report["aggregate"]["ok"] else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
