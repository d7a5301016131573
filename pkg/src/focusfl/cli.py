"""``focusfl`` command line: run, compare, sweep, verify, lr-bound."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from .algorithms import Regime, max_stable_lr
from .harness import (
    ConfigError,
    RunConfig,
    build_participation,
    build_problem,
    compare,
    read_config_file,
    render_results,
    run_experiment,
    write_results,
)
from .participation import SeededStream, averaging_weights
from .verify import SUITES, run_suites

OUTPUT_DIR_ENV = "FOCUSFL_OUTPUT_DIR"

# flag name -> (RunConfig field, type)
CONFIG_FLAGS = {
    "algo": ("algo", str),
    "participation": ("participation", str),
    "m": ("m", int),
    "p-min": ("p_min", float),
    "p-max": ("p_max", float),
    "weights": ("weights", str),
    "n-clients": ("n_clients", int),
    "dim": ("dim", int),
    "samples": ("samples", int),
    "lambda": ("lam", float),
    "spread": ("spread", float),
    "noise": ("noise", float),
    "tau": ("tau", int),
    "eta": ("eta", float),
    "rounds": ("rounds", int),
    "batch": ("batch", int),
    "seed": ("seed", int),
    "cadence": ("cadence", int),
    "q-trials": ("q_trials", int),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _add_config_flags(p: argparse.ArgumentParser, skip=()):
    p.add_argument("--config", help="flat 'key = value' file; flags override its values")
    for flag, (dest, typ) in CONFIG_FLAGS.items():
        if flag not in skip:
            p.add_argument(f"--{flag}", dest=dest, type=typ, default=None)
    p.add_argument("--homogeneous", dest="homogeneous", action="store_const", const=True, default=None)


def effective_config(args, **overrides) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            raw = read_config_file(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        for key, v in raw.items():
            key = key.strip().replace("-", "_")
            values["lam" if key == "lambda" else key] = v
    for dest, _ in CONFIG_FLAGS.values():
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    if getattr(args, "homogeneous", None):
        values["homogeneous"] = True
    values.update(overrides)
    return RunConfig.from_mapping(values).validate()


def _emit(text: str, out: str | None, default_name: str) -> None:
    if out is None and os.environ.get(OUTPUT_DIR_ENV):
        out = str(Path(os.environ[OUTPUT_DIR_ENV]) / default_name)
    if out is None:
        sys.stdout.write(text)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _fmt_of(args) -> str:
    if args.format:
        return args.format
    return "jsonl" if args.out and args.out.endswith((".jsonl", ".json")) else "csv"


def cmd_run(args) -> int:
    config = effective_config(args)
    result = run_experiment(config)
    for w in result.warnings:
        print(f"warning: {w}", file=sys.stderr)
    text = render_results(result.records, _fmt_of(args), header=config.to_mapping())
    _emit(text, args.out, f"{config.algo}_{config.participation}_seed{config.seed}.csv")
    return 0


def cmd_compare(args) -> int:
    base = effective_config(args)
    configs = [replace(base, algo=a, participation=p)
               for p in args.regimes.split(",") for a in args.algos.split(",")]
    for c in configs:
        c.validate()
    res = compare(configs)
    header = base.to_mapping()
    header.update(algo=args.algos, participation=args.regimes)
    text = render_results(res.records, _fmt_of(args), header=header)
    _emit(text, args.out, f"compare_seed{base.seed}.csv")
    return 0


def _parse_grid(items) -> list[dict]:
    axes = []
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"grid entries look like key=v1,v2; got {item!r}")
        key, values = item.split("=", 1)
        axes.append([(key.strip(), v.strip()) for v in values.split(",") if v.strip()])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else [{}]


def _sweep_one(config: RunConfig):
    result = run_experiment(config)
    return result.records


def cmd_sweep(args) -> int:
    base = effective_config(args)
    points = _parse_grid(args.grid)
    configs = [RunConfig.from_mapping({**base.to_mapping(), **pt}).validate() for pt in points]
    out_dir = Path(args.out_dir or os.environ.get(OUTPUT_DIR_ENV) or ".")
    workers = args.workers or os.cpu_count() or 1
    with ProcessPoolExecutor(max_workers=workers) as pool:
        all_records = list(pool.map(_sweep_one, configs))
    out_dir.mkdir(parents=True, exist_ok=True)
    index_rows = []
    for i, (cfg, recs, pt) in enumerate(zip(configs, all_records, points)):
        name = f"run_{i:03d}.csv"
        write_results(recs, "csv", out_dir / name, header=cfg.to_mapping())
        index_rows.append({"index": i, "file": name, **pt})
    keys = ["index", "file"] + sorted({k for pt in points for k in pt})
    tmp = out_dir / ".sweep_index.csv.tmp"
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        w.writerows(index_rows)
    os.replace(tmp, out_dir / "sweep_index.csv")
    print(f"wrote {len(configs)} runs to {out_dir}")
    return 0


def cmd_verify(args) -> int:
    checks = run_suites(args.suite or None, seed=args.seed)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed")
    return 0 if failed == 0 else 1


def cmd_lr_bound(args) -> int:
    regime = Regime(args.regime)
    tau = args.tau if args.tau is not None else 5
    if args.L is not None:
        L, mu, n = args.L, args.mu, args.n_clients or 16
    else:
        cfg = effective_config(args)
        problem = build_problem(cfg)
        L, mu, n = problem.L, problem.mu, problem.n_clients
        print(f"estimated L = {L:.6g}, mu = {mu:.6g}")
    c = args.beta if regime is Regime.PL else mu
    if args.q_min is not None:
        q_min = args.q_min
    else:
        cfg = effective_config(args)
        q = averaging_weights(build_participation(cfg), cfg.q_trials, SeededStream(cfg.seed))
        q_min = q.minimum
        n = cfg.n_clients
        print(f"estimated q_min = {q_min:.6g}")
    if regime is not Regime.NONCONVEX and c is None:
        raise ConfigError(f"regime {regime.value} needs {'--beta' if regime is Regime.PL else '--mu'}")
    bound = max_stable_lr(regime, L, c, n, tau, q_min)
    print(f"regime: {regime.value}")
    print(f"bound: {bound.value:.6e}")
    print(f"binding term: {bound.binding}")
    for name, value in bound.terms.items():
        status = "inactive" if value == float("inf") else f"{value:.6e}"
        line = f"  {name}: {status}"
        if args.eta is not None and value != float("inf"):
            line += "  ok" if args.eta <= value else "  violated"
        print(line)
    if args.eta is not None:
        print(f"eta = {args.eta:g} {'satisfies' if args.eta <= bound.value else 'exceeds'} the bound")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="focusfl", description=__doc__)
    parser.add_argument("--version", action="version", version=f"focusfl {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="run one experiment")
    _add_config_flags(p)
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="algorithms x participation regimes on one problem")
    _add_config_flags(p, skip=("algo", "participation"))
    p.add_argument("--algos", default="focus,fedavg")
    p.add_argument("--regimes", default="full,uniform-m,weighted")
    p.add_argument("--out")
    p.add_argument("--format", choices=("csv", "jsonl"))
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("sweep", help="grid of runs on a worker pool")
    _add_config_flags(p)
    p.add_argument("--grid", action="append", metavar="KEY=V1,V2")
    p.add_argument("--workers", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the invariant suites")
    p.add_argument("--suite", action="append", choices=sorted(SUITES))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("lr-bound", help="step-size condition for a convergence regime")
    _add_config_flags(p, skip=("tau",))
    p.add_argument("--regime", required=True, choices=[r.value for r in Regime])
    p.add_argument("--tau", type=int)
    p.add_argument("--L", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--q-min", type=float)
    p.set_defaults(func=cmd_lr_bound)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
