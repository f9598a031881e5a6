"""Command-line surface for discovery runs, certification, falsification,
tokenization inspection, benchmark management, and SMT-LIB export.

Exit codes: 0 success; 1 search exhausted / counterexample found; 2 bad
configuration; 3 unresolvable system or malformed expression; 4 certifier
budget exhausted.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from . import dynamics as dyn
from . import expr as ex
from .certifier import certify, export_smtlib
from .errors import LyasearchError, ParseError, UnknownBenchmark
from .falsifier import FalsifierSettings, verify_candidate
from .presets import desk_config_for
from .trainer import TrainRunConfig, train

OUT_ROOT_ENV = "LYASEARCH_OUT"


def _resolve_system(ref: str) -> dyn.DynamicalSystem:
    try:
        return dyn.resolve_system(ref)
    except (UnknownBenchmark, ParseError, OSError, ValueError) as err:
        raise SystemExit(_fail(3, f"cannot resolve system {ref!r}: {err}"))


def _fail(code: int, msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _parse_expression(text: str, system: dyn.DynamicalSystem) -> ex.Expr:
    try:
        return dyn.parse_infix(text, list(system.var_names))
    except ParseError as err:
        raise SystemExit(_fail(3, f"cannot parse expression: {err}"))


def _out_dir(args, system_name: str) -> str:
    root = args.out or os.environ.get(OUT_ROOT_ENV, "runs")
    path = os.path.join(root, f"{system_name}_seed{args.seed}")
    os.makedirs(path, exist_ok=True)
    return path


def _load_config(args, system_name: str = "") -> TrainRunConfig:
    # `desk` starts from the CPU-scale preset tuned per benchmark; `default`
    # starts from the library's reference-scale dataclass defaults
    if getattr(args, "preset", "desk") == "desk":
        data = desk_config_for(system_name).to_json()
    else:
        data = {}
    if args.config:
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                data.update(json.load(fh))
        except (OSError, json.JSONDecodeError) as err:
            raise SystemExit(_fail(2, f"cannot read config: {err}"))
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "alpha": args.alpha,
        "Q": args.batch,
        "k_max": args.kmax,
        "radius_frac": args.radius,
        "constants": args.constants or None,
        "entropy_coeff": args.entropy or None,
    }
    for key, val in overrides.items():
        if val is not None:
            data[key] = val
    if args.falsifier is not None:
        fal = dict(data.get("falsifier", {}))
        fal["mode"] = args.falsifier
        data["falsifier"] = fal
    if args.no_gp:
        data["gp_refine"] = False
        data["expert_guidance"] = False
    if args.no_expert:
        data["expert_guidance"] = False
    try:
        return TrainRunConfig.from_json(data)
    except (TypeError, ValueError) as err:
        raise SystemExit(_fail(2, f"bad configuration: {err}"))


def _manifest(system: dyn.DynamicalSystem, cfg: TrainRunConfig, out_dir: str) -> dict:
    tokens = dyn.tokenize_system(system)
    return {
        "system": system.name,
        "system_fingerprint": hashlib.sha256(" ".join(tokens).encode()).hexdigest(),
        "config": cfg.to_json(),
        "seed": cfg.seed,
        "version": __version__,
        "out_dir": out_dir,
    }


def cmd_discover(args) -> int:
    system = _resolve_system(args.system)
    cfg = _load_config(args, system.name)
    out_dir = _out_dir(args, system.name)
    manifest = _manifest(system, cfg, out_dir)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    outcome = train(system, cfg, out_dir=out_dir)
    with open(os.path.join(out_dir, "outcome.json"), "w", encoding="utf-8") as fh:
        json.dump(outcome.to_json(), fh, indent=2)
    if outcome.found:
        found = {
            "expression": {
                "infix": ex.to_infix(outcome.expression),
                "prefix": ex.to_prefix(outcome.expression),
            },
            "reward": outcome.best_reward,
            "certificate": outcome.certificate.to_json(),
        }
        with open(os.path.join(out_dir, "found.json"), "w", encoding="utf-8") as fh:
            json.dump(found, fh, indent=2)
        print(f"found: {ex.to_infix(outcome.expression)}")
        print(f"artifacts in {out_dir}")
        return 0
    print(f"exhausted after {outcome.epochs_run} epochs; artifacts in {out_dir}")
    return 1


def cmd_certify(args) -> int:
    system = _resolve_system(args.system)
    V = _parse_expression(args.expression, system)
    cert = certify(V, system, eps=args.eps, delta=args.delta,
                   budget_seconds=args.budget_seconds,
                   budget_boxes=args.budget_boxes, strict=args.strict)
    print(json.dumps(cert.to_json(), indent=2))
    return {"certified": 0, "counterexample": 1, "budget-exhausted": 4}[cert.verdict]


def cmd_falsify(args) -> int:
    system = _resolve_system(args.system)
    V = _parse_expression(args.expression, system)
    rng = np.random.default_rng(args.seed or 0)
    report = verify_candidate(
        V, system, args.radius if args.radius is not None else 0.05, rng,
        settings=FalsifierSettings(mode=args.falsifier or "shgo"))
    print(json.dumps(report.to_json(), indent=2))
    return 0 if report.valid else 1


def cmd_tokenize(args) -> int:
    system = _resolve_system(args.system)
    tokens = dyn.tokenize_system(system)
    print(" ".join(tokens))
    return 0


def cmd_export_smt(args) -> int:
    system = _resolve_system(args.system)
    V = _parse_expression(args.expression, system)
    text = export_smtlib(V, system, eps=args.eps, delta=args.delta)
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        print(f"wrote {args.output}")
    else:
        print(text, end="")
    return 0


ABLATION_PRESETS = {
    "alpha-sweep": [{"alpha": a, "gp_refine": False, "expert_guidance": False}
                    for a in (0.1, 0.5, 1.0)],
    "verifier-swap": [{"falsifier": {"mode": m}} for m in ("shgo", "random", "pgd")],
    "gp-toggle": [
        {"gp_refine": False, "expert_guidance": False},
        {"gp_refine": True, "expert_guidance": False},
        {"gp_refine": True, "expert_guidance": True},
        {"gp_only": True, "gp_refine": True, "expert_guidance": False},
    ],
}


def cmd_bench(args) -> int:
    if args.action == "list":
        for family, names in dyn.BENCHMARK_FAMILIES:
            sizes = ", ".join(f"{n} ({dyn.benchmark(n).dim}-D)" for n in names)
            print(f"{family}: {sizes}")
        print(f"# {len(dyn.BENCHMARK_FAMILIES)} benchmark families, "
              f"{len(dyn.benchmark_names())} systems "
              f"(+ demo: {', '.join(dyn.EXTRA_SYSTEMS)})")
        print(f"# ablation presets: {', '.join(sorted(ABLATION_PRESETS))}")
        return 0
    # bench run <preset|system>
    target = args.target
    if target.startswith("ablation/"):
        preset = target.split("/", 1)[1]
        if preset not in ABLATION_PRESETS:
            return _fail(2, f"unknown ablation preset {preset!r}")
        if not args.system:
            return _fail(2, "ablation runs need --system")
        system = _resolve_system(args.system)
        base = _load_config(args, system.name).to_json()
        statuses = []
        for i, delta in enumerate(ABLATION_PRESETS[preset]):
            data = json.loads(json.dumps(base))
            for key, val in delta.items():
                if isinstance(val, dict):
                    sub = dict(data.get(key, {}))
                    sub.update(val)
                    data[key] = sub
                else:
                    data[key] = val
            cfg = TrainRunConfig.from_json(data)
            out_dir = os.path.join(
                args.out or os.environ.get(OUT_ROOT_ENV, "runs"),
                f"ablation_{preset.replace('-', '_')}",
                f"{system.name}_case{i}_seed{cfg.seed}")
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "manifest.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(_manifest(system, cfg, out_dir), fh, indent=2,
                          sort_keys=True)
            outcome = train(system, cfg, out_dir=out_dir)
            with open(os.path.join(out_dir, "outcome.json"), "w",
                      encoding="utf-8") as fh:
                json.dump(outcome.to_json(), fh, indent=2)
            statuses.append((delta, outcome.found, outcome.best_reward))
        for delta, found, best in statuses:
            print(f"{delta}: found={found} best_reward={best:.4f}")
        return 0
    args.system = target
    return cmd_discover(args)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="lyasearch",
        description="Search for analytical Lyapunov functions of nonlinear "
                    "dynamical systems and certify them.")
    sub = p.add_subparsers(dest="command", required=True)

    def add_run_flags(sp):
        sp.add_argument("--config", help="JSON run configuration file")
        sp.add_argument("--preset", choices=("desk", "default"), default="desk",
                        help="base configuration: CPU-scale preset or "
                             "reference-scale library defaults")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--alpha", type=float, default=None)
        sp.add_argument("--batch", type=int, default=None)
        sp.add_argument("--kmax", type=int, default=None)
        sp.add_argument("--radius", type=float, default=None)
        sp.add_argument("--falsifier", choices=("shgo", "random", "pgd"),
                        default=None)
        sp.add_argument("--no-gp", action="store_true")
        sp.add_argument("--no-expert", action="store_true")
        sp.add_argument("--constants", action="store_true")
        sp.add_argument("--entropy", type=float, default=None)
        sp.add_argument("--out", help=f"output root (default $"
                                      f"{OUT_ROOT_ENV} or ./runs)")

    sp = sub.add_parser("discover", help="run the full discovery loop")
    sp.add_argument("system", help="benchmark name or system .json file")
    add_run_flags(sp)
    sp.set_defaults(fn=cmd_discover)

    sp = sub.add_parser("certify", help="interval-certify one expression")
    sp.add_argument("system")
    sp.add_argument("expression")
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--delta", type=float, default=1e-12)
    sp.add_argument("--strict", action="store_true",
                    help="require the Lie derivative below -delta instead of +delta")
    sp.add_argument("--budget-seconds", type=float, default=60.0)
    sp.add_argument("--budget-boxes", type=int, default=2_000_000)
    sp.set_defaults(fn=cmd_certify)

    sp = sub.add_parser("falsify", help="numerically stress-test one expression")
    sp.add_argument("system")
    sp.add_argument("expression")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--radius", type=float, default=None)
    sp.add_argument("--falsifier", choices=("shgo", "random", "pgd"), default=None)
    sp.set_defaults(fn=cmd_falsify)

    sp = sub.add_parser("tokenize", help="print a system's token encoding")
    sp.add_argument("system")
    sp.set_defaults(fn=cmd_tokenize)

    sp = sub.add_parser("export-smt", help="write the SMT-LIB2 verification query")
    sp.add_argument("system")
    sp.add_argument("expression")
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--delta", type=float, default=1e-12)
    sp.add_argument("--output", "-o", help="write to file instead of stdout")
    sp.set_defaults(fn=cmd_export_smt)

    sp = sub.add_parser("bench", help="list benchmarks or run suites")
    sp.add_argument("action", choices=("list", "run"))
    sp.add_argument("target", nargs="?", help="system or ablation/<preset>")
    sp.add_argument("--system", help="system for ablation presets")
    add_run_flags(sp)
    sp.set_defaults(fn=cmd_bench)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bench" and args.action == "run" and not args.target:
        return _fail(2, "bench run needs a target")
    try:
        return args.fn(args)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else 2
    except LyasearchError as err:
        return _fail(3, str(err))


if __name__ == "__main__":
    sys.exit(main())
