"""Command-line entry point.

Exit codes: 0 success, 1 validation error or bad usage, 2 I/O error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .corpus import Role, SynthConfig, build_samples, generate_synthetic, load_sessions, preprocess, save_sessions, split
from .evaluation import ablation_csv, ablation_suite, summary_table, sweep_csv, sweep_g
from .model import VARIANTS, TrainConfig, build_model, evaluate, prepare, train
from .router import Registry, RoutingPolicy, decide, replay

log = logging.getLogger("g3m")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("seed must be a non-negative integer")
    return v


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig.from_file(args.config) if args.config else TrainConfig.reference()
    overrides = {"seed": args.seed}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    return replace(cfg, **overrides)


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ commands


def cmd_gen_data(args) -> int:
    cfg = SynthConfig.from_file(args.config) if args.config else SynthConfig()
    overrides = {k: v for k, v in (("n_sessions", args.sessions), ("rho", args.rho)) if v is not None}
    cfg = replace(cfg, **overrides)
    save_sessions(generate_synthetic(cfg, args.seed), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    tr, va, te = split(load_sessions(args.data), args.seed)
    result = train(prepare(tr, va, te), cfg)
    save_checkpoint(result.model, args.out)
    if args.history:
        Path(args.history).write_text(result.history_csv(), encoding="utf-8")
    log.info("best epoch %d", result.best_epoch)
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.model)
    sessions = load_sessions(args.data)
    if args.split == "test":
        sessions = split(sessions, args.seed)[2]
    kept, _ = preprocess(sessions)
    samples = build_samples(kept, model.zscore)
    report, _, _ = evaluate(model, samples)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("rmse_z", "rmse_raw", "micro_f1", "n", "n_nps"))
    w.writerow((repr(report.rmse), repr(report.rmse_raw), repr(report.micro_f1), report.n, report.n_nps))
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _train_config(args)
    results = ablation_suite(load_sessions(args.data), cfg, variants=args.variants,
                             k=args.k, seeds=args.seeds)
    ablation_csv(results, args.out)
    print(summary_table(results))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    results = sweep_g(load_sessions(args.data), cfg, args.g, k=args.k, seeds=args.seeds)
    sweep_csv(results, args.out)
    print(summary_table(results, key_name="G"))
    return EXIT_OK


def _one_session(path, line: int):
    sessions = load_sessions(path)
    if not 1 <= line <= len(sessions):
        raise ValueError(f"line {line} outside 1..{len(sessions)} in {path}")
    return sessions[line - 1]


def _user_prefix(session, k: Optional[int]):
    """Prefix ending at the k-th user utterance (1-based; default the last)."""
    ends = [i for i, u in enumerate(session.utterances) if u.role == Role.USER]
    if not ends:
        raise ValueError("session has no user utterance")
    k = len(ends) if k is None else k
    if not 1 <= k <= len(ends):
        raise ValueError(f"user turn {k} outside 1..{len(ends)}")
    return session.utterances[: ends[k - 1] + 1]


def cmd_route(args) -> int:
    model = load_checkpoint(args.model)
    registry = Registry.load(args.registry)
    session = _one_session(args.session, args.line)
    prefix = _user_prefix(session, args.user_turn)
    d = decide(prefix, model, registry, RoutingPolicy(args.threshold), args.current_agent)
    out = {"action": d.action, "target": d.transfer_to, "nps_raw": d.nps_raw,
           "category": d.category, "cat_probs": d.cat_probs.tolist()}
    if d.warning:
        out["warning"] = d.warning
    print(json.dumps(out))
    return EXIT_OK


def cmd_replay(args) -> int:
    model = load_checkpoint(args.model)
    registry = Registry.load(args.registry) if args.registry else None
    session = _one_session(args.session, args.line)
    lines = replay(session, model, registry, RoutingPolicy(args.threshold), args.current_agent)
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    from .numcore import grad_check

    sessions = generate_synthetic(SynthConfig(n_sessions=40, n_categories=args.categories), args.seed)
    data = prepare(*split(sessions, args.seed))
    cfg = TrainConfig(hidden=args.hidden, layers=1, heads=2, g=args.g, dropout=0.0, seed=args.seed,
                      variant=args.variant)
    model = build_model(data, cfg)
    samples = [replace(s, prefix=s.prefix[:2]) for s in data.train[: args.samples]]
    # key biases cancel inside softmax; their true gradient is exactly zero
    params = [p for p in model.params.trainable() if not p.name.endswith(".k.b")]
    report = grad_check(lambda: model.batch_loss(samples, cfg)[0], params, eps=args.eps, tol=args.tol)
    print("\n".join(report.lines()))
    print(f"max relative error {report.max_error:.3e} (tol {args.tol:g}): "
          f"{'PASS' if report.passed else 'FAIL'}")
    return EXIT_OK if report.passed else EXIT_INVALID


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="g3m", description="Gated multi-task dialog NPS and category model.")
    verbose = argparse.ArgumentParser(add_help=False)
    verbose.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    def add(name, **kw):
        return sub.add_parser(name, parents=[verbose], **kw)

    def common(sp, data=True, config=True):
        sp.add_argument("--seed", type=_seed, default=0)
        if data:
            sp.add_argument("--data", required=True, help="JSONL session file")
        if config:
            sp.add_argument("--config", help="JSON file of TrainConfig fields")

    sp = add("gen-data", help="write a synthetic corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--sessions", type=int)
    sp.add_argument("--rho", type=float)
    sp.add_argument("--config", help="JSON file of generator fields")
    sp.add_argument("--seed", type=_seed, default=0)
    sp.set_defaults(func=cmd_gen_data)

    sp = add("train", help="train on an 8:1:1 split and save a checkpoint")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.add_argument("--history", help="write the per-epoch CSV here")
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_train)

    sp = add("eval", help="score a checkpoint on a corpus")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--split", choices=("all", "test"), default="all")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    for name, func, help_ in (("ablate", cmd_ablate, "compare gate variants on shared folds"),
                              ("sweep", cmd_sweep, "vary the IC gate dimension G")):
        sp = add(name, help=help_)
        common(sp)
        sp.add_argument("--out", required=True)
        sp.add_argument("--k", type=int, default=5)
        sp.add_argument("--seeds", type=_ints, help="comma-separated seeds (one 8:1:1 split each)")
        sp.add_argument("--epochs", type=int)
        if name == "ablate":
            sp.add_argument("--variants", type=lambda s: s.split(","), default=list(VARIANTS))
        else:
            sp.add_argument("--g", type=_ints, required=True)
        sp.set_defaults(func=func)

    for name, func in (("route", cmd_route), ("replay", cmd_replay)):
        sp = add(name, help=f"{name} one session with a checkpoint")
        sp.add_argument("--model", required=True)
        sp.add_argument("--session", required=True, help="JSONL file holding the session")
        sp.add_argument("--line", type=int, default=1)
        sp.add_argument("--threshold", type=float, default=5.0)
        sp.add_argument("--current-agent")
        sp.add_argument("--seed", type=_seed, default=0)
        if name == "route":
            sp.add_argument("--registry", required=True)
            sp.add_argument("--user-turn", type=int, help="decide after this user turn (1-based)")
        else:
            sp.add_argument("--registry")
            sp.add_argument("--out")
        sp.set_defaults(func=func)

    sp = add("grad-check", help="finite-difference check of the full model")
    sp.add_argument("--seed", type=_seed, default=0)
    sp.add_argument("--hidden", type=int, default=8)
    sp.add_argument("--g", type=int, default=3)
    sp.add_argument("--categories", type=int, default=3)
    sp.add_argument("--samples", type=int, default=4)
    sp.add_argument("--variant", choices=VARIANTS, default="full")
    sp.add_argument("--eps", type=float, default=1e-6)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.set_defaults(func=cmd_grad_check)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except OSError as e:
        print(f"g3m: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, RuntimeError) as e:
        print(f"g3m: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
