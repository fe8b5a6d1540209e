"""Command-line front end.

Exit status: 0 on success, 1 on invalid input (bad arguments, config or
file contents, or a failed ``check``), 2 on runtime failure or interrupt.
"""

from __future__ import annotations

import argparse
import logging
import signal
import sys
from pathlib import Path

import numpy as np

from . import harness
from ._io import atomic_write_text, write_matrix, write_vector
from .checks import SUITES, run_suites
from .envs import GRIDWORLD_3D, RANDOM_MRP, EnvSpec, make_env
from .errors import SourceTracesError
from .mrp import Mrp, exact_source_map, exact_value
from .presets import DEFAULT_SEED, PRESETS, SCALES, estimate_runtime, evaluate, preset_configs

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

GRAMMAR = """\
usage:
  source-traces gen-env --kind {gridworld3d,random_mrp} [--dims X,Y,Z] [--reward-states M]
                        [--num-states N] [--out-degree K] --gamma G [--seed S] --out FILE
  source-traces run --config FILE --out DIR [--seed S] [--workers N] [--checkpoint-every K]
  source-traces oracle --in FILE (--value | --source-map) --out FILE
  source-traces reproduce PRESET [--scale {desk,paper}] --out DIR [--seed S] [--workers N]
                          [--checkpoint-every K]
  source-traces check {all,%s} [--seed S]

presets: %s
--workers falls back to $SOURCE_TRACES_WORKERS, then 1.  Default seed: %d.
""" % (",".join(SUITES), ", ".join(PRESETS), DEFAULT_SEED)

log = logging.getLogger("source_traces")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _dims(text):
    try:
        dims = tuple(int(d) for d in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"dims must be X,Y,Z integers, got {text!r}") from exc
    if len(dims) != 3:
        raise argparse.ArgumentTypeError(f"dims must have three entries, got {text!r}")
    return dims


def _positive_int(text):
    try:
        v = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from exc
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="source-traces", description="Source-trace value learning experiments.", add_help=True)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    g = sub.add_parser("gen-env", help="generate a seeded environment file")
    g.add_argument("--kind", choices=(GRIDWORLD_3D, RANDOM_MRP), required=True)
    g.add_argument("--dims", type=_dims, default=(10, 10, 10))
    g.add_argument("--reward-states", type=int, default=50)
    g.add_argument("--num-states", type=int, default=100)
    g.add_argument("--out-degree", type=int, default=5)
    g.add_argument("--gamma", type=float, required=True)
    g.add_argument("--seed", type=int, default=DEFAULT_SEED)
    g.add_argument("--out", type=Path, required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("--config", type=Path, required=True)
    r.add_argument("--out", type=Path, required=True)
    r.add_argument("--seed", type=int, default=None, help="override the config's seed")
    r.add_argument("--workers", type=_positive_int, default=None)
    r.add_argument("--checkpoint-every", type=_positive_int, default=None)

    o = sub.add_parser("oracle", help="exact value or source map of an environment file")
    o.add_argument("--in", dest="inp", type=Path, required=True)
    what = o.add_mutually_exclusive_group(required=True)
    what.add_argument("--value", action="store_true")
    what.add_argument("--source-map", action="store_true")
    o.add_argument("--out", type=Path, required=True)

    rp = sub.add_parser("reproduce", help="run a named preset and check its claims")
    rp.add_argument("preset", choices=PRESETS)
    rp.add_argument("--scale", choices=SCALES, default="desk")
    rp.add_argument("--out", type=Path, required=True)
    rp.add_argument("--seed", type=int, default=DEFAULT_SEED)
    rp.add_argument("--workers", type=_positive_int, default=None)
    rp.add_argument("--checkpoint-every", type=_positive_int, default=None)

    c = sub.add_parser("check", help="run invariant suites")
    c.add_argument("suite", choices=("all", *SUITES))
    c.add_argument("--seed", type=int, default=DEFAULT_SEED)
    return p


def _with_overrides(config, seed=None, checkpoint_every=None):
    from dataclasses import replace

    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if checkpoint_every is not None:
        changes["checkpoint_every"] = checkpoint_every
    return replace(config, **changes) if changes else config


def _run_with_partial_output(config, out: Path, workers):
    """Run one config; on interrupt, write what finished as ``*_partial`` CSVs."""
    done = []
    try:
        result = harness.run_experiment(config, workers=workers, on_env_done=lambda i, recs: done.extend(recs))
    except KeyboardInterrupt:
        if done:
            stem = f"{config.name}_partial"
            atomic_write_text(out / f"{stem}_runs.csv", harness.records_csv(done))
            atomic_write_text(out / f"{stem}_aggregate.csv", harness.curves_csv(harness.aggregate(done)))
            print(f"interrupted; partial results for {len({r.env_index for r in done})} environments in {out}",
                  file=sys.stderr)
        raise
    harness.write_result(result, out)
    return result


def reproduce_preset(name, scale, seed, out, workers=None, checkpoint_every=None, quiet=False):
    out = Path(out)
    configs = [_with_overrides(c, None, checkpoint_every) for c in preset_configs(name, scale, seed)]
    if scale == "paper" and not quiet:
        est = estimate_runtime(configs) / max(1, workers or harness.default_workers())
        print(f"warning: paper scale; estimated runtime {est / 60:.0f} min", file=sys.stderr)
    results = [_run_with_partial_output(c, out, workers) for c in configs]
    claims = evaluate(name, results, scale)
    lines = [c.line() for c in claims]
    for res in results:
        if res.config.targets:
            table = harness.steps_to_target(res.curves, res.config.targets)
            lines.append("")
            lines.append(harness.steps_table_csv(table, res.config.targets).rstrip())
    atomic_write_text(out / f"{name}_claims.txt", "\n".join(lines) + "\n")
    if not quiet:
        print("\n".join(lines))
    return claims


def _gen_env(a):
    if a.kind == GRIDWORLD_3D:
        spec = EnvSpec(a.kind, a.gamma, seed=a.seed, dims=a.dims, num_reward_states=a.reward_states)
    else:
        spec = EnvSpec(a.kind, a.gamma, seed=a.seed, num_states=a.num_states, out_degree=a.out_degree)
    make_env(spec).save(a.out)
    print(f"wrote {a.out} ({spec.size} states)")


def _oracle(a):
    if not a.inp.is_file():
        raise UsageError(f"no such file: {a.inp}")
    mrp = Mrp.load(a.inp)
    if a.value:
        write_vector(a.out, exact_value(mrp))
    else:
        write_matrix(a.out, exact_source_map(mrp).matrix)
    print(f"wrote {a.out}")


def _run(a):
    if not a.config.is_file():
        raise UsageError(f"no such file: {a.config}")
    config = _with_overrides(harness.load_config(a.config), a.seed, a.checkpoint_every)
    result = _run_with_partial_output(config, a.out, a.workers)
    for lid, c in result.best().items():
        print(f"{lid}: best {c.config_id} final error {c.final_error:.6g}")


def _check(a):
    names = list(SUITES) if a.suite == "all" else [a.suite]
    seeds = [a.seed, a.seed + 1, a.seed + 2] if a.suite == "all" else [a.seed]
    failed = 0
    for suite, seed, claim in run_suites(names, seeds):
        print(f"[{suite} seed={seed}] {claim.line()}", flush=True)
        failed += not claim.passed
    print(f"{failed} failed" if failed else "all checks passed")
    return EXIT_INVALID if failed else EXIT_OK


def _terminate(signum, frame):
    raise KeyboardInterrupt


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
        if a.command is None:
            raise UsageError("missing command")
        if getattr(a, "out", None) is not None and a.out.exists() and a.command in ("run", "reproduce") \
                and not a.out.is_dir():
            raise UsageError(f"--out must be a directory: {a.out}")
        signal.signal(signal.SIGTERM, _terminate)
        if a.command == "gen-env":
            _gen_env(a)
        elif a.command == "oracle":
            _oracle(a)
        elif a.command == "run":
            _run(a)
        elif a.command == "reproduce":
            reproduce_preset(a.preset, a.scale, a.seed, a.out, a.workers, a.checkpoint_every)
        else:
            return _check(a)
        return EXIT_OK
    except UsageError as exc:
        print(f"error: {exc}\n\n{GRAMMAR}", file=sys.stderr)
        return EXIT_INVALID
    except (SourceTracesError, ValueError, OSError) as exc:
        # bad config or file contents are the caller's to fix; other failures are runtime
        code = EXIT_INVALID if isinstance(exc, (ValueError, FileNotFoundError)) else EXIT_RUNTIME
        print(f"error: {exc}", file=sys.stderr)
        return code
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
