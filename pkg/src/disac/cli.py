"""Command line: ``disac run | validate | dump-program``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .experiments import (OUTPUT_ROOT_ENV, default_output_dir, load_spec, run_experiment,
                          scenario_for, write_outputs)
from .instance import build_instance
from .optimizer import InfeasibleError, SolverError, initialize_z, select_worst_case_aoa
from .scenario import ConfigError, GeometryError, load_config
from .sdp_core import assemble_p3

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INFEASIBLE = 2
EXIT_SOLVER = 3


def _seeds(text: str | None):
    if text is None:
        return None
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty seed list")
    return out


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disac", description="Robust D-ISAC beamforming simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment spec")
    r.add_argument("spec")
    r.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<kind>-<hash>)")
    r.add_argument("--seeds", type=_seeds, help="e.g. 0,1,2 or 0-4")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--full-scale", action="store_true", help="M = 12, K = 3 scenario sizes")
    v = sub.add_parser("validate", help="check an experiment spec or scenario file")
    v.add_argument("spec")
    d = sub.add_parser("dump-program", help="write the first surrogate program as text")
    d.add_argument("spec")
    d.add_argument("--out", help="file to write (default: stdout)")
    d.add_argument("--seed", type=int, default=None)
    return p


def _is_scenario_file(path: Path) -> bool:
    import yaml

    data = yaml.safe_load(path.read_text())
    return isinstance(data, dict) and "kind" not in data


def _scenario(path: Path, seed: int | None):
    if _is_scenario_file(path):
        cfg = load_config(path)
        return cfg if seed is None else cfg.replace(seed=seed)
    spec = load_spec(path)
    return scenario_for(spec, spec.seeds[0] if seed is None else seed)


def cmd_run(args) -> int:
    spec = load_spec(args.spec)
    if args.full_scale:
        spec = spec.with_full_scale()
    seeds = args.seeds or list(spec.seeds)
    out = Path(args.out) if args.out else default_output_dir(spec)
    result = run_experiment(spec, seeds, max(1, args.workers))
    write_outputs(spec, result, out, seeds)
    print(f"wrote {', '.join(sorted(result.tables))} to {out} "
          f"({result.wall_time:.1f} s, {result.infeasible_points} infeasible points)")
    return EXIT_INFEASIBLE if result.infeasible_points else EXIT_OK


def cmd_validate(args) -> int:
    path = Path(args.spec)
    if _is_scenario_file(path):
        cfg = load_config(path)
        build_instance(cfg)
        print(f"scenario ok: N={cfg.num_nodes} M_t={cfg.tx_antennas} K={cfg.num_ues} "
              f"hash={cfg.config_hash()}")
        return EXIT_OK
    spec = load_spec(path)
    for s in spec.seeds:
        build_instance(scenario_for(spec, s))
    out = default_output_dir(spec)
    probe = out if out.exists() else out.parent
    while not probe.exists():
        probe = probe.parent
    import os

    if not os.access(probe, os.W_OK):
        raise ConfigError(f"output location {out} is not writable")
    print(f"experiment ok: kind={spec.kind.value} seeds={list(spec.seeds)} "
          f"hash={spec.spec_hash()} output={out}")
    return EXIT_OK


def cmd_dump(args) -> int:
    cfg = _scenario(Path(args.spec), args.seed)
    inst = build_instance(cfg)
    data = inst.p3_data(select_worst_case_aoa(inst))
    prog = assemble_p3(data, initialize_z(data))
    if args.out:
        with open(args.out, "w") as fh:
            prog.dump(fh)
    else:
        prog.dump(sys.stdout)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": cmd_run, "validate": cmd_validate, "dump-program": cmd_dump}
    try:
        return handlers[args.command](args)
    except (ConfigError, GeometryError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SolverError as exc:
        print(f"solver trouble: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
