"""Command-line front end: problem selection, run orchestration and
output writing.

Exit codes: 0 success, 2 usage error, 3 numeric failure, 4 transport
failure.  Results are written as CSV (header ``time,e0,e1,...``) or plain
text, floats printed with 17 significant digits so a parse-back is
bit-exact.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field

from . import cluster, rng
from .ode import ADAMS, BDF, OdeConfig, OdeFailure
from .problems import PROBLEM_BUILDERS, PROBLEM_DEFAULTS
from .trajectory import RunOptions, TrajectoryResult, average_trajectories, run_single_trajectory

__all__ = ["RunConfig", "build_problem", "run", "write_output", "main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3
EXIT_TRANSPORT = 4


@dataclass
class RunConfig:
    problem: str
    n_trajectories: int
    t_from: float = 0.0
    t_to: float | None = None
    n_steps: int | None = None
    method: str = ADAMS
    tol: float = 1e-7
    seed: int = rng.DEFAULT_SEED
    output: str = "-"
    fmt: str = "csv"
    local_workers: int = 0
    listen: str | None = None
    expect_workers: int | None = None
    connect: str | None = None
    rank: int | None = None
    only_final_trj: bool = True
    verbose: bool = False


def build_problem(config: RunConfig):
    if config.problem not in PROBLEM_BUILDERS:
        raise ValueError(f"unknown problem {config.problem!r}")
    steps_default, t_to_default, _ = PROBLEM_DEFAULTS[config.problem]
    ode = OdeConfig(method=config.method, rtol=config.tol)
    options = RunOptions(only_final_trj=config.only_final_trj,
                         output_target=config.output, verbose=config.verbose)
    return PROBLEM_BUILDERS[config.problem](
        n_steps=config.n_steps if config.n_steps is not None else steps_default,
        t_from=config.t_from,
        t_to=config.t_to if config.t_to is not None else t_to_default,
        ode=ode, options=options)


def _format_rows(result: TrajectoryResult, fmt: str) -> str:
    n_expect = result.values.shape[0]
    lines = []
    if fmt == "csv":
        lines.append("time," + ",".join(f"e{k}" for k in range(n_expect)))
        sep = ","
    elif fmt == "txt":
        sep = " "
    else:
        raise ValueError(f"unknown output format {fmt!r}")
    for j in range(result.times.shape[0]):
        cells = [f"{result.times[j]:.17g}"]
        cells += [f"{result.values[k, j]:.17g}" for k in range(n_expect)]
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"


def write_output(result: TrajectoryResult, target: str, fmt: str = "csv") -> None:
    """Write one result table to a path or, for target '-', to stdout."""
    text = _format_rows(result, fmt)
    if target == "-":
        sys.stdout.write(text)
        return
    try:
        with open(target, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write output file {target!r}: {exc}") from exc


def _resolve_output(path: str) -> str:
    if path == "-":
        return path
    out_dir = os.environ.get("MCWF_OUTPUT_DIR")
    if out_dir and not os.path.isabs(path):
        return os.path.join(out_dir, path)
    return path


def _say(config: RunConfig, msg: str) -> None:
    if config.verbose:
        print(msg, file=sys.stderr)


def _run_worker_mode(config: RunConfig) -> int:
    host, port = _parse_hostport(config.connect)
    problem = build_problem(config)
    _say(config, f"worker rank {config.rank} connecting to {host}:{port}")
    transport = cluster.tcp_connect(host, port, config.rank)
    try:
        cluster.run_worker(transport, problem, config.rank)
    finally:
        transport.close()
    return EXIT_OK


def _parse_hostport(spec: str) -> tuple[str, int]:
    host, sep, port = spec.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {spec!r}")
    return host, int(port)


def _run_inline_keep(problem, config: RunConfig, target: str) -> TrajectoryResult:
    # keep-trajectories mode: every single trajectory is also written out
    if target == "-":
        raise ValueError("--keep-trajectories needs a file output target")
    state = rng.derive_stream(config.seed, 0)
    results = []
    for i in range(config.n_trajectories):
        res, state = run_single_trajectory(problem, state)
        results.append(res)
        write_output(res, f"{target}.trj{i}", config.fmt)
    return average_trajectories(results)


def run(config: RunConfig) -> int:
    """Execute one run described by config; returns the process exit code."""
    try:
        if config.connect is not None:
            return _run_worker_mode(config)

        problem = build_problem(config)
        target = _resolve_output(config.output)
        if config.listen is not None:
            host, port = _parse_hostport(config.listen)
            if not config.expect_workers:
                raise ValueError("--listen requires --expect-workers")
            _say(config, f"listening on {host}:{port} for {config.expect_workers} workers")
            transports = cluster.tcp_listen(host, port, config.expect_workers)
            try:
                result = cluster.run_master(transports, problem,
                                            config.n_trajectories, config.seed)
            finally:
                for t in transports.values():
                    t.close()
        elif config.local_workers > 0:
            _say(config, f"running {config.n_trajectories} trajectories on "
                         f"{config.local_workers} local workers (seed {config.seed})")
            result = cluster.run_local_farm(problem, config.n_trajectories,
                                            config.local_workers, config.seed)
        elif not config.only_final_trj:
            result = _run_inline_keep(problem, config, target)
        else:
            _say(config, f"running {config.n_trajectories} trajectories inline "
                         f"(seed {config.seed})")
            result = cluster.run_inline(problem, config.n_trajectories, config.seed)

        write_output(result, target, config.fmt)
        return EXIT_OK
    except OdeFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_NUMERIC
    except cluster.ClusterError as exc:
        print(f"HALT: cluster failure ({exc.kind}): {exc}", file=sys.stderr)
        return EXIT_NUMERIC if exc.kind == "worker-numeric" else EXIT_TRANSPORT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mcwf",
        description="Monte Carlo wave-function simulator: stochastic quantum "
                    "trajectories averaged over a master-worker farm.")
    p.add_argument("--problem", required=True, choices=sorted(PROBLEM_BUILDERS),
                   help="benchmark problem to run")
    p.add_argument("--trajectories", type=_positive_int, default=None,
                   help="number of trajectories (default per problem)")
    p.add_argument("--t-from", type=float, default=0.0, help="grid start time")
    p.add_argument("--t-to", type=float, default=None,
                   help="grid end time (default per problem)")
    p.add_argument("--steps", type=_positive_int, default=None,
                   help="number of output grid intervals (default per problem)")
    p.add_argument("--method", choices=[ADAMS, BDF], default=ADAMS,
                   help="ODE corrector family (default adams)")
    p.add_argument("--tol", type=float, default=1e-7,
                   help="relative tolerance of the ODE solver (default 1e-7)")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (default $MCWF_SEED or %d)" % rng.DEFAULT_SEED)
    p.add_argument("--output", default="-", metavar="PATH",
                   help="output file, or - for stdout (default); relative paths "
                        "are placed under $MCWF_OUTPUT_DIR when set")
    p.add_argument("--format", choices=["csv", "txt"], default="csv", dest="fmt",
                   help="output format (default csv)")
    p.add_argument("--local-workers", type=int, default=0, metavar="K",
                   help="farm over K local worker processes; 0 runs inline (default)")
    p.add_argument("--listen", metavar="HOST:PORT",
                   help="run as TCP master, waiting for workers")
    p.add_argument("--expect-workers", type=_positive_int, default=None,
                   help="number of workers the TCP master waits for")
    p.add_argument("--connect", metavar="HOST:PORT",
                   help="run as TCP worker, connecting to a master")
    p.add_argument("--rank", type=int, default=None,
                   help="worker rank for --connect mode")
    p.add_argument("--keep-trajectories", action="store_true",
                   help="also write every single trajectory next to the final "
                        "average (inline mode only)")
    p.add_argument("--verbose", action="store_true", help="diagnostics on stderr")
    return p


def parse_args(argv=None) -> RunConfig:
    ns = _build_parser().parse_args(argv)
    if ns.connect is not None and ns.rank is None:
        _build_parser().error("--connect requires --rank")
    if ns.local_workers < 0:
        _build_parser().error("--local-workers must be >= 0")
    seed = ns.seed
    if seed is None:
        seed = int(os.environ.get("MCWF_SEED", rng.DEFAULT_SEED))
    n_traj = ns.trajectories
    if n_traj is None:
        n_traj = PROBLEM_DEFAULTS[ns.problem][2]
    return RunConfig(
        problem=ns.problem, n_trajectories=n_traj, t_from=ns.t_from,
        t_to=ns.t_to, n_steps=ns.steps, method=ns.method, tol=ns.tol,
        seed=seed, output=ns.output, fmt=ns.fmt,
        local_workers=ns.local_workers, listen=ns.listen,
        expect_workers=ns.expect_workers, connect=ns.connect, rank=ns.rank,
        only_final_trj=not ns.keep_trajectories, verbose=ns.verbose)


def main(argv=None) -> int:
    try:
        config = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
