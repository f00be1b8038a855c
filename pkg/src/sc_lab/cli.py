"""``sc-lab`` command line.

Exit codes: 0 success, 1 a verification failed, 2 bad input.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConsistencyError, InputError, ScLabError, SuccessUnreachable, NonTerminatingChain
from .exact_dp import analyze
from .identities import run_all
from .mdp_core import Policy, validate_mdp
from .mdp_io import digest, load
from .proxy_rewards import SWEEP_COLUMNS, default_beta_bandit, default_thetas, threshold_sweep
from .sampling import (
    empirical_policy,
    filter_successes,
    offline_bound_check,
    sample_trajectories,
    write_trajectories,
)
from .trust_region import constraint_comparison, tolerance_sweep, verify_optimality

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2
DEFAULT_DELTAS = "1e-2,1e-3,1e-4,1e-5,1e-6,1e-7,1e-8"
TOLERANCE_COLUMNS = ("delta", "p_chi2", "p_kl", "p_chi2_over_sqrt_delta", "p_kl_times_log_inv_delta")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


def _threads() -> int:
    raw = os.environ.get("SC_LAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InputError(f"SC_LAB_THREADS must be an integer, got {raw!r}")


class Run:
    """Resolved configuration of one invocation plus output helpers."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        self.meta = {"tool": "sc-lab", "version": __version__, "config": cfg}
        if getattr(args, "input", None):
            self.meta["input_sha256"] = digest(args.input)

    def load(self):
        mdp, behavior = load(self.args.input)
        if behavior is None:
            behavior = Policy.uniform(mdp, name="behavior")
            self.meta["behavior"] = "uniform (none in file)"
        validate_mdp(mdp, behavior)
        return mdp, behavior

    def _open(self):
        out = self.args.output
        if out in (None, "-"):
            return sys.stdout, False
        return open(out, "w", encoding="utf-8", newline="\n"), True

    def emit_json(self, payload: dict) -> None:
        fh, close = self._open()
        try:
            json.dump({"meta": self.meta} | payload, fh, indent=1, allow_nan=True)
            fh.write("\n")
        finally:
            if close:
                fh.close()

    def emit_csv(self, columns, rows) -> None:
        buf = io.StringIO(newline="")
        buf.write(f"# sc-lab {__version__}\n")
        buf.write(f"# config: {json.dumps(self.meta['config'], sort_keys=True)}\n")
        if "input_sha256" in self.meta:
            buf.write(f"# input_sha256: {self.meta['input_sha256']}\n")
        buf.write(",".join(columns) + "\n")
        for row in rows:
            buf.write(",".join(_fmt(row[c]) for c in columns) + "\n")
        fh, close = self._open()
        try:
            fh.write(buf.getvalue())
        finally:
            if close:
                fh.close()


def _rows(policy_or_arrays) -> list:
    return [np.asarray(r).tolist() for r in policy_or_arrays]


def cmd_analyze(run: Run) -> int:
    mdp, behavior = run.load()
    res = analyze(mdp, behavior)
    run.emit_json({
        "rho": res.values.rho,
        "rho_conditioned": res.conditioned_values.rho,
        "improvement": res.improvement,
        "V": res.values.V.tolist(),
        "Q": _rows(res.values.Q),
        "A": _rows(res.values.A),
        "d": res.occupancy.d.tolist(),
        "d_plus": res.occupancy.d_plus.tolist(),
        "conditioned_policy": _rows(res.conditioned),
        "influence": res.influence.values.tolist(),
    })
    return EXIT_OK


def _corrupt(policy: Policy, amount: float) -> Policy:
    """Move ``amount`` of probability from each row's first action to its last."""
    rows = []
    for r in policy:
        r = np.array(r)
        if r.size >= 2:
            shift = min(amount, r[0])
            r[0] -= shift
            r[-1] += shift
        rows.append(r)
    return Policy(tuple(rows), name="corrupted")


def cmd_identities(run: Run) -> int:
    mdp, behavior = run.load()
    conditioned = None
    if run.args.corrupt_conditioned:
        conditioned = _corrupt(analyze(mdp, behavior).conditioned, run.args.corrupt_conditioned)
    reports = run_all(mdp, behavior, conditioned, run.args.tol)
    ok = all(r.passed for r in reports)
    run.emit_json({"passed": ok, "suites": [r.as_dict() for r in reports]})
    return EXIT_OK if ok else EXIT_FAIL


def cmd_trust_region(run: Run) -> int:
    mdp, behavior = run.load()
    tol = 1e-9 if run.args.tol is None else run.args.tol
    rep = verify_optimality(mdp, behavior, run.args.n, run.args.seed, tol)
    res = analyze(mdp, behavior)
    geometries = constraint_comparison(mdp, behavior, res.conditioned, res.occupancy)
    run.emit_json({"optimality": rep.as_dict(), "constraints_at_conditioned": geometries})
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_tolerance_sweep(run: Run) -> int:
    rows = tolerance_sweep(run.args.deltas, run.args.epsilon, run.args.k)
    run.emit_csv(TOLERANCE_COLUMNS, rows)
    return EXIT_OK


def cmd_sample(run: Run) -> int:
    mdp, behavior = run.load()
    trajs = sample_trajectories(mdp, behavior, run.args.n, run.args.seed, workers=_threads())
    fh, close = run._open()
    try:
        write_trajectories(trajs, fh, run.meta)
    finally:
        if close:
            fh.close()
    return EXIT_OK


def cmd_bound_check(run: Run) -> int:
    mdp, behavior = run.load()
    trajs = sample_trajectories(mdp, behavior, run.args.n, run.args.seed, workers=_threads())
    successes = filter_successes(trajs)
    candidate = empirical_policy(successes, mdp, behavior, smoothing=run.args.smoothing)
    rep = offline_bound_check(mdp, behavior, candidate)
    run.emit_json({"n_successes": len(successes), "report": rep.as_dict(),
                   "holds": rep.holds})
    return EXIT_OK if rep.holds else EXIT_FAIL


def cmd_threshold_sweep(run: Run) -> int:
    config = default_beta_bandit(run.args.seed)
    thetas = default_thetas() if run.args.thetas is None else run.args.thetas
    run.emit_csv(SWEEP_COLUMNS, threshold_sweep(config, thetas))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sc-lab", description="Exact analysis of success-conditioned policies.")
    p.add_argument("--version", action="version", version=f"sc-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_, needs_input=True):
        sp = sub.add_parser(name, help=help_)
        if needs_input:
            sp.add_argument("--input", "-i", required=True, help="MDP JSON file")
        sp.add_argument("--output", "-o", default=None, help="output file (default: stdout)")
        sp.set_defaults(func=func)
        return sp

    add("analyze", cmd_analyze, "values, occupancies, conditioned policy, influence")
    sp = add("identities", cmd_identities, "run the four identity suites")
    sp.add_argument("--tol", type=float, default=None, help="override every suite tolerance")
    sp.add_argument("--corrupt-conditioned", type=float, default=0.0, metavar="EPS",
                    help="debug: move EPS mass within each conditioned row before checking")
    sp = add("trust-region", cmd_trust_region, "random-feasible optimality check")
    sp.add_argument("--n", type=int, default=10_000, help="oracle samples")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--tol", type=float, default=None)
    sp = add("tolerance-sweep", cmd_tolerance_sweep, "rare-action tolerance table", needs_input=False)
    sp.add_argument("--deltas", type=_floats, default=_floats(DEFAULT_DELTAS))
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--k", type=int, default=10)
    sp = add("sample", cmd_sample, "sample behavior trajectories")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp = add("bound-check", cmd_bound_check, "fit on successes and check the offline bound")
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--smoothing", type=float, default=0.5, help="additive count smoothing")
    sp = add("threshold-sweep", cmd_threshold_sweep, "Beta-bandit threshold sweep", needs_input=False)
    sp.add_argument("--thetas", type=_floats, default=None)
    sp.add_argument("--seed", type=int, default=20240101, help="seed for the moderate arm shapes")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(Run(args))
    except ConsistencyError as err:
        print(f"sc-lab: verification failed: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, SuccessUnreachable, NonTerminatingChain) as err:
        print(f"sc-lab: error: {err}", file=sys.stderr)
        return EXIT_INPUT
    except ScLabError as err:
        print(f"sc-lab: error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
