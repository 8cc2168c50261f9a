"""Command-line interface for the experiment harness.

Subcommands: gen-bits, fit, reconstruct, loo, impute, cv, diagnose.  Options
may be preloaded from a flat key=value config file (--config); command-line
flags override file entries.  Exit codes: 0 success, 1 usage or input error,
2 numerical abort (failed adaptation or singular linear algebra).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments, io, models
from .hmc import HMCConfig

MODEL_KINDS = {
    "ppca": models.CONTINUOUS,
    "latent_gaussian": models.CONTINUOUS,
    "fa_grassmann": models.CONTINUOUS,
    "epca_bernoulli": models.BINARY,
    "joint_poisson_logistic": models.COUNT,
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; the harness reserves 2 for
    # numerical aborts, so route usage problems through exit code 1
    def error(self, message):
        raise _UsageError(message)


def _add_sampler_args(parser, samples=200, leapfrog=20):
    parser.add_argument("--samples", type=int, default=samples,
                        help="number of retained HMC samples")
    parser.add_argument("--leapfrog", type=int, default=leapfrog,
                        help="leapfrog steps per proposal")
    parser.add_argument("--step-size", type=float, default=0.02,
                        help="initial step size before adaptation")
    parser.add_argument("--adapt-iterations", type=int, default=100,
                        help="iteration budget for step-size adaptation")
    parser.add_argument("--accept-low", type=float, default=0.6,
                        help="lower edge of the target acceptance band")
    parser.add_argument("--accept-high", type=float, default=0.8,
                        help="upper edge of the target acceptance band")
    parser.add_argument("--seed", type=int, default=0, help="experiment seed")


def _hmc_from(args) -> HMCConfig:
    return HMCConfig(
        step_size=args.step_size,
        leapfrog_steps=args.leapfrog,
        num_samples=args.samples,
        seed=args.seed,
        target_acceptance=(args.accept_low, args.accept_high),
        adapt_iterations=args.adapt_iterations,
    )


def _window_from(args):
    start, stop = args.window_start, args.window_stop
    if (start is None) != (stop is None):
        raise _UsageError("--window-start and --window-stop go together")
    return None if start is None else (start, stop)


def _add_window_args(parser):
    parser.add_argument("--window-start", type=int, default=None,
                        help="first sample of the averaging window")
    parser.add_argument("--window-stop", type=int, default=None,
                        help="one past the last sample of the window")


def build_parser() -> _Parser:
    parser = _Parser(prog="manifoldmc",
                     description="Geodesic Monte Carlo experiment harness")
    parser.add_argument("--config", default=None,
                        help="flat key=value file of option defaults")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-bits", parents=[], help="generate the corrupted "
                       "bit-vector dataset (truth.csv, data.csv)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="fit a model to a dataset CSV and write "
                       "chain, diagnostics and manifest files")
    p.add_argument("--data", required=True, help="dataset CSV path")
    p.add_argument("--model", required=True, choices=sorted(MODEL_KINDS))
    p.add_argument("--k", type=int, default=3, help="latent dimension")
    p.add_argument("--record", default=None,
                   help="comma-separated blocks to store (default: all)")
    _add_sampler_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("reconstruct", help="run the bit-vector "
                       "reconstruction experiment end to end")
    p.add_argument("--k", type=int, default=3)
    _add_sampler_args(p, samples=10000, leapfrog=80)
    _add_window_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("loo", help="leave-one-out conditional-mean "
                       "prediction against a baseline covariance")
    p.add_argument("--data", required=True)
    p.add_argument("--baseline", required=True,
                   help="CSV with mean row then covariance rows")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--assignments", type=int, default=100,
                   help="random predictor/predictand splits per level")
    p.add_argument("--counts", default=None,
                   help="comma-separated predictand counts (default: 1..d-1)")
    p.add_argument("--burn-in", type=int, default=50)
    _add_sampler_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("impute", help="missing-data imputation sweep on a "
                       "complete continuous dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--fractions", default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8",
                   help="comma-separated missing fractions")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--burn-in", type=int, default=50)
    _add_sampler_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cv", help="k-fold label prediction with the joint "
                       "count model, or a synthetic replication study")
    p.add_argument("--data", default=None,
                   help="count dataset CSV with a label column")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--burn-in", type=int, default=50)
    p.add_argument("--replications", type=int, default=None,
                   help="instead of CV, run this many synthetic replications "
                   "and interval-estimate the dominant label coefficient")
    _add_sampler_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diagnose", help="subspace-distance trace and sampler "
                       "health summary for a stored chain")
    p.add_argument("--chain", required=True, help="chain block CSV (frames)")
    p.add_argument("--diagnostics", default=None,
                   help="optional diagnostics CSV from the same run")
    _add_window_args(p)
    p.add_argument("--out", required=True)

    return parser


def _load_config_defaults(parser, path, argv):
    entries = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise _UsageError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            entries[key.strip().replace("-", "_")] = value.strip()
    if not entries:
        return
    # apply file entries as defaults on the chosen subcommand parser
    sub_actions = [a for a in parser._actions
                   if isinstance(a, argparse._SubParsersAction)]
    command = next((a for a in argv if not a.startswith("-")), None)
    if command is None or command not in sub_actions[0].choices:
        raise _UsageError("config file requires a subcommand")
    subparser = sub_actions[0].choices[command]
    known = {a.dest: a for a in subparser._actions}
    for key, value in entries.items():
        if key not in known:
            raise _UsageError(f"{path}: unknown option {key!r} for {command}")
        action = known[key]
        if action.type is not None:
            value = action.type(value)
        subparser.set_defaults(**{key: value})
        action.required = False


def _parse_counts(text):
    if text is None:
        return None
    try:
        return tuple(int(v) for v in text.split(",") if v != "")
    except ValueError:
        raise _UsageError(f"bad count list {text!r}")


def _parse_fractions(text):
    try:
        return tuple(float(v) for v in text.split(",") if v != "")
    except ValueError:
        raise _UsageError(f"bad fraction list {text!r}")


def _cmd_gen_bits(args):
    out = io.ensure_dir(args.out)
    truth, data = experiments.gen_bitvectors(args.seed)
    io.write_dataset(out / "truth.csv", models.MaskedDataMatrix(
        truth, np.ones_like(truth, dtype=bool), models.BINARY))
    io.write_dataset(out / "data.csv", data)
    io.write_manifest(out / "manifest.json", {
        "experiment": "gen_bits", "seed": args.seed,
        "versions": io.package_versions()})
    print(f"wrote truth.csv and data.csv to {out}")
    return 0


def _cmd_fit(args):
    data = io.read_dataset(args.data, MODEL_KINDS[args.model])
    record = None if args.record is None else tuple(args.record.split(","))
    chain = experiments.fit_chain(args.model, data, args.k, _hmc_from(args),
                                  record=record)
    out = io.ensure_dir(args.out)
    for name in chain.blocks:
        io.write_chain_block(out / f"chain_{name}.csv", chain, name)
    io.write_diagnostics(out / "diagnostics.csv", chain)
    io.write_manifest(out / "manifest.json", experiments._manifest_payload(
        args.seed, _hmc_from(args),
        {"experiment": "fit", "model": args.model, "k": args.k,
         "step_size": chain.step_size}))
    print(f"acceptance rate {chain.acceptance_rate:.3f}, "
          f"step size {chain.step_size:.4g}")
    return 0


def _cmd_reconstruct(args):
    window = _window_from(args) or (100, 500)
    summary, _ = experiments.run_bit_experiment(
        args.out, seed=args.seed, k=args.k, hmc=_hmc_from(args), window=window)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_loo(args):
    data = io.read_dataset(args.data, models.CONTINUOUS)
    baseline_mean, baseline_cov = io.read_mean_covariance(args.baseline)
    summary = experiments.run_loo_prediction(
        args.out, data, baseline_mean, baseline_cov, args.k, _hmc_from(args),
        seed=args.seed, predictand_counts=_parse_counts(args.counts),
        assignments=args.assignments, burn_in=args.burn_in)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_impute(args):
    data = io.read_dataset(args.data, models.CONTINUOUS)
    summary = experiments.run_imputation_sweep(
        args.out, data, args.k, _hmc_from(args), seed=args.seed,
        fractions=_parse_fractions(args.fractions), trials=args.trials,
        burn_in=args.burn_in)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_cv(args):
    if args.replications is not None:
        summary = experiments.run_joint_replications(
            args.out, args.seed, _hmc_from(args),
            replications=args.replications, k=args.k, burn_in=args.burn_in)
    else:
        if args.data is None:
            raise _UsageError("cv requires --data (or --replications)")
        data = io.read_dataset(args.data, models.COUNT)
        summary = experiments.run_joint_cv(
            args.out, data, args.k, _hmc_from(args), seed=args.seed,
            folds=args.folds, burn_in=args.burn_in)
    print(json.dumps(summary, sort_keys=True))
    return 0


def _cmd_diagnose(args):
    summary = experiments.diagnose(args.out, args.chain,
                                   diagnostics_path=args.diagnostics,
                                   window=_window_from(args))
    print(json.dumps(summary, sort_keys=True))
    return 0


_COMMANDS = {
    "gen-bits": _cmd_gen_bits,
    "fit": _cmd_fit,
    "reconstruct": _cmd_reconstruct,
    "loo": _cmd_loo,
    "impute": _cmd_impute,
    "cv": _cmd_cv,
    "diagnose": _cmd_diagnose,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        config_idx = None
        for i, arg in enumerate(argv):
            if arg == "--config":
                config_idx = i
                break
            if arg.startswith("--config="):
                config_idx = i
                break
        if config_idx is not None:
            if argv[config_idx] == "--config":
                if config_idx + 1 >= len(argv):
                    raise _UsageError("--config needs a path")
                path = argv[config_idx + 1]
                rest = argv[:config_idx] + argv[config_idx + 2:]
            else:
                path = argv[config_idx].split("=", 1)[1]
                rest = argv[:config_idx] + argv[config_idx + 1:]
            _load_config_defaults(parser, path, rest)
            argv = rest
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    # LinAlgError subclasses ValueError, so match the abort branch first
    except (RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
