"""Command line: ``bayesflows run|validate|catalog``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical error.
Errors are printed to stderr as one JSON object.
"""
import argparse
import json
import sys

from .catalog import catalog_listing
from .errors import BayesFlowError, ConfigError, InputError, NumericError
from .experiments import EXPERIMENTS, load_config, run

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _error(exc, code, experiment=None):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    fld = getattr(exc, "field", None)
    if fld is not None:
        payload["field"] = fld
    experiment = experiment or getattr(exc, "experiment", None)
    if experiment is not None:
        payload["experiment"] = experiment
    residual = getattr(exc, "residual", None)
    if residual is not None:
        payload["residual"] = residual
    print(json.dumps(payload), file=sys.stderr)
    return code


def _parser():
    p = argparse.ArgumentParser(prog="bayesflows", description=(
        "Geometric convexity, gradient-flow and sampling experiments for Bayesian posteriors."))
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [outputs] dir)")
    r.add_argument("--seed", type=int, help="seed override")
    r.add_argument("--threads", type=int, help="BLAS/OpenMP thread limit")
    v = sub.add_parser("validate", help="validate a config without running it")
    v.add_argument("config")
    sub.add_parser("catalog", help=f"list builtin models and metrics; experiments: {', '.join(EXPERIMENTS)}")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    if args.command == "catalog":
        print(catalog_listing())
        return EXIT_OK
    experiment = None
    try:
        cfg = load_config(args.config)
        experiment = cfg.experiment
        if args.command == "validate":
            print(json.dumps({"valid": True, "experiment": cfg.experiment}))
            return EXIT_OK
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be at least 1", field="--threads")
        if args.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                report = run(cfg, out_dir=args.out, seed=args.seed)
        else:
            report = run(cfg, out_dir=args.out, seed=args.seed)
    except (ConfigError, InputError) as exc:
        return _error(exc, EXIT_CONFIG, experiment)
    except (NumericError, ArithmeticError) as exc:
        return _error(exc, EXIT_NUMERIC, experiment)
    except BayesFlowError as exc:
        return _error(exc, EXIT_NUMERIC, experiment)
    print(json.dumps({"experiment": cfg.experiment, "out_dir": report.out_dir,
                      "result_hash": report.result_hash}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
