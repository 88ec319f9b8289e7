"""Command-line front end.

Verbs compose into the full pipeline:

  generate    sample a model, write latents / noises / observations
  score       produce score Jacobians (exact from a model, or estimated)
  recover     peel layered coordinates out of observations + Jacobians
  evaluate    matched-correlation score between two signal matrices
  experiment  run the whole protocol in one step, with artifacts
  ser-sweep   robustness curve against Jacobian contamination

Exit codes: 0 success, 2 partial recovery, 1 fatal error (including bad
usage or configuration).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .evaluate import evaluate_signals
from .experiment import ExperimentConfig, build_model, run_experiment, ser_sweep
from .graph import GraphError, layers
from .io import (
    load_jacobians,
    load_matrix_csv,
    load_scm,
    save_jacobians,
    save_json,
    save_matrix_csv,
    save_scm,
)
from .jacobians import center
from .oracle import jacobian_latent, latent_to_observed, score_latent, score_to_observed
from .recovery import StalledRecoveryError, recover_latents, recover_noise, RegressionConfig
from .solver import SolverConfig
from .stein import SteinConfig, stein_jacobian, stein_score
from .synth import MixingMatrix, sample_scaled


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=float, default=None,
                   help="feasibility tolerance relative to batch scale")
    p.add_argument("--restarts", type=int, default=None)
    p.add_argument("--prune", type=float, default=None,
                   help="fraction of largest-norm matrices dropped in auto mode")
    p.add_argument("--auto-tol", action=argparse.BooleanOptionalAction, default=None,
                   help="calibrate an absolute tolerance per round (noisy mode)")


def _add_stein_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--bandwidth", default=None,
                   help="kernel bandwidth (float or 'median-heuristic')")
    p.add_argument("--ridge", type=float, default=None,
                   help="kernel ridge strength (default 1e-3 * N)")


def _solver_from_args(args, base: SolverConfig | None = None) -> SolverConfig:
    base = base or SolverConfig()
    overrides = {
        "tol": args.tol,
        "restarts": args.restarts,
        "prune_fraction": args.prune,
        "auto_tol": args.auto_tol,
    }
    return replace(base, **{k: v for k, v in overrides.items() if v is not None})


def _stein_from_args(args, base: SteinConfig | None = None) -> SteinConfig:
    base = base or SteinConfig()
    bw = args.bandwidth
    if bw is not None and bw != "median-heuristic":
        bw = float(bw)
    return SteinConfig(
        bandwidth=base.bandwidth if bw is None else bw,
        ridge=base.ridge if args.ridge is None else args.ridge,
    )


def _cmd_generate(args) -> int:
    cfg = ExperimentConfig(
        graph=args.graph,
        mechanism=args.mechanism,
        n_samples=args.n_samples,
        seed=args.seed,
        mixing=args.mixing,
        mixing_dim=args.mixing_dim,
    )
    scm, mixing = build_model(cfg)
    E, Z, scaled_scm, _ = sample_scaled(scm, cfg.n_samples, cfg.seed)
    X = Z @ mixing.H.T
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_scm(out / "model.json", scm)
    save_scm(out / "scaled_model.json", scaled_scm)
    save_matrix_csv(out / "mixing.csv", mixing.H, prefix="z")
    save_matrix_csv(out / "e.csv", E, prefix="e")
    save_matrix_csv(out / "z.csv", Z, prefix="z")
    save_matrix_csv(out / "x.csv", X, prefix="x")
    lay, depth = layers(scm.dag)
    save_json(out / "graph.json", {
        "layers": [int(v) for v in lay],
        "depth": depth,
        "leaves": sorted(scm.dag.leaves()),
    })
    print(f"wrote model and {cfg.n_samples} samples to {out}")
    return 0


def _cmd_score(args) -> int:
    if args.mode == "oracle":
        if not args.model or not args.latents:
            raise ValueError("oracle scoring needs --model and --latents")
        scm = load_scm(args.model)
        Z = load_matrix_csv(args.latents)
        J = jacobian_latent(scm, Z, as_batch=True)
        S = score_latent(scm, Z)
        if args.mixing:
            mixing = MixingMatrix(load_matrix_csv(args.mixing))
            J = latent_to_observed(J, mixing)
            S = score_to_observed(S, mixing)
    elif args.mode == "stein":
        if not args.data:
            raise ValueError("stein scoring needs --data")
        X = load_matrix_csv(args.data)
        cfg = _stein_from_args(args)
        J = stein_jacobian(X, cfg)
        S = stein_score(X, cfg)
    else:
        raise ValueError(f"unknown scoring mode {args.mode!r}")
    save_jacobians(args.out, J)
    if args.scores_out:
        save_matrix_csv(args.scores_out, S, prefix="s")
    print(f"wrote {J.n_samples} Jacobians of dimension {J.dim} to {args.out}")
    return 0


def _cmd_recover(args) -> int:
    batch = load_jacobians(args.jacobians)
    X = load_matrix_csv(args.data)
    cfg = _solver_from_args(args)
    result = recover_latents(
        center(batch),
        X,
        cfg,
        n_latent=args.n_latent,
        seed=args.seed,
        strict=args.strict,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_matrix_csv(out / "z_hat.csv", result.Z_hat.T, prefix="zhat")
    save_matrix_csv(out / "functionals.csv", result.functionals, prefix="x")
    noise = None
    if result.Z_hat.shape[0] > 0:
        noise = recover_noise(result, RegressionConfig(ridge=args.reg_ridge))
        save_matrix_csv(out / "e_hat.csv", noise.E_hat.T, prefix="ehat")
    save_json(out / "recovery.json", {
        "complete": result.complete,
        "status": result.status,
        "layer_of": [int(v) for v in result.layer_of],
        "rounds": [
            {
                "index": r.index,
                "dim": r.dim,
                "n_found": r.n_found,
                "emitted": r.emitted,
                "residuals": r.residuals,
                "tol_used": r.tol_used,
                "jacobian_source": r.jacobian_source,
            }
            for r in result.round_log
        ],
    })
    print(f"recovered {result.Z_hat.shape[0]} coordinates ({result.status})")
    return 0 if result.complete else 2


def _cmd_evaluate(args) -> int:
    est = load_matrix_csv(args.estimated).T
    ref = load_matrix_csv(args.reference).T
    report = evaluate_signals(est, ref)
    payload = report.to_dict()
    if args.out:
        save_json(args.out, payload)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = ExperimentConfig(graph=args.preset)
    if args.n_samples is not None:
        cfg.n_samples = args.n_samples
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.score_mode = args.mode
    if args.ser is not None:
        cfg.target_ser = args.ser
    cfg.solver = _solver_from_args(args, base=cfg.solver)
    cfg.stein = _stein_from_args(args, base=cfg.stein)
    if args.reg_ridge is not None:
        cfg.regression.ridge = args.reg_ridge
    return cfg


def _cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    report = run_experiment(cfg, out_dir=args.out)
    print(json.dumps(
        {k: report[k] for k in ("complete", "status", "n_recovered") if k in report}
        | ({"mac": report["noise_eval"]["mac"]} if "noise_eval" in report else {}),
        indent=2,
        sort_keys=True,
    ))
    return 0 if report["complete"] else 2


def _cmd_ser_sweep(args) -> int:
    cfg = _experiment_config(args)
    levels = [float(v) for v in args.levels.split(",")]
    summary = ser_sweep(cfg, levels=levels, n_seeds=args.seeds, out_dir=args.out)
    print(json.dumps(
        {"levels": summary["levels"],
         "mean_scores": summary["mean_scores"],
         "spearman": summary["spearman"]},
        indent=2,
        sort_keys=True,
    ))
    return 0


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage failures exit with the fatal code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="scorelayers",
        description="layer-wise latent recovery from linearly mixed observations",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample a model and write data files")
    p.add_argument("--graph", default="line4")
    p.add_argument("--mechanism", default="squared_norm")
    p.add_argument("-n", "--n-samples", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mixing", choices=["random", "identity"], default="random")
    p.add_argument("--mixing-dim", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("score", help="write score Jacobians for a dataset")
    p.add_argument("--mode", choices=["oracle", "stein"], default="oracle")
    p.add_argument("--model", help="model JSON (oracle mode)")
    p.add_argument("--latents", help="latent sample CSV (oracle mode)")
    p.add_argument("--mixing", help="mixing CSV to transport into observed space")
    p.add_argument("--data", help="observation CSV (stein mode)")
    p.add_argument("--scores-out", help="optional CSV for the scores themselves")
    _add_stein_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("recover", help="peel layered coordinates from data")
    p.add_argument("--jacobians", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--n-latent", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true",
                   help="raise instead of returning a partial result on stalls")
    p.add_argument("--reg-ridge", type=float, default=1e-3)
    _add_solver_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("evaluate", help="matched correlation between signals")
    p.add_argument("--estimated", required=True, help="CSV, samples as rows")
    p.add_argument("--reference", required=True, help="CSV, samples as rows")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_evaluate)

    for name, fn in (("experiment", _cmd_experiment), ("ser-sweep", _cmd_ser_sweep)):
        p = sub.add_parser(name, help=f"run the {name} protocol")
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--preset", default="line4", choices=["line4", "y4"])
        p.add_argument("-n", "--n-samples", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--reg-ridge", type=float, default=None)
        _add_solver_flags(p)
        _add_stein_flags(p)
        if name == "experiment":
            p.add_argument("--mode", choices=["oracle", "stein", "perturbed"],
                           default=None)
            p.add_argument("--ser", type=float, default=None,
                           help="target signal-to-error ratio (perturbed mode)")
            p.add_argument("--out", default=None)
        else:
            p.add_argument("--levels", default="1,2,4,8,16,1e6")
            p.add_argument("--seeds", type=int, default=3)
            p.add_argument("--out", default=None)
            p.set_defaults(mode=None, ser=None)
        p.set_defaults(func=fn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StalledRecoveryError as exc:
        print(f"recovery stalled: {exc}", file=sys.stderr)
        return 2
    except (GraphError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
