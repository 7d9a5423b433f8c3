"""Command line entry point: ``loo-certify {run,presets,stability,bounds,verify}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .core import ConfigError


def _load(args) -> harness.ExperimentConfig:
    if getattr(args, "preset", None):
        if args.config:
            raise ConfigError("give either --config or --preset, not both")
        return harness.preset(args.preset)
    if not args.config:
        raise ConfigError("--config or --preset is required")
    return harness.load_config(args.config)


def cmd_run(args) -> int:
    cfg = _load(args)
    result = harness.run_experiment(cfg, threads=args.threads)
    out = Path(args.out)
    for path in harness.emit_csv(result, out):
        print(path)
    if args.svg:
        for path in harness.emit_svg(result, out):
            print(path)
    return 0


def cmd_presets(args) -> int:
    for name in sorted(harness.PRESETS):
        cfg = harness.PRESETS[name]
        params = {
            "kde-sine": f"generator={cfg.generator} estimator={cfg.estimator} h={cfg.bandwidth}",
            "ols-gaussian": f"generator={cfg.generator} slope={cfg.gen_slope} estimator={cfg.estimator}",
            "nw-stabilized": (f"generator={cfg.generator} estimator={cfg.estimator} "
                              f"h={cfg.bandwidth} delta={cfg.stabilizer}"),
        }[name]
        print(f"{name}: {params} loss={cfg.loss} eps_tail={cfg.eps_tail}")
        if args.verbose:
            print(harness.format_config(cfg))
    return 0


def cmd_stability(args) -> int:
    cfg = _load(args)
    print("n,delta1_hat,delta2_hat,violations,probes,delta3,delta3_se")
    for row in harness.stability_table(cfg):
        print(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                       for k in ("n", "delta1_hat", "delta2_hat", "violations", "probes",
                                 "delta3", "delta3_se")))
    return 0


def cmd_bounds(args) -> int:
    cfg = _load(args)
    try:
        eps_grid = [float(s) for s in args.eps.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad --eps grid {args.eps!r}") from None
    if not eps_grid:
        raise ConfigError("--eps needs at least one value")
    print("n,eps,bound_main,valid_main,bound_simplified,bound_data_dependent")
    gen, est, loss = cfg.make_generator(), cfg.make_estimator(), cfg.make_loss()
    from . import bounds as bnd
    from .core import derive_seed

    for n in cfg.n_grid:
        profile, _ = harness.build_profile(cfg, n)
        restriction = None
        if cfg.restriction_eps is not None:
            vx, vy = harness.restriction_variances(cfg, gen)
            restriction = bnd.estimate_restriction_set(
                est, loss, gen, n, cfg.restriction_eps, cfg.restriction_reps,
                derive_seed(cfg.base_seed, n, "restriction"), var_x=vx, var_y=vy,
                probes=min(cfg.profile_probes, 500))
        for eps, main, simp, dd in harness.evaluate_bounds(cfg, n, eps_grid, profile, restriction):
            print(f"{n},{eps!r},{main.value!r},{str(main.valid).lower()},"
                  f"{'' if simp is None else repr(simp.value)},{'' if dd is None else repr(dd.value)}")
    return 0


def cmd_verify(args) -> int:
    from .validation import format_checks, verify_all

    checks = verify_all(args.seed)
    print(format_checks(checks))
    failed = [c.claim_id for c in checks if not c.passed]
    print(f"# {len(checks) - len(failed)}/{len(checks)} claims pass"
          + (f"; failing: {', '.join(failed)}" if failed else ""), file=sys.stderr)
    return 0 if not failed else 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loo-certify",
                                description="Leave-one-out risk estimation with stability-based tail bounds.")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="flat key = value experiment config")
        sp.add_argument("--preset", choices=sorted(harness.PRESETS), help="built-in config instead of --config")

    r = sub.add_parser("run", help="run an experiment and write CSV files")
    config_args(r)
    r.add_argument("--out", default=".", help="output directory (default: current)")
    r.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $LOO_CERTIFY_THREADS or 1)")
    r.add_argument("--svg", action="store_true", help="also write simple SVG charts")
    r.set_defaults(func=cmd_run)

    pr = sub.add_parser("presets", help="list built-in experiment configs")
    pr.add_argument("-v", "--verbose", action="store_true", help="print each preset as a config file")
    pr.set_defaults(func=cmd_presets)

    s = sub.add_parser("stability", help="fitted envelopes and delta3 per n")
    config_args(s)
    s.set_defaults(func=cmd_stability)

    b = sub.add_parser("bounds", help="evaluate the tail bounds on an eps grid")
    config_args(b)
    b.add_argument("--eps", required=True, help="comma-separated eps values")
    b.set_defaults(func=cmd_bounds)

    v = sub.add_parser("verify", help="run the stability claim checks")
    v.add_argument("--seed", type=int, default=20240229)
    v.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
