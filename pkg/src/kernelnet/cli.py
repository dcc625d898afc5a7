"""Command-line entry point: kernel audits, training tasks, and the
two-sample test.

Configuration is a flat file of dotted `key = value` lines; --override (-o)
applies the same keys on top. Unknown keys are hard errors. Every subcommand
is a pure function of (config, seed): rerunning with the same seed rewrites
byte-identical CSV artifacts. Reports render matplotlib figures next to the
delimited output unless --no-figures is given.

Exit codes: 0 success, 1 audit failure, 2 usage/config error, 3 numeric
divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .kernel import KernelConfig
from .tasks import (
    DivergenceError,
    TrainSpec,
    audit_battery,
    read_samples_csv,
    train_sampler,
    train_toy_gan,
    two_sample_test,
)
from .targets import make_target

SEED_ENV = "KERNELNET_SEED"


class ConfigError(Exception):
    pass


def _bool(raw):
    if raw.lower() in ("true", "1", "yes"):
        return True
    if raw.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _int_list(raw):
    raw = raw.strip()
    if not raw:
        return ()
    return tuple(int(v) for v in raw.split(";"))


# dotted config key -> (TrainSpec field, parser, help)
TRAIN_KEYS = {
    "objective": ("objective", str, "mmd-dk | smmd-dk | rep-dk | sampler"),
    "target": ("target", str, "laplace | mixture | ring8 | grid25"),
    "seed": ("seed", int, "run seed"),
    "steps": ("total_gen_steps", int, "generator/sampler update steps"),
    "batch_size": ("batch_size", int, "samples per batch (>= 4)"),
    "critic_steps": ("critic_steps_per_gen", int,
                     "critic+kernel updates per generator update"),
    "alpha1": ("alpha1", float, "penalty weight in the generator loss"),
    "alpha2": ("alpha2", float, "penalty weight in the critic loss"),
    "eta": ("eta", float, "within-real weight of the repulsive loss"),
    "zeta": ("zeta", float, "dependent-moment weight in the delta scaling"),
    "sn_scale": ("sn_scale", float, "post-normalization weight scale"),
    "kernel.variant": ("kernel_variant", str,
                       "independent-only | dependent-only | sum | dk2-sum"),
    "kernel.n_features": ("n_features", int, "spectral samples per evaluation"),
    "kernel.hidden": ("kernel_hidden", int, "hidden units of spectral nets"),
    "kernel.eps_law": ("indep_eps_law", str, "uniform | gaussian base noise"),
    "kernel.fixed_rbf": ("fixed_rbf", _bool, "use the fixed RBF-recovery kernel"),
    "critic.out_dim": ("critic_out_dim", int, "critic output width"),
    "critic.hidden": ("critic_hidden", int, "critic hidden units"),
    "generator.hidden": ("generator_hidden", int, "generator hidden units"),
    "generator.noise_dim": ("generator_noise_dim", int, "generator noise width"),
    "sampler.hidden": ("sampler_hidden", int, "sampler hidden units"),
    "sampler.noise_dim": ("sampler_noise_dim", int, "sampler noise width"),
    "lr.generator": ("lr_generator", float, "generator learning rate"),
    "lr.critic": ("lr_critic", float, "critic learning rate"),
    "lr.kernel_ratio": ("lr_kernel_ratio", float,
                        "kernel lr as a fraction of the generator lr"),
    "adam.beta1": ("adam_beta1", float, "Adam first-moment decay"),
    "adam.beta2": ("adam_beta2", float, "Adam second-moment decay"),
    "lr_halve_steps": ("lr_halve_steps", _int_list,
                       "semicolon-separated steps at which lr halves"),
    "omega.mc": ("omega_mc", int, "penalty Monte Carlo draws per pair"),
    "omega.pairs": ("omega_pairs", int, "penalty pair cap per batch"),
    "smmd.mc": ("smmd_mc", int, "moment draws for the delta scaling"),
    "snapshot_every": ("snapshot_every", int, "steps between sample snapshots"),
    "final_samples": ("final_sample_count", int, "rows in final samples.csv"),
    "passthrough": ("generator_passthrough", _bool,
                    "replace the generator with real samples (diagnostics)"),
    "permutations": ("permutations", int, "label permutations (test)"),
    "train_frac": ("train_frac", float, "held-out fraction for kernel training"),
    "kernel.eval_features": ("eval_n_features", int,
                             "spectral samples for the test-phase Gram"),
    "spectral_span": ("spectral_span", float,
                      "bandwidth-matching target for the test kernel"),
}

AUDIT_KEYS = {
    "seed": (None, int, "audit seed"),
    "kernel.variant": (None, str, "kernel construction to audit"),
    "kernel.n_features": (None, int, "spectral samples (>= 256)"),
    "kernel.hidden": (None, int, "hidden units of spectral nets"),
    "kernel.eps_law": (None, str, "uniform | gaussian base noise"),
    "dim": (None, int, "kernel input dimension"),
    "points": (None, int, "Gram audit points"),
    "pairs": (None, int, "probe pairs per check"),
}

AUDIT_DEFAULTS = {
    "seed": 0, "kernel.variant": "sum", "kernel.n_features": 4096,
    "kernel.hidden": 16, "kernel.eps_law": "uniform", "dim": 2,
    "points": 16, "pairs": 50,
}

TEST_KEYS = {k: v for k, v in TRAIN_KEYS.items() if k in (
    "seed", "steps", "batch_size", "alpha2", "kernel.variant",
    "kernel.n_features", "kernel.hidden", "kernel.eps_law", "permutations",
    "train_frac", "lr.generator", "lr.kernel_ratio", "omega.mc",
    "omega.pairs", "kernel.eval_features", "spectral_span")}


def _keys_epilog(keys, defaults):
    lines = ["config keys (key = value lines in --config, or -o key=value):"]
    for key, (_, _, help_text) in sorted(keys.items()):
        default = defaults.get(key, "")
        lines.append(f"  {key:<22} {help_text} (default: {default})")
    return "\n".join(lines)


def load_config_file(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise ConfigError(f"{path}: line {ln}: expected key = value")
            key, raw = (part.strip() for part in text.split("=", 1))
            out[key] = raw
    return out


def resolve_config(keys, file_path, overrides):
    raw = {}
    if file_path:
        raw.update(load_config_file(file_path))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r}: expected key=value")
        key, val = item.split("=", 1)
        raw[key.strip()] = val.strip()
    parsed = {}
    for key, value in raw.items():
        if key not in keys:
            raise ConfigError(f"unknown config key {key!r}")
        _, parser, _ = keys[key]
        try:
            parsed[key] = parser(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    return parsed


def resolve_seed(args_seed, cfg):
    if args_seed is not None:
        return int(args_seed)
    if "seed" in cfg:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env is not None:
        return int(env)
    return 0


def _train_defaults_text():
    spec = TrainSpec.for_objective("rep-dk")
    d = spec.to_dict()
    pairs = []
    for key, (fieldname, _, _) in TRAIN_KEYS.items():
        pairs.append((key, d.get(fieldname, "")))
    return {k: v for k, v in pairs}


def cmd_train(args):
    cfg = resolve_config(TRAIN_KEYS, args.config, args.override)
    if args.objective:
        cfg["objective"] = args.objective
    if args.target:
        cfg["target"] = args.target
    if args.steps is not None:
        cfg["steps"] = args.steps
    if args.eta is not None:
        cfg["eta"] = args.eta
    if "objective" not in cfg:
        raise ConfigError("an objective is required (--objective or config)")
    cfg["seed"] = resolve_seed(args.seed, cfg)
    fields = {TRAIN_KEYS[k][0]: v for k, v in cfg.items()
              if k not in ("objective",)}
    try:
        spec = TrainSpec.for_objective(cfg["objective"], **fields)
        target = make_target(spec.target)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    out_dir = args.output_dir or f"kernelnet-{spec.objective}-seed{spec.seed}"
    if spec.objective == "sampler":
        manifest = train_sampler(spec, out_dir, target=target)
    else:
        if target.dimension != 2:
            raise ConfigError(
                f"adversarial objectives need a 2-D target, got {spec.target!r}")
        manifest = train_toy_gan(spec, out_dir, target=target)

    if not args.no_figures:
        from . import plots
        figures = {}
        figures["metrics"] = os.path.basename(plots.save_metrics_figure(
            os.path.join(out_dir, "metrics.csv"),
            os.path.join(out_dir, "metrics.png")))
        samples = read_samples_csv(os.path.join(out_dir, "samples.csv"))
        figures["samples"] = os.path.basename(plots.save_samples_figure(
            samples, os.path.join(out_dir, "samples.png"), target=target))
        manifest.files.update(figures)
        manifest.write(os.path.join(out_dir, "manifest.json"))
    print(json.dumps({"output_dir": out_dir,
                      "final_metrics": manifest.final_metrics}, sort_keys=True))
    return 0


def cmd_audit(args):
    cfg = {**AUDIT_DEFAULTS,
           **resolve_config(AUDIT_KEYS, args.config, args.override)}
    cfg["seed"] = resolve_seed(args.seed, cfg)
    if cfg["kernel.n_features"] < 256:
        raise ConfigError(
            f"kernel.n_features = {cfg['kernel.n_features']} is below the "
            f"audit minimum of 256")
    rng = np.random.default_rng(cfg["seed"])
    kernel_cfg = KernelConfig.default(
        dim=cfg["dim"], variant=cfg["kernel.variant"],
        n_features=cfg["kernel.n_features"], hidden=cfg["kernel.hidden"],
        eps_law=cfg["kernel.eps_law"], rng=rng)
    report = audit_battery(kernel_cfg, rng, n_pairs=cfg["pairs"],
                           psd_points=cfg["points"],
                           psd_features=cfg["kernel.n_features"])
    report["seed"] = cfg["seed"]
    out_dir = args.output_dir or "."
    os.makedirs(out_dir, exist_ok=True)
    out_path = os.path.join(out_dir, "audit.json")
    with open(out_path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if not args.no_figures:
        from . import plots
        plots.save_audit_figure(report, os.path.join(out_dir, "audit.png"))
    print(json.dumps({"all_pass": report["all_pass"], "report": out_path}))
    return 0 if report["all_pass"] else 1


def cmd_test(args):
    cfg = resolve_config(TEST_KEYS, args.config, args.override)
    cfg["seed"] = resolve_seed(args.seed, cfg)
    try:
        X = read_samples_csv(args.samples_x)
        Y = read_samples_csv(args.samples_y)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if X.shape[1] != Y.shape[1]:
        raise ConfigError(
            f"inputs disagree on width: {X.shape[1]} vs {Y.shape[1]}")
    fields = {TEST_KEYS[k][0]: v for k, v in cfg.items()}
    try:
        spec = TrainSpec.for_objective("two-sample", **fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    result = two_sample_test(X, Y, spec, np.random.default_rng(spec.seed))
    print(json.dumps(result, sort_keys=True))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="kernelnet",
        description="Learnable random-feature kernels: audits, training "
                    "tasks, and a two-sample test.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("-o", "--override", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.add_argument("--seed", type=int,
                       help=f"run seed (falls back to ${SEED_ENV}, then 0)")
        p.add_argument("--output-dir", help="artifact directory")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    p_train = sub.add_parser(
        "train", help="run a training task",
        epilog=_keys_epilog(TRAIN_KEYS, _train_defaults_text()),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_train)
    p_train.add_argument("--objective",
                         choices=("mmd-dk", "smmd-dk", "rep-dk", "sampler"))
    p_train.add_argument("--target",
                         choices=("laplace", "mixture", "ring8", "grid25"))
    p_train.add_argument("--steps", type=int)
    p_train.add_argument("--eta", type=float)
    p_train.set_defaults(func=cmd_train)

    p_audit = sub.add_parser(
        "audit", help="run the kernel audit battery",
        epilog=_keys_epilog(AUDIT_KEYS, AUDIT_DEFAULTS),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_audit)
    p_audit.set_defaults(func=cmd_audit)

    p_test = sub.add_parser(
        "test", help="learned-kernel two-sample test on two CSV files",
        epilog=_keys_epilog(
            TEST_KEYS,
            {k: TrainSpec.for_objective("two-sample").to_dict().get(v[0], "")
             for k, v in TEST_KEYS.items()}),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    common(p_test)
    p_test.add_argument("samples_x", help="first sample CSV")
    p_test.add_argument("samples_y", help="second sample CSV")
    p_test.set_defaults(func=cmd_test)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
