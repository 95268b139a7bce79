"""Command-line entry points.

Every subcommand writes its outputs plus two bookkeeping files into the
--out directory: config.json, the fully resolved configuration of the
run, and run_meta.json, which holds the only timestamps. Everything
except run_meta.json is a deterministic function of (config, seed).

Exit codes: 0 success, 1 runtime failure (message on stderr), 2 usage.
"""

from __future__ import annotations

import argparse
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import analysis, io, likelihood, sampler, training
from .config import RunConfig, config_from_dict, load_config
from .energy import EnergyNet
from .errors import ConfigError

__all__ = ["main", "build_parser"]


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def _ensure_out(args) -> str:
    out = args.out
    os.makedirs(out, exist_ok=True)
    return out


def _effective_seed(args, config: RunConfig | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if config is not None:
        return config.seed
    return 0


def _echo_config(out: str, config: RunConfig | None, seed: int, tool: dict) -> None:
    # the echo lives inside the output directory, so recording the
    # directory path would only make reruns into different dirs differ
    resolved = config.resolved() if config is not None else RunConfig().resolved()
    resolved["seed"] = seed
    resolved["out"] = ""
    resolved["tool"] = tool
    io.write_json(os.path.join(out, "config.json"), resolved)


def _write_meta(out: str, command: str, started: str) -> None:
    io.write_json(os.path.join(out, "run_meta.json"),
                  {"command": command, "started": started, "finished": _utcnow()})


def _load_net(path: str) -> tuple[EnergyNet, RunConfig]:
    ckpt = io.load_checkpoint(path)
    return io.restore_net(ckpt), config_from_dict(ckpt.config)


def _net_and_config(args) -> tuple[EnergyNet, RunConfig]:
    """Checkpoint supplies the net; --config, if given, overrides the rest."""
    net, embedded = _load_net(args.checkpoint)
    if getattr(args, "config", None):
        return net, load_config(args.config)
    return net, embedded


def _tool_section(command: str, **flags) -> dict:
    return {"command": command, **flags}


# --- subcommand handlers ---


def _cmd_train(args) -> int:
    started = _utcnow()
    config = load_config(args.config)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    if not config.data.get("path"):
        raise ConfigError("train needs data.path in the config")
    dataset = io.load_dataset(config.data["path"], config.data["kind"])
    net = EnergyNet(config.net_config(input_dim=dataset.shape[1]))

    resolved = config_from_dict({**config.resolved(),
                                 "net": {"input_dim": net.config.input_dim,
                                         "hidden_dims": list(net.config.hidden_dims),
                                         "seed": net.config.seed},
                                 "seed": seed, "out": ""})
    train_config = resolved.train_config()

    def on_checkpoint(step: int, net_at_step) -> None:
        io.save_checkpoint(net_at_step, step, resolved.resolved(),
                           os.path.join(out, f"checkpoint_{step:06d}"))

    history = training.train(dataset, net, train_config, on_checkpoint=on_checkpoint)
    io.save_checkpoint(net, train_config.steps, resolved.resolved(),
                       os.path.join(out, "final"))
    io.write_matrix_csv(os.path.join(out, "loss_history.csv"), history,
                        header="step,loss,mean_resid")
    _echo_config(out, resolved, seed, _tool_section("train"))
    _write_meta(out, "train", started)
    return 0


def _cmd_sample(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    schedule = config.noise_schedule()
    anneal = config.anneal_schedule(schedule)
    rng = np.random.default_rng(seed)
    x, trace = sampler.sample(net, args.n, anneal, rng,
                              sigma0=schedule.sigma0, trace=True)
    io.write_matrix_csv(os.path.join(out, "samples.csv"), x)
    io.write_matrix_csv(
        os.path.join(out, "trace.csv"),
        np.column_stack([trace.step, trace.temperature,
                         trace.mean_energy, trace.std_energy]),
        header="step,temperature,mean_energy,std_energy")
    _echo_config(out, config, seed, _tool_section("sample", n=args.n))
    _write_meta(out, "sample", started)
    return 0


def _cmd_denoise(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    points = io.load_csv(args.infile)
    sigma0 = config.schedule["sigma0"]
    io.write_matrix_csv(os.path.join(out, "denoised.csv"),
                        sampler.denoise_jump(net, points, sigma0))
    _echo_config(out, config, seed,
                 _tool_section("denoise", infile=args.infile))
    _write_meta(out, "denoise", started)
    return 0


def _cmd_inpaint(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    known = io.load_csv(args.infile)
    mask_row = io.load_csv(args.mask)
    mask = mask_row.reshape(-1) != 0.0
    schedule = config.noise_schedule()
    anneal = config.anneal_schedule(schedule)
    rng = np.random.default_rng(seed)
    x = sampler.inpaint(net, known, mask, anneal, rng, sigma0=schedule.sigma0)
    io.write_matrix_csv(os.path.join(out, "inpainted.csv"), x)
    _echo_config(out, config, seed,
                 _tool_section("inpaint", infile=args.infile, mask=args.mask))
    _write_meta(out, "inpaint", started)
    return 0


def _cmd_logz(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    ais_config = config.ais_config()
    rng = np.random.default_rng(seed)
    if args.reverse:
        if not args.data:
            raise ConfigError("logz --reverse needs --data with data points")
        points = io.load_csv(args.data)
        result = likelihood.reverse_ais_logz(net, points, ais_config, rng)
    else:
        result = likelihood.ais_logz(net, ais_config, rng)
    payload = result.as_dict()
    payload["config"] = config.resolved()
    io.write_json(os.path.join(out, "logz.json"), payload)
    _echo_config(out, config, seed,
                 _tool_section("logz", reverse=bool(args.reverse),
                               data=args.data or ""))
    _write_meta(out, "logz", started)
    return 0


def _cmd_concentration(args) -> int:
    started = _utcnow()
    seed = _effective_seed(args)
    out = _ensure_out(args)
    spec = analysis.ShellSpec(d=args.d, sigma=args.sigma, epsilon=args.epsilon)
    rng = np.random.default_rng(seed)
    stats = analysis.concentration_stats(spec, args.n, rng)
    stats.update({"d": args.d, "sigma": args.sigma, "n": args.n})
    io.write_json(os.path.join(out, "concentration.json"), stats)
    _echo_config(out, None, seed,
                 _tool_section("concentration", d=args.d, sigma=args.sigma,
                               n=args.n, epsilon=args.epsilon))
    _write_meta(out, "concentration", started)
    return 0


def _cmd_shell_error(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    oracle = analysis.ring_gmm(args.modes, args.ring_radius, args.s)
    radii = np.array([float(t) for t in args.radii.split(",")])
    rng = np.random.default_rng(seed)
    errors = analysis.shell_score_error(net, oracle, radii, args.sigma_eval,
                                        args.n, rng,
                                        sigma0=config.schedule["sigma0"])
    io.write_matrix_csv(os.path.join(out, "shell_error.csv"),
                        np.column_stack([radii, errors]),
                        header="radius,rel_error")
    io.write_json(os.path.join(out, "shell_error.json"),
                  {"radii": radii.tolist(), "rel_error": errors.tolist()})
    _echo_config(out, config, seed,
                 _tool_section("shell-error", radii=args.radii,
                               sigma_eval=args.sigma_eval, n=args.n,
                               modes=args.modes, ring_radius=args.ring_radius,
                               s=args.s))
    _write_meta(out, "shell-error", started)
    return 0


def _cmd_modes(args) -> int:
    started = _utcnow()
    seed = _effective_seed(args)
    out = _ensure_out(args)
    samples = io.load_csv(args.samples)
    oracle = analysis.ring_gmm(args.modes, args.ring_radius, args.s)
    threshold = args.threshold
    if threshold is None:
        threshold = analysis.mode_threshold(oracle, args.sigma0)
    cov = analysis.mode_coverage(samples, oracle, threshold)
    io.write_json(os.path.join(out, "modes.json"),
                  {"counts": cov.counts.tolist(),
                   "shares": cov.shares.tolist(),
                   "unassigned": cov.unassigned,
                   "n_covered": cov.n_covered,
                   "threshold": threshold})
    _echo_config(out, None, seed,
                 _tool_section("modes", samples=args.samples, modes=args.modes,
                               ring_radius=args.ring_radius, s=args.s,
                               sigma0=args.sigma0, threshold=threshold))
    _write_meta(out, "modes", started)
    return 0


def _cmd_nn_check(args) -> int:
    started = _utcnow()
    seed = _effective_seed(args)
    out = _ensure_out(args)
    samples = io.load_csv(args.samples)
    dataset = io.load_csv(args.dataset)
    idx, dist = analysis.nn_check(samples, dataset, k=args.k)
    io.write_matrix_csv(os.path.join(out, "nn.csv"),
                        np.column_stack([idx.astype(np.float64), dist]),
                        header=",".join([f"idx{i}" for i in range(args.k)]
                                        + [f"dist{i}" for i in range(args.k)]))
    _echo_config(out, None, seed,
                 _tool_section("nn-check", samples=args.samples,
                               dataset=args.dataset, k=args.k))
    _write_meta(out, "nn-check", started)
    return 0


def _cmd_ood(args) -> int:
    started = _utcnow()
    net, config = _net_and_config(args)
    seed = _effective_seed(args, config)
    out = _ensure_out(args)
    x = io.load_csv(args.infile)
    sigma0 = config.schedule["sigma0"]
    rng = np.random.default_rng(seed)
    energies = analysis.ood_energy_score(net, x, sigma0, rng, n_noise=args.n_noise)
    residuals = analysis.denoising_residual_score(net, x, sigma0, rng,
                                                  n_noise=args.n_noise)
    io.write_matrix_csv(os.path.join(out, "ood.csv"),
                        np.column_stack([energies, residuals]),
                        header="mean_energy,mean_sq_residual")
    _echo_config(out, config, seed,
                 _tool_section("ood", infile=args.infile, n_noise=args.n_noise))
    _write_meta(out, "ood", started)
    return 0


# --- parser ---


def _add_common(p, *, config=False, checkpoint=False):
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--out", default=".", help="output directory")
    if config:
        p.add_argument("--config", default=None,
                       help="run config (.toml or .json)")
    if checkpoint:
        p.add_argument("--checkpoint", required=True, help="checkpoint file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdsm",
                                     description="Multiscale denoising energy models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an energy net on a dataset")
    p.add_argument("--config", required=True, help="run config (.toml or .json)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("sample", help="annealed Langevin sampling")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--n", type=int, required=True, help="number of samples")
    p.set_defaults(func=_cmd_sample)

    p = sub.add_parser("denoise", help="single-step denoising jump")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--in", dest="infile", required=True, help="CSV of noisy rows")
    p.set_defaults(func=_cmd_denoise)

    p = sub.add_parser("inpaint", help="sample with clamped coordinates")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--in", dest="infile", required=True, help="CSV of known rows")
    p.add_argument("--mask", required=True,
                   help="CSV row of 0/1 flags, 1 = coordinate is known")
    p.set_defaults(func=_cmd_inpaint)

    p = sub.add_parser("logz", help="AIS partition function estimate")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--reverse", action="store_true",
                   help="run reverse AIS from data points")
    p.add_argument("--data", default=None, help="CSV of data rows (reverse mode)")
    p.set_defaults(func=_cmd_logz)

    p = sub.add_parser("concentration", help="noise-shell concentration stats")
    _add_common(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.set_defaults(func=_cmd_concentration)

    p = sub.add_parser("shell-error", help="denoising error across shells")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--radii", default="0.25,0.5,1,2,4",
                   help="comma-separated shell radii (multiples of sigma-eval shells)")
    p.add_argument("--sigma-eval", type=float, default=0.3, dest="sigma_eval")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--ring-radius", type=float, default=1.0, dest="ring_radius")
    p.add_argument("--s", type=float, default=0.05)
    p.set_defaults(func=_cmd_shell_error)

    p = sub.add_parser("modes", help="assign samples to ring-mixture modes")
    _add_common(p)
    p.add_argument("--samples", required=True, help="CSV of sample rows")
    p.add_argument("--modes", type=int, default=8)
    p.add_argument("--ring-radius", type=float, default=1.0, dest="ring_radius")
    p.add_argument("--s", type=float, default=0.05)
    p.add_argument("--sigma0", type=float, default=0.1)
    p.add_argument("--threshold", type=float, default=None,
                   help="assignment radius; default 3*sqrt(s^2+sigma0^2)*sqrt(d)")
    p.set_defaults(func=_cmd_modes)

    p = sub.add_parser("nn-check", help="nearest dataset rows for each sample")
    _add_common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--k", type=int, default=1)
    p.set_defaults(func=_cmd_nn_check)

    p = sub.add_parser("ood", help="energy and residual scores for given rows")
    _add_common(p, config=True, checkpoint=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--n-noise", type=int, default=16, dest="n_noise")
    p.set_defaults(func=_cmd_ood)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, ArithmeticError, OSError) as exc:
        print(f"mdsm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
