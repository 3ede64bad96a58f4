"""Command-line entry points.

Exit codes: 0 success, 2 configuration error, 3 budget truncation.
"""

import argparse
import json
import sys

import torch

from . import harness
from .harness import ConfigError, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRUNCATED = 3


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config)
    else:
        cfg = ExperimentConfig()
    if args.seed is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON", default=None)
    p.add_argument("--seed", type=int, default=None, help="override the global seed")
    p.add_argument("--out", default="runs/default", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="extractlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-victim", help="train and checkpoint the victim classifier")
    _add_common(p)
    p.add_argument("--reverse", action="store_true", help="train on the proxy corpus instead")

    p = sub.add_parser("train-gan", help="train and checkpoint a generator")
    _add_common(p)
    p.add_argument("--train-on", choices=["proxy", "self"], default=None)

    p = sub.add_parser("serve-oracle", help="expose the victim over HTTP")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)

    p = sub.add_parser("attack", help="run the configured extraction attack")
    _add_common(p)
    p.add_argument("--url", default=None, help="attack a remote oracle at this URL")

    p = sub.add_parser("run-table", help="run one table of the experiment grid")
    _add_common(p)
    p.add_argument("table", choices=sorted(harness.TABLE_RUNNERS))

    p = sub.add_parser("visualize", help="render per-filter audio and sine sweeps")
    _add_common(p)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--filters", type=int, default=4, help="how many filters to sweep")
    p.add_argument("--steps-per-octave", type=int, default=100)
    p.add_argument("--octaves", type=int, default=5)

    p = sub.add_parser("match-filters", help="match filters between two checkpoints")
    _add_common(p)
    p.add_argument("checkpoint_a")
    p.add_argument("checkpoint_b")
    p.add_argument("--layer", type=int, default=0)
    return parser


def _cmd_visualize(cfg, args) -> int:
    from pathlib import Path

    import numpy as np

    from .interpret import OctaveSchedule, export_filter_wavs, export_sine_response_csv, sine_response
    from .models import load_classifier

    paths = harness._paths(args.out)
    if not paths["victim"].exists():
        raise ConfigError(f"missing victim checkpoint {paths['victim']}; run 'train-victim' first")
    model, _ = load_classifier(paths["victim"])
    sched = OctaveSchedule(steps_per_octave=args.steps_per_octave, n_octaves=args.octaves)
    out = Path(args.out) / "filters"
    export_filter_wavs(model, args.layer, out, sched=sched, seed=cfg.seed)
    grid = np.linspace(50.0, 7000.0, 80)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    for f_idx in range(min(args.filters, model.cfg.effective_channels()[args.layer])):
        curve = sine_response(model, args.layer, f_idx, grid)
        export_sine_response_csv(curve, out / f"sine_layer{args.layer}_filter{f_idx}.csv")
        fig, ax = plt.subplots(figsize=(6, 3))
        ax.plot([f for f, _ in curve], [a for _, a in curve])
        ax.set_xlabel("sine frequency (Hz)")
        ax.set_ylabel("mean activation")
        fig.tight_layout()
        fig.savefig(out / f"sine_layer{args.layer}_filter{f_idx}.png", dpi=120)
        plt.close(fig)
    print(f"wrote filter audio and sweeps to {out}")
    return EXIT_OK


def _cmd_match_filters(cfg, args) -> int:
    from pathlib import Path

    from .interpret import export_match_csv, match_filters
    from .models import load_classifier

    model_a, _ = load_classifier(args.checkpoint_a)
    model_b, _ = load_classifier(args.checkpoint_b)
    match = match_filters(model_a, model_b, args.layer, seed=cfg.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dest = out / f"match_layer{args.layer}.csv"
    export_match_csv(match, dest)
    print(f"matched {len(match.pairs)} filters, wrote {dest}")
    return EXIT_OK


def main(argv=None) -> int:
    torch.set_num_threads(1)  # keeps runs bit-deterministic
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command == "train-victim":
            record = harness.cmd_train_victim(cfg, args.out, reverse=args.reverse)
            print(json.dumps(record, indent=2))
            return EXIT_OK
        if args.command == "train-gan":
            record = harness.cmd_train_gan(cfg, args.out, train_on=args.train_on)
            print(json.dumps({k: v for k, v in record.items() if k != "final_losses"}, indent=2))
            return EXIT_OK
        if args.command == "serve-oracle":
            server = harness.cmd_serve_oracle(cfg, args.out, args.host, args.port)
            print(f"oracle listening on {server.url} (Ctrl-C to stop)")
            try:
                server._thread.join()
            except KeyboardInterrupt:
                server.close()
            return EXIT_OK
        if args.command == "attack":
            if args.url:
                row, truncated = harness.cmd_attack_remote(cfg, args.url, args.out)
            else:
                row, truncated = harness.cmd_attack(cfg, args.out)
            print(json.dumps(row, indent=2))
            return EXIT_TRUNCATED if truncated else EXIT_OK
        if args.command == "run-table":
            rows, truncated = harness.cmd_run_table(cfg, args.table, args.out)
            for row in rows:
                print(json.dumps(row))
            return EXIT_TRUNCATED if truncated else EXIT_OK
        if args.command == "visualize":
            return _cmd_visualize(cfg, args)
        if args.command == "match-filters":
            return _cmd_match_filters(cfg, args)
        raise ConfigError(f"unhandled command {args.command}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
