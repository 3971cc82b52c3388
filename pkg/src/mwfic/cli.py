"""Command line entry point: ``mwfic run | summarize | scene``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .pipeline import ExperimentConfig, read_results, run_experiment, summarize
from .scene import ArrayGeometry, build_scene
from .speech import load_speech
from .stft import write_wav

EXIT_OK = 0
EXIT_PARTIAL = 2


def _load_config(path) -> ExperimentConfig:
    return ExperimentConfig.load(path) if path else ExperimentConfig()


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.output:
        config = replace(config, output_dir=args.output)
    summary = run_experiment(config, jobs=args.jobs)
    print(f"{summary.rows_written} cells written, {summary.skipped} skipped, "
          f"{len(summary.failures)} failed -> {summary.results_path}")
    return EXIT_OK if summary.ok else EXIT_PARTIAL


def cmd_summarize(args) -> int:
    rows = read_results(args.input)
    if not rows:
        print(f"no rows in {args.input}", file=sys.stderr)
        return EXIT_PARTIAL
    print(json.dumps(summarize(rows), indent=2))
    return EXIT_OK


def cmd_scene(args) -> int:
    config = _load_config(args.config)
    spec = config.scenario
    if args.snr is not None:
        spec = spec.with_snr(args.snr)
    scene = build_scene(replace(spec, seed=config.seed), load_speech(config.speech_path, config.stft),
                        ArrayGeometry(), config.stft)
    out = Path(args.output)
    for name, sig in {**scene.components(), "mixture": scene.mixture}.items():
        write_wav(out / f"{name}.wav", sig, config.stft.sample_rate)
    print(f"wrote {len(scene.components()) + 1} files to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mwfic", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the alpha/variant/SNR grid")
    run.add_argument("--config", help="JSON experiment config (defaults used if omitted)")
    run.add_argument("--output", help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.set_defaults(func=cmd_run)

    summ = sub.add_parser("summarize", help="trend report for a results CSV")
    summ.add_argument("--input", required=True)
    summ.set_defaults(func=cmd_summarize)

    scene = sub.add_parser("scene", help="render a scene and write its component WAVs")
    scene.add_argument("--config")
    scene.add_argument("--output", required=True)
    scene.add_argument("--snr", type=float)
    scene.set_defaults(func=cmd_scene)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
