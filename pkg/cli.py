"""
Command-line entry point: generate, train, eval, ablate and codec-bench.

Exit codes: 0 on success, 2 for configuration errors (usage errors included),
1 for runtime failures. Every flag and input is validated before anything is
written, and each run leaves a manifest next to its primary output.
"""

import argparse
import hashlib
import logging
import sys
import time
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import codec
import pipeline
from config import RunConfig, config_hash, load_config
from errors import ConfigurationError, EpisodeFormatError
from hgat import load_checkpoint, save_checkpoint
from models import (
    AblationMode,
    ChannelConfig,
    ChannelName,
    DataSplit,
    Episode,
    RunManifest,
    Scenario,
    TrainConfig,
)
from repository import EpisodeRepository, get_output_dir
from scenario import simulate_episodes

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2

ALL_SCENARIOS = "all"


def _choices(enum: type[Any]) -> list[str]:
    return [member.value for member in enum]


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid seed list: {text!r}") from e
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"invalid seed list: {text!r}")
    return seeds


def _mode_list(text: str) -> list[AblationMode]:
    try:
        return [AblationMode(part.strip()) for part in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(
            f"invalid modes: {text!r} (choose from {', '.join(_choices(AblationMode))})"
        ) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="v2v-stgat",
        description="Collaborative brake/go decisions from shared V2V graphs",
    )
    parser.add_argument("--config", type=Path, help="TOML configuration file")
    parser.add_argument("--jobs", type=int, help="Worker processes")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="Simulate episodes")
    generate.add_argument(
        "--scenario", choices=[*_choices(Scenario), ALL_SCENARIOS], required=True
    )
    generate.add_argument("--trials", type=int, help="Trials per scenario")
    generate.add_argument("--seed-base", type=int, default=0)
    generate.add_argument("--out", type=Path, help="Episode directory")
    generate.add_argument(
        "--export-text", action="store_true", help="Also write JSON exports"
    )

    train = commands.add_parser("train", help="Train a decision model")
    train.add_argument("--data", type=Path, required=True)
    train.add_argument("--mode", choices=_choices(AblationMode))
    train.add_argument("--channel", choices=_choices(ChannelName))
    train.add_argument("--epochs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--out-checkpoint", type=Path)
    train.add_argument(
        "--split", choices=_choices(DataSplit), default=DataSplit.TRAIN.value
    )

    evaluate = commands.add_parser("eval", help="Evaluate a checkpoint")
    evaluate.add_argument("--checkpoint", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--report", type=Path)
    evaluate.add_argument(
        "--split", choices=_choices(DataSplit), default=DataSplit.TEST.value
    )

    ablate = commands.add_parser("ablate", help="Run the ablation matrix")
    ablate.add_argument("--data", type=Path, required=True)
    ablate.add_argument("--report", type=Path)
    ablate.add_argument("--seeds", type=_seed_list, default=[0, 1, 2, 3, 4])
    ablate.add_argument("--epochs", type=int)
    ablate.add_argument("--modes", type=_mode_list, default=list(AblationMode))
    ablate.add_argument(
        "--edge-ablation",
        action="store_true",
        help="Add a full-mode variant without edge attributes",
    )

    bench = commands.add_parser("codec-bench", help="Package sizes and budgets")
    bench.add_argument("--data", type=Path, required=True)
    bench.add_argument("--channel", choices=_choices(ChannelName))
    bench.add_argument("--report", type=Path)
    return parser


def _overrides(args: argparse.Namespace) -> dict[str, dict[str, Any]]:
    """Config overrides for the flags that were given."""
    overrides: dict[str, dict[str, Any]] = {}

    def put(table: str, key: str, value: Any) -> None:
        if value is not None:
            overrides.setdefault(table, {})[key] = value

    put("run", "jobs", args.jobs)
    put("scenario", "trials", getattr(args, "trials", None))
    put("train", "mode", getattr(args, "mode", None))
    put("train", "epochs", getattr(args, "epochs", None))
    put("train", "seed", getattr(args, "seed", None))
    put("channel", "name", getattr(args, "channel", None))
    return overrides


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(path: Path, manifest: RunManifest) -> Path:
    manifest.artifact_hashes = {
        str(p): sha256_file(Path(p))
        for p in [*manifest.inputs, *manifest.outputs]
        if Path(p).is_file()
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.model_dump_json(indent=2))
    logger.info(f"Wrote manifest {path}")
    return path


def _manifest_path(output: Path) -> Path:
    if output.is_dir():
        return output / "manifest.json"
    return Path(f"{output}.manifest.json")


def _check_positive(value: int | None, flag: str) -> None:
    if value is not None and value < 1:
        raise ConfigurationError(f"{flag} must be at least 1, got {value}")


def _load_episodes(data: Path, split: DataSplit) -> tuple[list[Episode], list[Path]]:
    repository = EpisodeRepository(data)
    loaded = {path: repository.load(path) for path in repository.paths()}
    if not loaded:
        raise ConfigurationError(f"No episode files in {data}")
    episodes = pipeline.split_episodes(list(loaded.values()), split)
    if not episodes:
        raise ConfigurationError(f"The {split} split of {data} is empty")
    chosen = {id(e) for e in episodes}
    inputs = [path for path, e in loaded.items() if id(e) in chosen]
    logger.info(f"Using {len(episodes)} of {len(loaded)} episodes from {data}")
    return episodes, inputs


def cmd_generate(args: argparse.Namespace, config: RunConfig) -> RunManifest:
    scenarios = (
        list(Scenario) if args.scenario == ALL_SCENARIOS else [Scenario(args.scenario)]
    )
    if args.seed_base < 0:
        raise ConfigurationError(f"--seed-base must be non-negative: {args.seed_base}")
    out = args.out or get_output_dir() / "episodes"
    seeds = list(range(args.seed_base, args.seed_base + config.scenario.trials))

    repository = EpisodeRepository(out)
    outputs = []
    for scenario in scenarios:
        episodes = simulate_episodes(scenario, seeds, config.scenario, config.jobs)
        for episode in episodes:
            outputs.append(str(repository.save(episode)))
            if args.export_text:
                outputs.append(str(repository.export_text(episode)))
        logger.info(f"Generated {len(episodes)} {scenario} episodes in {out}")
    return RunManifest(
        subcommand="generate",
        config=config.scenario.model_dump(mode="json"),
        config_hash=config_hash(config.scenario),
        seeds=seeds,
        outputs=outputs,
    )


def cmd_train(args: argparse.Namespace, config: RunConfig) -> RunManifest:
    episodes, inputs = _load_episodes(args.data, DataSplit(args.split))
    train_config = config.train
    out = args.out_checkpoint or get_output_dir() / f"model-{train_config.mode}.pt"

    instances = pipeline.assemble_dataset(
        episodes, train_config.mode, train_config, config.jobs
    )
    result = pipeline.train(instances, train_config)
    digest = config_hash(train_config)
    save_checkpoint(
        out,
        result.model,
        digest,
        {"train": train_config.model_dump(mode="json"), "losses": result.losses},
    )
    return RunManifest(
        subcommand="train",
        config=train_config.model_dump(mode="json"),
        config_hash=digest,
        seeds=[train_config.seed],
        inputs=[str(p) for p in inputs],
        outputs=[str(out)],
    )


def cmd_eval(args: argparse.Namespace, config: RunConfig) -> RunManifest:
    model, payload = load_checkpoint(args.checkpoint)
    train_config = TrainConfig.model_validate(payload["metadata"].get("train", {}))
    episodes, inputs = _load_episodes(args.data, DataSplit(args.split))
    out = args.report or get_output_dir() / f"eval-{train_config.mode}.jsonl"

    instances = pipeline.assemble_dataset(
        episodes, train_config.mode, train_config, config.jobs
    )
    report = pipeline.evaluate(
        model, instances, train_config.mode, payload["config_hash"]
    )
    outputs = pipeline.write_eval_report(out, report)
    print(pipeline.render_eval_table(report), end="")
    return RunManifest(
        subcommand="eval",
        config=train_config.model_dump(mode="json"),
        config_hash=payload["config_hash"],
        seeds=[train_config.seed],
        inputs=[str(args.checkpoint), *(str(p) for p in inputs)],
        outputs=[str(p) for p in outputs],
        timings=report.latency.model_dump(),
    )


def cmd_ablate(args: argparse.Namespace, config: RunConfig) -> RunManifest:
    episodes, inputs = _load_episodes(args.data, DataSplit.ALL)
    out = args.report or get_output_dir() / "ablation.jsonl"

    report = pipeline.run_ablation_matrix(
        episodes,
        config.train,
        args.seeds,
        args.modes,
        edge_ablation=args.edge_ablation,
        jobs=config.jobs,
    )
    outputs = pipeline.write_ablation_report(out, report)
    print(pipeline.render_ablation_table(report), end="")
    return RunManifest(
        subcommand="ablate",
        config=config.train.model_dump(mode="json"),
        config_hash=config_hash(config.train),
        seeds=list(args.seeds),
        inputs=[str(p) for p in inputs],
        outputs=[str(p) for p in outputs],
    )


def cmd_codec_bench(args: argparse.Namespace, config: RunConfig) -> RunManifest:
    episodes, inputs = _load_episodes(args.data, DataSplit.ALL)
    channel: ChannelConfig = config.train.channel
    out = args.report or get_output_dir() / f"codec-{channel.name}.json"

    # every window every collaborator would send, lossless
    lossless = config.train.model_copy(
        update={"channel": channel.model_copy(update={"loss_probability": 0.0})}
    )
    instances = pipeline.assemble_dataset(
        episodes, AblationMode.FULL, lossless, config.jobs
    )
    sizes = [size for instance in instances for size in instance.packet_sizes]
    report = codec.bench_report(sizes, channel)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.model_dump_json(indent=2) + "\n")
    print(
        f"{report.packets} packets: mean {report.ps_mean_bytes:.1f} B, "
        f"max {report.ps_max_bytes} B, DSRC {'ok' if report.fits_dsrc else 'over'}, "
        f"C-V2X {'ok' if report.fits_c_v2x else 'over'}"
    )
    return RunManifest(
        subcommand="codec-bench",
        config=config.train.model_dump(mode="json"),
        config_hash=config_hash(config.train),
        inputs=[str(p) for p in inputs],
        outputs=[str(out)],
    )


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "codec-bench": cmd_codec_bench,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )
    started = time.perf_counter()
    try:
        _check_positive(args.jobs, "--jobs")
        _check_positive(getattr(args, "trials", None), "--trials")
        _check_positive(getattr(args, "epochs", None), "--epochs")
        config = load_config(args.config, _overrides(args))
        manifest = COMMANDS[args.command](args, config)
    except (ConfigurationError, EpisodeFormatError) as e:
        logger.error(str(e))
        return EXIT_CONFIG
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        logger.debug("Traceback", exc_info=True)
        return EXIT_RUNTIME

    manifest.timings["total_s"] = time.perf_counter() - started
    primary = Path(manifest.outputs[0]) if manifest.outputs else get_output_dir()
    if args.command == "generate":
        primary = primary.parent
    write_manifest(_manifest_path(primary), manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
