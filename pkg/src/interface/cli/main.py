"""
Command-line driver for the desk-scale experiments.

    python app.py gen-demos   --out runs/demo
    python app.py fit-skills  --out runs/demo
    python app.py meta-train  --out runs/demo --method mila --method gcbc
    python app.py adapt-eval  --out runs/demo
    python app.py report      --out runs/demo --xlsx

Every command reads --config (defaults to config/defaults.json), takes an
optional --seed overriding the config seeds and records what it wrote in
<out>/experiment.json. Exit codes: 0 success, 2 configuration error,
3 missing or unreadable file, 1 any other failure.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import pandas as pd

from config import (
    DEFAULT_CONFIG_FILE,
    LOG_LEVEL,
    METHODS,
    ArtifactNames,
    ExperimentConfig,
    Method,
    Study,
    load_experiment_config,
)
from src.analysis.metrics import build_intervals, build_table1
from src.core.errors import ArtifactError, ConfigError, MilaError
from src.evaluation.pipeline import fit_skills, generate_dataset, replay_success_rate, train_method
from src.evaluation.runner import run_study
from src.services.checkpoint_service import checkpoint_path, load_checkpoint
from src.services.dataset_service import export_csv, load_dataset, save_dataset
from src.services.excel_service import export_to_excel
from src.services.manifest_service import ExperimentManifest
from src.services.repertoire_service import load_repertoire, save_repertoire

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_IO = 3


# =============================================================================
# HELPERS
# =============================================================================


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_experiment_config(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    if getattr(args, "workers", None):
        config = replace(config, evaluation=replace(config.evaluation, workers=args.workers))
    return config


def _seeds(config: ExperimentConfig) -> Dict[str, int]:
    return {"dataset": config.dataset.seed, "meta": config.meta.seed, "gcbc": config.gcbc.seed}


def _manifest(command: str, args: argparse.Namespace, config: ExperimentConfig) -> ExperimentManifest:
    return ExperimentManifest(command, str(args.config), _seeds(config), config.to_dict())


def _data_dir(args: argparse.Namespace) -> Path:
    return Path(args.data) if getattr(args, "data", None) else Path(args.out)


def _repertoire_path(args: argparse.Namespace) -> Path:
    return Path(args.repertoire) if getattr(args, "repertoire", None) else Path(args.out) / ArtifactNames.REPERTOIRE


# =============================================================================
# COMMANDS
# =============================================================================


def cmd_gen_demos(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out)
    manifest = _manifest("gen-demos", args, config)
    dataset = generate_dataset(config, count=args.count, progress=not args.quiet)
    rate = replay_success_rate(dataset, config)
    logger.info(f"Expert replay success: {100.0 * rate:.1f}%")
    manifest_path = save_dataset(dataset, out, extra={"expert_replay_success": rate})
    written: List[Path] = [manifest_path, out / ArtifactNames.DEMO_DIR, out / ArtifactNames.CLIP_DIR]
    if args.csv:
        export_csv(dataset, out / ArtifactNames.CSV_DIR)
        written.append(out / ArtifactNames.CSV_DIR)
    manifest.add_artifacts(out, written)
    manifest.write(out)
    return EXIT_OK


def cmd_fit_skills(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out)
    manifest = _manifest("fit-skills", args, config)
    data_dir = _data_dir(args)
    dataset = load_dataset(data_dir, load_demos=False)
    repertoire, rmse = fit_skills(dataset, config)
    path = save_repertoire(repertoire, out / ArtifactNames.REPERTOIRE)
    report = pd.DataFrame(
        [
            {
                "skill": skill,
                "rmse": rmse[skill],
                "n_clips": len(dataset.clips[skill]),
                "profile_fallback": repertoire.profile(skill).is_fallback,
            }
            for skill in repertoire.ordered_skills()
        ]
    )
    report.to_csv(out / ArtifactNames.FIT_REPORT, index=False)
    for row in report.itertuples():
        print(f"{row.skill:>6}: reproduction RMSE {row.rmse:.2e} m")
    manifest.add_inputs([data_dir / ArtifactNames.DATASET_MANIFEST])
    manifest.add_artifacts(out, [path, out / ArtifactNames.FIT_REPORT])
    manifest.write(out)
    return EXIT_OK


def cmd_meta_train(args: argparse.Namespace) -> int:
    config = _config(args)
    out = Path(args.out)
    manifest = _manifest("meta-train", args, config)
    dataset = load_dataset(_data_dir(args))
    repertoire = load_repertoire(_repertoire_path(args))
    written = []
    for method in args.method or [Method.MILA.value]:
        _, path = train_method(method, dataset, repertoire, config, out, n_steps=args.steps, progress=not args.quiet)
        written.extend([path, path.with_suffix(".bin")])
    manifest.add_inputs([_data_dir(args) / ArtifactNames.DATASET_MANIFEST, _repertoire_path(args)])
    manifest.add_artifacts(out, written)
    manifest.write(out)
    return EXIT_OK


def _evaluate(study: str, args: argparse.Namespace, config: ExperimentConfig) -> int:
    out = Path(args.out)
    manifest = _manifest(f"eval-{study}", args, config)
    dataset = load_dataset(_data_dir(args))
    repertoire = load_repertoire(_repertoire_path(args))
    checkpoints = Path(args.checkpoints) if args.checkpoints else out
    models = {}
    for method in args.methods or METHODS:
        path = checkpoint_path(checkpoints, method)
        models[method] = load_checkpoint(path)
        manifest.add_inputs([path])
    trials = run_study(study, models, dataset.test, repertoire, config, dataset.seed, progress=not args.quiet)
    path = out / ArtifactNames.trials(study)
    trials.to_csv(path, index=False)
    manifest.add_artifacts(out, [path])
    manifest.write(out)
    print(build_table1(trials.to_dict("records")).to_string(index=False))
    return EXIT_OK


def cmd_adapt_eval(args: argparse.Namespace) -> int:
    return _evaluate(Study.ADAPT.value, args, _config(args))


def cmd_eval_occlusion(args: argparse.Namespace) -> int:
    return _evaluate(Study.OCCLUSION.value, args, _config(args))


def cmd_eval_perturb(args: argparse.Namespace) -> int:
    config = _config(args)
    if args.with_occlusion:
        config = replace(config, evaluation=replace(config.evaluation, perturb_with_occlusion=True))
    return _evaluate(Study.PERTURB.value, args, config)


def cmd_report(args: argparse.Namespace) -> int:
    """Tables from the logged trial CSVs only; no experiment is re-run."""
    config = _config(args)
    out = Path(args.out)
    manifest = _manifest("report", args, config)
    tables, intervals, trials = {}, {}, {}
    for study in Study:
        path = out / ArtifactNames.trials(study.value)
        if not path.exists():
            continue
        frame = pd.read_csv(path)
        rows = frame.to_dict("records")
        trials[study.value] = frame
        tables[study.value] = build_table1(rows)
        intervals[study.value] = build_intervals(rows)
        tables[study.value].to_csv(out / ArtifactNames.table1(study.value), index=False)
        intervals[study.value].to_csv(out / ArtifactNames.intervals(study.value), index=False)
        manifest.add_inputs([path])
        manifest.add_artifacts(out, [out / ArtifactNames.table1(study.value), out / ArtifactNames.intervals(study.value)])
        print(f"\n[{study.value}]")
        print(tables[study.value].to_string(index=False))
    if not tables:
        raise ArtifactError(f"no trial logs found in {out}", path=str(out))
    if args.xlsx:
        xlsx = export_to_excel(tables, intervals, trials, out / ArtifactNames.REPORT_XLSX, _seeds(config))
        manifest.add_artifacts(out, [xlsx])
    manifest.write(out)
    return EXIT_OK


# =============================================================================
# PARSER
# =============================================================================


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mila", description="Meta-imitation experiments on the planar simulator")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=DEFAULT_CONFIG_FILE, help="experiment config JSON")
    common.add_argument("--seed", type=int, default=None, help="override every config seed")
    common.add_argument("--out", type=Path, default=Path("runs/default"), help="output directory")
    common.add_argument("--quiet", action="store_true", help="hide progress bars")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--data", type=Path, default=None, help="dataset directory (defaults to --out)")
    inputs.add_argument("--repertoire", type=Path, default=None, help="repertoire JSON (defaults to <out>/repertoire.json)")

    evaluation = argparse.ArgumentParser(add_help=False)
    evaluation.add_argument("--checkpoints", type=Path, default=None, help="directory holding checkpoints/ (defaults to --out)")
    evaluation.add_argument("--methods", nargs="+", choices=METHODS, default=None, help="methods to evaluate")
    evaluation.add_argument("--workers", type=int, default=None, help="trial threads")

    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-demos", parents=[common], help="record expert demonstrations")
    p.add_argument("--count", type=int, default=None, help="number of demonstrations to write")
    p.add_argument("--csv", action="store_true", help="also export t,x,y,vx,vy CSVs")
    p.set_defaults(func=cmd_gen_demos)

    p = sub.add_parser("fit-skills", parents=[common, inputs], help="fit primitives and covariance profiles")
    p.set_defaults(func=cmd_fit_skills)

    p = sub.add_parser("meta-train", parents=[common, inputs], help="train one or more methods")
    p.add_argument("--method", action="append", choices=METHODS, help="repeatable; defaults to mila")
    p.add_argument("--steps", type=int, default=None, help="override meta.n_steps")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("adapt-eval", parents=[common, inputs, evaluation], help="one-shot evaluation")
    p.set_defaults(func=cmd_adapt_eval)

    p = sub.add_parser("eval-occlusion", parents=[common, inputs, evaluation], help="evaluation under occlusion")
    p.set_defaults(func=cmd_eval_occlusion)

    p = sub.add_parser("eval-perturb", parents=[common, inputs, evaluation], help="evaluation under perturbation")
    p.add_argument("--with-occlusion", action="store_true", help="also occlude a patch for the rest of the perturbed subtask")
    p.set_defaults(func=cmd_eval_perturb)

    p = sub.add_parser("report", parents=[common], help="tables from logged trials")
    p.add_argument("--xlsx", action="store_true", help="also write report.xlsx")
    p.set_defaults(func=cmd_report)
    return parser


def configure_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        return handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except ArtifactError as e:
        logger.error(f"Artifact error: {e}")
        return EXIT_IO
    except OSError as e:
        logger.error(f"I/O error: {e}")
        return EXIT_IO
    except MilaError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
