# app/cli/commands/training.py

import logging
import os
from typing import Annotated, List, Optional

import typer
from rich.table import Table

from app.cli.common import console, format_cell, handle_errors
from app.core.digest import digest_object
from app.models.state import ModelState
from app.repos.checkpoint_repo import checkpoint_repo
from app.repos.config_repo import config_repo
from app.repos.dataset_repo import dataset_repo
from app.repos.run_repo import REPORTS_DIR, TRAIN_LOG_FILE, run_repo
from app.schemas.results import ReducedDataReport, TrainLog
from app.schemas.scene import SUBSET_TITLES
from app.services.trainer_service import Trainer, run_reduced_data_suite

logger = logging.getLogger(__name__)


def _overrides(**flags) -> dict[str, str]:
    keys = {"batch_size": "batch_size", "lr": "optim.lr", "epochs": "epochs", "seed": "seed", "fraction": "fraction"}
    return {keys[name]: str(value) for name, value in flags.items() if value is not None}


def _print_suite(report: ReducedDataReport) -> None:
    table = Table(title=f"reduced-data suite (test digest {report.test_digest[:12]})")
    table.add_column("fraction", justify="right")
    table.add_column("train scenes", justify="right")
    table.add_column("ap50", justify="right")
    for title in SUBSET_TITLES.values():
        table.add_column(title, justify="right")
    for run in report.runs:
        if run.report is None:
            table.add_row(f"{run.fraction:g}", str(run.train_size), f"[red]{run.error}[/]")
            continue
        table.add_row(f"{run.fraction:g}", str(run.train_size), format_cell(run.report.overall_ap50),
                      *(format_cell(run.report.per_subset_ap50.get(tag)) for tag in SUBSET_TITLES))
    console.print(table)


def _save_run(run_dir: str, state: ModelState) -> str:
    run_repo.write_vocabulary(run_dir, state.vocabulary)
    return checkpoint_repo.save(state, run_repo.checkpoint_path(run_dir))


@handle_errors
def train(data: Annotated[str, typer.Option(help="Dataset file.")],
          config: Annotated[Optional[str], typer.Option(help="Run config file (key=value lines).")] = None,
          preset: Annotated[str, typer.Option(help="Base preset: desk, small or full.")] = "desk",
          set_: Annotated[Optional[List[str]], typer.Option("--set", help="Override one key, e.g. model.d=32.")] = None,
          fraction: Annotated[Optional[float], typer.Option(help="Share of the training split to use.")] = None,
          batch_size: Annotated[Optional[int], typer.Option()] = None,
          lr: Annotated[Optional[float], typer.Option()] = None,
          epochs: Annotated[Optional[int], typer.Option()] = None,
          seed: Annotated[Optional[int], typer.Option()] = None,
          out: Annotated[Optional[str], typer.Option(help="Run directory (default: run root / run-<config digest>).")] = None,
          suite: Annotated[bool, typer.Option(help="Run the reduced-data suite at fractions 0.5, 0.75 and 1.0.")] = False):
    """Train a model and write a run directory."""
    run_config = config_repo.resolve(config, preset,
                                     overrides=_overrides(batch_size=batch_size, lr=lr, epochs=epochs, seed=seed,
                                                          fraction=fraction),
                                     assignments=set_)
    dataset = dataset_repo.load(data)
    flat = config_repo.to_flat(run_config)
    run_dir = run_repo.create(run_repo.resolve(out, f"run-{digest_object(flat)[:12]}"))
    run_repo.write_config(run_dir, run_config)

    if suite:
        def save_fraction(fraction: float, state: ModelState, log: TrainLog) -> None:
            sub_dir = run_repo.create(os.path.join(run_dir, f"fraction-{fraction:g}"))
            run_repo.write_config(sub_dir, state.config)
            for record in [log.header, *log.events]:
                run_repo.append_log(sub_dir, record)
            _save_run(sub_dir, state)

        report = run_reduced_data_suite(run_config, dataset, on_state=save_fraction)
        run_repo.write_record(report, os.path.join(run_dir, REPORTS_DIR, "reduced_data.yaml"))
        _print_suite(report)
        return

    trainer = Trainer(run_config, sink=lambda record: run_repo.append_log(run_dir, record))
    state, log = trainer.train(dataset)
    digest = _save_run(run_dir, state)

    epochs_table = Table(title=f"{run_dir}")
    for column in ("epoch", "train ap50", "val ap50", "best"):
        epochs_table.add_column(column, justify="right")
    for record in log.epochs:
        epochs_table.add_row(str(record.epoch), format_cell(record.train_ap50), format_cell(record.val_ap50),
                             "*" if record.best else "")
    console.print(epochs_table)
    console.print(f"checkpoint {run_repo.checkpoint_path(run_dir)} ({digest[:12]}), log {TRAIN_LOG_FILE}")
