# app/cli/commands/evaluation.py

import logging
from typing import Annotated, List, Optional

import typer
from rich.table import Table

from app.cli.common import console, format_cell, handle_errors, load_inputs
from app.core.errors import UsageError
from app.repos.run_repo import REPORTS_DIR, run_repo
from app.schemas.scene import SUBSET_TITLES, SplitLabel, SubsetTag
from app.services.dataset_service import split_dataset
from app.services.emotion_service import get_classifier
from app.services.metrics_service import Evaluator

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test", "all")


@handle_errors
def evaluate(checkpoint: Annotated[str, typer.Option(help="Checkpoint file.")],
             data: Annotated[str, typer.Option(help="Dataset file.")],
             subset: Annotated[Optional[SubsetTag], typer.Option(help="Only scenes carrying this subset tag.")] = None,
             split: Annotated[str, typer.Option(help="train, val, test or all.")] = "test",
             longest: Annotated[Optional[List[int]], typer.Option(help="Also report ap50 over the k longest commands.")] = None,
             workers: Annotated[Optional[int], typer.Option(help="Parallel scoring workers.")] = None,
             out: Annotated[Optional[str], typer.Option(help="Report file (default: <run>/reports/eval-<split>.yaml).")] = None):
    """Score a checkpoint on a dataset and print the per-subset ap50 table."""
    if split not in SPLITS:
        raise UsageError(f"--split must be one of {', '.join(SPLITS)}, got '{split}'")
    state, dataset = load_inputs(checkpoint, data)
    if split != "all" and dataset.split_labels is None:
        dataset = split_dataset(dataset, state.config.split, state.config.seed)
    label = None if split == "all" else SplitLabel(split)

    evaluator = Evaluator(state, get_classifier(state.config.emotion_mode), workers=workers)
    report = evaluator.evaluate(dataset, label, subset_filter=subset, longest=longest or ())
    name = f"eval-{split}" + (f"-{subset.value}" if subset else "")
    path = run_repo.write_record(report, out or run_repo.output_path(checkpoint, REPORTS_DIR, name))

    table = Table(title=f"{report.scene_count} scenes, split {report.split}")
    table.add_column("ap50", justify="right")
    table.add_column("mean IoU", justify="right")
    for title in SUBSET_TITLES.values():
        table.add_column(title, justify="right")
    table.add_row(format_cell(report.overall_ap50), format_cell(report.mean_iou),
                  *(format_cell(report.per_subset_ap50.get(tag)) for tag in SUBSET_TITLES))
    console.print(table)
    for k, value in report.longest_k_ap50.items():
        console.print(f"longest {k}: ap50 {format_cell(value)}")
    console.print(f"report {path}")
