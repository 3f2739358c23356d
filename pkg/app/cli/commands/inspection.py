# app/cli/commands/inspection.py

from typing import Annotated, Optional

import typer
from rich.table import Table

from app.cli.common import console, find_scene, format_cell, handle_errors, load_inputs
from app.repos.run_repo import DUMPS_DIR, run_repo
from app.services.emotion_service import get_classifier
from app.services.inspect_service import dump_layer_attention


@handle_errors
def inspect(checkpoint: Annotated[str, typer.Option(help="Checkpoint file.")],
            data: Annotated[str, typer.Option(help="Dataset file.")],
            scene: Annotated[str, typer.Option(help="Scene id.")],
            command: Annotated[Optional[str], typer.Option(help="Command text (default: the scene's own command).")] = None,
            out: Annotated[Optional[str], typer.Option(help="Dump file (default: <run>/dumps/<scene>.yaml).")] = None):
    """Dump RSD layer weights and cross-modal attention maps for one scene."""
    state, dataset = load_inputs(checkpoint, data)
    record = find_scene(dataset, scene)
    dump = dump_layer_attention(state, record, command, get_classifier(state.config.emotion_mode),
                                dataset_digest=dataset.digest)
    path = run_repo.write_record(dump, out or run_repo.output_path(checkpoint, DUMPS_DIR, record.id))

    table = Table(title=f"{record.id}: mean RSD weight per decoder layer")
    for column in ("layer", "group", "mean weight"):
        table.add_column(column, justify="right")
    for row in dump.plot_table:
        table.add_row(str(row.layer_index), row.group, format_cell(row.mean_weight))
    console.print(table)
    console.print(f"dump {path}")
