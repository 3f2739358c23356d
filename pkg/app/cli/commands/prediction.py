# app/cli/commands/prediction.py

from typing import Annotated, Optional

import typer
from rich.table import Table

from app.cli.common import console, find_scene, handle_errors, load_inputs
from app.core.errors import UsageError
from app.repos.checkpoint_repo import checkpoint_repo
from app.repos.run_repo import PREDICTIONS_DIR, run_repo
from app.schemas.scene import SceneRecord
from app.services.emotion_service import get_classifier
from app.services.prediction_service import PredictionService


@handle_errors
def predict(checkpoint: Annotated[str, typer.Option(help="Checkpoint file.")],
            data: Annotated[Optional[str], typer.Option(help="Dataset file holding the scene.")] = None,
            scene: Annotated[Optional[str], typer.Option(help="Scene id within --data.")] = None,
            scene_file: Annotated[Optional[str], typer.Option(help="Single scene record YAML instead of --data/--scene.")] = None,
            command: Annotated[Optional[str], typer.Option(help="Command text (default: the scene's own command).")] = None,
            k: Annotated[int, typer.Option(help="Number of top regions to report.")] = 1,
            out: Annotated[Optional[str], typer.Option(help="Prediction file (default: <run>/predictions/<scene>.yaml).")] = None):
    """Rank a scene's regions for a command."""
    if scene_file:
        state = checkpoint_repo.load(checkpoint)
        record = run_repo.read_record(scene_file, SceneRecord)
        dataset_digest = None
    elif data and scene:
        state, dataset = load_inputs(checkpoint, data)
        record = find_scene(dataset, scene)
        dataset_digest = dataset.digest
    else:
        raise UsageError("give --scene-file, or --data with --scene")

    service = PredictionService(state, get_classifier(state.config.emotion_mode))
    prediction = service.predict(record, command, k, dataset_digest)
    path = run_repo.write_record(prediction, out or run_repo.output_path(checkpoint, PREDICTIONS_DIR, record.id))

    table = Table(title=f"{record.id}: \"{prediction.command}\" ({prediction.emotion.value})")
    for column in ("rank", "region", "credibility", "box"):
        table.add_column(column, justify="right")
    for rank, region in enumerate(prediction.top_k, start=1):
        box = ", ".join(f"{v:.1f}" for v in record.regions[region].box)
        table.add_row(str(rank), str(region), f"{prediction.credibility[region]:.4f}", f"[{box}]")
    console.print(table)
    console.print(f"selected box {prediction.selected_box}")
    console.print(f"prediction {path}")
