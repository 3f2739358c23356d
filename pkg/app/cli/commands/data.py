# app/cli/commands/data.py

import logging
from collections import Counter
from typing import Annotated, Optional

import typer
from rich.table import Table

from app.cli.common import console, handle_errors
from app.repos.config_repo import config_repo
from app.repos.dataset_repo import dataset_repo
from app.repos.run_repo import run_repo
from app.schemas.synthetic import GeneratorParams
from app.services.dataset_service import tag_subsets
from app.services.synthetic_service import SyntheticSceneGenerator

logger = logging.getLogger(__name__)


@handle_errors
def gen(seed: Annotated[int, typer.Option(help="Corpus seed; scene i uses stream (seed, scene, i).")] = 0,
        count: Annotated[int, typer.Option(help="Number of scenes.")] = 64,
        out: Annotated[str, typer.Option(help="Dataset file to write.")] = "data/synthetic.yaml",
        params: Annotated[Optional[str], typer.Option(help="GeneratorParams YAML file.")] = None,
        preset: Annotated[Optional[str], typer.Option(help="Size scenes for a model preset: desk, small or full.")] = None,
        params_out: Annotated[Optional[str], typer.Option(help="Write the effective GeneratorParams here.")] = None,
        emotion_templates: Annotated[bool, typer.Option(help="Mix urgent, commanding and informative phrasings.")] = False,
        overlap_rate: Annotated[Optional[float], typer.Option(help="Share of scenes with a distractor overlapping the target.")] = None):
    """Generate a synthetic planted-correspondence corpus."""
    if params:
        generator_params = run_repo.read_record(params, GeneratorParams)
    elif preset:
        generator_params = GeneratorParams.for_model(config_repo.resolve(preset=preset).model)
    else:
        generator_params = GeneratorParams()
    updates = {"emotion_templates": emotion_templates or generator_params.emotion_templates}
    if overlap_rate is not None:
        updates["overlap_rate"] = overlap_rate
    generator_params = GeneratorParams.model_validate({**generator_params.model_dump(), **updates})

    dataset = SyntheticSceneGenerator(generator_params).generate_dataset(seed, count)
    digest = dataset_repo.save(dataset, out)
    if params_out:
        run_repo.write_record(generator_params, params_out)

    tags = Counter(tag.value for scene_tags in tag_subsets(dataset) for tag in scene_tags)
    table = Table(title=f"{count} scenes -> {out}")
    table.add_column("subset")
    table.add_column("scenes", justify="right")
    for tag, n in sorted(tags.items()):
        table.add_row(tag, str(n))
    console.print(table)
    console.print(f"digest {digest}")
