# app/cli/common.py

import functools
import logging
from typing import Callable, Optional, TypeVar

import typer
from rich.console import Console

from app.core.errors import CavgError, UsageError
from app.models.state import ModelState
from app.repos.checkpoint_repo import checkpoint_repo
from app.repos.dataset_repo import dataset_repo
from app.schemas.scene import Dataset, SceneRecord

logger = logging.getLogger(__name__)

console = Console()
err_console = Console(stderr=True)

IO_EXIT_CODE = 2

F = TypeVar("F", bound=Callable)


def handle_errors(func: F) -> F:
    """Map raised errors onto the exit-code contract: 1 validation, 2 I/O, 3 numeric."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except CavgError as e:
            logger.debug(f"{type(e).__name__} in {func.__name__}", exc_info=True)
            err_console.print(f"[red]error:[/] {e}", markup=True, highlight=False)
            raise typer.Exit(code=e.exit_code)
        except OSError as e:
            err_console.print(f"[red]I/O error:[/] {e}", markup=True, highlight=False)
            raise typer.Exit(code=IO_EXIT_CODE)
    return wrapper  # type: ignore[return-value]


def load_inputs(checkpoint: str, data: str) -> tuple[ModelState, Dataset]:
    return checkpoint_repo.load(checkpoint), dataset_repo.load(data)


def find_scene(dataset: Dataset, scene_id: str) -> SceneRecord:
    index = dataset.find(scene_id)
    if index is None:
        raise UsageError(f"scene '{scene_id}' is not in the dataset")
    return dataset.scenes[index]


def format_cell(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.3f}"
