import logging
from typing import Annotated, Optional

import typer
from rich.logging import RichHandler

from app.cli.cli import cli
from app.core.config import settings


def configure_logging(level: Optional[str] = None):
    logging.basicConfig(
        level=(level or settings.LOG_LEVEL).upper(),
        format="[blue]%(name)s[/]  %(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(rich_tracebacks=True, markup=True)],
        force=True
    )

    if settings.EMOTION_CLASSIFIER_URL:
        logging.getLogger(__name__).info(f"External emotion classifier configured at {settings.EMOTION_CLASSIFIER_URL}")


@cli.callback()
def main(log_level: Annotated[Optional[str], typer.Option(help="Logging level (default: CAVG_LOG_LEVEL).")] = None):
    configure_logging(log_level)


app = cli

if __name__ == "__main__":
    app()
