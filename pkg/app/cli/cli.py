# app/cli/cli.py

import typer

from app.cli.commands import data, evaluation, inspection, prediction, training

cli = typer.Typer(name="cavg", help="Context-aware visual grounding: generate, train, evaluate, predict, inspect.",
                  no_args_is_help=True, add_completion=False)

cli.command("gen")(data.gen)
cli.command("train")(training.train)
cli.command("eval")(evaluation.evaluate)
cli.command("predict")(prediction.predict)
cli.command("inspect")(inspection.inspect)
