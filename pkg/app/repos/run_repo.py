import os
import logging
from typing import Optional, Type, TypeVar

import yaml
from pydantic import BaseModel, ValidationError

from app.core.config import settings
from app.core.errors import SchemaError, UsageError, format_location
from app.models.encoders import Vocabulary
from app.repos.config_repo import config_repo
from app.repos.dataset_repo import SafeDumper, SafeLoader
from app.schemas.run_config import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.cfg"
VOCABULARY_FILE = "vocab.txt"
CHECKPOINT_FILE = "checkpoint.yaml"
TRAIN_LOG_FILE = "train_log.jsonl"
REPORTS_DIR = "reports"
PREDICTIONS_DIR = "predictions"
DUMPS_DIR = "dumps"

Record = TypeVar("Record", bound=BaseModel)


class RunRepo:
    """Run directory layout: config snapshot, vocabulary, checkpoint, train log and per-command outputs."""

    def __init__(self, root: Optional[str] = None):
        self.root = root or settings.RUN_ROOT

    def resolve(self, path: Optional[str], name: str) -> str:
        return path or os.path.join(self.root, name)

    def create(self, run_dir: str) -> str:
        '''
        Create a run directory for a new training run.
        Raises:
            UsageError: If the directory already holds a training log.
            IOError: If the directory cannot be created.
        '''
        if os.path.exists(os.path.join(run_dir, TRAIN_LOG_FILE)):
            raise UsageError(f"run directory '{run_dir}' already holds a training log; choose another --out")
        try:
            for sub in (REPORTS_DIR, PREDICTIONS_DIR, DUMPS_DIR):
                os.makedirs(os.path.join(run_dir, sub), exist_ok=True)
        except OSError as e:
            raise IOError(f"Error creating run directory '{run_dir}': {e}")
        return run_dir

    def checkpoint_path(self, run_dir: str) -> str:
        return os.path.join(run_dir, CHECKPOINT_FILE)

    def output_path(self, checkpoint_path: str, kind: str, name: str) -> str:
        """Default location for an artifact derived from a checkpoint: `<run>/<kind>/<name>.yaml`."""
        return os.path.join(os.path.dirname(os.path.abspath(checkpoint_path)), kind, f"{name}.yaml")

    def write_config(self, run_dir: str, config: TrainConfig) -> str:
        path = os.path.join(run_dir, CONFIG_FILE)
        config_repo.save(config, path)
        return path

    def write_vocabulary(self, run_dir: str, vocabulary: Vocabulary) -> str:
        path = os.path.join(run_dir, VOCABULARY_FILE)
        try:
            with open(path, 'w', encoding='utf-8') as file:
                file.writelines(f"{token}\n" for token in vocabulary.tokens)
        except OSError as e:
            raise IOError(f"Error saving vocabulary '{path}': {e}")
        return path

    def load_vocabulary(self, path: str) -> Vocabulary:
        if not os.path.exists(path):
            raise FileNotFoundError(f"Vocabulary '{path}' does not exist.")
        try:
            with open(path, 'r', encoding='utf-8') as file:
                return Vocabulary([line.rstrip("\n") for line in file])
        except UnicodeDecodeError as e:
            raise IOError(f"Error reading vocabulary '{path}': {e}")

    def append_log(self, run_dir: str, record: BaseModel) -> None:
        path = os.path.join(run_dir, TRAIN_LOG_FILE)
        try:
            with open(path, 'a', encoding='utf-8') as file:
                file.write(record.model_dump_json() + "\n")
        except OSError as e:
            raise IOError(f"Error appending to train log '{path}': {e}")

    def read_log_lines(self, run_dir: str) -> list[str]:
        path = os.path.join(run_dir, TRAIN_LOG_FILE)
        if not os.path.exists(path):
            raise FileNotFoundError(f"Train log '{path}' does not exist.")
        with open(path, 'r', encoding='utf-8') as file:
            return [line.rstrip("\n") for line in file if line.strip()]

    def write_record(self, record: BaseModel, path: str) -> str:
        '''
        Write a pydantic record (report, prediction, dump) as YAML.
        Raises:
            IOError: If the file cannot be written.
        '''
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(path, 'w', encoding='utf-8') as file:
                yaml.dump(record.model_dump(mode="json"), file, Dumper=SafeDumper, sort_keys=False,
                          allow_unicode=True, width=120)
        except OSError as e:
            raise IOError(f"Error saving '{path}': {e}")
        logger.info(f"Wrote {type(record).__name__} to {path}")
        return path

    def read_record(self, path: str, schema: Type[Record]) -> Record:
        if not os.path.exists(path):
            raise FileNotFoundError(f"File '{path}' does not exist.")
        try:
            with open(path, 'r', encoding='utf-8') as file:
                document = yaml.load(file, Loader=SafeLoader)
        except (UnicodeDecodeError, yaml.YAMLError) as e:
            raise IOError(f"Error reading '{path}': {e}")
        try:
            return schema.model_validate(document)
        except ValidationError as e:
            first = e.errors()[0]
            raise SchemaError(first["msg"], location=format_location(first["loc"])) from e


run_repo = RunRepo()
