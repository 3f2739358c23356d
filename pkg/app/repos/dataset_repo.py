import os
import logging
from typing import Any, Dict

import yaml
from pydantic import ValidationError

from app.core.digest import digest_bytes
from app.core.errors import SchemaError, format_location
from app.schemas.scene import Dataset

logger = logging.getLogger(__name__)

try:
    from yaml import CSafeDumper as SafeDumper, CSafeLoader as SafeLoader
except ImportError:
    from yaml import SafeDumper, SafeLoader


class DatasetRepo:
    def parse(self, document: Any, source: str = "<dataset>") -> Dataset:
        if not isinstance(document, dict):
            raise SchemaError(f"{source} is not a dataset mapping")
        try:
            return Dataset.model_validate(document)
        except ValidationError as e:
            first = e.errors()[0]
            raise SchemaError(first["msg"], location=format_location(first["loc"])) from e

    def dump(self, dataset: Dataset) -> str:
        document: Dict[str, Any] = dataset.model_dump(mode="json", exclude_none=True)
        return yaml.dump(document, Dumper=SafeDumper, default_flow_style=None, sort_keys=False,
                         allow_unicode=True, width=120)

    def load(self, path: str) -> Dataset:
        '''
        Load and validate a dataset file.
        Raises:
            FileNotFoundError: If the file does not exist.
            IOError: If the file cannot be read or is not YAML.
            SchemaError: If a record violates the schema; the message names its location.
        '''
        if not os.path.exists(path):
            raise FileNotFoundError(f"Dataset '{path}' does not exist.")
        try:
            with open(path, 'r', encoding='utf-8') as file:
                document = yaml.load(file, Loader=SafeLoader)
        except (OSError, UnicodeDecodeError, yaml.YAMLError) as e:
            raise IOError(f"Error reading dataset '{path}': {e}")
        dataset = self.parse(document, source=path)
        logger.info(f"Loaded {len(dataset.scenes)} scenes from {path}")
        return dataset

    def save(self, dataset: Dataset, path: str) -> str:
        '''
        Write a dataset file and return the sha256 digest of its bytes.
        '''
        payload = self.dump(dataset).encode("utf-8")
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(path, 'wb') as file:
                file.write(payload)
        except OSError as e:
            raise IOError(f"Error saving dataset '{path}': {e}")
        return digest_bytes(payload)


dataset_repo = DatasetRepo()
