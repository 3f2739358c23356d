import base64
import os
import logging
from typing import Any, Dict, Mapping

import numpy as np
import yaml

from app.core.digest import digest_bytes, digest_object
from app.core.errors import SchemaError
from app.engine.optim import OptimizerState
from app.models.encoders import Vocabulary
from app.models.state import ModelState
from app.repos.config_repo import config_repo
from app.repos.dataset_repo import SafeDumper, SafeLoader

logger = logging.getLogger(__name__)

FORMAT = "cavg-checkpoint"
VERSION = 1
_DTYPE = np.dtype("<f8")


def _encode_array(array: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(array, dtype=_DTYPE).tobytes()).decode("ascii")


def _decode_array(data: str, shape: list, location: str) -> np.ndarray:
    try:
        values = np.frombuffer(base64.b64decode(data, validate=True), dtype=_DTYPE)
        return values.reshape(shape).astype(np.float64)
    except (ValueError, TypeError) as e:
        raise SchemaError(f"cannot decode array of shape {shape}: {e}", location=location) from e


def _require(document: Mapping[str, Any], key: str, location: str = "") -> Any:
    if key not in document:
        raise SchemaError("missing field", location=f"{location}{key}")
    return document[key]


class CheckpointRepo:
    """ModelState as a versioned YAML document with base64 little-endian float64 arrays."""

    def dump(self, state: ModelState) -> str:
        flat = config_repo.to_flat(state.config)
        document: Dict[str, Any] = {
            "format": FORMAT,
            "version": VERSION,
            "config": flat,
            "config_digest": digest_object(flat),
            "dataset_digest": state.dataset_digest,
            "vocabulary": list(state.vocabulary.tokens),
            "parameters": {name: {"shape": list(array.shape), "data": _encode_array(array)}
                           for name, array in state.model.state_arrays().items()},
        }
        if state.optimizer is not None:
            opt = state.optimizer
            document["optimizer"] = {
                "step": opt.step, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                "weight_decay": opt.weight_decay,
                "moments": {name: {"shape": list(m.shape), "m": _encode_array(m),
                                   "v": _encode_array(opt.second_moment[name])}
                            for name, m in sorted(opt.first_moment.items())},
            }
        return yaml.dump(document, Dumper=SafeDumper, sort_keys=False, width=1 << 30)

    def parse(self, document: Any, digest: str | None = None) -> ModelState:
        if not isinstance(document, dict) or document.get("format") != FORMAT:
            raise SchemaError(f"not a {FORMAT} document", location="format")
        if _require(document, "version") != VERSION:
            raise SchemaError(f"unsupported version {document['version']}", location="version")
        config = config_repo.from_flat({str(k): str(v) for k, v in _require(document, "config").items()})
        vocabulary = Vocabulary(_require(document, "vocabulary"))
        state = ModelState.initialize(config, vocabulary, dataset_digest=document.get("dataset_digest"))

        arrays = {}
        for name, entry in _require(document, "parameters").items():
            location = f"parameters.{name}"
            arrays[name] = _decode_array(_require(entry, "data", location + "."),
                                         _require(entry, "shape", location + "."), location)
        state.model.load_state_arrays(arrays)
        state.model.eval()

        if "optimizer" in document:
            opt = document["optimizer"]
            state.optimizer = OptimizerState(beta1=opt["beta1"], beta2=opt["beta2"], eps=opt["eps"],
                                             weight_decay=opt["weight_decay"], step=opt["step"])
            for name, entry in opt.get("moments", {}).items():
                location = f"optimizer.moments.{name}"
                state.optimizer.first_moment[name] = _decode_array(entry["m"], entry["shape"], location + ".m")
                state.optimizer.second_moment[name] = _decode_array(entry["v"], entry["shape"], location + ".v")
        state.digest = digest
        return state

    def save(self, state: ModelState, path: str) -> str:
        '''
        Write a checkpoint, set `state.digest` and return it.
        Raises:
            IOError: If the file cannot be written.
        '''
        payload = self.dump(state).encode("utf-8")
        try:
            parent = os.path.dirname(path)
            if parent:
                os.makedirs(parent, exist_ok=True)
            with open(path, 'wb') as file:
                file.write(payload)
        except OSError as e:
            raise IOError(f"Error saving checkpoint '{path}': {e}")
        state.digest = digest_bytes(payload)
        logger.info(f"Checkpoint written to {path} ({state.digest[:12]})")
        return state.digest

    def load(self, path: str) -> ModelState:
        '''
        Load a checkpoint; the returned state carries the sha256 digest of the file.
        Raises:
            FileNotFoundError: If the checkpoint does not exist.
            IOError: If the file cannot be read or is not YAML.
            SchemaError: If the document is malformed or parameters do not fit the config.
        '''
        if not os.path.exists(path):
            raise FileNotFoundError(f"Checkpoint '{path}' does not exist.")
        try:
            with open(path, 'rb') as file:
                payload = file.read()
            document = yaml.load(payload.decode("utf-8"), Loader=SafeLoader)
        except (OSError, UnicodeDecodeError, yaml.YAMLError) as e:
            raise IOError(f"Error reading checkpoint '{path}': {e}")
        return self.parse(document, digest=digest_bytes(payload))


checkpoint_repo = CheckpointRepo()
