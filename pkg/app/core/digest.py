import hashlib
import json
from typing import Any


def digest_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def digest_object(obj: Any) -> str:
    """Digest of a JSON-serializable object in canonical (sorted, compact) form."""
    canonical = json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return digest_bytes(canonical.encode("utf-8"))
