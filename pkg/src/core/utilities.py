# utilities for this project
import hashlib
import json
from typing import Any


# json loader
def load_json_config(config_path: str):
    try:
        with open(config_path, "r") as f:
            return json.load(f)
    except FileNotFoundError:
        raise FileNotFoundError(f"Config file not found: {config_path}")
    except json.JSONDecodeError as e:
        raise ValueError(f"Invalid JSON in {config_path}: {e}")


def canonical_json(obj: Any) -> bytes:
    """Hash-stable JSON encoding used for transactions, blocks and traces."""
    return json.dumps(obj, sort_keys=True, separators=(',', ':')).encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def pseudonym_order(pseudonym: str) -> bytes:
    # pseudonyms are hex strings; ordering is over their raw bytes
    return bytes.fromhex(pseudonym)


def pseudonym_hash(pseudonym: str) -> str:
    return hashlib.sha256(bytes.fromhex(pseudonym)).hexdigest()
