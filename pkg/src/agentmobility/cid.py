"""Code identifiers: SHA-256 digests of agent code, lowercase hex."""

import hashlib
import re

_CID_RE = re.compile(r"[0-9a-f]{64}")


def compute_cid(code: bytes) -> str:
    return hashlib.sha256(code).hexdigest()


def is_cid(value: object) -> bool:
    return isinstance(value, str) and _CID_RE.fullmatch(value) is not None
