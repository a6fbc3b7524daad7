import hashlib
import hmac

from ..bits import BitString, pack


def _key_bytes(key) -> bytes:
    if isinstance(key, (bytes, bytearray)):
        data = bytes(key)
    else:
        data = pack(key) if len(key) else b""
    if not data:
        raise ValueError("MAC key must be non-empty")
    return data


def mac_tag(key: BitString | bytes, message: bytes) -> bytes:
    """HMAC-SHA256; bit-string keys are packed MSB first."""
    return hmac.new(_key_bytes(key), message, hashlib.sha256).digest()


def verify_tag(key: BitString | bytes, message: bytes, tag: bytes) -> bool:
    return hmac.compare_digest(mac_tag(key, message), tag)
