"""Minimal reader for static ABI words.

Detectors decode only fixed 32-byte slots plus the occasional dynamic
``bytes`` argument, so a full ABI codec is unnecessary here. Every reader
returns ``None`` instead of raising when the payload is too short.
"""

from __future__ import annotations

WORD = 32
_ADDRESS_LIMIT = 1 << 160


def word(data: bytes, n: int) -> int | None:
    """Return the ``n``-th 32-byte word of ``data`` as an unsigned int."""
    start = n * WORD
    if n < 0 or start + WORD > len(data):
        return None
    return int.from_bytes(data[start:start + WORD], "big")


def signed_word(data: bytes, n: int) -> int | None:
    value = word(data, n)
    if value is None:
        return None
    return value - (1 << 256) if value >> 255 else value


def address_from_int(value: int | None) -> str | None:
    """Render a word as an address, or ``None`` if the top 12 bytes are dirty."""
    if value is None or value < 0 or value >= _ADDRESS_LIMIT:
        return None
    return "0x" + value.to_bytes(20, "big").hex()


def address_word(data: bytes, n: int) -> str | None:
    return address_from_int(word(data, n))


def asset_from_int(value: int | None) -> str | None:
    """Asset identifiers are addresses when they fit, else the raw 32-byte key.

    MakerDAO ilks and Synthetix currency keys are bytes32 values, not
    token addresses.
    """
    if value is None:
        return None
    if value < _ADDRESS_LIMIT:
        return "0x" + value.to_bytes(20, "big").hex()
    return "0x" + value.to_bytes(32, "big").hex()


def dynamic_bytes(data: bytes, n: int) -> bytes | None:
    """Decode a dynamic ``bytes`` argument whose head offset sits in word ``n``."""
    offset = word(data, n)
    if offset is None or offset % WORD or offset + WORD > len(data):
        return None
    length = int.from_bytes(data[offset:offset + WORD], "big")
    start = offset + WORD
    if start + length > len(data):
        return None
    return data[start:start + length]


def topic_int(topic: str) -> int:
    return int(topic, 16)
