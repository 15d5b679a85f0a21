"""Counter-based splittable random streams.

Every random quantity in the package is keyed by (master seed, role tag,
index) through a SHA-256 derivation, so adding a new consumer never perturbs
existing streams and any stream can be reopened at any index without touching
the others.  Streams are backed by Philox, whose counter can be advanced in
O(1); per-index draws sit at fixed counter offsets, which is what makes exact
replay of the data stream by bootstrap trajectories possible.

Philox's ``advance(delta)`` moves the counter by ``delta`` 128-bit blocks of
four 64-bit outputs, so per-index strides are always rounded up to a multiple
of four uniforms.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

__all__ = [
    "derive_key",
    "stream",
    "uniform_block",
    "uniform_at",
    "normals_from_uniforms",
]

# Philox emits 4 x 64-bit words per counter block; Generator.random() consumes
# exactly one word per double.
_WORDS_PER_BLOCK = 4
_U_FLOOR = 2.0**-54  # keep ndtri finite; hit with probability ~2^-53 per draw


def derive_key(master: int, role: str, index: int = 0) -> int:
    """Derive a 128-bit Philox key from (master, role, index).

    ``master`` may itself be a previously derived key, which is how substreams
    nest (e.g. per-replication data keys, then per-step noise offsets).
    """
    digest = hashlib.sha256(f"{master}|{role}|{index}".encode()).digest()
    return int.from_bytes(digest[:16], "little")


def stream(key: int, block_offset: int = 0) -> np.random.Generator:
    """Open the stream for ``key``, optionally advanced by whole Philox blocks."""
    bitgen = np.random.Philox(key=key)
    if block_offset:
        bitgen.advance(block_offset)
    return np.random.Generator(bitgen)


def _blocks_per_item(uniforms_per_item: int) -> int:
    return -(-uniforms_per_item // _WORDS_PER_BLOCK)


def uniform_block(key: int, n_items: int, uniforms_per_item: int) -> np.ndarray:
    """Uniforms for items 0..n_items-1 in one vectorized pass.

    Row ``i`` is bitwise identical to ``uniform_at(key, i, uniforms_per_item)``.
    """
    bpi = _blocks_per_item(uniforms_per_item)
    width = bpi * _WORDS_PER_BLOCK
    u = stream(key).random(n_items * width).reshape(n_items, width)
    return u[:, :uniforms_per_item]


def uniform_at(key: int, item_index: int, uniforms_per_item: int) -> np.ndarray:
    """Uniforms for a single item, independent of any other item's draws."""
    bpi = _blocks_per_item(uniforms_per_item)
    gen = stream(key, block_offset=item_index * bpi)
    return gen.random(bpi * _WORDS_PER_BLOCK)[:uniforms_per_item]


def normals_from_uniforms(u: np.ndarray) -> np.ndarray:
    """Standard normals via the inverse CDF (keeps counter alignment exact)."""
    return ndtri(np.maximum(u, _U_FLOOR))
