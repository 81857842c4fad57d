"""Counter-based random streams for reproducible parallel Monte Carlo.

Each replica draws from a Philox generator whose 128-bit key is formed
directly from (master_seed, replica_index, tag).  Because the key is a pure
function of the triple, streams can be created in any order by any worker
and always produce the same variates: no sequential jumping, no shared
state, results independent of scheduling.

Variates are served from per-kind block buffers.  Refill sizes follow a
fixed geometric schedule, so the value stream per kind depends only on how
many variates have been consumed, not on how the takes were batched.  Both
the NumPy and the compiled step kernels consume through this class, which
is what makes them bit-identical.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_MASK64 = (1 << 64) - 1
_FIRST_BLOCK = 256
_MAX_BLOCK = 1 << 16

# Substream tags.  Distinct tags give statistically independent streams for
# the same (master_seed, replica).
TAG_MAIN = 0
TAG_KILL_SAMPLING = 1
TAG_SYNTHETIC = 2


def philox_key(master_seed: int, replica: int, tag: int) -> np.ndarray:
    """128-bit Philox key from master_seed || replica || tag, as the
    little-endian u64 pair numpy expects (identical stream to the single
    128-bit integer (master_seed << 64) | (replica << 16) | tag)."""
    if not 0 <= master_seed <= _MASK64:
        raise ConfigError(f"master_seed must be a u64, got {master_seed}")
    if not 0 <= replica < (1 << 48):
        raise ConfigError(f"replica index out of range: {replica}")
    if not 0 <= tag < (1 << 16):
        raise ConfigError(f"stream tag out of range: {tag}")
    return np.array([(replica << 16) | tag, master_seed], dtype=np.uint64)


class RngStream:
    """One replica's buffered random stream.

    Attributes nbuf/ebuf/ubuf and the matching cursors are read directly by
    the compiled kernel; everything else should go through normals(),
    exponentials() and uniforms().
    """

    __slots__ = (
        "master_seed", "replica", "tag", "_gen",
        "nbuf", "ncur", "_nblock",
        "ebuf", "ecur", "_eblock",
        "ubuf", "ucur", "_ublock",
    )

    def __init__(self, master_seed: int, replica: int = 0, tag: int = TAG_MAIN):
        self.master_seed = int(master_seed)
        self.replica = int(replica)
        self.tag = int(tag)
        key = philox_key(self.master_seed, self.replica, self.tag)
        self._gen = np.random.Generator(_keyed_philox(key))
        self.nbuf = _EMPTY
        self.ncur = 0
        self._nblock = _FIRST_BLOCK
        self.ebuf = _EMPTY
        self.ecur = 0
        self._eblock = _FIRST_BLOCK
        self.ubuf = _EMPTY
        self.ucur = 0
        self._ublock = _FIRST_BLOCK

    def substream(self, tag: int) -> "RngStream":
        """Independent stream for the same replica (e.g. kill-record sampling)."""
        return RngStream(self.master_seed, self.replica, tag)

    # -- refills (also called from the compiled kernel) ------------------

    def refill_normals(self) -> None:
        self.nbuf = self._gen.standard_normal(self._nblock)
        self.ncur = 0
        self._nblock = min(self._nblock * 2, _MAX_BLOCK)

    def refill_exponentials(self) -> None:
        self.ebuf = self._gen.standard_exponential(self._eblock)
        self.ecur = 0
        self._eblock = min(self._eblock * 2, _MAX_BLOCK)

    def refill_uniforms(self) -> None:
        self.ubuf = self._gen.random(self._ublock)
        self.ucur = 0
        self._ublock = min(self._ublock * 2, _MAX_BLOCK)

    # -- takes ------------------------------------------------------------

    def normals(self, k: int) -> np.ndarray:
        """Next k standard normals.  Returned array may be a buffer view;
        consume it before the next take."""
        if self.ncur + k <= self.nbuf.shape[0]:
            out = self.nbuf[self.ncur:self.ncur + k]
            self.ncur += k
            return out
        return self._take_slow(k, "n")

    def exponentials(self, k: int) -> np.ndarray:
        """Next k standard (rate-1) exponentials."""
        if self.ecur + k <= self.ebuf.shape[0]:
            out = self.ebuf[self.ecur:self.ecur + k]
            self.ecur += k
            return out
        return self._take_slow(k, "e")

    def uniforms(self, k: int) -> np.ndarray:
        """Next k uniforms on [0, 1)."""
        if self.ucur + k <= self.ubuf.shape[0]:
            out = self.ubuf[self.ucur:self.ucur + k]
            self.ucur += k
            return out
        return self._take_slow(k, "u")

    def _take_slow(self, k: int, kind: str) -> np.ndarray:
        buf, cur, refill = {
            "n": (lambda: self.nbuf, lambda: self.ncur, self.refill_normals),
            "e": (lambda: self.ebuf, lambda: self.ecur, self.refill_exponentials),
            "u": (lambda: self.ubuf, lambda: self.ucur, self.refill_uniforms),
        }[kind]
        out = np.empty(k)
        filled = 0
        while filled < k:
            avail = buf().shape[0] - cur()
            if avail == 0:
                refill()
                continue
            take = min(avail, k - filled)
            c = cur()
            out[filled:filled + take] = buf()[c:c + take]
            if kind == "n":
                self.ncur += take
            elif kind == "e":
                self.ecur += take
            else:
                self.ucur += take
            filled += take
        return out


_EMPTY = np.empty(0)


def _keyed_philox(key: np.ndarray) -> np.random.Philox:
    """Philox with the given 128-bit key and a zeroed counter.

    Equivalent to np.random.Philox(key=key) but rekeys through the state
    dict after a fixed-seed construction: passing key= still makes numpy
    draw OS entropy for an unused SeedSequence, which dominates stream
    construction cost at our replica counts.
    """
    bg = np.random.Philox(seed=0)
    st = bg.state
    st["state"]["counter"][:] = 0
    st["state"]["key"][:] = key
    st["buffer_pos"] = 4          # force regeneration on first draw
    st["has_uint32"] = 0
    st["uinteger"] = 0
    bg.state = st
    return bg
