"""Carry-less 32-bit range coder with 16-bit probability tables.

Two model families are supported:

* explicit integer CDF tables (:class:`CdfTable`), used for the factorized
  hyper-latent prior;
* discretized Gaussians N(mu, sigma) evaluated per symbol, used for the latent.

Every table reserves a final one-slot *tail* interval. A symbol outside the
table's support is coded as the tail symbol followed by its offset from the
start of the support, written as an Elias-gamma code of the zig-zag mapped
value with each bit coded at probability 1/2.

The encoder finishes with the shortest byte string that pins the final
interval; the decoder reads missing trailing bytes as zeros.

The Gaussian support is ``round(mu) +- max(ceil(8 sigma), 16)``. Its cumulative
frequencies are computed pointwise, so the encoder and the decoder evaluate
exactly the same float expressions and never materialize a table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

PRECISION = 16
TOTAL = 1 << PRECISION
TAIL_SIGMAS = 8.0
MIN_HALF_WIDTH = 16  # narrow Gaussians still get an explicit slot for |k - mu| <= 16
SIGMA_MIN = 0.04
MAX_SYMBOL = (1 << 31) - 1

_TOP = 1 << 24
_BOT = 1 << 16
_MASK = 0xFFFFFFFF
_PHANTOM = 4
_INV_SQRT2 = 0.7071067811865476

# decoder status codes
_OK = 0
_TRUNCATED = 1
_BAD_FREQ = 2


class CodingError(ValueError):
    """Raised when symbols cannot be coded under the supplied model."""


class DecodeError(ValueError):
    """Raised for corrupt or truncated streams."""


@dataclass
class CdfTable:
    """Quantized CDF: ``cdf[j]`` is the cumulative count before symbol ``offset + j``.

    ``cdf`` has ``n + 2`` entries for ``n`` regular symbols plus the tail
    symbol (index ``n``); ``cdf[0] == 0`` and ``cdf[-1] == TOTAL``.
    """

    cdf: np.ndarray
    offset: int

    def __post_init__(self):
        cdf = np.asarray(self.cdf, dtype=np.int64)
        if cdf.ndim != 1 or len(cdf) < 3:
            raise CodingError("a CDF table needs at least one regular symbol plus the tail")
        if cdf[0] != 0 or cdf[-1] != TOTAL or np.any(np.diff(cdf) <= 0):
            raise CodingError("CDF must be strictly increasing from 0 to 2**16")
        self.cdf = cdf

    @property
    def tail_index(self) -> int:
        return len(self.cdf) - 2

    @property
    def num_symbols(self) -> int:
        return len(self.cdf) - 2

    def probabilities(self) -> np.ndarray:
        """Model probability of each regular symbol and (last) the tail."""
        return np.diff(self.cdf) / TOTAL

    def information(self, symbol: int) -> float:
        """Bits the coder spends on ``symbol`` (escape bits included)."""
        j = int(symbol) - self.offset
        p = self.probabilities()
        if 0 <= j < self.num_symbols:
            return -math.log2(p[j])
        return -math.log2(p[-1]) + escape_bits(j)


def escape_bits(value: int) -> int:
    u = (2 * value if value >= 0 else -2 * value - 1) + 1
    return 2 * (u.bit_length() - 1) + 1


def quantize_pmf(pmf: np.ndarray, offset: int) -> CdfTable:
    """Integer table from (unnormalized) probabilities by largest-remainder rounding.

    Every regular symbol keeps at least one slot and the tail gets exactly one.
    """
    pmf = np.asarray(pmf, dtype=np.float64)
    n = len(pmf)
    if n + 1 >= TOTAL:
        raise CodingError(f"{n} symbols do not fit a {PRECISION}-bit table")
    if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
        raise CodingError("probabilities must be finite and non-negative")
    budget = TOTAL - 1
    total = pmf.sum()
    target = pmf / total * budget if total > 0 else np.full(n, budget / n)
    freq = np.maximum(np.floor(target).astype(np.int64), 1)
    short = budget - int(freq.sum())
    if short > 0:
        order = np.argsort(-(target - np.floor(target)), kind="stable")
        freq[order[:short]] += 1
    while short < 0:
        # minimum-slot bumps overdrew the budget; take it back from the largest symbols
        k = int(np.argmax(freq))
        take = min(-short, int(freq[k]) - 1)
        freq[k] -= take
        short += take
    freq = np.concatenate([freq, [1]])
    return CdfTable(np.concatenate([[0], np.cumsum(freq)]), offset)


# ------------------------------------------------------------------ kernels
@nb.njit(cache=True)
def _phi(z):
    return 0.5 * math.erfc(-z * _INV_SQRT2)


@nb.njit(cache=True)
def _support(mu, sigma):
    half = int(math.ceil(TAIL_SIGMAS * sigma))
    if half < MIN_HALF_WIDTH:
        half = MIN_HALF_WIDTH
    centre = int(math.floor(mu + 0.5))
    return centre - half, 2 * half + 1


@nb.njit(cache=True)
def _gauss_cum(j, lo, n, mu, sigma, p_lo, span):
    if j <= 0:
        return 0
    if j >= n:
        return TOTAL - 1
    budget = TOTAL - n - 1
    g = (_phi((lo + j - 0.5 - mu) / sigma) - p_lo) / span
    if g < 0.0:
        g = 0.0
    elif g > 1.0:
        g = 1.0
    return j + int(math.floor(budget * g))


@nb.njit(cache=True)
def _gauss_bounds(lo, n, mu, sigma):
    p_lo = _phi((lo - 0.5 - mu) / sigma)
    p_hi = _phi((lo + n - 0.5 - mu) / sigma)
    return p_lo, p_hi - p_lo


@nb.njit(cache=True)
def gaussian_table_kernel(mu, sigma):
    lo, n = _support(mu, sigma)
    p_lo, span = _gauss_bounds(lo, n, mu, sigma)
    cdf = np.empty(n + 2, dtype=np.int64)
    for j in range(n + 1):
        cdf[j] = _gauss_cum(j, lo, n, mu, sigma, p_lo, span)
    cdf[n + 1] = TOTAL
    return cdf, lo


@nb.njit(cache=True)
def _grow(out, pos):
    if pos + 16 < out.shape[0]:
        return out
    bigger = np.empty(out.shape[0] * 2 + 64, dtype=np.uint8)
    bigger[:pos] = out[:pos]
    return bigger


@nb.njit(cache=True)
def _put(low, rng, out, pos, cum, freq, shift):
    rng = rng >> shift
    low = (low + cum * rng) & _MASK
    rng = rng * freq
    while True:
        if (low ^ (low + rng)) >= _TOP:
            if rng >= _BOT:
                break
            rng = (_MASK + 1 - low) & (_BOT - 1)
        out = _grow(out, pos)
        out[pos] = (low >> 24) & 0xFF
        pos += 1
        low = (low << 8) & _MASK
        rng = (rng << 8) & _MASK
    return low, rng, out, pos


@nb.njit(cache=True)
def _put_escape(low, rng, out, pos, value):
    u = (2 * value if value >= 0 else -2 * value - 1) + 1
    nbits = 0
    t = u
    while t > 1:
        t >>= 1
        nbits += 1
    for _ in range(nbits):
        low, rng, out, pos = _put(low, rng, out, pos, 0, 1, 1)
    for b in range(nbits, -1, -1):
        low, rng, out, pos = _put(low, rng, out, pos, (u >> b) & 1, 1, 1)
    return low, rng, out, pos


@nb.njit(cache=True)
def _flush(low, rng, out, pos):
    # shortest byte string v such that low <= v.000... < low + rng
    for k in range(5):
        unit = 1 << (32 - 8 * k)
        v = ((low + unit - 1) // unit) * unit
        if v < low + rng:
            for b in range(k):
                out = _grow(out, pos)
                out[pos] = (v >> (24 - 8 * b)) & 0xFF
                pos += 1
            break
    return out[:pos]


@nb.njit(cache=True)
def _encode_gaussian(symbols, mu, sigma):
    out = np.empty(64 + 2 * symbols.shape[0], dtype=np.uint8)
    pos = 0
    low = 0
    rng = _MASK
    for i in range(symbols.shape[0]):
        m, s = mu[i], sigma[i]
        lo, n = _support(m, s)
        p_lo, span = _gauss_bounds(lo, n, m, s)
        j = symbols[i] - lo
        if 0 <= j < n:
            c0 = _gauss_cum(j, lo, n, m, s, p_lo, span)
            c1 = _gauss_cum(j + 1, lo, n, m, s, p_lo, span)
            if c1 <= c0:
                return out[:0], i
            low, rng, out, pos = _put(low, rng, out, pos, c0, c1 - c0, PRECISION)
        else:
            low, rng, out, pos = _put(low, rng, out, pos, TOTAL - 1, 1, PRECISION)
            low, rng, out, pos = _put_escape(low, rng, out, pos, j)
    return _flush(low, rng, out, pos), -1


@nb.njit(cache=True)
def _encode_tables(symbols, indexes, cdfs, lengths, offsets):
    out = np.empty(64 + 2 * symbols.shape[0], dtype=np.uint8)
    pos = 0
    low = 0
    rng = _MASK
    for i in range(symbols.shape[0]):
        t = indexes[i]
        n = lengths[t] - 2
        j = symbols[i] - offsets[t]
        if 0 <= j < n:
            c0 = cdfs[t, j]
            low, rng, out, pos = _put(low, rng, out, pos, c0, cdfs[t, j + 1] - c0, PRECISION)
        else:
            c0 = cdfs[t, n]
            low, rng, out, pos = _put(low, rng, out, pos, c0, TOTAL - c0, PRECISION)
            low, rng, out, pos = _put_escape(low, rng, out, pos, j)
    return _flush(low, rng, out, pos)


@nb.njit(cache=True)
def _get_byte(data, pos):
    # the encoder drops trailing zero bytes of its final value; up to three may be implied
    if pos < data.shape[0]:
        return np.int64(data[pos]), pos + 1, False
    return np.int64(0), pos + 1, pos >= data.shape[0] + _PHANTOM


@nb.njit(cache=True)
def _dec_start(data):
    code = 0
    pos = 0
    over = False
    for _ in range(4):
        b, pos, o = _get_byte(data, pos)
        over = over or o
        code = (code << 8) | b
    return code, pos, over


@nb.njit(cache=True)
def _dec_update(low, rng, code, data, pos, cum, freq):
    low = (low + cum * rng) & _MASK
    rng = rng * freq
    over = False
    while True:
        if (low ^ (low + rng)) >= _TOP:
            if rng >= _BOT:
                break
            rng = (_MASK + 1 - low) & (_BOT - 1)
        b, pos, o = _get_byte(data, pos)
        over = over or o
        code = ((code << 8) | b) & _MASK
        low = (low << 8) & _MASK
        rng = (rng << 8) & _MASK
    return low, rng, code, pos, over


@nb.njit(cache=True)
def _dec_bit(low, rng, code, data, pos):
    rng = rng >> 1
    v = ((code - low) & _MASK) // rng
    if v > 1:
        return 0, low, rng, code, pos, True
    low, rng, code, pos, over = _dec_update(low, rng, code, data, pos, v, 1)
    return v, low, rng, code, pos, over


@nb.njit(cache=True)
def _dec_escape(low, rng, code, data, pos):
    nbits = 0
    bad = False
    while True:
        b, low, rng, code, pos, o = _dec_bit(low, rng, code, data, pos)
        bad = bad or o
        if nbits > 40:
            bad = True
        if bad or b == 1:
            break
        nbits += 1
    u = 1
    for _ in range(nbits):
        b, low, rng, code, pos, o = _dec_bit(low, rng, code, data, pos)
        bad = bad or o
        u = (u << 1) | b
    z = u - 1
    value = z >> 1 if z % 2 == 0 else -((z + 1) >> 1)
    return value, low, rng, code, pos, bad


@nb.njit(cache=True)
def _decode_gaussian(data, mu, sigma):
    count = mu.shape[0]
    out = np.zeros(count, dtype=np.int64)
    code, pos, over = _dec_start(data)
    if over:
        return out, _TRUNCATED, pos, 0
    low = 0
    rng = _MASK
    for i in range(count):
        m, s = mu[i], sigma[i]
        lo, n = _support(m, s)
        p_lo, span = _gauss_bounds(lo, n, m, s)
        rng = rng >> PRECISION
        target = ((code - low) & _MASK) // rng
        if target >= TOTAL:
            return out, _BAD_FREQ, pos, i
        if target >= TOTAL - 1:
            low, rng, code, pos, over = _dec_update(low, rng, code, data, pos, TOTAL - 1, 1)
            if over:
                return out, _TRUNCATED, pos, i
            value, low, rng, code, pos, bad = _dec_escape(low, rng, code, data, pos)
            if bad:
                return out, _TRUNCATED, pos, i
            out[i] = lo + value
            continue
        a, b = 0, n - 1
        while a < b:
            mid = (a + b + 1) // 2
            if _gauss_cum(mid, lo, n, m, s, p_lo, span) <= target:
                a = mid
            else:
                b = mid - 1
        c0 = _gauss_cum(a, lo, n, m, s, p_lo, span)
        c1 = _gauss_cum(a + 1, lo, n, m, s, p_lo, span)
        low, rng, code, pos, over = _dec_update(low, rng, code, data, pos, c0, c1 - c0)
        if over:
            return out, _TRUNCATED, pos, i
        out[i] = lo + a
    return out, _OK, pos, count


@nb.njit(cache=True)
def _decode_tables(data, indexes, cdfs, lengths, offsets):
    count = indexes.shape[0]
    out = np.zeros(count, dtype=np.int64)
    code, pos, over = _dec_start(data)
    if over:
        return out, _TRUNCATED, pos, 0
    low = 0
    rng = _MASK
    for i in range(count):
        t = indexes[i]
        n = lengths[t] - 2
        rng = rng >> PRECISION
        target = ((code - low) & _MASK) // rng
        if target >= TOTAL:
            return out, _BAD_FREQ, pos, i
        a, b = 0, n
        while a < b:
            mid = (a + b + 1) // 2
            if cdfs[t, mid] <= target:
                a = mid
            else:
                b = mid - 1
        c0 = cdfs[t, a]
        low, rng, code, pos, over = _dec_update(low, rng, code, data, pos, c0, cdfs[t, a + 1] - c0)
        if over:
            return out, _TRUNCATED, pos, i
        if a == n:
            value, low, rng, code, pos, bad = _dec_escape(low, rng, code, data, pos)
            if bad:
                return out, _TRUNCATED, pos, i
            out[i] = offsets[t] + value
        else:
            out[i] = offsets[t] + a
    return out, _OK, pos, count


# ------------------------------------------------------------------ public API
def _check_status(status: int, pos: int, index: int, length: int) -> None:
    if status == _TRUNCATED:
        raise DecodeError(f"stream truncated: needed byte {pos - 1} of {length} (symbol {index})")
    if status == _BAD_FREQ:
        raise DecodeError(f"corrupt stream near byte {pos} (symbol {index})")


def _gaussian_arrays(mu, sigma):
    mu = np.ascontiguousarray(mu, dtype=np.float64).ravel()
    sigma = np.ascontiguousarray(sigma, dtype=np.float64).ravel()
    if mu.shape != sigma.shape:
        raise CodingError("mu and sigma must have the same number of elements")
    if sigma.size and sigma.min() < SIGMA_MIN * (1 - 1e-5):
        raise CodingError(f"sigma below the minimum {SIGMA_MIN}")
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise CodingError("non-finite Gaussian parameters")
    if mu.size and np.abs(mu).max() > MAX_SYMBOL:
        raise CodingError(f"Gaussian mean beyond +-{MAX_SYMBOL}")
    return mu, sigma


def _symbol_array(symbols) -> np.ndarray:
    symbols = np.ascontiguousarray(symbols, dtype=np.int64).ravel()
    if symbols.size and np.abs(symbols).max() > MAX_SYMBOL:
        raise CodingError(f"symbol out of range: coded values must lie within +-{MAX_SYMBOL}")
    return symbols


def gaussian_cdf(mu: float, sigma: float) -> CdfTable:
    """The exact table the coder uses for one N(mu, sigma) symbol."""
    mu, sigma = _gaussian_arrays([mu], [sigma])
    cdf, lo = gaussian_table_kernel(mu[0], sigma[0])
    return CdfTable(cdf, int(lo))


def gaussian_pmf(k, mu: float, sigma: float) -> np.ndarray:
    """Unquantized probability of integer ``k`` under N(mu, sigma)."""
    from scipy.special import ndtr

    dev = np.abs(np.asarray(k, dtype=np.float64) - mu)
    return ndtr((0.5 - dev) / sigma) - ndtr((-0.5 - dev) / sigma)


def encode_gaussian(symbols, mu, sigma) -> bytes:
    mu, sigma = _gaussian_arrays(mu, sigma)
    symbols = _symbol_array(symbols)
    if symbols.shape != mu.shape:
        raise CodingError("one (mu, sigma) pair is needed per symbol")
    data, failed = _encode_gaussian(symbols, mu, sigma)
    if failed >= 0:
        raise CodingError(f"degenerate interval for symbol {failed}")
    return data.tobytes()


def decode_gaussian(data: bytes, mu, sigma) -> np.ndarray:
    mu, sigma = _gaussian_arrays(mu, sigma)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out, status, pos, index = _decode_gaussian(buf, mu, sigma)
    _check_status(status, pos, index, len(buf))
    return out


def _pack_tables(tables) -> tuple:
    lengths = np.array([len(t.cdf) for t in tables], dtype=np.int64)
    cdfs = np.zeros((len(tables), lengths.max()), dtype=np.int64)
    for i, t in enumerate(tables):
        cdfs[i, : len(t.cdf)] = t.cdf
    offsets = np.array([t.offset for t in tables], dtype=np.int64)
    return cdfs, lengths, offsets


def encode(symbols, tables, indexes=None) -> bytes:
    """Code ``symbols[i]`` with ``tables[indexes[i]]`` (a single table if ``indexes`` is None)."""
    if isinstance(tables, CdfTable):
        tables = [tables]
    symbols = _symbol_array(symbols)
    indexes = (np.zeros(symbols.shape, dtype=np.int64) if indexes is None
               else np.ascontiguousarray(indexes, dtype=np.int64).ravel())
    if indexes.shape != symbols.shape:
        raise CodingError("one table index is needed per symbol")
    if indexes.size and (indexes.min() < 0 or indexes.max() >= len(tables)):
        raise CodingError("table index out of range")
    cdfs, lengths, offsets = _pack_tables(tables)
    return _encode_tables(symbols, indexes, cdfs, lengths, offsets).tobytes()


def decode(data: bytes, tables, indexes=None, count: int | None = None) -> np.ndarray:
    if isinstance(tables, CdfTable):
        tables = [tables]
    if indexes is None:
        if count is None:
            raise CodingError("decode needs either table indexes or a symbol count")
        indexes = np.zeros(count, dtype=np.int64)
    indexes = np.ascontiguousarray(indexes, dtype=np.int64).ravel()
    cdfs, lengths, offsets = _pack_tables(tables)
    buf = np.frombuffer(bytes(data), dtype=np.uint8)
    out, status, pos, index = _decode_tables(buf, indexes, cdfs, lengths, offsets)
    _check_status(status, pos, index, len(buf))
    return out


def gaussian_information(symbols, mu, sigma) -> float:
    """Bits the coder assigns to ``symbols`` under the quantized Gaussian tables."""
    mu, sigma = _gaussian_arrays(mu, sigma)
    symbols = np.asarray(symbols, dtype=np.int64).ravel()
    total = 0.0
    for s, m, sg in zip(symbols, mu, sigma):
        total += gaussian_cdf(m, sg).information(int(s))
    return total
