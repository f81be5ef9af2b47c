"""Two-hypothesis signal model for backscatter tag detection.

A reader with ``m`` antennas observes ``n`` samples of an ambient RF source
per tag symbol.  While the tag reflects (bit ``c = 1``) the effective channel
is ``w = h + alpha * f * g``; while it rests (``c = 0``) only the direct
channel ``h`` is seen::

    x[:, k] = (w if c else h) * s[k] + u[:, k],   u ~ CN(0, sigma_u2 * I)

``h`` (source->reader) and ``g`` (tag->reader) have i.i.d. standard circular
complex Gaussian entries, ``f`` (source->tag) is a standard circular complex
Gaussian scalar, and ``alpha`` is the real reflection coefficient.  The
relative tag-path strength ``zeta = E||alpha*f*g||^2 / E||h||^2`` then equals
``alpha**2``, and the source power is ``sigma_s2 = 10**(snr_db/10)`` against
the unit-noise convention ``sigma_u2 = 1``.
"""
from dataclasses import dataclass, field, replace

import numpy as np

GAUSSIAN = "gaussian"
PSK = "psk"

_SOURCE_KINDS = (GAUSSIAN, PSK)


@dataclass(frozen=True)
class AmbientSource:
    """Ambient RF source: complex Gaussian or Q-ary PSK with power sigma_s2."""

    kind: str = GAUSSIAN
    sigma_s2: float = 1.0
    q: int = 4

    def __post_init__(self):
        if self.kind not in _SOURCE_KINDS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        if not self.sigma_s2 > 0:
            raise ValueError("sigma_s2 must be positive")
        if self.kind == PSK and self.q < 2:
            raise ValueError("PSK order q must be >= 2")

    def constellation(self):
        """Constellation points (PSK only): Q-th roots of unity scaled to power
        sigma_s2, with the quadrature offset pi/4 for q = 4 so that the points
        are (+-1 +-1j) * sqrt(sigma_s2 / 2)."""
        if self.kind != PSK:
            raise ValueError("constellation is defined for PSK sources only")
        offset = np.pi / 4 if self.q == 4 else 0.0
        phases = 2.0 * np.pi * np.arange(self.q) / self.q + offset
        return np.sqrt(self.sigma_s2) * np.exp(1j * phases)


@dataclass(frozen=True)
class SimParams:
    """Scenario parameters for one operating point."""

    m: int
    n: int
    snr_db: float
    zeta_db: float
    sigma_u2: float = 1.0
    source: AmbientSource = field(default_factory=AmbientSource)

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        if not self.sigma_u2 > 0:
            raise ValueError("sigma_u2 must be positive")

    @property
    def sigma_s2(self):
        """Source power implied by the SNR convention (unit noise power)."""
        return 10.0 ** (self.snr_db / 10.0)

    @property
    def alpha(self):
        """Real tag reflection coefficient, alpha = sqrt(10**(zeta_db/10))."""
        return float(np.sqrt(10.0 ** (self.zeta_db / 10.0)))

    def effective_source(self):
        """The configured source with its power tied to snr_db."""
        return replace(self.source, sigma_s2=self.sigma_s2)


@dataclass(frozen=True)
class ChannelRealization:
    """One draw of (h, g, f, alpha) with the reflecting-state channel cached."""

    h: np.ndarray
    g: np.ndarray
    f: complex
    alpha: float
    w: np.ndarray

    @classmethod
    def make(cls, h, g, f, alpha):
        h = np.asarray(h, dtype=np.complex128)
        g = np.asarray(g, dtype=np.complex128)
        if h.ndim != 1 or h.shape != g.shape:
            raise ValueError("h and g must be 1-D arrays of equal length")
        w = h + alpha * f * g
        return cls(h=h, g=g, f=complex(f), alpha=float(alpha), w=w)


@dataclass(frozen=True)
class TagSymbolBlock:
    """Received samples for one tag symbol: x is (m, n), label is the bit."""

    x: np.ndarray
    label: int


@dataclass(frozen=True)
class TagFrame:
    """A run of tag-symbol blocks; the first pilot_count carry known bits."""

    blocks: tuple
    pilot_count: int

    @property
    def pilot_labels(self):
        return tuple(b.label for b in self.blocks[: self.pilot_count])

    @property
    def data_blocks(self):
        return self.blocks[self.pilot_count:]


def _crandn(rng, *shape):
    """Standard circular complex Gaussian samples, CN(0, 1)."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def draw_channel(rng, params):
    """Draw one channel realization for the given scenario."""
    h = _crandn(rng, params.m)
    g = _crandn(rng, params.m)
    f = complex(_crandn(rng))
    return ChannelRealization.make(h=h, g=g, f=f, alpha=params.alpha)


def sample_source(rng, source, count):
    """Draw ``count`` source symbols with power source.sigma_s2."""
    if count < 1:
        raise ValueError("count must be positive")
    if source.kind == GAUSSIAN:
        return np.sqrt(source.sigma_s2) * _crandn(rng, count)
    points = source.constellation()
    return points[rng.integers(0, source.q, size=count)]


def generate_block(rng, channel, params, label):
    """Generate the (m, n) received block for one tag symbol.

    Draws the source samples first, then the noise, so fixed-seed runs are
    reproducible sample for sample.
    """
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    s = sample_source(rng, params.effective_source(), params.n)
    u = np.sqrt(params.sigma_u2) * _crandn(rng, params.m, params.n)
    beam = channel.w if label else channel.h
    x = np.outer(beam, s) + u
    return TagSymbolBlock(x=x, label=int(label))


def generate_frame(rng, channel, params, num_symbols, pilot_count, data_bits=None):
    """Generate a frame: alternating known pilots (1, 0, 1, ...) then data bits.

    data_bits of length num_symbols - pilot_count may be supplied; otherwise
    they are drawn equiprobably from the stream (all at once, before any
    block is generated).
    """
    if pilot_count < 1:
        raise ValueError("pilot_count must be at least 1")
    if pilot_count >= num_symbols:
        raise ValueError("pilot_count must be smaller than num_symbols")
    num_data = num_symbols - pilot_count
    if data_bits is None:
        data_bits = rng.integers(0, 2, size=num_data)
    else:
        data_bits = np.asarray(data_bits)
        if data_bits.shape != (num_data,):
            raise ValueError(f"data_bits must have shape ({num_data},)")
        if not np.isin(data_bits, (0, 1)).all():
            raise ValueError("data_bits must be 0/1 valued")
    pilots = [(i + 1) % 2 for i in range(pilot_count)]
    labels = pilots + [int(b) for b in data_bits]
    blocks = tuple(generate_block(rng, channel, params, c) for c in labels)
    return TagFrame(blocks=blocks, pilot_count=pilot_count)
