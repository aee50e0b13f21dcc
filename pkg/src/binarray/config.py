"""Accelerator configuration: array counts, run mode, clocking."""

from __future__ import annotations

from dataclasses import dataclass

from .fxp import ConfigError

MODE_HIGH_THROUGHPUT = "high_throughput"
MODE_HIGH_ACCURACY = "high_accuracy"
MODES = (MODE_HIGH_THROUGHPUT, MODE_HIGH_ACCURACY)


@dataclass(frozen=True)
class SimConfig:
    """Design parameters of one accelerator instance.

    n_sa     number of systolic arrays (spatial tiling)
    d_arch   processing elements per array column (output-channel parallelism)
    m_arch   array columns (bit-planes processed in parallel)
    mode     high_throughput runs at most m_arch planes in one pass per layer;
             high_accuracy chains up to 2*m_arch planes over two passes
    """

    n_sa: int = 1
    d_arch: int = 32
    m_arch: int = 2
    clock_hz: float = 400e6
    mode: str = MODE_HIGH_THROUGHPUT
    fbuf_words: int = 1 << 16
    local_fbuf_words: int = 8192

    def __post_init__(self):
        for name in ("n_sa", "d_arch", "m_arch"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.clock_hz <= 0:
            raise ConfigError("clock_hz must be positive")

    @property
    def max_levels(self) -> int:
        """Largest per-layer bit-plane count the current mode accepts."""
        return 2 * self.m_arch if self.mode == MODE_HIGH_ACCURACY else self.m_arch

    def effective_levels(self, m_levels: int) -> int:
        """Bit-planes actually processed for a layer approximated with m_levels.

        high_throughput truncates to the first m_arch planes; high_accuracy
        processes up to 2*m_arch planes and rejects anything beyond.
        """
        if self.mode == MODE_HIGH_ACCURACY:
            if m_levels > 2 * self.m_arch:
                raise ConfigError(
                    f"high_accuracy mode supports at most {2 * self.m_arch} "
                    f"bit-planes per layer, layer has {m_levels}")
            return m_levels
        return min(m_levels, self.m_arch)

    def label(self) -> str:
        return f"[{self.n_sa},{self.d_arch},{self.m_arch}]"


def parse_config(text: str, **kwargs) -> SimConfig:
    """Parse '1x32x2' or '[1,32,2]' into a SimConfig."""
    s = text.strip().strip("[]")
    sep = "x" if "x" in s else ","
    parts = [p.strip() for p in s.split(sep)]
    if len(parts) != 3:
        raise ConfigError(f"config must have three fields NxDxM, got {text!r}")
    try:
        n_sa, d_arch, m_arch = (int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"bad config {text!r}: {exc}") from None
    return SimConfig(n_sa=n_sa, d_arch=d_arch, m_arch=m_arch, **kwargs)
