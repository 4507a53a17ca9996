"""System parameters of the blockchain/radio model and their text-file form."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemParams:
    """Scalar parameters shared by analytics, simulator and privacy builder.

    Attributes use the units of the model: ``lam`` in blocks/s, ``T`` in s,
    all ``l_*`` and ``H`` in bits, ``R`` in bit/s, ``W`` in Hz and ``gamma``
    as a *linear* mean SNR (convert dB with :func:`db_to_linear`).
    """

    lam: float = 0.1
    T: float = 180.0
    H: int = 1200
    l_H: int = 4046
    l_a: int = 320_000
    l_s: int = 256
    L: int = 16
    eta: int = 5
    R: float = 250e3
    W: float = 180e3
    gamma: float = 1000.0
    P_A: float = 0.9
    N_peers: int = 1

    def __post_init__(self):
        for name in ("lam", "T", "R", "W", "gamma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        for name in ("H", "l_H", "l_a", "l_s", "N_peers"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.L < 2:
            raise ConfigError(f"branching factor L must be >= 2, got {self.L}")
        if self.eta < 1:
            raise ConfigError(f"tree height eta must be >= 1, got {self.eta}")
        if not 0.0 < self.P_A < 1.0:
            raise ConfigError(f"P_A must lie in (0, 1), got {self.P_A}")
        if self.l_a % 8:
            raise ConfigError("l_a must be a whole number of bytes")

    @property
    def block_period(self) -> float:
        """Expected block interval 1/lam in seconds."""
        return 1.0 / self.lam

    @property
    def snr_db(self) -> float:
        return linear_to_db(self.gamma)

    def replace(self, **changes) -> "SystemParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def describe(self) -> str:
        """One-line ``key=value`` rendering used in CSV comment headers."""
        return " ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}"
                        for k, v in self.as_dict().items())

    @classmethod
    def from_file(cls, path, base: "SystemParams | None" = None) -> "SystemParams":
        """Read a flat ``key=value`` file; ``#`` starts a comment.

        ``snr_db`` is accepted as an alternative spelling of ``gamma``.
        """
        base = base or cls()
        fields = {f.name: f.type for f in dataclasses.fields(cls)}
        changes = {}
        for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "snr_db":
                    changes["gamma"] = db_to_linear(float(value))
                elif key in fields:
                    num = float(value)
                    changes[key] = int(num) if fields[key] == "int" else num
                else:
                    raise ConfigError(f"{path}:{lineno}: unknown parameter {key!r}")
            except ValueError as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
        return dataclasses.replace(base, **changes)


#: Defaults of the evaluation setup (30 dB SNR, 320 kbit account states).
DEFAULT_PARAMS = SystemParams()
