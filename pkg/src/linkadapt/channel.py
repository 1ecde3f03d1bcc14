"""Mobility-driven Rayleigh fading, burst interference, BPSK and LLRs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_CARRIER_HZ = 5.9e9
DEFAULT_INTERVAL_S = 1e-3

# crossover between the power series and the Hankel asymptotic form of J0;
# below ~12 the asymptotic series cannot reach 1e-9 and above it the power
# series loses digits to cancellation
_J0_SERIES_LIMIT = 12.0


def doppler_frequency(speed_kmh: float, carrier_hz: float = DEFAULT_CARRIER_HZ) -> float:
    """Maximum Doppler shift in Hz for a relative speed in km/h."""
    if speed_kmh < 0:
        raise ValueError(f"speed must be non-negative, got {speed_kmh}")
    if carrier_hz <= 0:
        raise ValueError(f"carrier frequency must be positive, got {carrier_hz}")
    return (speed_kmh / 3.6) / SPEED_OF_LIGHT * carrier_hz


def bessel_j0(x: float) -> float:
    """Bessel function of the first kind, order zero."""
    x = abs(float(x))
    if x < _J0_SERIES_LIMIT:
        # sum_k (-1)^k (x^2/4)^k / (k!)^2
        q = -0.25 * x * x
        term = 1.0
        total = 1.0
        k = 0
        while True:
            k += 1
            term *= q / (k * k)
            total += term
            if abs(term) < 1e-17 * max(1.0, abs(total)) and k > 2:
                return total
    # Hankel expansion: J0 = sqrt(2/(pi x)) (P cos chi - Q sin chi), chi = x - pi/4
    p, q = 0.0, 0.0
    term = 1.0
    k = 0
    while True:
        if k % 2 == 0:
            p += term if k % 4 == 0 else -term
        else:
            q += -term if k % 4 == 1 else term
        nxt = term * (2 * k + 1) ** 2 / ((k + 1) * 8.0 * x)
        if nxt >= term or nxt < 1e-17:
            break
        term = nxt
        k += 1
    chi = x - math.pi / 4
    return math.sqrt(2.0 / (math.pi * x)) * (p * math.cos(chi) - q * math.sin(chi))


@dataclass(frozen=True)
class MobilityProfile:
    speed_kmh: float
    carrier_hz: float = DEFAULT_CARRIER_HZ
    interval_s: float = DEFAULT_INTERVAL_S

    def __post_init__(self) -> None:
        if self.speed_kmh < 0:
            raise ValueError(f"speed must be non-negative, got {self.speed_kmh}")
        if self.interval_s <= 0:
            raise ValueError("transmission interval must be positive")

    @property
    def doppler_hz(self) -> float:
        return doppler_frequency(self.speed_kmh, self.carrier_hz)

    @property
    def rho(self) -> float:
        return correlation_coeff(self)


def correlation_coeff(profile: MobilityProfile) -> float:
    """One-interval fading correlation from the Jakes spectrum."""
    return bessel_j0(2.0 * math.pi * profile.doppler_hz * profile.interval_s)


def complex_normal(rng: np.random.Generator, size=None):
    """Circularly symmetric CN(0, 1) samples."""
    z = rng.standard_normal(2 if size is None else (2, size)) * math.sqrt(0.5)
    return complex(z[0], z[1]) if size is None else z[0] + 1j * z[1]


@dataclass
class ChannelState:
    """Per-stream fading coefficient and burst-interference state.

    The state is mutated in place by :func:`fading_step` and
    :func:`interference_step`; give every stream its own instance.
    """

    h: complex
    interference_active: bool = False
    p01: float = 0.05
    p11: float = 0.90
    interference_boost_db: float = 10.0

    def __post_init__(self) -> None:
        for name in ("p01", "p11"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")

    @classmethod
    def initial(cls, rng: np.random.Generator, **kwargs) -> "ChannelState":
        return cls(h=complex_normal(rng), **kwargs)

    @property
    def stationary_occupancy(self) -> float:
        denom = 1.0 - self.p11 + self.p01
        return self.p01 / denom if denom > 0 else float(self.interference_active)

    @property
    def boost_factor(self) -> float:
        return 10.0 ** (self.interference_boost_db / 10.0) if self.interference_active else 1.0


def fading_step(state: ChannelState, rho: float, rng: np.random.Generator) -> complex:
    """Advance ``h`` one interval of the first-order autoregressive process."""
    if abs(rho) > 1.0:
        raise ValueError(f"|rho| must not exceed 1, got {rho}")
    z = complex_normal(rng)
    state.h = rho * state.h + math.sqrt(1.0 - rho * rho) * z
    return state.h


def interference_step(state: ChannelState, rng: np.random.Generator) -> bool:
    p_on = state.p11 if state.interference_active else state.p01
    state.interference_active = bool(rng.random() < p_on)
    return state.interference_active


def noise_variance(rate: float, ebn0_db: float) -> float:
    """Per-real-dimension noise variance for unit-energy BPSK at the given Eb/N0."""
    if not rate > 0 or rate > 1:
        raise ValueError(f"rate must lie in (0, 1], got {rate}")
    if not math.isfinite(ebn0_db):
        raise ValueError("Eb/N0 must be finite")
    return 1.0 / (2.0 * rate * 10.0 ** (ebn0_db / 10.0))


def modulate_bpsk(bits) -> np.ndarray:
    """Map 0 -> +1 and 1 -> -1."""
    return 1.0 - 2.0 * np.asarray(bits, dtype=np.float64)


def transmit(symbols, h: complex, sigma2_eff: float, rng: np.random.Generator, zero_noise: bool = False) -> np.ndarray:
    """Block-fading channel ``y = h x + w``; ``w`` has variance ``sigma2_eff`` per real dimension.

    ``zero_noise`` still draws the noise samples so the random stream stays
    aligned with ordinary runs, then discards them.
    """
    if not sigma2_eff > 0:
        raise ValueError("sigma2_eff must be positive")
    x = np.asarray(symbols, dtype=np.float64)
    w = rng.standard_normal((2, x.size))
    y = h * x
    if zero_noise:
        return y.astype(np.complex128)
    return y + math.sqrt(sigma2_eff) * (w[0] + 1j * w[1])


def compute_llrs(received, h: complex, sigma2: float) -> np.ndarray:
    """``2 Re{conj(h) y} / sigma2``; positive values favour bit 0."""
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    return 2.0 * np.real(np.conj(complex(h)) * np.asarray(received)) / sigma2
