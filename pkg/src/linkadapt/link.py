"""Per-packet link pipeline: encode, channel, decode, classify and score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .channel import (
    ChannelState,
    MobilityProfile,
    compute_llrs,
    fading_step,
    interference_step,
    modulate_bpsk,
    noise_variance,
    transmit,
)
from .crc import BUILTIN_CRCS, CrcSpec, crc_append, crc_check
from .qcldpc import DEFAULT_MAX_ITERATIONS, CodeSpec, DecodeResult, bp_decode, builtin_code, encode

PAYLOAD_BITS = 256
RATE_LABELS = ("1/2", "2/3", "3/4")
CONTEXT_DIM = 5
SNR_CLIP_DB = (-20.0, 40.0)
SNR_SCALE_DB = 10.0


class Kind(str, Enum):
    OK = "OK"
    DE = "DE"
    UE = "UE"


@dataclass(frozen=True)
class LinkAction:
    index: int
    crc: CrcSpec
    code: CodeSpec

    @property
    def rate(self) -> float:
        return self.code.rate

    @property
    def label(self) -> str:
        return f"{self.crc.name}+R{self.rate_label}"

    @property
    def rate_label(self) -> str:
        f = Fraction(self.code.k, self.code.n)
        return f"{f.numerator}/{f.denominator}"


@lru_cache(maxsize=None)
def action_space() -> tuple[LinkAction, ...]:
    """The 12 CRC x rate configurations; index = 3 * crc_index + rate_index."""
    actions = []
    for i, crc in enumerate(BUILTIN_CRCS):
        for j, rate in enumerate(RATE_LABELS):
            actions.append(LinkAction(3 * i + j, crc, builtin_code(rate)))
    return tuple(actions)


@dataclass(frozen=True)
class LatencyModel:
    tti_ms: float = 1.0
    base_stack_ms: float = 0.5
    iter_cost_ms: float = 0.08
    pdb_ms: float = 5.0
    bandwidth_mhz: float = 20.0  # informational only

    def __post_init__(self) -> None:
        if min(self.tti_ms, self.base_stack_ms, self.iter_cost_ms, self.pdb_ms, self.bandwidth_mhz) <= 0:
            raise ValueError("latency model parameters must be positive")


@dataclass(frozen=True)
class RewardWeights:
    w_g: float = 1.0
    w_de: float = 0.2
    w_ue: float = 5.0
    w_dm: float = 3.0
    deadline_penalty: bool = True

    def __post_init__(self) -> None:
        if min(self.w_g, self.w_de, self.w_ue, self.w_dm) < 0:
            raise ValueError("reward weights must be non-negative")
        if not self.w_ue > self.w_de > 0:
            raise ValueError("weights must satisfy w_ue > w_de > 0")


@dataclass(frozen=True)
class LinkConfig:
    payload_bits: int = PAYLOAD_BITS
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    deep_fade_threshold: float = 0.3
    snr_obs_noise_db: float = 0.8
    receiver_knows_interference: bool = False
    zero_noise: bool = False
    latency: LatencyModel = field(default_factory=LatencyModel)


@dataclass(frozen=True)
class TransmissionOutcome:
    kind: Kind
    action: int
    rate: float
    decoder_iterations: int
    latency_ms: float
    deadline_miss: bool
    true_h_mag: float
    interference: bool
    snr_est_db: float
    deep_fade: bool
    crc_ok: bool | None  # None when the decoder did not converge


def latency_of(iterations: int, model: LatencyModel = LatencyModel()) -> tuple[float, bool]:
    if iterations < 0:
        raise ValueError("iterations must be non-negative")
    latency = model.tti_ms + model.base_stack_ms + model.iter_cost_ms * iterations
    return latency, latency > model.pdb_ms


def classify(u, result: DecodeResult, crc_ok: bool) -> Kind:
    if not result.converged:
        return Kind.DE
    if not crc_ok:
        return Kind.DE
    return Kind.OK if np.array_equal(np.asarray(u), result.u_hat) else Kind.UE


def compute_reward(outcome: TransmissionOutcome, weights: RewardWeights = RewardWeights()) -> float:
    r = 0.0
    if outcome.kind is Kind.OK:
        r += weights.w_g * outcome.rate
    elif outcome.kind is Kind.DE:
        r -= weights.w_de
    else:
        r -= weights.w_ue
    if weights.deadline_penalty and outcome.deadline_miss:
        r -= weights.w_dm
    return r


def observe_context(prev: TransmissionOutcome | None) -> np.ndarray:
    """Feature vector ``[1, s, s^2, I, deep]`` from the previous packet.

    ``s`` is the reported SNR clipped to [-20, 40] dB and divided by 10.
    """
    if prev is None:
        return np.array([1.0, 0.0, 0.0, 0.0, 0.0])
    s = min(max(prev.snr_est_db, SNR_CLIP_DB[0]), SNR_CLIP_DB[1]) / SNR_SCALE_DB
    return np.array([1.0, s, s * s, float(prev.interference), float(prev.deep_fade)])


def _skipped_decode(code: CodeSpec) -> DecodeResult:
    return DecodeResult(np.zeros(code.k, dtype=np.uint8), False, 0, np.zeros(code.n, dtype=np.uint8))


def run_transmission(
    action: LinkAction,
    chan: ChannelState,
    profile: MobilityProfile,
    ebn0_db: float,
    rng: np.random.Generator,
    cfg: LinkConfig = LinkConfig(),
) -> TransmissionOutcome:
    """Send one packet and report what the receiver saw.

    The random draws per call are the same whatever the action, so two
    policies fed equal seeds see the same payloads, fading and noise.
    """
    code, crc = action.code, action.crc
    payload = rng.integers(0, 2, cfg.payload_bits, dtype=np.uint8)
    h = fading_step(chan, profile.rho, rng)
    active = interference_step(chan, rng)

    block = crc_append(payload, crc)
    if block.size > code.k:
        raise ValueError(f"{action.label}: {block.size} CRC-protected bits exceed k={code.k}")
    u = np.zeros(code.k, dtype=np.uint8)  # trailing zero filler up to k
    u[: block.size] = block
    c = encode(u, code)

    sigma2 = noise_variance(action.rate, ebn0_db)
    sigma2_eff = sigma2 * chan.boost_factor
    y = transmit(modulate_bpsk(c), h, sigma2_eff, rng, zero_noise=cfg.zero_noise)
    llrs = compute_llrs(y, h, sigma2_eff if cfg.receiver_knows_interference else sigma2)
    obs_noise = rng.normal(0.0, cfg.snr_obs_noise_db)

    if cfg.max_iterations < 1:
        result = _skipped_decode(code)
    else:
        result = bp_decode(code, llrs, cfg.max_iterations)
    crc_ok = crc_check(result.u_hat[: block.size], crc) if result.converged else None
    kind = classify(u, result, bool(crc_ok))

    latency, miss = latency_of(result.iterations_used, cfg.latency)
    h_pow = max(abs(h) ** 2, 1e-300)
    return TransmissionOutcome(
        kind=kind,
        action=action.index,
        rate=action.rate,
        decoder_iterations=result.iterations_used,
        latency_ms=latency,
        deadline_miss=miss,
        true_h_mag=abs(h),
        interference=active,
        snr_est_db=10.0 * math.log10(h_pow / (2.0 * sigma2)) + obs_noise,
        deep_fade=abs(h) < cfg.deep_fade_threshold,
        crc_ok=crc_ok,
    )
