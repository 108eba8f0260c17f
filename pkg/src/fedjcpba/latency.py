"""Per-client round latency: local computation plus model transfer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from fedjcpba.errors import EmptyClientSet, ZeroRate


@dataclass(frozen=True)
class ComputeProfile:
    flops_per_s: float
    m_iterations: int = 20
    batch_size: int = 4

    def __post_init__(self):
        if self.flops_per_s <= 0:
            raise ValueError("flops_per_s must be positive")
        if self.m_iterations < 1 or self.batch_size < 1:
            raise ValueError("m_iterations and batch_size must be >= 1")


@dataclass(frozen=True)
class LatencyBreakdown:
    comp_s: float
    comm_down_s: float
    comm_up_s: float

    @property
    def total_s(self) -> float:
        return self.comp_s + self.comm_down_s + self.comm_up_s


def comp_latency(a: float, e0: float, beta: float, prof: ComputeProfile) -> float:
    """M * (a + e0 * (1 - beta)) / f_k."""
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    return prof.m_iterations * (a + e0 * (1.0 - beta)) / prof.flops_per_s


def comm_latency(adapter_bits: float, emulator_bits: float, update_bits: float,
                 beta: float, r_down: float, r_up: float) -> tuple[float, float]:
    if r_down <= 0 or r_up <= 0:
        raise ZeroRate(f"link rate is zero (down={r_down}, up={r_up})")
    down = (adapter_bits + (1.0 - beta) * emulator_bits) / r_down
    up = update_bits / r_up
    return down, up


def client_latency(a: float, e0: float, beta: float, prof: ComputeProfile,
                   adapter_bits: float, emulator_bits: float, update_bits: float,
                   r_down: float, r_up: float) -> LatencyBreakdown:
    down, up = comm_latency(adapter_bits, emulator_bits, update_bits, beta, r_down, r_up)
    return LatencyBreakdown(comp_latency(a, e0, beta, prof), down, up)


def round_latency(breakdowns: Sequence[LatencyBreakdown]) -> float:
    """The straggler's total latency."""
    if not breakdowns:
        raise EmptyClientSet("round latency of an empty client set")
    return max(b.total_s for b in breakdowns)
