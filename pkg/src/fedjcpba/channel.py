"""Wireless links: path loss, Rayleigh block fading and Shannon rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LinkBudget:
    server_power: float = 10.0     # W
    client_power: float = 0.2      # W
    noise_power: float = 1e-13     # W, -100 dBm
    path_loss_db: float = 60.0

    def __post_init__(self):
        if self.server_power <= 0 or self.client_power <= 0 or self.noise_power <= 0:
            raise ValueError("powers must be positive")
        if self.path_loss_db < 0:
            raise ValueError("path_loss_db must be non-negative")

    @property
    def path_gain(self) -> float:
        return 10.0 ** (-self.path_loss_db / 10.0)


@dataclass(frozen=True)
class ChannelState:
    """Per-client power gains, held fixed for one round."""

    h_down: np.ndarray
    h_up: np.ndarray
    round_index: int = 0

    def __post_init__(self):
        h_down = np.asarray(self.h_down, dtype=float)
        h_up = np.asarray(self.h_up, dtype=float)
        if h_down.shape != h_up.shape or h_down.ndim != 1:
            raise ValueError("h_down and h_up must be 1-D arrays of equal length")
        if np.any(h_down <= 0) or np.any(h_up <= 0):
            raise ValueError("channel gains must be positive")
        object.__setattr__(self, "h_down", h_down)
        object.__setattr__(self, "h_up", h_up)

    @property
    def n_clients(self) -> int:
        return len(self.h_down)

    @classmethod
    def constant(cls, n_clients: int, budget: LinkBudget, round_index: int = 0):
        """Every link at its mean gain (no fading)."""
        g = np.full(n_clients, budget.path_gain)
        return cls(g, g.copy(), round_index)


def sample_channel(n_clients: int, budget: LinkBudget, rng: np.random.Generator,
                   round_index: int = 0) -> ChannelState:
    """Draw Rayleigh-faded power gains H = g * X with X ~ Exp(1).

    Downlink gains are drawn before uplink gains; both are independent per
    client.
    """
    if n_clients < 1:
        raise ValueError("n_clients must be >= 1")
    g = budget.path_gain
    h_down = g * rng.exponential(1.0, n_clients)
    h_up = g * rng.exponential(1.0, n_clients)
    # Exp(1) can return exactly 0.0 with vanishing probability
    tiny = np.finfo(float).tiny
    return ChannelState(np.maximum(h_down, tiny), np.maximum(h_up, tiny), round_index)


def spectral_efficiency(power, gain, noise_power):
    """log2(1 + p*H/N0) in bits/s/Hz."""
    return np.log2(1.0 + np.asarray(power) * np.asarray(gain) / noise_power)


def spectral_efficiencies(state: ChannelState, budget: LinkBudget):
    """Per-client (down, up) spectral efficiencies as arrays."""
    return (spectral_efficiency(budget.server_power, state.h_down, budget.noise_power),
            spectral_efficiency(budget.client_power, state.h_up, budget.noise_power))


def rates(state: ChannelState, budget: LinkBudget, bandwidth: float, k: int):
    """Downlink and uplink Shannon rates (bits/s) of client ``k`` on ``bandwidth`` Hz.

    Both directions share the same allocated bandwidth.
    """
    if bandwidth < 0:
        raise ValueError("bandwidth must be non-negative")
    down = bandwidth * float(spectral_efficiency(budget.server_power, state.h_down[k],
                                                 budget.noise_power))
    up = bandwidth * float(spectral_efficiency(budget.client_power, state.h_up[k],
                                               budget.noise_power))
    return down, up
