"""Multi-round simulation of federated adapter fine-tuning over fading links.

Real fine-tuning is out of reach at desk scale, so the adapter is a small
synthetic vector updated by seeded bounded perturbations, and the loss is a
synthetic contraction. Latency, overhead and aggregation arithmetic are exact.

Seeds: every random stream is derived from ``SeedSequence([seed, stream, ...])``
so that runs with different policies or speed ranges see the same uniform
draws and the same channel realisations (paired comparisons).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from fedjcpba import arch, channel, jcpba, latency
from fedjcpba.errors import DimensionMismatch, FedJCPBAError, Infeasible

logger = logging.getLogger(__name__)

GB = 1e9
POPULATION_STREAM = 0
CHANNEL_STREAM = 1
UPDATE_STREAM = 2

POLICIES = ("jcpba", "ubfp")


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


# --- population --------------------------------------------------------------

@dataclass(frozen=True)
class ClientPopulation:
    flops_per_s: np.ndarray
    memory_bytes: np.ndarray
    speed_range: tuple
    seed: int

    @property
    def n_clients(self) -> int:
        return len(self.flops_per_s)

    @property
    def heterogeneity_cv(self) -> float:
        """Sample coefficient of variation (ddof=1) of the drawn speeds."""
        if self.n_clients < 2:
            return 0.0
        mean = float(np.mean(self.flops_per_s))
        return float(np.std(self.flops_per_s, ddof=1)) / mean

    @property
    def range_cv(self) -> float:
        """CV of the uniform speed-factor distribution itself."""
        lo, hi = self.speed_range
        return (hi - lo) / np.sqrt(12.0) / ((lo + hi) / 2.0)


def sample_population(n_clients: int, f0: float = 1e12, speed_range=(0.5, 2.0),
                      mem_range_gb=(4.0, 8.0), seed: int = 0) -> ClientPopulation:
    lo, hi = speed_range
    if not 0 < lo <= hi:
        raise ValueError(f"speed range must satisfy 0 < lo <= hi, got {speed_range}")
    rng = _rng(seed, POPULATION_STREAM)
    factors = rng.uniform(lo, hi, n_clients)
    memory = rng.uniform(mem_range_gb[0], mem_range_gb[1], n_clients) * GB
    return ClientPopulation(factors * f0, memory, (float(lo), float(hi)), seed)


# --- toy protocol ---------------------------------------------------------------

def aggregate_adapter(global_adapter, deltas: Sequence, dataset_sizes: Sequence[int]):
    """Dataset-size-weighted FedAvg of adapter deltas added to the global adapter."""
    global_adapter = np.asarray(global_adapter, dtype=float)
    if len(deltas) != len(dataset_sizes):
        raise DimensionMismatch("one dataset size per delta is required")
    sizes = np.asarray(dataset_sizes, dtype=float)
    if np.any(sizes <= 0):
        raise ValueError("dataset sizes must be positive")
    stacked = np.asarray(deltas, dtype=float)
    if stacked.ndim != 2 or stacked.shape[1:] != global_adapter.shape:
        raise DimensionMismatch(
            f"deltas of shape {stacked.shape[1:]} do not match adapter {global_adapter.shape}")
    if np.all(sizes == sizes[0]):
        # bit-identical to plain averaging
        return global_adapter + stacked.mean(axis=0)
    weights = sizes / sizes.sum()
    return global_adapter + weights @ stacked


def local_update(global_adapter, seed: int, round_index: int, client: int,
                 step_scale: float):
    """Synthetic local adapter delta: uniform in [-step_scale, step_scale] per entry."""
    global_adapter = np.asarray(global_adapter, dtype=float)
    rng = _rng(seed, UPDATE_STREAM, round_index, client)
    return step_scale * rng.uniform(-1.0, 1.0, global_adapter.shape)


def proxy_loss_step(current: float, mean_beta: float, decay_rate: float,
                    floor: float) -> float:
    """One round of a synthetic loss curve; heavier pruning learns slower."""
    return floor + (current - floor) * (1.0 - decay_rate * (1.0 - mean_beta))


# --- scenario ------------------------------------------------------------------

@dataclass(frozen=True)
class ModelSetup:
    descriptor: arch.TransformerDescriptor
    partition: arch.PartitionSpec
    sizes: arch.ModelSizes
    adapter_flops: float
    emulator_flops: float


def model_setup(descriptor: arch.TransformerDescriptor, partition: arch.PartitionSpec,
                batch: int) -> ModelSetup:
    sizes = arch.partition_model(descriptor, partition)
    a, e0, _ = arch.flops_per_iteration(descriptor, partition, 0.0, batch)
    return ModelSetup(descriptor, partition, sizes, a, e0)


@dataclass(frozen=True)
class Scenario:
    """Runtime objects for one simulation, resolved from a config."""

    model: ModelSetup
    link: channel.LinkBudget
    constraints: jcpba.ConstraintSet
    population: ClientPopulation
    m_iterations: int = 20
    batch_size: int = 4
    epsilon: float = 1e-4
    max_iters: int = 50
    ubfp_beta: float = 0.3
    adapter_dim: int = 32
    step_scale: float = 0.01
    initial_loss: float = 3.0
    floor_loss: float = 1.0
    loss_decay: float = 0.05
    dataset_sizes: Optional[tuple] = None
    seed: int = 0
    f0: float = 1e12
    mem_range_gb: tuple = (4.0, 8.0)

    @property
    def n_clients(self) -> int:
        return self.population.n_clients

    @classmethod
    def from_config(cls, cfg, speed_range=None, seed=None) -> "Scenario":
        seed = cfg.simulation.seed if seed is None else seed
        m = cfg.model
        batch = cfg.training.batch_size
        setup = model_setup(m.descriptor(), m.partition(), batch)
        p = cfg.population
        population = sample_population(
            p.n_clients, p.f0_flops,
            tuple(speed_range if speed_range is not None else p.speed_range),
            tuple(p.memory_range_gb), seed)
        link = channel.LinkBudget(cfg.link.server_power_w, cfg.link.client_power_w,
                                  cfg.link.noise_power_w, cfg.link.path_loss_db)
        c = cfg.constraints
        cs = jcpba.ConstraintSet(
            total_bandwidth=cfg.link.total_bandwidth_hz, beta_min=c.beta_min,
            beta_max=c.beta_max, xi=c.xi, phi=c.phi, psi=c.psi, gamma_min=c.gamma_min,
            n_clients=p.n_clients, batch=batch, memory_overhead=c.memory_overhead)
        s = cfg.simulation
        return cls(
            model=setup, link=link, constraints=cs, population=population,
            m_iterations=cfg.training.m_iterations, batch_size=batch,
            epsilon=cfg.solver.epsilon, max_iters=cfg.solver.max_iters,
            ubfp_beta=s.ubfp_beta, adapter_dim=s.adapter_dim, step_scale=s.step_scale,
            initial_loss=s.initial_loss, floor_loss=s.floor_loss, loss_decay=s.loss_decay,
            dataset_sizes=tuple(p.dataset_sizes) if p.dataset_sizes else None,
            seed=seed, f0=p.f0_flops, mem_range_gb=tuple(p.memory_range_gb))

    def with_population(self, population: ClientPopulation) -> "Scenario":
        cs = replace(self.constraints, n_clients=population.n_clients)
        return replace(self, population=population, constraints=cs)


def build_clients(scenario: Scenario, state: channel.ChannelState) -> list:
    eta_down, eta_up = channel.spectral_efficiencies(state, scenario.link)
    sizes = scenario.model.sizes
    clients = []
    for k in range(scenario.n_clients):
        prof = latency.ComputeProfile(float(scenario.population.flops_per_s[k]),
                                      scenario.m_iterations, scenario.batch_size)
        clients.append(jcpba.ClientStatic(
            compute=prof,
            memory_budget=float(scenario.population.memory_bytes[k]),
            eta_down=float(eta_down[k]), eta_up=float(eta_up[k]),
            a=scenario.model.adapter_flops, e0=scenario.model.emulator_flops,
            adapter_bits=float(sizes.adapter_bits),
            emulator_bits=float(sizes.emulator_bits),
            update_bits=float(sizes.adapter_update_bits)))
    return clients


def round_channel(scenario: Scenario, round_index: int) -> channel.ChannelState:
    rng = _rng(scenario.seed, CHANNEL_STREAM, round_index)
    return channel.sample_channel(scenario.n_clients, scenario.link, rng, round_index)


# --- policies ----------------------------------------------------------------

def ubfp_policy(clients, cs: jcpba.ConstraintSet, beta_fixed: float = 0.3) -> jcpba.Allocation:
    """Uniform bandwidth, one fixed pruning rate for everyone."""
    k = len(clients)
    alloc = jcpba.evaluate(clients, np.full(k, beta_fixed), np.full(k, cs.total_bandwidth / k))
    violated = [c for c in jcpba.validate_allocation(alloc, clients, cs, tol=0.0)
                if c != "objective"]
    if violated:
        raise Infeasible(f"fixed pruning rate {beta_fixed} violates "
                         + ", ".join(violated), violated)
    return alloc


def allocate(scenario: Scenario, clients, policy: str):
    """Return ``(allocation, solver_iterations)`` for the named policy."""
    if policy == "jcpba":
        report = jcpba.bcd_solve(clients, scenario.constraints, scenario.epsilon,
                                 scenario.max_iters)
        return report.final, report.iterations
    if policy == "ubfp":
        return ubfp_policy(clients, scenario.constraints, scenario.ubfp_beta), 0
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


# --- rounds --------------------------------------------------------------------

@dataclass
class RoundRecord:
    round_index: int
    policy: str
    allocation: jcpba.Allocation
    breakdowns: list
    round_latency_s: float
    per_client_flops: list
    per_client_bytes: list
    proxy_loss: float
    cumulative_time_s: float
    solver_iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "round": self.round_index,
            "policy": self.policy,
            "round_latency_s": self.round_latency_s,
            "cumulative_time_s": self.cumulative_time_s,
            "proxy_loss": self.proxy_loss,
            "solver_iterations": self.solver_iterations,
            "allocation": self.allocation.to_dict(),
            "comp_s": [b.comp_s for b in self.breakdowns],
            "comm_down_s": [b.comm_down_s for b in self.breakdowns],
            "comm_up_s": [b.comm_up_s for b in self.breakdowns],
            "per_client_flops": list(self.per_client_flops),
            "per_client_bytes": list(self.per_client_bytes),
        }


@dataclass
class SimState:
    adapter: np.ndarray
    loss: float
    cumulative_time_s: float = 0.0

    @classmethod
    def initial(cls, scenario: Scenario) -> "SimState":
        return cls(np.zeros(scenario.adapter_dim), scenario.initial_loss)


def run_round(scenario: Scenario, round_index: int, policy: str, state: SimState,
              channel_state: Optional[channel.ChannelState] = None) -> RoundRecord:
    """One dispatch / local update / upload / aggregate cycle.

    Mutates ``state`` (adapter, loss, clock) and returns the round's record.
    """
    if channel_state is None:
        channel_state = round_channel(scenario, round_index)
    clients = build_clients(scenario, channel_state)
    try:
        alloc, iters = allocate(scenario, clients, policy)
    except Infeasible as exc:
        raise Infeasible(f"round {round_index}: {exc}", exc.constraints) from exc
    violated = jcpba.validate_allocation(alloc, clients, scenario.constraints)
    if violated:
        raise FedJCPBAError(f"round {round_index}: allocation violates {violated}")

    sizes = scenario.model.sizes
    a, e0 = scenario.model.adapter_flops, scenario.model.emulator_flops
    breakdowns, flops, nbytes = [], [], []
    for k, client in enumerate(clients):
        beta = float(alloc.beta[k])
        r_down, r_up = channel.rates(channel_state, scenario.link, float(alloc.bandwidth[k]), k)
        breakdowns.append(latency.client_latency(
            a, e0, beta, client.compute, sizes.adapter_bits, sizes.emulator_bits,
            sizes.adapter_update_bits, r_down, r_up))
        flops.append(scenario.m_iterations * (a + e0 * (1.0 - beta)))
        down_bits = sizes.adapter_bits + arch.emulator_bits_linear(sizes, beta)
        nbytes.append((down_bits + sizes.adapter_update_bits) / arch.BITS_PER_BYTE)
    t_round = latency.round_latency(breakdowns)

    deltas = [local_update(state.adapter, scenario.seed, round_index, k, scenario.step_scale)
              for k in range(len(clients))]
    sizes_d = scenario.dataset_sizes or (1,) * len(clients)
    state.adapter = aggregate_adapter(state.adapter, deltas, sizes_d)
    state.loss = proxy_loss_step(state.loss, float(np.mean(alloc.beta)),
                                 scenario.loss_decay, scenario.floor_loss)
    state.cumulative_time_s += t_round
    return RoundRecord(round_index, policy, alloc, breakdowns, t_round, flops, nbytes,
                       state.loss, state.cumulative_time_s, iters)


@dataclass
class RunSummary:
    policy: str
    records: list = field(default_factory=list)

    def _flat(self, name):
        return np.array([x for r in self.records for x in getattr(r, name)], dtype=float)

    @property
    def total_time_s(self) -> float:
        return self.records[-1].cumulative_time_s if self.records else 0.0

    @property
    def mean_round_latency_s(self) -> float:
        if not self.records:
            return 0.0
        return float(np.mean([r.round_latency_s for r in self.records]))

    def stats(self) -> dict:
        flops, nbytes = self._flat("per_client_flops"), self._flat("per_client_bytes")
        empty = len(flops) == 0
        return {
            "policy": self.policy,
            "rounds": len(self.records),
            "total_time_s": self.total_time_s,
            "mean_round_latency_s": self.mean_round_latency_s,
            "flops_mean": 0.0 if empty else float(flops.mean()),
            "flops_std": 0.0 if empty else float(flops.std()),
            "bytes_mean": 0.0 if empty else float(nbytes.mean()),
            "bytes_std": 0.0 if empty else float(nbytes.std()),
            "final_proxy_loss": self.records[-1].proxy_loss if self.records else None,
            "synthetic_training": True,
        }


def run_experiment(scenario: Scenario, n_rounds: int, policy: str) -> RunSummary:
    state = SimState.initial(scenario)
    summary = RunSummary(policy)
    for t in range(n_rounds):
        summary.records.append(run_round(scenario, t, policy, state))
    logger.debug("%s: %d rounds, %.3f s", policy, n_rounds, summary.total_time_s)
    return summary


# --- heterogeneity sweep ------------------------------------------------------

DEFAULT_SPEED_RANGES = ((1.0, 1.5), (0.5, 2.0), (0.2, 2.5))


@dataclass
class SweepCell:
    speed_range: tuple
    policy: str
    cv: float
    range_cv: float
    mean_round_latency_s: float
    total_time_s: float

    def to_dict(self) -> dict:
        return {
            "speed_range": list(self.speed_range),
            "policy": self.policy,
            "cv": self.cv,
            "range_cv": self.range_cv,
            "mean_round_latency_s": self.mean_round_latency_s,
            "total_time_s": self.total_time_s,
        }


@dataclass
class SweepResult:
    cells: list
    growth_pct: dict


def heterogeneity_sweep(scenario: Scenario, speed_ranges=DEFAULT_SPEED_RANGES,
                        policies=POLICIES, n_rounds: int = 50,
                        seed: Optional[int] = None) -> SweepResult:
    """Mean round latency per (speed range, policy) and each policy's growth
    from the first range to the last, in percent.

    All cells share one seed, so populations differ only in the speed range
    and every policy sees the same channels.
    """
    seed = scenario.seed if seed is None else seed
    base = replace(scenario, seed=seed)
    cells = []
    for rng_range in speed_ranges:
        pop = sample_population(base.n_clients, base.f0, rng_range, base.mem_range_gb, seed)
        sc = base.with_population(pop)
        for policy in policies:
            summary = run_experiment(sc, n_rounds, policy)
            cells.append(SweepCell(tuple(rng_range), policy, pop.heterogeneity_cv,
                                   pop.range_cv, summary.mean_round_latency_s,
                                   summary.total_time_s))
    growth = {}
    for policy in policies:
        row = [c for c in cells if c.policy == policy]
        first, last = row[0].mean_round_latency_s, row[-1].mean_round_latency_s
        growth[policy] = 100.0 * (last - first) / first
    return SweepResult(cells, growth)
