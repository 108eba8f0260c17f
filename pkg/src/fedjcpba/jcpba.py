"""Joint client-specific pruning and bandwidth allocation.

Minimises the straggler latency ``max_k T_k`` over pruning rates and
bandwidth shares by block coordinate descent. Each block is solved exactly:

* bandwidth block: ``T_k(B_k) = A_k + D_k / B_k`` -- equal-latency
  water-filling, bisection on the common finish time;
* pruning block: ``T_k(beta_k) = G_k - c_k * beta_k`` under per-client boxes
  and the shared budget ``sum(beta) <= S_max`` -- bisection on the target
  latency, then the unused budget goes to the slowest clients.

Constraint identifiers used throughout:

    C1  sum(B_k) <= B
    C2  B_k >= 0
    C3  memory footprint b(beta_k) <= client memory budget
    C4  beta_min <= beta_k <= beta_max
    C5  xi + phi/(K N) + (psi/K) sum(beta_k) <= gamma_min
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from fedjcpba.errors import (
    DegenerateClient,
    Infeasible,
    InfeasibleBox,
    InfeasibleC5,
    InfeasibleMemory,
    TooManyClients,
)
from fedjcpba.latency import ComputeProfile

BITS_PER_BYTE = 8


@dataclass(frozen=True)
class ClientStatic:
    """Everything the optimizer needs to know about one client for one round.

    Channel gains are folded into the spectral efficiencies, so a rate is
    simply ``B_k * eta``.
    """

    compute: ComputeProfile
    memory_budget: float    # bytes
    eta_down: float         # bits/s/Hz
    eta_up: float
    a: float                # adapter FLOPs per iteration
    e0: float               # unpruned emulator FLOPs per iteration
    adapter_bits: float
    emulator_bits: float
    update_bits: float

    def __post_init__(self):
        if self.eta_down <= 0 or self.eta_up <= 0:
            raise ValueError("spectral efficiencies must be positive")


@dataclass(frozen=True)
class ConstraintSet:
    total_bandwidth: float = 1e8
    beta_min: float = 0.05
    beta_max: float = 0.8
    xi: float = 0.1
    phi: float = 0.4
    psi: float = 1.0
    gamma_min: float = 0.6
    n_clients: int = 8
    batch: int = 4
    memory_overhead: float = 4.0

    def __post_init__(self):
        if self.total_bandwidth <= 0:
            raise ValueError("total_bandwidth must be positive")
        if min(self.xi, self.phi, self.psi, self.gamma_min) <= 0:
            raise ValueError("xi, phi, psi and gamma_min must be positive")
        if self.n_clients < 1 or self.batch < 1:
            raise ValueError("n_clients and batch must be >= 1")
        if self.memory_overhead < 1:
            raise ValueError("memory_overhead must be >= 1")


@dataclass
class Allocation:
    beta: np.ndarray
    bandwidth: np.ndarray
    per_client_latency: np.ndarray
    objective: float

    def to_dict(self) -> dict:
        return {
            "beta": [float(x) for x in self.beta],
            "bandwidth_hz": [float(x) for x in self.bandwidth],
            "per_client_latency_s": [float(x) for x in self.per_client_latency],
            "objective_s": float(self.objective),
        }


@dataclass
class SolveReport:
    iterations: int
    objective_trace: list
    converged: bool
    final: Allocation

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective_trace_s": [float(x) for x in self.objective_trace],
            "converged": self.converged,
        }


# --- vectorised client view ------------------------------------------------

@dataclass(frozen=True)
class _Arrays:
    m: np.ndarray
    f: np.ndarray
    a: np.ndarray
    e0: np.ndarray
    adapter_bits: np.ndarray
    emulator_bits: np.ndarray
    update_bits: np.ndarray
    eta_down: np.ndarray
    eta_up: np.ndarray
    memory_budget: np.ndarray

    @classmethod
    def of(cls, clients: Sequence[ClientStatic]) -> "_Arrays":
        def col(fn):
            return np.array([fn(c) for c in clients], dtype=float)
        return cls(
            m=col(lambda c: c.compute.m_iterations),
            f=col(lambda c: c.compute.flops_per_s),
            a=col(lambda c: c.a),
            e0=col(lambda c: c.e0),
            adapter_bits=col(lambda c: c.adapter_bits),
            emulator_bits=col(lambda c: c.emulator_bits),
            update_bits=col(lambda c: c.update_bits),
            eta_down=col(lambda c: c.eta_down),
            eta_up=col(lambda c: c.eta_up),
            memory_budget=col(lambda c: c.memory_budget),
        )

    def comp(self, beta):
        return self.m * (self.a + self.e0 * (1.0 - beta)) / self.f

    def load_hz(self, beta):
        """Hertz-seconds of transfer: bits over spectral efficiency, both directions."""
        down = (self.adapter_bits + (1.0 - beta) * self.emulator_bits) / self.eta_down
        return down + self.update_bits / self.eta_up

    def latencies(self, beta, bandwidth):
        bandwidth = np.asarray(bandwidth, dtype=float)
        load = self.load_hz(beta)
        with np.errstate(divide="ignore"):
            comm = np.where(load > 0, load / bandwidth, 0.0)
        return self.comp(beta) + comm


def _as_arrays(clients) -> _Arrays:
    if isinstance(clients, _Arrays):
        return clients
    if len(clients) == 0:
        raise ValueError("empty client list")
    return _Arrays.of(clients)


# --- constraint rearrangements ----------------------------------------------

def pruning_budget(cs: ConstraintSet) -> float:
    """Largest admissible sum of pruning rates under C5."""
    k, n = cs.n_clients, cs.batch
    slack = cs.gamma_min - cs.xi - cs.phi / (k * n)
    if slack < -1e-12 * max(1.0, cs.gamma_min):
        raise InfeasibleC5(
            f"gamma_min={cs.gamma_min} is below xi + phi/(K N) = {cs.gamma_min - slack}")
    s_max = k * max(slack, 0.0) / cs.psi
    if s_max < k * cs.beta_min - 1e-12:
        raise InfeasibleC5(
            f"pruning budget {s_max:.6g} cannot cover K * beta_min = {k * cs.beta_min:.6g}")
    return s_max


def memory_lower_bound(client: ClientStatic, cs: ConstraintSet) -> float:
    """Smallest pruning rate at which the client's model fits in memory."""
    adapter_bytes = client.adapter_bits / BITS_PER_BYTE
    emulator_bytes = client.emulator_bits / BITS_PER_BYTE
    room = client.memory_budget / cs.memory_overhead - adapter_bytes
    if room < 0:
        raise InfeasibleMemory(
            f"adapter alone needs {cs.memory_overhead * adapter_bytes:.4g} B, "
            f"budget is {client.memory_budget:.4g} B")
    if emulator_bytes == 0:
        return 0.0
    beta = min(1.0, max(0.0, 1.0 - room / emulator_bytes))
    if beta > cs.beta_max:
        raise InfeasibleMemory(
            f"memory needs pruning rate {beta:.4f} > beta_max={cs.beta_max}")
    return beta


def _memory_bounds(arr: _Arrays, cs: ConstraintSet) -> np.ndarray:
    adapter_bytes = arr.adapter_bits / BITS_PER_BYTE
    emulator_bytes = arr.emulator_bits / BITS_PER_BYTE
    room = arr.memory_budget / cs.memory_overhead - adapter_bytes
    with np.errstate(divide="ignore", invalid="ignore"):
        beta = np.where(emulator_bytes > 0, 1.0 - room / emulator_bytes, 0.0)
    beta = np.clip(beta, 0.0, 1.0)
    return np.where(room < 0, np.inf, beta)


def beta_boxes(clients, cs: ConstraintSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-client ``(lo, hi)`` pruning bounds from C3 and C4."""
    arr = _as_arrays(clients)
    mem = _memory_bounds(arr, cs)
    if np.any(np.isinf(mem)):
        k = int(np.argmax(np.isinf(mem)))
        raise InfeasibleMemory(f"client {k}: adapter alone exceeds the memory budget")
    lo = np.maximum(cs.beta_min, mem)
    hi = np.full_like(lo, cs.beta_max)
    if np.any(lo > hi):
        k = int(np.argmax(lo > hi))
        raise InfeasibleBox(f"client {k}: pruning box [{lo[k]:.4f}, {hi[k]:.4f}] is empty")
    return lo, hi


def feasibility_check(clients, cs: ConstraintSet) -> list[str]:
    """Identifiers of the constraints that rule out every allocation."""
    problems = set()
    if cs.total_bandwidth <= 0:
        problems.add("C1")
    if not 0.0 <= cs.beta_min <= cs.beta_max < 1.0:
        problems.add("C4")
    s_max = None
    try:
        s_max = pruning_budget(cs)
    except InfeasibleC5:
        problems.add("C5")
    arr = _as_arrays(clients)
    mem = _memory_bounds(arr, cs)
    if np.any(mem > cs.beta_max):
        problems.add("C3")
    if not problems and s_max is not None:
        lo = np.maximum(cs.beta_min, mem)
        if lo.sum() > s_max + 1e-12:
            problems.add("C5")
    return sorted(problems)


def latency_lower_bound(clients, cs: ConstraintSet) -> float:
    """No allocation beats the slowest client's compute time at beta_max."""
    arr = _as_arrays(clients)
    return float(np.max(arr.comp(np.full(len(arr.f), cs.beta_max))))


# --- block solvers -----------------------------------------------------------

def water_fill(comp, load, total, rtol=0.0, max_iter=400):
    """Min-max split of ``total`` bandwidth for latencies ``comp + load / B_k``.

    Broadcasts over leading dimensions; the client axis is last. Clients with
    zero load get no bandwidth and finish at ``comp``. Returns
    ``(bandwidth, T)`` where ``T`` is the resulting maximum latency.

    The default bisects until the bracket is two adjacent floats: a client
    whose finish time sits just above its compute time makes ``B_k`` very
    sensitive to ``T``, and any leftover error is spread over everyone by the
    final rescale to ``sum(B_k) == total``.
    """
    comp = np.asarray(comp, dtype=float)
    load = np.asarray(load, dtype=float)
    if np.any(~np.isfinite(load)) or np.any(load < 0):
        raise DegenerateClient("transfer loads must be finite and non-negative")
    total = np.asarray(total, dtype=float)
    if np.any(total <= 0):
        raise ValueError("total bandwidth must be positive")
    active = load > 0
    any_active = active.any(axis=-1)
    lo = np.where(any_active, np.where(active, comp, -np.inf).max(axis=-1), 0.0)
    hi = lo + load.sum(axis=-1) / total
    safe_load = np.where(active, load, 0.0)

    def demand(t):
        gap = t[..., None] - comp
        gap = np.where(active, gap, 1.0)
        return (safe_load / gap).sum(axis=-1)

    for _ in range(max_iter):
        if np.all(hi - lo <= rtol * np.abs(hi)):
            break
        mid = 0.5 * (lo + hi)
        if np.all((mid <= lo) | (mid >= hi)):
            break
        over = demand(mid) > total
        lo = np.where(over, mid, lo)
        hi = np.where(over, hi, mid)

    gap = np.where(active, hi[..., None] - comp, 1.0)
    bandwidth = safe_load / gap
    used = bandwidth.sum(axis=-1)
    scale = np.where(used > 0, total / np.where(used > 0, used, 1.0), 0.0)
    bandwidth = bandwidth * scale[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        lat = comp + np.where(active, safe_load / bandwidth, 0.0)
    return bandwidth, lat.max(axis=-1)


def min_max_budget(base, slope, lo, hi, budget, rtol=1e-13, max_iter=400):
    """Min-max of ``base - slope * beta`` with ``lo <= beta <= hi`` and
    ``sum(beta) <= budget``.

    The smallest target ``T`` whose required pruning fits the budget is found
    by bisection; leftover budget is then handed to the slowest clients first
    (ties broken by lowest index), which leaves the maximum unchanged.
    """
    base = np.asarray(base, dtype=float)
    slope = np.asarray(slope, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(lo > hi):
        raise InfeasibleBox("empty pruning box")
    if lo.sum() > budget + 1e-12:
        raise Infeasible(f"sum of lower bounds {lo.sum():.6g} exceeds budget {budget:.6g}",
                         ("C5",))
    flat = slope <= 0
    safe_slope = np.where(flat, 1.0, slope)

    def required(t):
        return np.where(flat, lo, np.clip((base - t) / safe_slope, lo, hi))

    t_lo = float(np.max(base - slope * hi))
    t_hi = float(np.max(base - slope * lo))
    if required(t_lo).sum() <= budget:
        t_hi = t_lo
    else:
        for _ in range(max_iter):
            if t_hi - t_lo <= rtol * abs(t_hi):
                break
            mid = 0.5 * (t_lo + t_hi)
            if mid <= t_lo or mid >= t_hi:
                break
            if required(mid).sum() > budget:
                t_lo = mid
            else:
                t_hi = mid
    beta = required(t_hi)

    residual = budget - beta.sum()
    if residual > 0:
        lat = base - slope * beta
        order = np.lexsort((np.arange(len(beta)), -lat))
        room = (hi - beta)[order]
        before = np.cumsum(room) - room
        give = np.clip(residual - before, 0.0, room)
        beta[order] += give
        beta = np.minimum(beta, hi)
    return beta, float(np.max(base - slope * beta))


def bandwidth_subproblem(clients, beta, total_bandwidth: float):
    """Optimal bandwidths for fixed pruning rates; all loaded clients finish together."""
    arr = _as_arrays(clients)
    beta = np.asarray(beta, dtype=float)
    bandwidth, _ = water_fill(arr.comp(beta), arr.load_hz(beta), total_bandwidth)
    return bandwidth, float(np.max(arr.latencies(beta, bandwidth)))


def pruning_subproblem(clients, bandwidth, cs: ConstraintSet):
    """Optimal pruning rates for fixed bandwidths under C3, C4 and C5."""
    arr = _as_arrays(clients)
    bandwidth = np.asarray(bandwidth, dtype=float)
    if np.any(bandwidth <= 0):
        raise ValueError("pruning step needs strictly positive bandwidths")
    s_max = pruning_budget(cs)
    lo, hi = beta_boxes(arr, cs)
    # T_k(beta) = base - slope * beta with B_k held fixed
    base = arr.latencies(np.zeros_like(bandwidth), bandwidth)
    slope = (arr.m * arr.e0 / arr.f
             + arr.emulator_bits / (bandwidth * arr.eta_down))
    beta, _ = min_max_budget(base, slope, lo, hi, s_max)
    return beta, float(np.max(arr.latencies(beta, bandwidth)))


def _allocation(arr: _Arrays, beta, bandwidth) -> Allocation:
    beta = np.array(beta, dtype=float)
    bandwidth = np.array(bandwidth, dtype=float)
    lat = arr.latencies(beta, bandwidth)
    return Allocation(beta, bandwidth, lat, float(lat.max()))


def evaluate(clients, beta, bandwidth) -> Allocation:
    """Package a given decision as an Allocation with its latencies."""
    return _allocation(_as_arrays(clients), beta, bandwidth)


def _check_size(arr: _Arrays, cs: ConstraintSet):
    if len(arr.f) != cs.n_clients:
        raise ValueError(f"constraint set is for K={cs.n_clients} clients, "
                         f"got {len(arr.f)}")


def bcd_solve(clients, cs: ConstraintSet, eps: float = 1e-4, max_iters: int = 50,
              initial_beta=None, initial_bandwidth=None,
              callback: Optional[Callable[[str, Allocation], None]] = None) -> SolveReport:
    """Alternate exact pruning and bandwidth updates until the straggler
    latency changes by less than ``eps`` seconds or ``max_iters`` is hit.

    ``callback(stage, allocation)`` is invoked after every block update with
    ``stage`` in {"init", "pruning", "bandwidth"}.
    """
    arr = _as_arrays(clients)
    _check_size(arr, cs)
    problems = feasibility_check(arr, cs)
    if problems:
        raise Infeasible("no feasible allocation: " + ", ".join(problems), problems)
    k = len(arr.f)
    lo, _ = beta_boxes(arr, cs)
    beta = lo.copy() if initial_beta is None else np.array(initial_beta, dtype=float)
    if initial_bandwidth is None:
        bandwidth = np.full(k, cs.total_bandwidth / k)
    else:
        bandwidth = np.array(initial_bandwidth, dtype=float)

    current = _allocation(arr, beta, bandwidth)
    if callback:
        callback("init", current)
    trace = [current.objective]
    converged = False
    t = 0
    while t < max_iters:
        beta, _ = pruning_subproblem(arr, bandwidth, cs)
        if callback:
            callback("pruning", _allocation(arr, beta, bandwidth))
        bandwidth, _ = bandwidth_subproblem(arr, beta, cs.total_bandwidth)
        current = _allocation(arr, beta, bandwidth)
        if callback:
            callback("bandwidth", current)
        t += 1
        trace.append(current.objective)
        if abs(trace[-1] - trace[-2]) < eps:
            converged = True
            break
    return SolveReport(iterations=t, objective_trace=trace, converged=converged, final=current)


# --- global optimum ------------------------------------------------------------

def _needed_bandwidth(arr: _Arrays, target: float, lo, hi, s_max, rtol=1e-13):
    """Least total bandwidth meeting ``target`` for every client, optimising
    the pruning rates, or ``inf`` when the target is unreachable.

    Per client, the bandwidth needed at rate beta is
    ``D(beta) / (target - A(beta)) = (p - q beta) / (r + s beta)``, convex and
    decreasing in beta, so the budgeted minimum follows from one multiplier.
    """
    s = arr.m * arr.e0 / arr.f
    r = target - arr.comp(np.zeros_like(s))
    p = arr.load_hz(np.zeros_like(s))
    q = arr.emulator_bits / arr.eta_down
    # target must exceed the compute time: r + s * beta > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        edge = np.where(s > 0, -r / s, np.where(r > 0, -np.inf, np.inf))
    if np.any(edge >= hi):
        return np.inf, None
    lo_eff = np.maximum(lo, edge)

    def need(beta):
        with np.errstate(divide="ignore"):
            return np.where(r + s * beta > 0, (p - q * beta) / (r + s * beta), np.inf)

    if hi.sum() <= s_max:
        beta = hi.copy()
        return float(need(beta).sum()), beta
    if lo.sum() > s_max + 1e-12:
        return np.inf, None
    strength = q * r + p * s  # -g'(beta) * (r + s beta)^2, positive

    def beta_at(lam):
        with np.errstate(divide="ignore", invalid="ignore"):
            b = (np.sqrt(strength / lam) - r) / np.where(s > 0, s, 1.0)
        b = np.where(s > 0, b, hi)
        return np.clip(b, lo_eff, hi)

    if lo_eff.sum() > s_max:
        return np.inf, None
    # bracket the multiplier in log space
    lam_lo, lam_hi = 1e-300, 1e300
    for _ in range(400):
        mid = np.sqrt(lam_lo * lam_hi)
        if beta_at(mid).sum() > s_max:
            lam_lo = mid
        else:
            lam_hi = mid
        if lam_hi <= lam_lo * (1 + rtol):
            break
    beta = beta_at(lam_hi)
    return float(need(beta).sum()), beta


def joint_optimum(clients, cs: ConstraintSet, rtol: float = 1e-12) -> Allocation:
    """Global minimum of the straggler latency over pruning and bandwidth jointly.

    Bisection on the target latency: a target is reachable iff the least total
    bandwidth it needs (a separable convex problem in the pruning rates) is at
    most the available bandwidth.
    """
    arr = _as_arrays(clients)
    _check_size(arr, cs)
    problems = feasibility_check(arr, cs)
    if problems:
        raise Infeasible("no feasible allocation: " + ", ".join(problems), problems)
    s_max = pruning_budget(cs)
    lo, hi = beta_boxes(arr, cs)
    t_lo = latency_lower_bound(arr, cs)
    _, t_hi = bandwidth_subproblem(arr, lo, cs.total_bandwidth)
    beta = lo
    for _ in range(400):
        if t_hi - t_lo <= rtol * t_hi:
            break
        mid = 0.5 * (t_lo + t_hi)
        need, b = _needed_bandwidth(arr, mid, lo, hi, s_max)
        if need <= cs.total_bandwidth:
            t_hi, beta = mid, b
        else:
            t_lo = mid
    bandwidth, _ = bandwidth_subproblem(arr, beta, cs.total_bandwidth)
    return _allocation(arr, beta, bandwidth)


# --- oracle and validation ---------------------------------------------------

def brute_force_oracle(clients, cs: ConstraintSet, grid_beta: int = 201,
                       frontier: bool = True) -> Allocation:
    """Best allocation over a uniform pruning grid with exact bandwidth splits.

    Grid points violating C3 or C5 are rejected. With ``frontier`` the last
    client's rate is not enumerated but set to its largest admissible grid
    value: the optimal straggler latency never increases when one client's
    pruning rate grows, so this yields the same optimum as the full grid at a
    fraction of the cost.
    """
    arr = _as_arrays(clients)
    k = len(arr.f)
    if k > 3:
        raise TooManyClients(f"oracle enumerates at most 3 clients, got {k}")
    _check_size(arr, cs)
    s_max = pruning_budget(cs)
    mem = _memory_bounds(arr, cs)
    if grid_beta == 1:
        grid = np.array([cs.beta_min])
    else:
        grid = np.linspace(cs.beta_min, cs.beta_max, grid_beta)
    tol = 1e-12
    admissible = [grid[grid >= mem[i] - tol] for i in range(k)]
    if any(len(g) == 0 for g in admissible):
        raise InfeasibleMemory("some client has no admissible grid point")

    if frontier:
        if k == 1:
            head = np.zeros((1, 0))
        else:
            head = np.array(list(itertools.product(*admissible[:-1])), dtype=float)
        room = s_max - head.sum(axis=1)
        last = admissible[-1]
        idx = np.searchsorted(last, room + tol, side="right") - 1
        ok = idx >= 0
        betas = np.column_stack([head[ok], last[idx[ok]]])
    else:
        betas = np.array(list(itertools.product(*admissible)), dtype=float).reshape(-1, k)
        betas = betas[betas.sum(axis=1) <= s_max + tol]
    if len(betas) == 0:
        raise Infeasible("no grid point satisfies C5", ("C5",))

    comp = arr.comp(betas)
    load = arr.load_hz(betas)
    bandwidth, t_star = water_fill(comp, load, cs.total_bandwidth)
    best = int(np.argmin(t_star))
    return _allocation(arr, betas[best], bandwidth[best])


def validate_allocation(alloc: Allocation, clients, cs: ConstraintSet,
                        tol: float = 1e-6) -> list[str]:
    """Re-check C1-C5 and the objective from first principles.

    Returns the identifiers of violated constraints ("objective" if the
    reported maximum disagrees with the reported per-client latencies).
    """
    beta = np.asarray(alloc.beta, dtype=float)
    bandwidth = np.asarray(alloc.bandwidth, dtype=float)
    violated = []
    if bandwidth.sum() > cs.total_bandwidth + tol:
        violated.append("C1")
    if np.any(bandwidth < -tol):
        violated.append("C2")
    for client, b in zip(clients, beta):
        needed = cs.memory_overhead * (client.adapter_bits
                                       + (1.0 - b) * client.emulator_bits) / BITS_PER_BYTE
        if needed > client.memory_budget * (1 + tol):
            violated.append("C3")
            break
    if np.any(beta < cs.beta_min - tol) or np.any(beta > cs.beta_max + tol):
        violated.append("C4")
    k, n = len(beta), cs.batch
    if cs.xi + cs.phi / (k * n) + cs.psi / k * beta.sum() > cs.gamma_min + tol:
        violated.append("C5")
    lat = np.asarray(alloc.per_client_latency, dtype=float)
    if abs(float(lat.max()) - alloc.objective) > tol * max(1.0, abs(alloc.objective)):
        violated.append("objective")
    return violated
