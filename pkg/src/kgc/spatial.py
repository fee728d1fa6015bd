"""From the congruence to spatial-picture fields, and the Eulerian checks.

Two routes produce gridded density and velocity:

* ``deposit`` scatters label-carried charge conservatively with a
  nearest-grid-point or cloud-in-cell kernel (exact charge conservation);
* ``pullback`` inverts q(a, t) = x per grid node and evaluates
  J^{-1} rho0 and qdot there with four-point interpolation.  It is slow but
  free of the cell-crossing noise that CIC injects into time derivatives, so
  convergence studies of differentiated residuals use it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InsufficientHistory, KGCError, NotApplicable
from .lattice import Lattice, MetricSignature, fd_gradient, fd_second, interpolate_cubic
from .material import CongruenceState, KGCongruenceState, deformation
from .parallel import map_blocks, ordered_sum

KERNELS = ("nearest", "multilinear")


@dataclass(frozen=True)
class SpatialFields:
    t: float
    rho: np.ndarray
    mom: np.ndarray  # rho v^i, upper index, (n, *shape)
    v: np.ndarray  # zero where not valid
    valid: np.ndarray
    mom4: np.ndarray | None = None  # Klein-Gordon: rhobar v^4
    v4: np.ndarray | None = None


def kernel_weights(points: np.ndarray, grid: Lattice, kernel: str):
    """Yield (flat_index, weight) pairs; weights at each point are >= 0 and sum to 1."""
    o = np.array(grid.origin).reshape(-1, 1)
    h = grid.spacing.reshape(-1, 1)
    s = (points - o) / h
    counts = np.array(grid.counts).reshape(-1, 1)
    if kernel == "nearest":
        idx = np.mod(np.floor(s + 0.5).astype(np.int64), counts)
        yield np.ravel_multi_index(tuple(idx), grid.shape), np.ones(points.shape[1])
        return
    if kernel != "multilinear":
        raise ValueError(f"unknown kernel {kernel!r}")
    base = np.floor(s).astype(np.int64)
    frac = s - base
    n = grid.n
    for corner in range(2**n):
        bits = [(corner >> ax) & 1 for ax in range(n)]
        w = np.ones(points.shape[1])
        idx = []
        for ax, b in enumerate(bits):
            w = w * (frac[ax] if b else 1.0 - frac[ax])
            idx.append(np.mod(base[ax] + b, grid.counts[ax]))
        yield np.ravel_multi_index(tuple(idx), grid.shape), w


def deposit_charges(positions: np.ndarray, charges: Sequence[np.ndarray], grid: Lattice,
                    kernel: str = "multilinear") -> list[np.ndarray]:
    """Scatter per-label charges to grid densities (charge per cell volume)."""
    n = positions.shape[0]
    pts = positions.reshape(n, -1)
    qs = [np.asarray(c, dtype=float).reshape(-1) for c in charges]

    def block(sl):
        out = np.zeros((len(qs), grid.size))
        for flat, w in kernel_weights(pts[:, sl], grid, kernel):
            for k, q in enumerate(qs):
                out[k] += np.bincount(flat, weights=w * q[sl], minlength=grid.size)
        return out

    total = ordered_sum(map_blocks(block, pts.shape[1])) / grid.cell_volume
    return [row.reshape(grid.shape) for row in total]


def _velocity(mom: np.ndarray, rho: np.ndarray, rho_floor: float):
    valid = np.abs(rho) >= rho_floor * float(np.abs(rho).max())
    safe = np.where(valid, rho, 1.0)
    return np.where(valid, mom / safe, 0.0), valid


def deposit(state: CongruenceState, labels: Lattice, grid: Lattice, kernel: str = "multilinear",
            rho_floor: float = 1e-3) -> SpatialFields:
    charge = state.rho0 * labels.cell_volume
    out = deposit_charges(state.q, [charge] + [charge * v for v in state.qdot], grid, kernel)
    rho, mom = out[0], np.stack(out[1:])
    v, valid = _velocity(mom, rho, rho_floor)
    return SpatialFields(state.t, rho, mom, v, valid)


def deposit_kg(state: KGCongruenceState, labels: Lattice, grid: Lattice, constants,
               kernel: str = "multilinear", rho_floor: float = 1e-3) -> SpatialFields:
    charge = state.rhobar0 * np.exp(-state.tau / constants.alpha) * labels.cell_volume
    sources = [charge] + [charge * v for v in state.qdot] + [charge * constants.c * state.taudot]
    out = deposit_charges(state.q, sources, grid, kernel)
    rho, mom, mom4 = out[0], np.stack(out[1:-1]), out[-1]
    v, valid = _velocity(mom, rho, rho_floor)
    v4 = np.where(valid, mom4 / np.where(valid, rho, 1.0), 0.0)
    return SpatialFields(state.t, rho, mom, v, valid, mom4, v4)


def inverse_map(q: np.ndarray, labels: Lattice, grid: Lattice, tol: float = 1e-13,
                max_iter: int = 200) -> np.ndarray:
    """Labels a(x, t) with q(a, t) = x for every grid node, by fixed-point iteration.

    Iterates a <- x - u(a) with u = q - a interpolated to fourth order; the
    returned labels are unwrapped (not folded into the box).
    """
    disp = q - labels.coords()
    x = grid.coords()
    scale = tol * max(labels.box)

    def u_at(a):
        return np.stack([interpolate_cubic(disp[i], labels, a) for i in range(labels.n)])

    a = x - u_at(x)
    for _ in range(max_iter):
        new = x - u_at(a)
        err = float(np.abs(new - a).max())
        a = new
        if err <= scale:
            return a
    raise KGCError(f"inverse map did not converge (last update {err:.3e})")


def pullback(state: CongruenceState, labels: Lattice, grid: Lattice, rho_floor: float = 1e-3,
             jacobian_floor: float | None = None) -> SpatialFields:
    """rho = J^{-1} rho0 and v = qdot evaluated at a(x, t)."""
    deform = deformation(state.q, labels, jacobian_floor, state.t)
    a = inverse_map(state.q, labels, grid)
    rho = interpolate_cubic(state.rho0 / deform.J, labels, a)
    v = np.stack([interpolate_cubic(c, labels, a) for c in state.qdot])
    valid = np.abs(rho) >= rho_floor * float(np.abs(rho).max())
    return SpatialFields(state.t, rho, rho * v, np.where(valid, v, 0.0), valid)


def pullback_kg(state: KGCongruenceState, labels: Lattice, grid: Lattice, constants,
                rho_floor: float = 1e-3, jacobian_floor: float | None = None) -> SpatialFields:
    """Spatial rhobar, v^r, v^4 through the inverse map."""
    deform = deformation(state.q, labels, jacobian_floor, state.t)
    a = inverse_map(state.q, labels, grid)
    dens = state.rhobar0 / deform.J * np.exp(-state.tau / constants.alpha)
    rho = interpolate_cubic(dens, labels, a)
    v = np.stack([interpolate_cubic(c, labels, a) for c in state.qdot])
    v4 = constants.c * interpolate_cubic(state.taudot, labels, a)
    valid = np.abs(rho) >= rho_floor * float(np.abs(rho).max())
    return SpatialFields(state.t, rho, rho * v, np.where(valid, v, 0.0), valid, rho * v4,
                         np.where(valid, v4, 0.0))


# ---------------------------------------------------------------------------
# residuals


def uniform_step(times: Sequence[float], minimum: int = 3) -> float:
    times = np.asarray(times, dtype=float)
    if times.size < minimum:
        raise InsufficientHistory(f"need at least {minimum} snapshots, got {times.size}")
    steps = np.diff(times)
    if np.any(np.abs(steps - steps[0]) > 1e-9 * abs(steps[0])):
        raise InsufficientHistory("snapshots are not at a uniform cadence")
    return float(steps[0])


def divergence(mom: np.ndarray, grid: Lattice) -> np.ndarray:
    return sum(fd_gradient(mom[i], grid, i) for i in range(grid.n))


def continuity_residual(history: Sequence[SpatialFields], grid: Lattice, constants=None) -> float:
    """max |d rho / dt + d_i (rho v^i)| over interior snapshots and valid sites.

    With Klein-Gordon fields and ``constants`` given, the flux along the
    fourth coordinate enters as the source (m c / hbar) rhobar v^4.
    """
    dt = uniform_step([f.t for f in history])
    worst = 0.0
    for prev, cur, nxt in zip(history, history[1:], history[2:]):
        res = (nxt.rho - prev.rho) / (2 * dt) + divergence(cur.mom, grid)
        if constants is not None and cur.mom4 is not None:
            res = res + constants.inverse_compton * cur.mom4
        mask = prev.valid & cur.valid & nxt.valid
        if mask.any():
            worst = max(worst, float(np.abs(res[mask]).max()))
    return worst


def euler_residual(history: Sequence[SpatialFields], grid: Lattice, signature: MetricSignature,
                   c: float = 1.0) -> float:
    """max |d(rho v^i)/dt - c^2 g^{ij} d_j rho|."""
    dt = uniform_step([f.t for f in history])
    worst = 0.0
    for prev, cur, nxt in zip(history, history[1:], history[2:]):
        mask = prev.valid & cur.valid & nxt.valid
        for i, z in enumerate(signature.zeta):
            res = (nxt.mom[i] - prev.mom[i]) / (2 * dt) - c**2 * z * fd_gradient(cur.rho, grid, i)
            if mask.any():
                worst = max(worst, float(np.abs(res[mask]).max()))
    return worst


def curl_field(mom: np.ndarray, grid: Lattice, signature: MetricSignature) -> np.ndarray:
    """Antisymmetrized d_i J_j - d_j J_i of the lower-index current J_i = g_ij rho v^j.

    Shape (n_pairs, *shape), pairs ordered (0,1), (0,2), ..., (n-2, n-1).
    """
    if grid.n < 2:
        raise NotApplicable("the gradient condition is trivially satisfied in one dimension")
    low = signature.lower_index(mom)
    pairs = [(i, j) for i in range(grid.n) for j in range(i + 1, grid.n)]
    return np.stack([fd_gradient(low[j], grid, i) - fd_gradient(low[i], grid, j) for i, j in pairs])


def gradient_condition_residual(fields: SpatialFields, grid: Lattice,
                                signature: MetricSignature) -> float:
    curl = curl_field(fields.mom, grid, signature)
    return float(np.abs(curl[:, fields.valid]).max()) if fields.valid.any() else 0.0


def reconstruct_amplitude(history: Sequence[SpatialFields], psi0: np.ndarray, c: float = 1.0):
    """Psi(x, t) = Psi0(x) + c^2 * trapezoidal integral of rho at fixed x.

    Returns ``(times, Psi)`` with Psi of shape (n_snapshots, *shape).
    """
    times = np.array([f.t for f in history])
    if times.size < 1 or abs(times[0]) > 0:
        raise InsufficientHistory("reconstruction needs snapshots starting at t = 0")
    if times.size > 1:
        uniform_step(times, minimum=2)
    rho = np.stack([f.rho for f in history])
    out = np.empty_like(rho)
    out[0] = psi0
    incr = 0.5 * np.diff(times).reshape((-1,) + (1,) * psi0.ndim) * (rho[1:] + rho[:-1])
    out[1:] = psi0 + c**2 * np.cumsum(incr, axis=0)
    return times, out


def _cumtrapz(f: np.ndarray, axis: int, h: float) -> np.ndarray:
    f = np.moveaxis(f, axis, 0)
    out = np.zeros_like(f)
    out[1:] = np.cumsum(0.5 * h * (f[1:] + f[:-1]), axis=0)
    return np.moveaxis(out, 0, axis)


def reconstruct_amplitude_line(history: Sequence[SpatialFields], psi0: np.ndarray, grid: Lattice,
                               signature: MetricSignature, c: float = 1.0):
    """Line-integral route for Psi = int J_0 c dt + J_i dx^i.

    Path: time-like leg at the reference node (grid site 0), then a staircase
    of spatial legs along axis 1, 2, ... at the final time.
    """
    times, timelike = reconstruct_amplitude(history, psi0, c)
    out = np.empty_like(timelike)
    ref = (0,) * grid.n
    for k, f in enumerate(history):
        low = signature.lower_index(f.mom)
        acc = np.full(grid.shape, timelike[k][ref])
        for i in range(grid.n):
            sl = tuple(slice(None) if ax <= i else slice(0, 1) for ax in range(grid.n))
            acc = acc + _cumtrapz(low[i][sl], i, grid.spacing[i])
        out[k] = acc
    return times, out


def wave_residual(psi: np.ndarray, dt: float, grid: Lattice, signature: MetricSignature,
                  c: float = 1.0, jumps: Sequence[float] | None = None) -> float:
    """max |g^{mu nu} d_mu d_nu Psi| over interior snapshots (central differences)."""
    if psi.shape[0] < 3:
        raise InsufficientHistory("wave residual needs at least 3 snapshots")
    jumps = jumps or (0.0,) * grid.n
    worst = 0.0
    for n in range(1, psi.shape[0] - 1):
        res = (psi[n + 1] - 2 * psi[n] + psi[n - 1]) / (c * dt) ** 2
        for i, z in enumerate(signature.zeta):
            res = res + z * fd_second(psi[n], grid, i, jumps[i])
        worst = max(worst, float(np.abs(res).max()))
    return worst
