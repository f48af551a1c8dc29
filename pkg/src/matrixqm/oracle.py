"""Independent quantum-mechanics reference: Schrödinger solver + Nelson SDE.

A 1D norm-preserving solver (split-step Fourier on periodic grids,
Crank-Nicolson on Dirichlet grids), the wavefunction <-> (rho, S)
constructions, and an Euler-Maruyama walker simulator whose drift is
b = v + u with mass*v = dS/dx and u = nu * d(ln rho)/dx.  Used to
calibrate the estimator pipeline and to compare against matrix-model
eigenvalue statistics under the emergent hbar.

The Nelson diffusion coefficient nu is always an explicit argument; both
conventions nu = hbar/(2*mass) (Nelson's) and nu = hbar/mass are exercised
by the comparison harness rather than hard-coded.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass
class WaveFunction:
    """Complex amplitudes on a uniform 1D grid, kept normalized."""

    x: np.ndarray
    psi: np.ndarray
    hbar: float
    mass: float
    time: float = 0.0
    boundary: str = PERIODIC

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.psi = np.asarray(self.psi, dtype=complex)
        if self.hbar <= 0 or self.mass <= 0:
            raise ValueError("hbar and mass must be > 0")
        if self.boundary not in (PERIODIC, DIRICHLET):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.psi) ** 2) * self.h)

    def normalized(self) -> "WaveFunction":
        n = np.sqrt(self.norm)
        if n == 0:
            raise ValueError("cannot normalize a vanishing wavefunction")
        return WaveFunction(self.x, self.psi / n, self.hbar, self.mass, self.time, self.boundary)

    def density(self) -> np.ndarray:
        return np.abs(self.psi) ** 2


@dataclass
class MadelungPair:
    """(rho, S) with psi = sqrt(rho) exp(i S / hbar); S fixed up to a constant."""

    x: np.ndarray
    rho: np.ndarray
    S: np.ndarray
    hbar: float
    mask: np.ndarray | None = None


@dataclass
class NelsonEnsemble:
    walkers: np.ndarray
    nu: float
    time: float = 0.0
    reflections: int = 0


@dataclass
class DriftField:
    x: np.ndarray
    b: np.ndarray  # total drift v + u
    v: np.ndarray
    u: np.ndarray
    mask: np.ndarray


def gaussian_packet(x, x0, sigma0, p0, hbar, mass, boundary=PERIODIC) -> WaveFunction:
    """Minimum-uncertainty packet: position spread sigma0, mean momentum p0."""
    psi = np.exp(-((x - x0) ** 2) / (4.0 * sigma0**2) + 1j * p0 * x / hbar)
    wf = WaveFunction(np.asarray(x, float), psi, hbar, mass, 0.0, boundary)
    return wf.normalized()


def harmonic_eigenstate(x, n, omega0, hbar, mass, boundary=PERIODIC) -> WaveFunction:
    """n-th oscillator eigenstate of V = (1/2) mass omega0^2 x^2."""
    from numpy.polynomial.hermite import hermval

    alpha = mass * omega0 / hbar
    xi = np.sqrt(alpha) * np.asarray(x, float)
    coeffs = np.zeros(n + 1)
    coeffs[n] = 1.0
    psi = hermval(xi, coeffs) * np.exp(-0.5 * xi**2)
    wf = WaveFunction(np.asarray(x, float), psi.astype(complex), hbar, mass, 0.0, boundary)
    return wf.normalized()


def free_packet_width(sigma0, t, hbar, mass) -> float:
    """Analytic spreading law sigma(t)^2 = sigma0^2 (1 + (hbar t / (2 m sigma0^2))^2)."""
    return sigma0 * np.sqrt(1.0 + (hbar * t / (2.0 * mass * sigma0**2)) ** 2)


def _check_timestep(wf: WaveFunction, V: np.ndarray, dt: float):
    k_max = np.pi / wf.h
    e_max = wf.hbar**2 * k_max**2 / (2.0 * wf.mass) + float(np.max(np.abs(V)))
    if dt * e_max / wf.hbar > 0.1:
        warnings.warn(
            f"dt*E_max/hbar = {dt * e_max / wf.hbar:.3g} > 0.1; accuracy may suffer",
            RuntimeWarning,
            stacklevel=3,
        )


def _evolve_split_step(wf: WaveFunction, V: np.ndarray, dt: float, steps: int) -> np.ndarray:
    n = len(wf.x)
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=wf.h)
    half_v = np.exp(-0.5j * V * dt / wf.hbar)
    kin = np.exp(-0.5j * wf.hbar * k**2 * dt / wf.mass)
    psi = wf.psi.copy()
    for _ in range(steps):
        psi = half_v * psi
        psi = np.fft.ifft(kin * np.fft.fft(psi))
        psi = half_v * psi
    return psi


def _evolve_crank_nicolson(wf: WaveFunction, V: np.ndarray, dt: float, steps: int) -> np.ndarray:
    # Cayley form (1 + i dt H / 2hbar) psi' = (1 - i dt H / 2hbar) psi, psi = 0 at the ends.
    n = len(wf.x)
    h = wf.h
    t = wf.hbar**2 / (2.0 * wf.mass * h**2)
    diag = 2.0 * t + V
    off = -t * np.ones(n - 1)
    z = 0.5j * dt / wf.hbar

    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = z * off
    ab[1, :] = 1.0 + z * diag
    ab[2, :-1] = z * off

    psi = wf.psi.copy()
    psi[0] = psi[-1] = 0.0
    for _ in range(steps):
        rhs = (1.0 - z * diag) * psi
        rhs[:-1] -= z * off * psi[1:]
        rhs[1:] -= z * off * psi[:-1]
        psi = solve_banded((1, 1), ab, rhs)
        psi[0] = psi[-1] = 0.0
    return psi


def evolve_schrodinger(wf: WaveFunction, V, dt: float, steps: int) -> WaveFunction:
    """Norm-preserving evolution under i hbar dpsi/dt = [-hbar^2/(2m) d^2/dx^2 + V] psi."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    V = np.broadcast_to(np.asarray(V, dtype=float), wf.x.shape)
    if np.iscomplexobj(V):
        raise ValueError("V must be real")
    _check_timestep(wf, V, dt)
    if wf.boundary == PERIODIC:
        psi = _evolve_split_step(wf, V, dt, steps)
    else:
        psi = _evolve_crank_nicolson(wf, V, dt, steps)
    return WaveFunction(wf.x, psi, wf.hbar, wf.mass, wf.time + steps * dt, wf.boundary)


def build_wavefunction(m: MadelungPair, mass: float = 1.0, boundary=PERIODIC) -> WaveFunction:
    """psi = sqrt(rho) exp(i S / hbar), normalized."""
    rho = np.asarray(m.rho, dtype=float)
    if np.any(rho < 0):
        raise ValueError("rho must be >= 0")
    # A masked decomposition carries no phase information at nodes/tails
    # (S is NaN there); any finite stand-in works since rho is negligible.
    S = np.where(np.isfinite(m.S), m.S, 0.0)
    psi = np.sqrt(rho) * np.exp(1j * S / m.hbar)
    return WaveFunction(m.x, psi, m.hbar, mass, 0.0, boundary).normalized()


def madelung_decompose(wf: WaveFunction, rho_floor_frac: float = 1e-8) -> MadelungPair:
    """rho = |psi|^2 and S = hbar * arg(psi), unwrapped outward from the density peak.

    Cells below rho_floor_frac * max(rho) (e.g. nodes) are masked; the phase
    is continuous on each side of a node but not across it.
    """
    rho = wf.density()
    if not np.any(rho > 0):
        raise ValueError("wavefunction vanishes everywhere")
    mask = rho > rho_floor_frac * rho.max()
    phase = np.angle(wf.psi)
    i0 = int(np.argmax(rho))
    S = np.empty_like(phase)
    S[i0:] = np.unwrap(phase[i0:])
    S[: i0 + 1] = np.unwrap(phase[: i0 + 1][::-1])[::-1]
    S *= wf.hbar
    S[~mask] = np.nan
    return MadelungPair(x=wf.x, rho=rho, S=S, hbar=wf.hbar, mask=mask)


def phase_renormalize(wf: WaveFunction, E: float, t_now: float) -> WaveFunction:
    """Global phase rotation psi -> exp(i E t / hbar) psi; densities untouched."""
    psi = np.exp(1j * E * t_now / wf.hbar) * wf.psi
    return WaveFunction(wf.x, psi, wf.hbar, wf.mass, wf.time, wf.boundary)


def nelson_drift(source, nu: float, mass: float | None = None) -> DriftField:
    """Forward drift b = v + u with mass*v = dS/dx and u = nu * d(ln rho)/dx."""
    if isinstance(source, WaveFunction):
        m = madelung_decompose(source)
        mass = source.mass
    else:
        m = source
        if mass is None:
            raise ValueError("mass required when passing a MadelungPair")
    h = float(m.x[1] - m.x[0])
    mask = m.mask if m.mask is not None else np.ones_like(m.rho, dtype=bool)
    floor = m.rho[mask].min() if mask.any() else 1e-300
    safe_rho = np.where(mask, m.rho, floor)
    safe_S = np.where(np.isfinite(m.S), m.S, 0.0)
    v = np.gradient(safe_S, h) / mass
    u = nu * np.gradient(np.log(safe_rho), h)
    v[~mask] = 0.0
    u[~mask] = 0.0
    return DriftField(x=m.x, b=v + u, v=v, u=u, mask=mask)


def nelson_evolve(
    ensemble: NelsonEnsemble,
    psi_series,
    nu: float,
    dt: float,
    steps: int,
    seed: int = 0,
) -> NelsonEnsemble:
    """Euler-Maruyama walkers: dx = b(x, t) dt + sqrt(2 nu) dW.

    psi_series supplies the drift: a single WaveFunction/DriftField (frozen)
    or a list of them; the snapshot with time closest to the walker clock is
    used at each step.  Walkers leaving the grid are reflected (counted).
    """
    def to_field(obj):
        if isinstance(obj, DriftField):
            return obj
        return nelson_drift(obj, nu)

    if isinstance(psi_series, (WaveFunction, DriftField)):
        series = [(0.0, to_field(psi_series))]
    else:
        series = []
        for obj in psi_series:
            t = obj.time if isinstance(obj, WaveFunction) else 0.0
            series.append((t, to_field(obj)))
        series.sort(key=lambda p: p[0])

    snap_times = np.array([t for t, _ in series])
    rng = np.random.default_rng(seed)
    x = np.asarray(ensemble.walkers, dtype=float).copy()
    lo, hi = series[0][1].x[0], series[0][1].x[-1]
    t = ensemble.time
    reflections = ensemble.reflections
    amp = np.sqrt(2.0 * nu * dt)
    for _ in range(steps):
        fld = series[int(np.argmin(np.abs(snap_times - t)))][1]
        b = np.interp(x, fld.x, fld.b)
        x = x + b * dt + amp * rng.standard_normal(len(x))
        below = x < lo
        above = x > hi
        reflections += int(below.sum() + above.sum())
        x[below] = 2.0 * lo - x[below]
        x[above] = 2.0 * hi - x[above]
        t += dt
    return NelsonEnsemble(walkers=x, nu=nu, time=t, reflections=reflections)


def compare_densities(rho_a, rho_b, metric: str = "L1", h: float | None = None) -> float:
    """L1 (total variation style) or KS distance between two gridded densities."""
    rho_a = np.asarray(rho_a, dtype=float)
    rho_b = np.asarray(rho_b, dtype=float)
    if rho_a.shape != rho_b.shape:
        raise ValueError("grid mismatch between densities")
    if h is None:
        h = 1.0
    if metric == "L1":
        return float(np.sum(np.abs(rho_a - rho_b)) * h)
    if metric == "KS":
        if rho_a.ndim != 1:
            raise ValueError("KS distance is defined for 1D densities only")
        cdf_a = np.cumsum(rho_a) * h
        cdf_b = np.cumsum(rho_b) * h
        return float(np.max(np.abs(cdf_a - cdf_b)))
    raise ValueError(f"unknown metric {metric!r}")


def walker_density(walkers: np.ndarray, grid_x: np.ndarray, bandwidth: float) -> np.ndarray:
    """Gaussian KDE of walker positions on grid_x, normalized on the grid."""
    h = grid_x[1] - grid_x[0]
    d2 = (grid_x[:, None] - np.asarray(walkers)[None, :]) ** 2
    rho = np.exp(-0.5 * d2 / bandwidth**2).sum(axis=1)
    return rho / (rho.sum() * h)
