"""Heat flow, entropies, Fisher informations and flow-level inequalities.

The flow rho' = L rho is linear; for moderate state counts the reference
path propagates with a dense matrix exponential per grid step, beyond that
an adaptive Runge-Kutta integrator takes over. Every functional of a
computed trace is an exact finite sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.integrate import solve_ivp
from scipy.special import xlogy

from .chains import MarkovChain
from .errors import (
    GridTooCoarse,
    InvalidParameter,
    NonDensity,
    NonPositiveEntropy,
    NonPositiveField,
    PositivityLoss,
)
from .kernels import log_mean, log_mean_d1, phi_p, phi_p_prime
from .operators import (
    _field,
    _positive_field,
    generator_apply,
    psi2_p,
    psi2_upsilon,
    psi_p,
    psi_upsilon,
)

__all__ = [
    "FlowTrace",
    "heat_flow",
    "semigroup_apply",
    "entropy",
    "fisher",
    "fisher_dirichlet",
    "dirichlet_form",
    "de_bruijn_residual",
    "second_derivative_residual",
    "mlsi_check",
    "entropy_decay_check",
    "decay_rate_fit",
    "gradient_bound_check",
    "p_entropy",
    "p_fisher",
    "p_fisher_dirichlet",
    "p_flow_identities",
    "beckner_check",
    "erbar_maas_A",
    "erbar_maas_B",
    "em_identity_residuals",
    "random_density",
]

_MASS_TOL = 1e-10
_EXPM_MAX_N = 400


def entropy(chain: MarkovChain, rho) -> float:
    """Boltzmann entropy sum rho log rho pi, with 0 log 0 = 0."""
    rho = _field(chain, rho)
    if np.any(rho < 0.0):
        raise NonPositiveField("density must be nonnegative")
    return float(chain.pi @ xlogy(rho, rho))


def fisher(chain: MarkovChain, rho) -> float:
    """Fisher information: integral of rho Psi_Ups(log rho)."""
    rho = _positive_field(chain, rho)
    return float(chain.pi @ (rho * psi_upsilon(chain, np.log(rho))))


def dirichlet_form(chain: MarkovChain, f, g) -> float:
    """(1/2) sum_{x,y} k(x,y)(f(y)-f(x))(g(y)-g(x)) pi(x)."""
    f = _field(chain, f)
    g = _field(chain, g)
    acc = 0.0
    for x, (nb, r) in enumerate(zip(chain.neighbors, chain.rates)):
        acc += chain.pi[x] * float(r @ ((f[nb] - f[x]) * (g[nb] - g[x])))
    return 0.5 * acc


def fisher_dirichlet(chain: MarkovChain, rho) -> float:
    """Alternative Fisher path: the Dirichlet form of (rho, log rho)."""
    rho = _positive_field(chain, rho)
    return dirichlet_form(chain, rho, np.log(rho))


@dataclass
class FlowTrace:
    chain: MarkovChain
    times: np.ndarray
    densities: np.ndarray  # (n_times, n_states)
    H: np.ndarray
    I: np.ndarray
    d2H: np.ndarray
    p: float | None = None
    Hp: np.ndarray | None = None
    Ip: np.ndarray | None = None
    d2Hp: np.ndarray | None = None

    def to_csv(self) -> str:
        cols = ["t", "H", "I", "d2H"]
        data = [self.times, self.H, self.I, self.d2H]
        if self.p is not None:
            cols += ["Hp", "Ip"]
            data += [self.Hp, self.Ip]
        lines = [",".join(cols)]
        for row in zip(*data):
            lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"

    def densities_dict(self) -> dict:
        """Sidecar document with the full density trajectory."""
        return {
            "states": list(self.chain.states),
            "times": [float(t) for t in self.times],
            "densities": [[float(v) for v in row] for row in self.densities],
        }


def _check_density(chain: MarkovChain, rho0) -> np.ndarray:
    rho0 = _field(chain, rho0)
    if np.any(rho0 <= 0.0):
        raise NonDensity("initial density must be strictly positive")
    mass = float(chain.pi @ rho0)
    if abs(mass - 1.0) > _MASS_TOL:
        raise NonDensity(f"initial mass {mass:.17g} is not 1 within {_MASS_TOL}")
    return rho0


def _resolve_grid(T: float, output_grid) -> np.ndarray:
    if np.isscalar(output_grid):
        n = int(output_grid)
        if n < 2:
            raise InvalidParameter("output grid needs at least two points")
        return np.linspace(0.0, T, n)
    grid = np.asarray(output_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2 or np.any(np.diff(grid) <= 0):
        raise InvalidParameter("output grid must be strictly increasing")
    if abs(grid[0]) > 0 or abs(grid[-1] - T) > 1e-12 * max(T, 1.0):
        raise InvalidParameter("output grid must run from 0 to T")
    return grid


def heat_flow(
    chain: MarkovChain,
    rho0,
    T: float,
    output_grid=201,
    p: float | None = None,
    method: str = "auto",
) -> FlowTrace:
    """Integrate rho' = L rho from a strictly positive density.

    ``method`` is "expm" (dense matrix exponential, stepping a uniform
    grid), "rk" (adaptive RK45 at rtol 1e-11), or "auto" (expm up to 400
    states). With ``p`` set, the power entropy/Fisher channels are filled.
    """
    rho0 = _check_density(chain, rho0)
    if T <= 0:
        raise InvalidParameter("T must be positive")
    times = _resolve_grid(T, output_grid)
    if method == "auto":
        method = "expm" if chain.n <= _EXPM_MAX_N else "rk"
    a = chain.rate_matrix
    if method == "expm":
        steps = np.diff(times)
        uniform = np.allclose(steps, steps[0], rtol=1e-12, atol=0.0)
        dens = np.empty((len(times), chain.n))
        dens[0] = rho0
        if uniform:
            prop = scipy.linalg.expm(steps[0] * a)
            for i in range(1, len(times)):
                dens[i] = prop @ dens[i - 1]
        else:
            for i, h in enumerate(steps, start=1):
                dens[i] = scipy.linalg.expm(h * a) @ dens[i - 1]
    elif method == "rk":
        sol = solve_ivp(
            lambda _, v: a @ v,
            (0.0, T),
            rho0,
            method="RK45",
            t_eval=times,
            rtol=1e-11,
            atol=1e-14,
        )
        if not sol.success:
            raise PositivityLoss(f"integrator failed: {sol.message}")
        dens = sol.y.T
    else:
        raise InvalidParameter(f"unknown method {method!r}")

    if np.any(dens <= 0.0):
        raise PositivityLoss(
            "a density component became nonpositive; tighten tolerances"
        )
    H = np.array([entropy(chain, r) for r in dens])
    I = np.array([fisher(chain, r) for r in dens])
    d2H = np.array(
        [
            2.0 * float(chain.pi @ (r * psi2_upsilon(chain, np.log(r))))
            for r in dens
        ]
    )
    trace = FlowTrace(chain, times, dens, H, I, d2H)
    if p is not None:
        trace.p = p
        trace.Hp = np.array([p_entropy(chain, p, r) for r in dens])
        trace.Ip = np.array([p_fisher(chain, p, r) for r in dens])
        trace.d2Hp = np.array(
            [2.0 * float(chain.pi @ (r * psi2_p(chain, p, r))) for r in dens]
        )
    return trace


def semigroup_apply(chain: MarkovChain, f, t: float) -> np.ndarray:
    """P_t f for a bounded function f (same propagator as the flow)."""
    f = _field(chain, f)
    if t < 0:
        raise InvalidParameter("t must be nonnegative")
    return scipy.linalg.expm(t * chain.rate_matrix) @ f


def _grid_guard(trace: FlowTrace) -> float:
    h = float(np.max(np.diff(trace.times)))
    rate = float(np.max(trace.chain.m1))
    if h * rate > 0.1:
        raise GridTooCoarse(
            f"grid step {h:.3g} too coarse for max rate {rate:.3g}"
        )
    return h


def de_bruijn_residual(trace: FlowTrace) -> float:
    """Max |centered dH/dt + I| over interior grid points."""
    _grid_guard(trace)
    t, H, I = trace.times, trace.H, trace.I
    dH = (H[2:] - H[:-2]) / (t[2:] - t[:-2])
    return float(np.max(np.abs(dH + I[1:-1]))) if len(dH) else 0.0


def second_derivative_residual(trace: FlowTrace) -> float:
    """Max |centered d2H/dt2 - stored channel| over interior points."""
    h = _grid_guard(trace)
    steps = np.diff(trace.times)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=0.0):
        raise GridTooCoarse("second differences need a uniform grid")
    H = trace.H
    dd = (H[2:] - 2.0 * H[1:-1] + H[:-2]) / steps[0] ** 2
    return float(np.max(np.abs(dd - trace.d2H[1:-1]))) if len(dd) else 0.0


def p_flow_identities(trace: FlowTrace) -> tuple[float, float]:
    """Residuals of the power-entropy flow identities (needs p channels)."""
    if trace.p is None:
        raise InvalidParameter("trace has no power-entropy channels")
    _grid_guard(trace)
    t, Hp, Ip = trace.times, trace.Hp, trace.Ip
    dH = (Hp[2:] - Hp[:-2]) / (t[2:] - t[:-2])
    r1 = float(np.max(np.abs(dH + Ip[1:-1]))) if len(dH) else 0.0
    steps = np.diff(t)
    if not np.allclose(steps, steps[0], rtol=1e-8, atol=0.0):
        raise GridTooCoarse("second differences need a uniform grid")
    dd = (Hp[2:] - 2.0 * Hp[1:-1] + Hp[:-2]) / steps[0] ** 2
    r2 = float(np.max(np.abs(dd - trace.d2Hp[1:-1]))) if len(dd) else 0.0
    return r1, r2


# -- functional inequalities -----------------------------------------------------


@dataclass
class InequalityReport:
    holds: bool
    worst_ratio: float
    n_samples: int
    worst_sample: np.ndarray | None = None
    details: dict = field(default_factory=dict)


def random_density(chain: MarkovChain, rng) -> np.ndarray:
    """Dirichlet-uniform random density with respect to the chain measure."""
    q = rng.dirichlet(np.ones(chain.n))
    q = np.maximum(q, 1e-300)
    rho = q / chain.pi
    return rho / float(chain.pi @ rho)


def _tilt_densities(chain: MarkovChain, max_log_ratio: float = None):
    """Adversarial exponential tilts of indicator and distance fields."""
    if max_log_ratio is None:
        max_log_ratio = np.log(1e6)
    fields = []
    eye = np.eye(chain.n)
    fields.extend(eye)
    for v in range(min(chain.n, 4)):
        dist = np.full(chain.n, np.inf)
        dist[v] = 0
        queue = [v]
        while queue:
            nxt = []
            for aa in queue:
                for b in chain.neighbors[aa]:
                    b = int(b)
                    if np.isinf(dist[b]):
                        dist[b] = dist[aa] + 1
                        nxt.append(b)
            queue = nxt
        fields.append(dist)
    out = []
    for g in fields:
        span = float(np.max(g) - np.min(g))
        if span == 0.0:
            continue
        for s in np.concatenate(
            [np.linspace(-1, 1, 9), np.array([-1.0, 1.0]) * max_log_ratio / span]
        ):
            if s == 0.0:
                continue
            rho = np.exp(s * g)
            rho = rho / float(chain.pi @ rho)
            out.append(rho)
        for s in (1e-3, -1e-3, 1e-2, -1e-2):
            rho = np.exp(s * g)
            rho = rho / float(chain.pi @ rho)
            out.append(rho)
    return out


def mlsi_check(
    chain: MarkovChain, alpha: float, n_samples: int = 1000, seed: int = 0
) -> InequalityReport:
    """Sampled check of H(rho) <= I(rho)/(2 alpha).

    Random Dirichlet densities plus adversarial near-degenerate tilts
    (mass ratios up to 1e6); reports the worst ratio 2 alpha H / I.
    """
    if alpha <= 0:
        raise InvalidParameter("alpha must be positive")
    rng = np.random.default_rng(seed)
    samples = [random_density(chain, rng) for _ in range(n_samples)]
    samples.extend(_tilt_densities(chain))
    worst, worst_rho = -np.inf, None
    for rho in samples:
        Iv = fisher(chain, rho)
        if Iv <= 0.0:
            continue
        ratio = 2.0 * alpha * entropy(chain, rho) / Iv
        if ratio > worst:
            worst, worst_rho = ratio, rho
    return InequalityReport(
        holds=bool(worst <= 1.0 + 1e-9),
        worst_ratio=float(worst),
        n_samples=len(samples),
        worst_sample=worst_rho,
        details={"alpha": alpha},
    )


def entropy_decay_check(
    chain: MarkovChain, kappa: float, rho0, T: float, output_grid=201
) -> InequalityReport:
    """Verify H(rho_t) <= exp(-2 kappa t) H(rho_0) along the flow."""
    trace = heat_flow(chain, rho0, T, output_grid)
    H0 = trace.H[0]
    if H0 <= 0.0:
        raise NonPositiveEntropy("H(rho_0) = 0; decay holds trivially")
    bound = np.exp(-2.0 * kappa * trace.times) * H0
    ratio = trace.H / np.maximum(bound, 1e-300)
    worst = float(np.max(ratio))
    return InequalityReport(
        holds=bool(worst <= 1.0 + 1e-8),
        worst_ratio=worst,
        n_samples=len(trace.times),
        details={"kappa": kappa, "H0": float(H0)},
    )


def decay_rate_fit(trace: FlowTrace) -> float:
    """Least-squares slope of log H over the last decade of decay."""
    H, t = trace.H, trace.times
    pos = H > 0.0
    if not np.any(pos):
        raise NonPositiveEntropy("entropy vanished along the whole trace")
    Hp, tp = H[pos], t[pos]
    floor = Hp[-1]
    sel = Hp <= 10.0 * floor
    if sel.sum() < 3:
        sel = np.zeros(len(Hp), dtype=bool)
        sel[-3:] = True
    slope = np.polyfit(tp[sel], np.log(Hp[sel]), 1)[0]
    return float(-slope)


def gradient_bound_check(
    chain: MarkovChain, f, kappa: float, times
) -> InequalityReport:
    """Pointwise check of Psi_Ups(P_t f) <= exp(-2 kappa t) P_t Psi_Ups(f)."""
    f = _field(chain, f)
    psi0 = psi_upsilon(chain, f)
    worst_slack, worst_at = np.inf, None
    scale = max(1.0, float(np.max(np.abs(psi0))))
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        lhs = psi_upsilon(chain, semigroup_apply(chain, f, t))
        rhs = np.exp(-2.0 * kappa * t) * semigroup_apply(chain, psi0, t)
        slack = float(np.min(rhs - lhs))
        if slack < worst_slack:
            worst_slack, worst_at = slack, float(t)
    return InequalityReport(
        holds=bool(worst_slack >= -1e-9 * scale),
        worst_ratio=worst_slack,
        n_samples=len(np.atleast_1d(times)),
        details={"kappa": kappa, "worst_t": worst_at, "scale": scale},
    )


# -- power entropies --------------------------------------------------------------


def p_entropy(chain: MarkovChain, p: float, rho) -> float:
    """Power entropy: integral of (rho^p - rho)/(p(p-1))."""
    rho = _positive_field(chain, rho)
    return float(chain.pi @ phi_p(p, rho))


def p_fisher(chain: MarkovChain, p: float, rho) -> float:
    """1/(2-p) integral of rho Psi^{(p)}(rho)."""
    rho = _positive_field(chain, rho)
    return float(chain.pi @ (rho * psi_p(chain, p, rho))) / (2.0 - p)


def p_fisher_dirichlet(chain: MarkovChain, p: float, rho) -> float:
    """Alternative path: Dirichlet form of (rho, phi_p'(rho))."""
    rho = _positive_field(chain, rho)
    return dirichlet_form(chain, rho, phi_p_prime(p, rho))


def beckner_check(
    chain: MarkovChain, p: float, alpha: float, n_samples: int = 1000, seed: int = 0
) -> InequalityReport:
    """Sampled check of H_p(rho) <= I_p(rho)/(2 alpha)."""
    if alpha <= 0:
        raise InvalidParameter("alpha must be positive")
    rng = np.random.default_rng(seed)
    samples = [random_density(chain, rng) for _ in range(n_samples)]
    samples.extend(_tilt_densities(chain))
    worst, worst_rho = -np.inf, None
    for rho in samples:
        Iv = p_fisher(chain, p, rho)
        if Iv <= 0.0:
            continue
        ratio = 2.0 * alpha * p_entropy(chain, p, rho) / Iv
        if ratio > worst:
            worst, worst_rho = ratio, rho
    return InequalityReport(
        holds=bool(worst <= 1.0 + 1e-9),
        worst_ratio=float(worst),
        n_samples=len(samples),
        worst_sample=worst_rho,
        details={"alpha": alpha, "p": p},
    )


# -- transport-metric functionals ---------------------------------------------------


def erbar_maas_A(chain: MarkovChain, rho, psi) -> float:
    """(1/2) sum (psi(x)-psi(y))^2 logmean(rho(x), rho(y)) k(x,y) pi(x)."""
    rho = _positive_field(chain, rho)
    psi = _field(chain, psi)
    acc = 0.0
    for x, (nb, r) in enumerate(zip(chain.neighbors, chain.rates)):
        th = log_mean(rho[x], rho[nb])
        acc += chain.pi[x] * float(r @ ((psi[x] - psi[nb]) ** 2 * th))
    return 0.5 * acc


def erbar_maas_B(chain: MarkovChain, rho, psi) -> float:
    """Second transport functional (triple sum with the log-mean gradient)."""
    rho = _positive_field(chain, rho)
    psi = _field(chain, psi)
    lrho = generator_apply(chain, rho)
    lpsi = generator_apply(chain, psi)
    acc1 = 0.0
    acc2 = 0.0
    for x, (nb, r) in enumerate(zip(chain.neighbors, chain.rates)):
        dpsi2 = (psi[x] - psi[nb]) ** 2
        d1 = log_mean_d1(rho[x], rho[nb])
        d2 = log_mean_d1(rho[nb], rho[x])
        lhat = d1 * lrho[x] + d2 * lrho[nb]
        acc1 += chain.pi[x] * float(r @ (dpsi2 * lhat))
        th = log_mean(rho[x], rho[nb])
        acc2 += chain.pi[x] * float(
            r @ ((lpsi[x] - lpsi[nb]) * (psi[x] - psi[nb]) * th)
        )
    return 0.25 * acc1 - 0.5 * acc2


def em_identity_residuals(chain: MarkovChain, rho) -> tuple[float, float]:
    """Residuals of the two functional identities at psi = log rho:

    A(rho, log rho) = integral rho Psi_Ups(log rho)
    B(rho, log rho) = integral rho Psi_2(log rho)
    """
    rho = _positive_field(chain, rho)
    logr = np.log(rho)
    rA = abs(
        erbar_maas_A(chain, rho, logr)
        - float(chain.pi @ (rho * psi_upsilon(chain, logr)))
    )
    rB = abs(
        erbar_maas_B(chain, rho, logr)
        - float(chain.pi @ (rho * psi2_upsilon(chain, logr)))
    )
    return float(rA), float(rB)
