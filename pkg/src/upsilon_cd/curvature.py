"""Per-vertex optimal curvature constants and certified checks.

Both curvature notions are local: the quadratic one (Bakry-Emery) reduces to
a generalized eigenvalue problem on the two-ball, the exponential one to a
smooth nonconvex minimization that we attack with an exact inner reduction
over "private" second-sphere values plus multi-start quasi-Newton descent.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize

from .chains import MarkovChain, spec_dict
from .errors import (
    ConditionNotMet,
    GirthTooSmall,
    InvalidParameter,
    IsolatedVertex,
    MonotonicityViolated,
    NonConvergence,
    NotAStar,
)
from .kernels import omega, omega_prime, ups, ups_prime
from .operators import psi2_p, psi_p

__all__ = [
    "CurvatureOptions",
    "VertexProblem",
    "VertexEstimate",
    "CheckResult",
    "bakry_emery_kappa",
    "cd_upsilon_kappa",
    "cd_upsilon_check",
    "cd_upsilon_dim_check",
    "cd_p_check",
    "girth",
    "no_lower_bound_witness",
    "divergence_candidates",
    "birth_death_kappa_bound",
    "poisson_family_slack",
    "poisson_family_violation",
    "star_kappa_certificate",
    "ratio_grid_oracle",
    "check_grid_oracle_raw",
    "CurvatureReport",
    "chain_curvature_report",
]


@dataclass(frozen=True)
class CurvatureOptions:
    """Optimizer configuration; the seed fixes every stochastic choice."""

    starts: int = 64
    amplitude: float = 40.0
    bound: float = 80.0
    tol_slack: float = 1e-8
    minus_inf_threshold: float = -1e6
    probe_taus: tuple = (10.0, 20.0, 40.0)
    seed: int = 0
    maxiter: int = 400
    workers: int = 0


DEFAULT_OPTIONS = CurvatureOptions()


class VertexProblem:
    """Index structure of the two-ball at x, with batched objective kernels.

    Free variables are u = f|S1 and w = f|S2shared (f(x) = 0 normalized
    away; the ratio and check objectives are invariant under constants).
    A second-sphere vertex is "private" when it is reachable from exactly
    one S1 vertex y; its optimal value 2 u_y is known in closed form
    (the Bregman term r -> ups(r - u_y) - ups'(u_y)(r - u_y) is convex with
    minimum -omega(u_y)), so it never enters the search space.
    """

    def __init__(self, chain: MarkovChain, x: int):
        self.chain = chain
        self.x = int(x)
        s1 = [int(y) for y in chain.neighbors[x]]
        if not s1:
            raise IsolatedVertex(f"vertex {chain.states[x]!r} has no neighbours")
        self.s1 = np.array(s1, dtype=np.intp)
        self.c = np.array(chain.rates[x], dtype=float)
        self.m1x = float(self.c.sum())
        pos1 = {y: i for i, y in enumerate(s1)}

        s2_hits: dict[int, list[tuple[int, float]]] = {}
        x_coef = np.zeros(len(s1))
        e_y, e_a, e_coef = [], [], []
        for iy, y in enumerate(s1):
            cy = self.c[iy]
            for z, kyz in zip(chain.neighbors[y], chain.rates[y]):
                z = int(z)
                if z == self.x:
                    x_coef[iy] += cy * kyz
                elif z in pos1:
                    e_y.append(iy)
                    e_a.append(pos1[z])
                    e_coef.append(cy * kyz)
                else:
                    s2_hits.setdefault(z, []).append((iy, cy * kyz))

        shared = sorted(z for z, hits in s2_hits.items() if len(hits) > 1)
        private = sorted(z for z, hits in s2_hits.items() if len(hits) == 1)
        self.s2_shared = np.array(shared, dtype=np.intp)
        self.s2_private = np.array(private, dtype=np.intp)
        posb = {z: i for i, z in enumerate(shared)}

        self.x_coef = x_coef
        self.e_y = np.array(e_y, dtype=np.intp)
        self.e_a = np.array(e_a, dtype=np.intp)
        self.e_coef = np.array(e_coef, dtype=float)
        sh_y, sh_b, sh_coef = [], [], []
        priv_coef = np.zeros(len(s1))
        pr_y, pr_z, pr_coef = [], [], []
        # deterministic column order: private columns follow s2_private
        for z in sorted(s2_hits):
            hits = s2_hits[z]
            if len(hits) > 1:
                for iy, coef in hits:
                    sh_y.append(iy)
                    sh_b.append(posb[z])
                    sh_coef.append(coef)
            else:
                iy, coef = hits[0]
                priv_coef[iy] += coef
                pr_y.append(iy)
                pr_z.append(z)
                pr_coef.append(coef)
        self.sh_y = np.array(sh_y, dtype=np.intp)
        self.sh_b = np.array(sh_b, dtype=np.intp)
        self.sh_coef = np.array(sh_coef, dtype=float)
        self.priv_coef = priv_coef
        self._pr_y = np.array(pr_y, dtype=np.intp)
        self._pr_z = np.array(pr_z, dtype=np.intp)
        self._pr_coef = np.array(pr_coef, dtype=float)

        self.m1 = len(s1)
        self.m2 = len(shared)
        self.dim = self.m1 + self.m2
        self.raw_dim = self.dim + len(private)

    # -- batched evaluation (rows of Z are variable vectors) -------------------

    def split(self, z: np.ndarray):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        return z[:, : self.m1], z[:, self.m1 : self.dim]

    def psi_batch(self, u: np.ndarray) -> np.ndarray:
        return ups(u) @ self.c

    def lf_batch(self, u: np.ndarray) -> np.ndarray:
        return u @ self.c

    def two_psi2_batch(self, u, w, private_w=None) -> np.ndarray:
        """2 Psi_2(f)(x) with private values reduced out (or fixed).

        ``private_w``: optional explicit values for the private second
        sphere (columns follow self.s2_private); None takes the exact
        inner minimum -omega(u_y) per private mass.
        """
        upv = ups_prime(u)
        acc = (ups(-u) + upv * u) @ self.x_coef
        if len(self.e_coef):
            d = u[:, self.e_a] - u[:, self.e_y]
            acc = acc + (ups(d) - upv[:, self.e_y] * d) @ self.e_coef
        if len(self.sh_coef):
            d = w[:, self.sh_b] - u[:, self.sh_y]
            acc = acc + (ups(d) - upv[:, self.sh_y] * d) @ self.sh_coef
        if private_w is None:
            acc = acc - omega(u) @ self.priv_coef
        elif len(self._pr_coef):
            d = private_w[:, : len(self._pr_coef)] - u[:, self._pr_y]
            acc = acc + (ups(d) - upv[:, self._pr_y] * d) @ self._pr_coef
        lf = self.lf_batch(u)
        acc = acc + (upv @ self.c) * lf
        return acc - self.m1x * self.psi_batch(u)

    def ratio_batch(self, z: np.ndarray) -> np.ndarray:
        u, w = self.split(z)
        psi = self.psi_batch(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.two_psi2_batch(u, w) / (2.0 * psi)
        return np.where(psi > 1e-300, out, np.inf)

    def check_batch(self, z: np.ndarray, kappa: float, inv_d: float = 0.0) -> np.ndarray:
        u, w = self.split(z)
        g = 0.5 * self.two_psi2_batch(u, w) - kappa * self.psi_batch(u)
        if inv_d:
            g = g - inv_d * self.lf_batch(u) ** 2
        return g

    def check_batch_raw(self, z_raw: np.ndarray, kappa: float, inv_d: float = 0.0) -> np.ndarray:
        """Check objective over the full two-ball (no private reduction)."""
        z_raw = np.atleast_2d(np.asarray(z_raw, dtype=float))
        u = z_raw[:, : self.m1]
        w = z_raw[:, self.m1 : self.dim]
        pw = z_raw[:, self.dim :]
        g = 0.5 * self.two_psi2_batch(u, w, private_w=pw) - kappa * self.psi_batch(u)
        if inv_d:
            g = g - inv_d * self.lf_batch(u) ** 2
        return g

    # -- value and gradient for the quasi-Newton descent ------------------------

    def _pieces(self, z: np.ndarray):
        u = z[: self.m1]
        w = z[self.m1 :]
        upv = ups_prime(u)
        eu = np.exp(u)
        lf = float(self.c @ u)
        psi = float(self.c @ ups(u))
        dpsi = self.c * upv

        n2 = float(self.x_coef @ (ups(-u) + upv * u))
        grad_u = self.x_coef * (-ups_prime(-u) + eu * u + upv)
        if len(self.e_coef):
            d = u[self.e_a] - u[self.e_y]
            n2 += float(self.e_coef @ (ups(d) - upv[self.e_y] * d))
            upd = ups_prime(d)
            np.add.at(grad_u, self.e_a, self.e_coef * (upd - upv[self.e_y]))
            np.add.at(
                grad_u,
                self.e_y,
                self.e_coef * (-upd - eu[self.e_y] * d + upv[self.e_y]),
            )
        grad_w = np.zeros(self.m2)
        if len(self.sh_coef):
            d = w[self.sh_b] - u[self.sh_y]
            n2 += float(self.sh_coef @ (ups(d) - upv[self.sh_y] * d))
            upd = ups_prime(d)
            np.add.at(grad_w, self.sh_b, self.sh_coef * (upd - upv[self.sh_y]))
            np.add.at(
                grad_u,
                self.sh_y,
                self.sh_coef * (-upd - eu[self.sh_y] * d + upv[self.sh_y]),
            )
        n2 -= float(self.priv_coef @ omega(u))
        grad_u -= self.priv_coef * omega_prime(u)
        s = float(self.c @ upv)
        n2 += s * lf
        grad_u += self.c * eu * lf + s * self.c
        n2 -= self.m1x * psi
        grad_u -= self.m1x * dpsi
        return u, lf, psi, dpsi, n2, grad_u, grad_w

    def ratio_value_grad(self, z: np.ndarray):
        _, _, psi, dpsi, n2, gu, gw = self._pieces(np.asarray(z, dtype=float))
        if psi < 1e-300:
            return 1e100, np.zeros(self.dim)
        val = n2 / (2.0 * psi)
        grad = np.concatenate([gu, gw]) / (2.0 * psi)
        grad[: self.m1] -= val * dpsi / psi
        return val, grad

    def check_value_grad(self, z: np.ndarray, kappa: float, inv_d: float = 0.0):
        _, lf, psi, dpsi, n2, gu, gw = self._pieces(np.asarray(z, dtype=float))
        val = 0.5 * n2 - kappa * psi
        grad = 0.5 * np.concatenate([gu, gw])
        grad[: self.m1] -= kappa * dpsi
        if inv_d:
            val -= inv_d * lf * lf
            grad[: self.m1] -= 2.0 * inv_d * lf * self.c
        return val, grad

    # -- embedding back into a full field ---------------------------------------

    def field_from(self, z: np.ndarray) -> np.ndarray:
        """Full field realizing the reduced point (private sphere at argmin)."""
        z = np.asarray(z, dtype=float)
        f = np.zeros(self.chain.n)
        f[self.s1] = z[: self.m1]
        f[self.s2_shared] = z[self.m1 : self.dim]
        if len(self._pr_z):
            f[self._pr_z] = 2.0 * z[: self.m1][self._pr_y]
        return f

    def probe_points(self, taus) -> list:
        """Divergence-family patterns: one descending neighbour, the rest rising."""
        pts = []
        for i in range(self.m1):
            for t in taus:
                z = np.full(self.dim, float(t))
                z[i] = -float(t)
                if self.m2:
                    z[self.m1 :] = 2.0 * float(t)
                pts.append(z)
        return pts


# -- Bakry-Emery ----------------------------------------------------------------


def bakry_emery_kappa(chain: MarkovChain, x: int):
    """Exact optimal constant of the quadratic-form inequality at x.

    Returns (kappa, witness field). The second sphere enters 4*Gamma_2 only
    through the diagonal nonnegative block sum_y c_y k(y,z)(w_z - 2u_y)^2,
    so it is eliminated exactly by its weighted-mean minimizer; the rest is
    a generalized symmetric eigenvalue problem against 2*Gamma.
    """
    prob = VertexProblem(chain, x)
    m1 = prob.m1
    s2_all = sorted(set(prob.s2_shared) | set(prob.s2_private))
    posb = {z: i for i, z in enumerate(s2_all)}
    m2 = len(s2_all)

    quu = np.zeros((m1, m1))
    quv = np.zeros((m1, m2))
    qvv = np.zeros(m2)
    # z = x contributions: c_y k(y,x) (0 - 2u_y)^2
    quu[np.diag_indices(m1)] += 4.0 * prob.x_coef
    # z in S1: c_y k(y,a) (u_a - 2u_y)^2
    for iy, ia, coef in zip(prob.e_y, prob.e_a, prob.e_coef):
        quu[ia, ia] += coef
        quu[iy, iy] += 4.0 * coef
        quu[ia, iy] -= 2.0 * coef
        quu[iy, ia] -= 2.0 * coef
    # z in S2: c_y k(y,z) (w_z - 2u_y)^2
    pairs = list(zip(prob.sh_y, [prob.s2_shared[b] for b in prob.sh_b], prob.sh_coef))
    pairs += list(zip(prob._pr_y, prob._pr_z, prob._pr_coef))
    for iy, z, coef in pairs:
        ib = posb[int(z)]
        qvv[ib] += coef
        quu[iy, iy] += 4.0 * coef
        quv[iy, ib] -= 2.0 * coef
    # -sum_y c_y M1(y) u_y^2 + 2 (Lf)^2 - M1(x) sum c_y u_y^2
    m1_nb = chain.m1[prob.s1]
    quu[np.diag_indices(m1)] -= prob.c * m1_nb + prob.m1x * prob.c
    quu += 2.0 * np.outer(prob.c, prob.c)

    if m2:
        quu = quu - (quv / qvv) @ quv.T
    b = 2.0 * np.diag(prob.c)
    vals, vecs = scipy.linalg.eigh(quu, b)
    kappa = float(vals[0])
    u = vecs[:, 0]
    f = np.zeros(chain.n)
    f[prob.s1] = u
    if m2:
        wv = -(quv.T @ u) / qvv
        f[np.array(s2_all, dtype=np.intp)] = wv
    return kappa, f


# -- exponential-calculus estimation and checks ----------------------------------


@dataclass
class VertexEstimate:
    vertex: int
    kappa: float  # -inf encodes "no lower bound exists"
    witness: np.ndarray | None
    diagnostics: dict = field(default_factory=dict)

    @property
    def minus_infinity(self) -> bool:
        return math.isinf(self.kappa) and self.kappa < 0


@dataclass
class CheckResult:
    holds: bool
    worst_slack: float
    counterexample: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


def _start_points(prob: VertexProblem, opts: CurvatureOptions, rng) -> list:
    amp = min(opts.amplitude, opts.bound)
    pts = []
    for g in (0.8, 3.0, 10.0, amp):
        pts.append(np.full(prob.dim, g))
        pts.append(np.full(prob.dim, -g))
    for i in range(prob.dim):
        for g in (1.5, -1.5):
            z = np.zeros(prob.dim)
            z[i] = g
            pts.append(z)
    pts.extend(prob.probe_points([-t for t in opts.probe_taus]))
    scales = (0.5, 2.0, 8.0, 0.25 * amp)
    while len(pts) < opts.starts:
        z = rng.normal(size=prob.dim) * scales[len(pts) % len(scales)]
        pts.append(np.clip(z, -opts.bound, opts.bound))
    return pts


def _multistart(prob, fun, opts: CurvatureOptions, rng):
    """Run L-BFGS-B from every start; returns (best_z, best_val, diagnostics)."""
    bounds = [(-opts.bound, opts.bound)] * prob.dim
    best_z, best_val = None, np.inf
    n_fail = 0
    starts = _start_points(prob, opts, rng)
    for z0 in starts:
        res = scipy.optimize.minimize(
            fun,
            z0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options=dict(maxiter=opts.maxiter, ftol=2.5e-15, gtol=1e-10),
        )
        val = float(res.fun)
        if not np.isfinite(val):
            n_fail += 1
            continue
        if val < best_val:
            best_val, best_z = val, res.x.copy()
        if best_val < opts.minus_inf_threshold:
            break
    if best_z is None:
        raise NonConvergence(
            "no start converged to a finite value",
            diagnostics={"n_starts": len(starts), "n_fail": n_fail},
        )
    diag = {"n_starts": len(starts), "n_fail": n_fail, "best_val": best_val}
    return best_z, best_val, diag


def _ray_polish(prob: VertexProblem, z: np.ndarray, val: float):
    """Scan the ray s*z for s -> 0; picks up infima attained in the
    small-field (quadratic-calculus) limit."""
    best_z, best_val = z, val
    if not np.any(z):
        return best_z, best_val
    for k in range(1, 50):
        zs = z * 0.5**k
        v = float(prob.ratio_batch(zs[None, :])[0])
        if v < best_val:
            best_val, best_z = v, zs
    return best_z, best_val


def _rng_for(opts: CurvatureOptions, x: int):
    return np.random.default_rng((opts.seed, x))


def cd_upsilon_kappa(
    chain: MarkovChain, x: int, opts: CurvatureOptions = DEFAULT_OPTIONS
) -> VertexEstimate:
    """Estimate the optimal exponential-calculus constant at x.

    Reports -inf when the ratio falls below ``opts.minus_inf_threshold``
    (divergent witness family found), otherwise the best ratio found with a
    near-tight witness field.
    """
    prob = VertexProblem(chain, x)
    rng = _rng_for(opts, x)

    # Divergence first: the witness family drives the ratio below any bound
    # (linearly in tau) exactly when the branching condition holds.
    cert = divergence_certificate(chain, x, opts.minus_inf_threshold)
    if cert is not None:
        tau_star, y1, witness = cert
        return VertexEstimate(
            x,
            float("-inf"),
            witness,
            {"divergent_via": int(y1), "tau_at_threshold": tau_star},
        )

    z, val, diag = _multistart(prob, prob.ratio_value_grad, opts, rng)
    if val < opts.minus_inf_threshold:
        return VertexEstimate(x, float("-inf"), prob.field_from(z), diag)
    z, val = _ray_polish(prob, z, val)
    return VertexEstimate(x, val, prob.field_from(z), diag)


def _slack_scale(prob: VertexProblem) -> float:
    peers = float(np.max(prob.chain.m1[prob.s1])) if prob.m1 else 0.0
    return max(1.0, prob.m1x + peers) ** 2


def cd_upsilon_check(
    chain: MarkovChain,
    kappa: float,
    x: int,
    opts: CurvatureOptions = DEFAULT_OPTIONS,
) -> CheckResult:
    """Decide the pointwise inequality Psi_2 >= kappa Psi at x.

    Minimizes the slack objective; holds iff the found minimum stays above
    -tol_slack * (local rate scale)^2.
    """
    return cd_upsilon_dim_check(chain, kappa, math.inf, x, opts)


def cd_upsilon_dim_check(
    chain: MarkovChain,
    kappa: float,
    d: float,
    x: int,
    opts: CurvatureOptions = DEFAULT_OPTIONS,
) -> CheckResult:
    """Finite-dimension variant with the (1/d)(Lf)^2 term; d = inf reduces
    to the dimensionless check."""
    if not (d > 0):
        raise InvalidParameter("dimension parameter must be positive")
    inv_d = 0.0 if math.isinf(d) else 1.0 / d
    prob = VertexProblem(chain, x)
    rng = _rng_for(opts, x)
    tol = opts.tol_slack * _slack_scale(prob)

    fun = lambda z: prob.check_value_grad(z, kappa, inv_d)
    z, val, diag = _multistart(prob, fun, opts, rng)
    holds = val >= -tol
    return CheckResult(
        holds=holds,
        worst_slack=val,
        counterexample=None if holds else prob.field_from(z),
        diagnostics=dict(diag, tol=tol),
    )


def cd_p_check(
    chain: MarkovChain,
    p: float,
    kappa: float,
    x: int,
    opts: CurvatureOptions = DEFAULT_OPTIONS,
) -> CheckResult:
    """Power-entropy condition Psi_2^{(p)} >= kappa/(2-p) Psi^{(p)} at x.

    Optimizes over positive fields f = exp(g) with g free on the two-ball
    (g(x) = 0); gradients are numerical here, the two-ball is small.
    """
    if not 1.0 < p < 2.0:
        raise InvalidParameter(f"p must lie in (1,2), got {p}")
    prob = VertexProblem(chain, x)
    rng = _rng_for(opts, x)
    tol = opts.tol_slack * _slack_scale(prob)
    ball = np.concatenate(
        [prob.s1, prob.s2_shared, prob.s2_private.astype(np.intp)]
    ).astype(np.intp)
    fac = kappa / (2.0 - p)

    def objective(g_ball):
        g = np.zeros(chain.n)
        g[ball] = g_ball
        f = np.exp(g)
        return float(
            psi2_p(chain, p, f)[prob.x] - fac * psi_p(chain, p, f)[prob.x]
        )

    # exp(+-40) stretches phi_p'' towards overflow; a tighter box suffices
    # because the p-objective diverges much sooner than the log one.
    b = min(opts.bound, 25.0)
    bounds = [(-b, b)] * len(ball)
    best_val, best_g = np.inf, None
    starts = [np.zeros(len(ball))]
    for g0 in (0.5, 2.0, 8.0):
        starts.append(np.full(len(ball), g0))
        starts.append(np.full(len(ball), -g0))
    while len(starts) < opts.starts:
        starts.append(
            np.clip(rng.normal(size=len(ball)) * rng.choice((0.5, 2.0, 8.0)), -b, b)
        )
    for g0 in starts:
        res = scipy.optimize.minimize(
            objective, g0, method="L-BFGS-B", bounds=bounds,
            options=dict(maxiter=opts.maxiter),
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_g = float(res.fun), res.x.copy()
    holds = best_val >= -tol
    counter = None
    if not holds and best_g is not None:
        g = np.zeros(chain.n)
        g[ball] = best_g
        counter = np.exp(g)
    return CheckResult(holds, best_val, counter, {"tol": tol})


# -- structural witnesses ---------------------------------------------------------


def girth(chain: MarkovChain) -> float:
    """Length of the shortest cycle of the support graph (inf for forests)."""
    best = math.inf
    for root in range(chain.n):
        dist = np.full(chain.n, -1)
        parent = np.full(chain.n, -1)
        dist[root] = 0
        queue = [root]
        while queue:
            nxt = []
            for a in queue:
                for bnd in chain.neighbors[a]:
                    bnd = int(bnd)
                    if dist[bnd] < 0:
                        dist[bnd] = dist[a] + 1
                        parent[bnd] = a
                        nxt.append(bnd)
                    elif parent[a] != bnd and a < bnd:
                        best = min(best, int(dist[a] + dist[bnd] + 1))
            queue = nxt
    return best


def no_lower_bound_witness(chain: MarkovChain, x: int, y: int, tau: float) -> np.ndarray:
    """The diverging witness family at a branching edge (x, y).

    Requires girth >= 5 and M1(x) + M1(y) - 2(k(x,y) + k(y,x)) > 0; the
    returned field sends the curvature ratio at x to -inf as tau -> -inf.
    """
    kxy = chain.rate(x, y)
    if kxy <= 0.0:
        raise ConditionNotMet(f"states {x} and {y} are not adjacent")
    g = girth(chain)
    if g < 5:
        raise GirthTooSmall(f"girth {g} < 5")
    margin = float(chain.m1[x] + chain.m1[y] - 2.0 * (kxy + chain.rate(y, x)))
    if margin <= 1e-12 * float(chain.m1[x] + chain.m1[y]):
        raise ConditionNotMet(
            "M1(x) + M1(y) - 2(k(x,y) + k(y,x)) is not strictly positive"
        )
    f = np.zeros(chain.n)
    for y_i in chain.neighbors[x]:
        y_i = int(y_i)
        f[y_i] = -tau if y_i == y else tau
    for y_i in chain.neighbors[x]:
        y_i = int(y_i)
        for z in chain.neighbors[y_i]:
            z = int(z)
            if z != x:
                f[z] = 2.0 * f[y_i]
    return f


def divergence_candidates(chain: MarkovChain, x: int) -> list:
    """Neighbours y of x satisfying the divergence margin condition."""
    out = []
    for y in chain.neighbors[x]:
        y = int(y)
        margin = float(
            chain.m1[x]
            + chain.m1[y]
            - 2.0 * (chain.rate(x, y) + chain.rate(y, x))
        )
        if margin > 1e-12 * float(chain.m1[x] + chain.m1[y]):
            out.append(y)
    return out


def divergence_certificate(
    chain: MarkovChain, x: int, threshold: float, chain_girth: float | None = None
):
    """Detect ratio divergence at x via the witness family's exact asymptote.

    Along the family (one descending neighbour y1, the rest ascending with
    slope tau -> -infty) the ratio approaches the line

        ratio(tau) = (margin/2) tau + C/(2 k(x,y1)),
        margin = M1(x) + M1(y1) - 2(k(x,y1) + k(y1,x)),

    valid when the girth is >= 5 (no triangles or shared second-sphere
    vertices near x). Divergence is certified when margin > 0; returns
    (tau_star, witness) with ratio(tau_star) < threshold, else None.
    """
    if chain_girth is None:
        chain_girth = girth(chain)
    if chain_girth < 5:
        return None
    best = None
    for y1 in divergence_candidates(chain, x):
        c1 = chain.rate(x, y1)
        margin = float(
            chain.m1[x]
            + chain.m1[y1]
            - 2.0 * (chain.rate(x, y1) + chain.rate(y1, x))
        )
        offset = -c1 * chain.m1[x] + c1 * (chain.m1[y1] - chain.rate(y1, x))
        for y in chain.neighbors[x]:
            y = int(y)
            if y != y1:
                offset += chain.rate(x, y) * chain.rate(y, x)
        tau_star = (threshold - 1.0 - offset / (2.0 * c1)) * 2.0 / margin
        if best is None or tau_star > best[0]:
            best = (float(tau_star), y1)
    if best is None:
        return None
    tau_star, y1 = best
    f = np.zeros(chain.n)
    for y_i in chain.neighbors[x]:
        y_i = int(y_i)
        f[y_i] = 40.0 if y_i == y1 else -40.0
    for y_i in chain.neighbors[x]:
        y_i = int(y_i)
        for z in chain.neighbors[y_i]:
            z = int(z)
            if z != x:
                f[z] = 2.0 * f[y_i]
    return tau_star, y1, f


# -- example-family certificates ---------------------------------------------------


def birth_death_kappa_bound(a, b, N: int) -> float:
    """Certified positive constant for strictly monotone birth-death rates.

    kappa = min_x sqrt(2 min(da, db) (da + db)) with da = a(x-1) - a(x),
    db = b(x) - b(x-1); requires da, db > 0 at every x in 1..N.
    """
    av = np.array([float(a(i)) if callable(a) else float(a[i]) for i in range(N + 1)])
    bv = np.array([float(b(i)) if callable(b) else float(b[i]) for i in range(N + 1)])
    av[N] = 0.0
    bv[0] = 0.0
    da = av[:-1] - av[1:]
    db = bv[1:] - bv[:-1]
    if np.any(da <= 0.0):
        raise MonotonicityViolated("birth rates must be strictly decreasing")
    if np.any(db <= 0.0):
        raise MonotonicityViolated("death rates must be strictly increasing")
    return float(np.min(np.sqrt(2.0 * np.minimum(da, db) * (da + db))))


def poisson_family_slack(lam: float, kappa: float, n: float, tau: float) -> float:
    """2(Psi_2 - kappa Psi) at vertex n along the linear-slope witness family
    of the Poisson birth-death chain on N_0 (closed form, no truncation)."""
    return float(
        lam * (ups_prime(tau) * tau + ups(-tau) - 2.0 * kappa * ups(tau))
        + n * (omega(-tau) - 2.0 * kappa * ups(-tau))
    )


def poisson_family_violation(lam: float, kappa: float):
    """Smallest witness (n, tau) with negative family slack, or None.

    For any kappa > 0 a violation exists but the vertex index grows like
    exp(1/kappa); this searches tau <= 400.
    """
    if kappa <= 0:
        return None
    best = None
    for tau in np.linspace(0.5, 400.0, 3200):
        gcoef = omega(-tau) - 2.0 * kappa * ups(-tau)
        if gcoef >= 0.0:
            continue
        hcoef = lam * (ups_prime(tau) * tau + ups(-tau) - 2.0 * kappa * ups(tau))
        n = math.floor(hcoef / (-gcoef)) + 1
        if best is None or n < best[0]:
            best = (n, float(tau))
    return best


def star_kappa_certificate(chain: MarkovChain, kappa: float) -> bool:
    """Check the closed-form sufficient conditions for a weighted star.

    True iff k(a_i, x*) - (M1(x*) - k(x*, a_i)) >= kappa and
    k(x*, a_i) >= kappa/(1 + sqrt(3)) for every leaf a_i.
    """
    center = None
    for x in range(chain.n):
        if len(chain.neighbors[x]) == chain.n - 1:
            center = x
            break
    if center is None:
        raise NotAStar("no vertex is adjacent to all others")
    for x in range(chain.n):
        if x != center and set(int(v) for v in chain.neighbors[x]) != {center}:
            raise NotAStar("leaves must be adjacent only to the center")
    m1c = float(chain.m1[center])
    thresh = kappa / (1.0 + math.sqrt(3.0))
    for a in chain.neighbors[center]:
        a = int(a)
        out = chain.rate(center, a)
        if chain.rate(a, center) - (m1c - out) < kappa - 1e-14:
            return False
        if out < thresh - 1e-14:
            return False
    return True


# -- brute-force oracles ------------------------------------------------------------


def ratio_grid_oracle(
    chain: MarkovChain,
    x: int,
    lo: float = -20.0,
    hi: float = 20.0,
    step: float = 0.1,
    refine: float = 1e-4,
) -> float:
    """Grid minimization of the curvature ratio over the reduced variables.

    Exhaustive mesh then successive local refinement down to ``refine``;
    practical for problems with <= 3 reduced variables.
    """
    prob = VertexProblem(chain, x)
    if prob.dim > 3:
        raise InvalidParameter("grid oracle supports at most 3 reduced variables")
    axes = [np.arange(lo, hi + step / 2, step)] * prob.dim
    best_val, best_z = np.inf, None
    for z, v in _mesh_scan(prob.ratio_batch, axes):
        if v < best_val:
            best_val, best_z = v, z
    cur = step
    while cur > refine:
        cur /= 10.0
        axes = [np.arange(c - 10 * cur, c + 10 * cur + cur / 2, cur) for c in best_z]
        for z, v in _mesh_scan(prob.ratio_batch, axes):
            if v < best_val:
                best_val, best_z = v, z
    return float(best_val)


def check_grid_oracle_raw(
    chain: MarkovChain,
    x: int,
    kappa: float,
    d: float = math.inf,
    lo: float = -8.0,
    hi: float = 8.0,
    step: float = 0.25,
    tol: float = 1e-9,
) -> CheckResult:
    """Brute grid verdict for the (kappa, d) check over the raw two-ball."""
    prob = VertexProblem(chain, x)
    inv_d = 0.0 if math.isinf(d) else 1.0 / d
    axes = [np.arange(lo, hi + step / 2, step)] * prob.raw_dim
    fun = lambda zz: prob.check_batch_raw(zz, kappa, inv_d)
    best_val, best_z = np.inf, None
    for z, v in _mesh_scan(fun, axes):
        if v < best_val:
            best_val, best_z = v, z
    holds = best_val >= -tol
    counter = None
    if not holds:
        f = np.zeros(chain.n)
        f[prob.s1] = best_z[: prob.m1]
        f[prob.s2_shared] = best_z[prob.m1 : prob.dim]
        f[prob.s2_private] = best_z[prob.dim :]
        counter = f
    return CheckResult(holds, float(best_val), counter, {"grid_step": step})


def _mesh_scan(batch_fun, axes):
    """Yield (argmin, min) per chunk of the full mesh product of ``axes``."""
    if len(axes) == 1:
        z = axes[0][:, None]
        v = batch_fun(z)
        i = int(np.argmin(v))
        yield z[i], float(v[i])
        return
    head, tail = axes[0], axes[1:]
    grids = np.meshgrid(*tail, indexing="ij")
    flat = np.stack([g.ravel() for g in grids], axis=1)
    block = np.empty((flat.shape[0], len(axes)))
    block[:, 1:] = flat
    for a in head:
        block[:, 0] = a
        v = batch_fun(block)
        i = int(np.argmin(v))
        yield block[i].copy(), float(v[i])


# -- whole-chain reports ---------------------------------------------------------


@dataclass
class CurvatureReport:
    chain_hash: str
    per_vertex: list
    global_kappa_be: float
    global_kappa_upsilon: float
    seed: int
    opts: dict
    any_nonconverged: bool = False

    def to_json_dict(self) -> dict:
        def encode(ku):
            if ku is None or math.isnan(ku):
                return None
            if math.isinf(ku) and ku < 0:
                return "minus_infinity"
            return ku

        per = []
        for rec in self.per_vertex:
            per.append(
                {
                    "vertex": rec["vertex"],
                    "state": rec["state"],
                    "kappa_be": rec["kappa_be"],
                    "kappa_upsilon": encode(rec["kappa_upsilon"]),
                    "slack": rec["slack"],
                    "witness": [float(v) for v in rec["witness"]],
                }
            )
        return {
            "chain_hash": self.chain_hash,
            "per_vertex": per,
            "global": {
                "kappa_be": self.global_kappa_be,
                "kappa_upsilon": encode(self.global_kappa_upsilon),
            },
            "seed": self.seed,
            "opts": self.opts,
        }


def chain_hash(chain: MarkovChain) -> str:
    doc = spec_dict(chain)
    blob = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _vertex_record(chain: MarkovChain, x: int, opts: CurvatureOptions) -> dict:
    kbe, witness_be = bakry_emery_kappa(chain, x)
    try:
        est = cd_upsilon_kappa(chain, x, opts)
    except NonConvergence as exc:
        return {
            "vertex": x,
            "state": chain.states[x],
            "kappa_be": kbe,
            "kappa_upsilon": float("nan"),
            "slack": 0.0,
            "witness": np.zeros(chain.n),
            "witness_be": witness_be,
            "diagnostics": dict(exc.diagnostics, nonconverged=True),
        }
    witness = est.witness if est.witness is not None else np.zeros(chain.n)
    slack = 0.0
    if not est.minus_infinity:
        prob = VertexProblem(chain, x)
        z = np.concatenate([witness[prob.s1], witness[prob.s2_shared]])
        psi = float(prob.psi_batch(np.atleast_2d(z[: prob.m1]))[0])
        if psi > 0:
            slack = float(prob.check_batch(z[None, :], est.kappa)[0])
    return {
        "vertex": x,
        "state": chain.states[x],
        "kappa_be": kbe,
        "kappa_upsilon": est.kappa,
        "slack": slack,
        "witness": witness,
        "witness_be": witness_be,
        "diagnostics": est.diagnostics,
    }


def chain_curvature_report(
    chain: MarkovChain, opts: CurvatureOptions = DEFAULT_OPTIONS
) -> CurvatureReport:
    """Per-vertex Bakry-Emery and exponential-calculus constants.

    Vertices are independent; with opts.workers > 1 they are estimated in a
    thread pool. Results are deterministic either way because every vertex
    draws from its own (seed, vertex) generator.
    """
    xs = list(range(chain.n))
    if opts.workers and opts.workers > 1:
        with ThreadPoolExecutor(max_workers=opts.workers) as pool:
            records = list(pool.map(lambda x: _vertex_record(chain, x, opts), xs))
    else:
        records = [_vertex_record(chain, x, opts) for x in xs]
    kbe = min(r["kappa_be"] for r in records)
    kus = [r["kappa_upsilon"] for r in records]
    finite = [k for k in kus if not math.isnan(k)]
    nonconverged = len(finite) < len(kus)
    return CurvatureReport(
        chain_hash=chain_hash(chain),
        per_vertex=records,
        global_kappa_be=float(kbe),
        global_kappa_upsilon=float(min(finite)) if finite else float("nan"),
        seed=opts.seed,
        opts={
            "starts": opts.starts,
            "amplitude": opts.amplitude,
            "tol_slack": opts.tol_slack,
            "minus_inf_threshold": opts.minus_inf_threshold,
        },
        any_nonconverged=nonconverged,
    )
