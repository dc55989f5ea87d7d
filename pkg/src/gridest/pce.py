"""Polynomial-chaos surrogate pipeline for the observable map.

The expensive trajectory observables f(m) are replaced by a truncated
expansion f_hat(m) = sum_{|alpha| <= p} c_alpha Psi_alpha(xi(m)) in
orthonormal Hermite polynomials of the prior-standardized parameters
xi_i = (m_i - mpr_i)/sqrt(Gpr_ii).  Coefficients come from

* projection: c_alpha = sum_i w_i Psi_alpha(xi_i) f(m_i) over a tensor
  or Smolyak sparse Gauss quadrature rule, or
* interpolation (stochastic testing): collocation on K well-conditioned
  nodes subselected from the tensor candidates by column-pivoted QR,
  solving V C = F.

Each quadrature/collocation node costs exactly one forward simulation;
the count is recorded on the surrogate.  The induced negative log
posterior is a polynomial with closed-form gradient and Hessian, so the
surrogate MAP needs no further simulations and its Laplace covariance
is the analytic Hessian inverse.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from math import comb

import numpy as np
from scipy.linalg import cho_factor, cho_solve, qr

from .bayes import H_LOWER_BOUND, GaussianPrior, PosteriorSummary, metrics
from .hermite import basis_derivatives, basis_matrix, gauss_hermite, multi_index_set
from .integrator import simulate
from .lbfgs import minimize
from .observation import observe

_MULTISTART_SALT = 0x9E3779B97F4A7C15
_COND_LIMIT = 1e12


@dataclass
class QuadratureRule:
    """Nodes in standardized coordinates with optional weights.

    kind is the provenance tag: "tensor", "sparse", or
    "stochastic-testing" (subselected collocation nodes, no weights).
    """
    xi: np.ndarray
    weights: np.ndarray | None
    kind: str

    @property
    def n_nodes(self) -> int:
        return self.xi.shape[0]

    def physical(self, prior: GaussianPrior) -> np.ndarray:
        """Map the standardized nodes to parameter space."""
        return prior.mean + np.sqrt(prior.var) * self.xi


def standardize(m, prior: GaussianPrior) -> np.ndarray:
    return (np.asarray(m, dtype=float) - prior.mean) / np.sqrt(prior.var)


def unstandardize(xi, prior: GaussianPrior) -> np.ndarray:
    return prior.mean + np.sqrt(prior.var) * np.asarray(xi, dtype=float)


def tensor_rule(n: int, p: int) -> QuadratureRule:
    """Tensor product of (p+1)-point Gauss rules; (p+1)^n nodes."""
    nodes1, w1 = gauss_hermite(p + 1)
    xi = np.array(list(product(nodes1, repeat=n)), dtype=float)
    w = np.prod(np.array(list(product(w1, repeat=n))), axis=1)
    return QuadratureRule(xi=xi, weights=w, kind="tensor")


def _sparse_growth(i: int) -> int:
    """Univariate node count at level i: 1, 3, 3, 5, 5, ...

    Odd sizes keep the center node nested across levels; the delayed
    doubling keeps counts low while the Gauss rule of size s is already
    exact to degree 2s-1 >= 2i-1.
    """
    return 2 * (i // 2) + 1


def sparse_rule(n: int, level: int) -> QuadratureRule:
    """Smolyak sparse Gauss rule; exact for total degree <= 2*level-1.

    Nodes from all combination terms are merged by exact coordinate
    match; nodes whose net weight cancels to zero are kept (they are
    part of the evaluated support, and each costs a forward solve).
    """
    if level < 1:
        raise ValueError("level must be >= 1")
    q = level + n - 1
    merged: dict[tuple, float] = {}
    for total in range(max(n, q - n + 1), q + 1):
        coeff = (-1.0) ** (q - total) * comb(n - 1, q - total)
        for parts in _compositions(total, n):
            rules1 = [gauss_hermite(_sparse_growth(i)) for i in parts]
            for combo in product(*[range(len(r[0])) for r in rules1]):
                node = tuple(rules1[j][0][combo[j]] for j in range(n))
                w = coeff * np.prod([rules1[j][1][combo[j]] for j in range(n)])
                merged[node] = merged.get(node, 0.0) + w
    nodes = sorted(merged)
    xi = np.array(nodes, dtype=float)
    w = np.array([merged[t] for t in nodes])
    return QuadratureRule(xi=xi, weights=w, kind="sparse")


def _compositions(total: int, n: int):
    """All n-tuples of integers >= 1 summing to total."""
    if n == 1:
        yield (total,)
        return
    for head in range(1, total - n + 2):
        for rest in _compositions(total - head, n - 1):
            yield (head,) + rest


def stochastic_testing_select(candidates: QuadratureRule,
                              indices: np.ndarray):
    """Pick K = len(indices) dominant, well-conditioned collocation nodes.

    Column-pivoted QR on the transposed candidate Vandermonde ranks the
    nodes; the first K pivots form the collocation set.  Rows are
    scaled by the quadrature weights when present, so high-probability
    nodes near the prior mean dominate the selection (pivoting still
    rejects rows that add no new information).  This anchors the
    interpolant where the posterior mass lives instead of at the
    outermost tensor corners.  Returns (rule, V, cond) with V the
    K x K (unscaled) collocation matrix.
    """
    k_total = indices.shape[0]
    if candidates.n_nodes < k_total:
        raise ValueError(
            f"need at least {k_total} candidates, got {candidates.n_nodes}")
    v_cand = basis_matrix(indices, candidates.xi)
    ranked = v_cand if candidates.weights is None \
        else v_cand * candidates.weights[:, None]
    _, _, piv = qr(ranked.T, pivoting=True)
    sel = np.sort(piv[:k_total])
    v_sel = v_cand[sel]
    cond = float(np.linalg.cond(v_sel))
    if cond > _COND_LIMIT:
        raise np.linalg.LinAlgError(
            f"collocation matrix is numerically singular (cond = {cond:.2e})")
    rule = QuadratureRule(xi=candidates.xi[sel], weights=None,
                          kind="stochastic-testing")
    return rule, v_sel, cond


@dataclass
class Surrogate:
    """Truncated expansion of the observable map around the prior."""
    indices: np.ndarray          # (K, n) multi-indices
    coeffs: np.ndarray           # (K, q) one row per basis function
    prior_mean: np.ndarray
    prior_var: np.ndarray
    order: int
    method: str                  # "projection" | "interpolation"
    rule_kind: str
    n_forward: int               # forward simulations spent building it
    cond: float = 0.0            # collocation conditioning (interpolation)

    @property
    def prior(self) -> GaussianPrior:
        return GaussianPrior(self.prior_mean, self.prior_var)

    def evaluate(self, m) -> np.ndarray:
        """Surrogate observables at one parameter point, shape (q,)."""
        xi = standardize(m, self.prior)
        return basis_matrix(self.indices, xi[None, :])[0] @ self.coeffs

    def evaluate_batch(self, ms) -> np.ndarray:
        xi = (np.asarray(ms, dtype=float) - self.prior_mean) / np.sqrt(self.prior_var)
        return basis_matrix(self.indices, xi) @ self.coeffs

    def save(self, path) -> None:
        np.savez(path, indices=self.indices, coeffs=self.coeffs,
                 prior_mean=self.prior_mean, prior_var=self.prior_var,
                 order=self.order, method=self.method,
                 rule_kind=self.rule_kind, n_forward=self.n_forward,
                 cond=self.cond)

    @classmethod
    def load(cls, path) -> "Surrogate":
        with np.load(path, allow_pickle=False) as z:
            return cls(indices=z["indices"], coeffs=z["coeffs"],
                       prior_mean=z["prior_mean"], prior_var=z["prior_var"],
                       order=int(z["order"]), method=str(z["method"]),
                       rule_kind=str(z["rule_kind"]),
                       n_forward=int(z["n_forward"]), cond=float(z["cond"]))


class _TrajectoryObservables:
    """Picklable forward map m -> observable vector for one scenario."""

    def __init__(self, system, t_f, dt, events, times, buses, coords):
        self.system = system
        self.t_f = t_f
        self.dt = dt
        self.events = tuple(events)
        self.times = times
        self.buses = buses
        self.coords = coords

    def __call__(self, m) -> np.ndarray:
        traj = simulate(self.system, m, self.t_f, self.dt, self.events)
        return observe(traj, self.times, self.buses, self.coords)


def _evaluate_forward(forward, nodes_m, jobs: int) -> np.ndarray:
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(forward, nodes_m))
    else:
        rows = []
        for i, m in enumerate(nodes_m):
            try:
                rows.append(forward(m))
            except Exception as exc:
                raise RuntimeError(
                    f"forward simulation failed at node {i}, m = {m}") from exc
    return np.array(rows)


def build_surrogate(method: str, rule: QuadratureRule, order: int,
                    forward, prior: GaussianPrior, jobs: int = 1) -> Surrogate:
    """Fit the expansion coefficients from forward runs at the nodes.

    method "projection" computes the discrete orthogonal projection
    with the rule's weights (all nodes evaluated); "interpolation"
    subselects K stochastic-testing nodes from the rule's nodes as
    candidates and solves the square collocation system.
    """
    n = rule.xi.shape[1]
    indices = multi_index_set(n, order)
    cond = 0.0
    if method == "projection":
        if rule.weights is None:
            raise ValueError("projection needs a weighted quadrature rule")
        nodes = rule
        f_rows = _evaluate_forward(forward, nodes.physical(prior), jobs)
        psi = basis_matrix(indices, nodes.xi)
        coeffs = psi.T @ (rule.weights[:, None] * f_rows)
    elif method == "interpolation":
        nodes, v_sel, cond = stochastic_testing_select(rule, indices)
        f_rows = _evaluate_forward(forward, nodes.physical(prior), jobs)
        coeffs = np.linalg.solve(v_sel, f_rows)
    else:
        raise ValueError(f"unknown surrogate method: {method!r}")
    if not np.all(np.isfinite(coeffs)):
        raise RuntimeError("surrogate coefficients are not finite")
    return Surrogate(indices=indices, coeffs=coeffs,
                     prior_mean=np.asarray(prior.mean, dtype=float),
                     prior_var=np.asarray(prior.var, dtype=float),
                     order=order, method=method, rule_kind=nodes.kind,
                     n_forward=nodes.n_nodes, cond=cond)


class SurrogateObjective:
    """Negative log posterior with the surrogate in place of the model.

    A polynomial of degree 2p in m: value, gradient, and Hessian are
    closed-form contractions of the basis derivative tables, so calls
    cost no simulations.
    """

    def __init__(self, surrogate: Surrogate, obs, noise, prior: GaussianPrior):
        self.surrogate = surrogate
        self.data = obs.values
        self.noise_var = noise.var
        self.prior = prior
        self.sigma = np.sqrt(surrogate.prior_var)
        if surrogate.coeffs.shape[1] != self.data.shape[0]:
            raise ValueError("surrogate output dimension does not match data")

    def _parts(self, m):
        xi = standardize(m, self.surrogate.prior)
        psi, dpsi, d2psi = basis_derivatives(self.surrogate.indices, xi)
        # chain rule to physical coordinates
        dpsi = dpsi / self.sigma
        d2psi = d2psi / (self.sigma[:, None] * self.sigma[None, :])
        return psi, dpsi, d2psi

    def value_grad(self, m):
        m = np.asarray(m, dtype=float)
        psi, dpsi, _ = self._parts(m)
        c = self.surrogate.coeffs
        r = psi @ c - self.data
        wr = r / self.noise_var
        jval = 0.5 * (r @ wr) + self.prior.neg_log(m)
        v = c @ wr                      # (K,) misfit-weighted coefficients
        grad = dpsi.T @ v + (m - self.prior.mean) / self.prior.var
        return float(jval), grad

    def __call__(self, m):
        return self.value_grad(m)

    def hessian(self, m) -> np.ndarray:
        m = np.asarray(m, dtype=float)
        psi, dpsi, d2psi = self._parts(m)
        c = self.surrogate.coeffs
        r = psi @ c - self.data
        wr = r / self.noise_var
        jac = c.T @ dpsi                # (q, n) surrogate Jacobian
        gn = jac.T @ (jac / self.noise_var[:, None])
        v = c @ wr
        curv = np.einsum("k,kij->ij", v, d2psi)
        return gn + curv + np.diag(1.0 / self.prior.var)


def surrogate_map(surrogate: Surrogate, obs, noise, prior: GaussianPrior,
                  m_true=None, n_starts: int = 16, seed: int = 0,
                  tol: float = 1e-8, max_iter: int = 200) -> PosteriorSummary:
    """Multi-start quasi-Newton MAP on the polynomial posterior.

    Starts at the prior mean plus n_starts prior draws; the best local
    minimum wins.  The posterior covariance is the analytic Hessian
    inverse at that point.
    """
    objective = SurrogateObjective(surrogate, obs, noise, prior)
    rng = np.random.default_rng(np.uint64(seed) ^ np.uint64(_MULTISTART_SALT))
    draws = prior.mean + np.sqrt(prior.var) * rng.standard_normal(
        (n_starts, prior.mean.size))
    starts = np.vstack([prior.mean[None, :], draws])
    starts = np.maximum(starts, H_LOWER_BOUND + 1e-6)

    best = None
    total_iters = 0
    n_minima = 0
    for x0 in starts:
        res = minimize(objective, x0, lower=H_LOWER_BOUND, tol=tol,
                       max_iter=max_iter)
        total_iters += res.iterations
        if res.converged:
            n_minima += 1
        if best is None or res.fun < best.fun:
            best = res

    hess = objective.hessian(best.x)
    try:
        factor = cho_factor(hess)
    except np.linalg.LinAlgError as exc:
        eigs = np.linalg.eigvalsh(hess)
        raise np.linalg.LinAlgError(
            f"surrogate Hessian not positive definite at the MAP; "
            f"eigenvalues {eigs}") from exc
    gpost = cho_solve(factor, np.eye(len(best.x)))
    gpost = 0.5 * (gpost + gpost.T)

    stats = {
        "method": "pce",
        "rule": surrogate.rule_kind,
        "order": surrogate.order,
        "surrogate_forward_solves": surrogate.n_forward,
        "collocation_condition": surrogate.cond,
        "n_starts": int(starts.shape[0]),
        "n_converged_starts": n_minima,
        "total_iterations": total_iters,
        "objective": best.fun,
        "final_grad_norm": best.grad_norm,
    }
    if m_true is not None:
        err, tau, cns = metrics(best.x, gpost, m_true)
    else:
        err = tau = cns = None
    return PosteriorSummary(m_map=best.x, gamma_post=gpost, method="pce",
                            err=err, tau=tau, cns=cns,
                            m_true=None if m_true is None else np.asarray(m_true, float),
                            stats=stats)


def estimate_pce(system, obs, noise, prior: GaussianPrior, t_f: float,
                 dt: float, events=(), order: int = 2,
                 rule: str = "stochastic-testing", m_true=None,
                 seed: int = 0, jobs: int = 1):
    """Full surrogate pipeline: build from simulations, then MAP.

    rule selects the node set: "stochastic-testing" interpolates on K
    nodes subselected from the order-p tensor candidates; "tensor" and
    "sparse" project on the corresponding quadrature rule.  Returns
    (PosteriorSummary, Surrogate).
    """
    n = prior.mean.size
    forward = _TrajectoryObservables(system, t_f, dt, events,
                                     obs.times, obs.buses, obs.coords)
    if rule == "stochastic-testing":
        surrogate = build_surrogate("interpolation", tensor_rule(n, order),
                                    order, forward, prior, jobs)
    elif rule == "tensor":
        surrogate = build_surrogate("projection", tensor_rule(n, order),
                                    order, forward, prior, jobs)
    elif rule == "sparse":
        surrogate = build_surrogate("projection", sparse_rule(n, order + 1),
                                    order, forward, prior, jobs)
    else:
        raise ValueError(f"unknown rule: {rule!r}")
    summary = surrogate_map(surrogate, obs, noise, prior, m_true=m_true,
                            seed=seed)
    return summary, surrogate
