"""Maximum-likelihood estimation of linear-in-attributes utilities.

Four families share one kernel: MNL and CNL are IAP-MNL and IAP-CNL with
``ln BC = 0`` on every available alternative.  Choice sets of different
sizes are padded; padded slots carry ``ln BC = -inf`` and never enter a sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gev
from .errors import DataError, NestStructureError, ShapeError, SpecError
from .numeric import Tape, ops

FAMILIES = ("MNL", "CNL", "IAP-MNL", "IAP-CNL")
DEFAULT_NEST_SCALE = 2.0


@dataclass
class Observation:
    chosen: int
    x: np.ndarray  # (J, K) absolute attributes
    log_bc: np.ndarray | None = None  # (J,)
    alpha: np.ndarray | None = None  # (J, M)


@dataclass
class ChoiceData:
    """Padded arrays for N observations with up to J alternatives."""

    attributes: tuple
    x: np.ndarray  # (N, J, K)
    chosen: np.ndarray  # (N,)
    avail: np.ndarray  # (N, J) bool
    log_bc: np.ndarray | None = None  # (N, J)
    alpha: np.ndarray | None = None  # (N, J, M)

    def __post_init__(self):
        self.attributes = tuple(self.attributes)
        self.x = np.asarray(self.x, dtype=np.float64)
        self.chosen = np.asarray(self.chosen, dtype=np.int64)
        self.avail = np.asarray(self.avail, dtype=bool)
        N, J, K = self.x.shape
        if K != len(self.attributes):
            raise ShapeError(f"{K} attribute columns but {len(self.attributes)} names")
        if self.chosen.shape != (N,) or self.avail.shape != (N, J):
            raise ShapeError("chosen/availability shapes do not match the attribute array")
        if N == 0:
            raise DataError("no observations")
        if np.any((self.chosen < 0) | (self.chosen >= J)):
            raise DataError("chosen index outside the choice set")
        if not np.all(self.avail[np.arange(N), self.chosen]):
            raise DataError("chosen alternative is not in its choice set")
        if self.log_bc is not None:
            self.log_bc = np.asarray(self.log_bc, dtype=np.float64)
            if self.log_bc.shape != (N, J):
                raise ShapeError("log_bc must be (N, J)")
        if self.alpha is not None:
            self.alpha = np.asarray(self.alpha, dtype=np.float64)
            if self.alpha.shape[:2] != (N, J):
                raise ShapeError("alpha must be (N, J, M)")

    def __len__(self):
        return len(self.chosen)

    @classmethod
    def from_observations(cls, observations, attributes) -> "ChoiceData":
        obs = list(observations)
        if not obs:
            raise DataError("no observations")
        J = max(len(o.x) for o in obs)
        K = len(attributes)
        N = len(obs)
        x = np.zeros((N, J, K))
        avail = np.zeros((N, J), dtype=bool)
        has_bc = all(o.log_bc is not None for o in obs)
        has_alpha = all(o.alpha is not None for o in obs)
        log_bc = np.full((N, J), -np.inf) if has_bc else None
        alpha = None
        if has_alpha:
            M = obs[0].alpha.shape[1]
            alpha = np.full((N, J, M), 1.0 / M)
        for n, o in enumerate(obs):
            j = len(o.x)
            if j == 0:
                raise DataError(f"observation {n} has an empty choice set")
            x[n, :j] = o.x
            avail[n, :j] = True
            if has_bc:
                log_bc[n, :j] = o.log_bc
            if has_alpha:
                alpha[n, :j] = o.alpha
        return cls(tuple(attributes), x, np.array([o.chosen for o in obs]), avail, log_bc, alpha)

    def subset(self, idx) -> "ChoiceData":
        idx = np.asarray(idx)
        return ChoiceData(
            self.attributes,
            self.x[idx],
            self.chosen[idx],
            self.avail[idx],
            None if self.log_bc is None else self.log_bc[idx],
            None if self.alpha is None else self.alpha[idx],
        )


@dataclass(frozen=True)
class ModelSpec:
    family: str
    attributes: tuple
    mu: float = 1.0
    nest_scales: tuple | None = None  # one per nest; DEFAULT_NEST_SCALE when omitted

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise SpecError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.attributes:
            raise SpecError("a model needs at least one attribute")

    @property
    def is_iap(self) -> bool:
        return self.family.startswith("IAP")

    @property
    def is_cnl(self) -> bool:
        return self.family.endswith("CNL")

    def scales(self, n_nests: int) -> np.ndarray:
        if self.nest_scales is None:
            return np.full(n_nests, DEFAULT_NEST_SCALE)
        s = np.asarray(self.nest_scales, dtype=np.float64)
        if s.shape != (n_nests,):
            raise SpecError(f"{len(s)} nest scales for {n_nests} nests")
        return s


def utility(beta, x):
    """``V = sum_a beta_a x_a``; rows of ``x`` are alternatives."""
    beta = np.asarray(beta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != beta.shape[-1]:
        raise ShapeError(f"{x.shape[-1]} attributes but {beta.shape[-1]} coefficients")
    return x @ beta


class _Prepared:
    """Per-(data, spec) constants of the likelihood kernel."""

    def __init__(self, data: ChoiceData, spec: ModelSpec):
        missing = [a for a in spec.attributes if a not in data.attributes]
        if missing:
            raise SpecError(f"attributes not in data: {missing}")
        cols = [data.attributes.index(a) for a in spec.attributes]
        N, J, _ = data.x.shape
        self.x2 = data.x[:, :, cols].reshape(N * J, len(cols))
        self.shape = (N, J)
        self.pick = (np.arange(N), data.chosen)
        if spec.is_iap:
            if data.log_bc is None:
                raise SpecError(f"{spec.family} needs ln BC for every alternative")
            if np.any(np.isnan(data.log_bc[data.avail])) or np.any(np.isposinf(data.log_bc[data.avail])):
                raise SpecError("ln BC must be finite or -inf")
            base = data.log_bc
        else:
            base = np.zeros((N, J))
        self.log_bc = np.where(data.avail, base, -np.inf)
        if np.any(np.isneginf(self.log_bc[self.pick])):
            raise DataError("a chosen alternative has zero availability")
        self.cnl = spec.is_cnl
        if self.cnl:
            if data.alpha is None:
                raise SpecError(f"{spec.family} needs nest-membership rows for every alternative")
            alpha = data.alpha
            M = alpha.shape[2]
            self.mu = float(spec.mu)
            self.nest_scales = spec.scales(M)
            if not self.mu > 0 or np.any(self.nest_scales < self.mu):
                raise NestStructureError("need 0 < mu <= mu_m for every nest")
            a = alpha[data.avail]
            if np.any(a < 0) or np.any(np.abs(a.sum(axis=1) - 1.0) > 1e-8):
                raise NestStructureError("nest-membership rows must be non-negative and sum to 1")
            with np.errstate(divide="ignore"):
                self.log_alpha = np.log(alpha)

    def ll(self, beta):
        v = ops.reshape(ops.matmul(self.x2, ops.reshape(beta, (-1, 1))), self.shape)
        if self.cnl:
            logp = gev.iap_cnl_log_prob(v, self.log_bc, self.log_alpha, self.mu, self.nest_scales)
        else:
            logp = gev.iap_mnl_log_prob(v, self.log_bc)
        return ops.sum(ops.getitem(logp, self.pick))

    def value(self, beta) -> float:
        return float(self.ll(np.asarray(beta, dtype=np.float64)))

    def value_and_grad(self, beta):
        tape = Tape()
        b = tape.var(np.asarray(beta, dtype=np.float64))
        out = self.ll(b)
        return float(out.value), tape.grad(out, [b])[0]


def log_likelihood(data: ChoiceData, beta, spec: ModelSpec) -> float:
    return _Prepared(data, spec).value(beta)


def log_likelihood_grad(data: ChoiceData, beta, spec: ModelSpec):
    return _Prepared(data, spec).value_and_grad(beta)


def evaluate(data: ChoiceData, beta, spec: ModelSpec) -> float:
    """Log-likelihood at fixed coefficients (no refitting)."""
    return log_likelihood(data, beta, spec)


@dataclass
class EstimationResult:
    spec: ModelSpec
    beta: np.ndarray
    se: np.ndarray
    ll0: float
    ll: float
    converged: bool
    iterations: int
    grad_norm: float
    n_obs: int
    se_available: bool = True
    targets: np.ndarray | None = None
    message: str = ""
    cov: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def t_zero(self) -> np.ndarray:
        return self.beta / self.se

    @property
    def t_target(self) -> np.ndarray | None:
        if self.targets is None:
            return None
        return (self.beta - self.targets) / self.se

    @property
    def rho2(self) -> float:
        return 1.0 - self.ll / self.ll0 if self.ll0 != 0 else float("nan")

    def format_report(self) -> str:
        head = {
            "family": self.spec.family,
            "observations": self.n_obs,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_inf_norm": f"{self.grad_norm:.3e}",
            "LL0": f"{self.ll0:.6f}",
            "LL0_convention": "BC terms included" if self.spec.is_iap else "uniform over available alternatives",
            "LLhat": f"{self.ll:.6f}",
            "rho2": f"{self.rho2:.6f}",
            "std_errors": "available" if self.se_available else "unavailable (Hessian not negative definite)",
        }
        if self.spec.is_cnl:
            head["mu"] = self.spec.mu
            head["nest_scales"] = "default " + str(DEFAULT_NEST_SCALE) if self.spec.nest_scales is None else list(self.spec.nest_scales)
        head.update(self.meta)
        lines = [f"# {k}: {v}" for k, v in head.items()]
        cols = ["attribute", "beta", "se", "t_vs_0"] + (["target", "t_vs_target"] if self.targets is not None else [])
        lines.append("\t".join(cols))
        tt = self.t_target
        for i, name in enumerate(self.spec.attributes):
            row = [name, f"{self.beta[i]:.6f}", f"{self.se[i]:.6f}", f"{self.t_zero[i]:.3f}"]
            if tt is not None:
                row += [f"{self.targets[i]:g}", f"{tt[i]:.3f}"]
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"


def numerical_hessian(grad_fn, beta, rel_step=1e-4) -> np.ndarray:
    """Central differences of an analytic gradient, symmetrized."""
    beta = np.asarray(beta, dtype=np.float64)
    k = beta.size
    H = np.empty((k, k))
    for j in range(k):
        h = rel_step * max(1.0, abs(beta[j]))
        e = np.zeros(k)
        e[j] = h
        H[:, j] = (grad_fn(beta + e) - grad_fn(beta - e)) / (2.0 * h)
    return 0.5 * (H + H.T)


def bfgs_maximize(fg, x0, gtol=1e-6, ftol=1e-9, max_iter=500):
    """Maximize with BFGS on the negated objective and Armijo backtracking.

    Stops when ``||g||_inf < gtol`` or the relative change of the objective
    falls below ``ftol``.  Returns ``(x, f, g, iterations, converged, message)``.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fg(x)
    f, g = -f, -g
    n = x.size
    Hinv = np.eye(n)
    for it in range(max_iter):
        if np.max(np.abs(g)) < gtol:
            return x, -f, -g, it, True, "gradient tolerance"
        p = -Hinv @ g
        slope = float(g @ p)
        if slope >= 0:
            Hinv = np.eye(n)
            p, slope = -g, -float(g @ g)
        t = 1.0
        for _ in range(60):
            x_new = x + t * p
            f_new, g_new = fg(x_new)
            f_new, g_new = -f_new, -g_new
            if np.isfinite(f_new) and f_new <= f + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            return x, -f, -g, it, False, "line search failed"
        s, y = x_new - x, g_new - g
        rel = abs(f_new - f) / max(abs(f), 1.0)
        x, f, g = x_new, f_new, g_new
        if rel < ftol:
            return x, -f, -g, it + 1, True, "relative objective change"
        sy = float(s @ y)
        if sy > 1e-12:
            if it == 0:
                Hinv = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            V = np.eye(n) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
    return x, -f, -g, max_iter, False, "iteration cap reached"


def estimate(
    data: ChoiceData,
    spec: ModelSpec,
    init=None,
    targets=None,
    gtol: float = 1e-6,
    ftol: float = 1e-9,
    max_iter: int = 500,
) -> EstimationResult:
    prep = _Prepared(data, spec)
    k = len(spec.attributes)
    x0 = np.zeros(k) if init is None else np.asarray(init, dtype=np.float64)
    if x0.shape != (k,):
        raise ShapeError(f"initial vector has shape {x0.shape}, expected ({k},)")
    ll0 = prep.value(np.zeros(k))
    beta, ll, g, iters, ok, msg = bfgs_maximize(prep.value_and_grad, x0, gtol, ftol, max_iter)
    H = numerical_hessian(lambda b: prep.value_and_grad(b)[1], beta)
    se, cov, se_ok = np.full(k, np.nan), None, False
    try:
        np.linalg.cholesky(-H)
        cov = np.linalg.inv(-H)
        se = np.sqrt(np.diag(cov))
        se_ok = bool(np.all(np.isfinite(se)))
    except np.linalg.LinAlgError:
        pass
    tgt = None if targets is None else np.asarray(targets, dtype=np.float64)
    return EstimationResult(
        spec, beta, se, ll0, ll, ok, iters, float(np.max(np.abs(g))), len(data), se_ok, tgt, msg, cov
    )


def joint_wald(result: EstimationResult, point) -> float:
    """``(b - point)' Cov^-1 (b - point)`` for a joint test."""
    if result.cov is None:
        return math.nan
    d = result.beta - np.asarray(point, dtype=np.float64)
    return float(d @ np.linalg.solve(result.cov, d))
