"""IAP-GEV choice probabilities: MNL and cross-nested logit with implicit
availability/perception weights.

Availability enters as ``log_bc`` (natural log of each alternative's weight).
An alternative outside the perceived choice set carries ``-inf`` and receives
probability exactly zero.  Weights are not restricted to ``[0, 1]``.  A
common rescaling of them cancels in IAP-MNL, and in IAP-CNL only when every
nest shares one scale; with unequal nest scales the weights' overall level
shifts probability between nests.

All sums run in log space.  The batched kernels accept tape variables for the
utilities so the estimator can differentiate through them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateChoiceSetError, NestStructureError, ShapeError, UnsupportedCheckError
from .numeric import ops


def safe_log(x):
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(x, dtype=np.float64))


@dataclass(frozen=True)
class NestStructure:
    """Cross-nested structure: model scale, per-nest scales, inclusion matrix."""

    mu: float
    nest_scales: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        scales = np.atleast_1d(np.asarray(self.nest_scales, dtype=np.float64))
        alpha = np.atleast_2d(np.asarray(self.alpha, dtype=np.float64))
        object.__setattr__(self, "nest_scales", scales)
        object.__setattr__(self, "alpha", alpha)
        if not self.mu > 0:
            raise NestStructureError(f"model scale must be positive, got {self.mu}")
        if alpha.shape[1] != scales.size:
            raise NestStructureError(
                f"alpha has {alpha.shape[1]} nest columns but {scales.size} nest scales"
            )
        if np.any(scales <= 0):
            raise NestStructureError("nest scales must be positive")
        if np.any(scales < self.mu):
            raise NestStructureError("nest scales must be >= the model scale")
        if np.any(alpha < 0) or not np.all(np.isfinite(alpha)):
            raise NestStructureError("inclusion parameters must be finite and >= 0")
        if np.any(alpha.sum(axis=1) <= 0):
            raise NestStructureError("every alternative needs positive total inclusion")

    @property
    def nest_count(self) -> int:
        return self.nest_scales.size

    @classmethod
    def single_nest(cls, n_alternatives: int, mu: float = 1.0) -> "NestStructure":
        return cls(mu, np.array([mu]), np.ones((n_alternatives, 1)))


# -- batched kernels ----------------------------------------------------------


def _expand_last(x):
    return ops.reshape(x, ops.value(x).shape + (1,))


def cnl_log_terms(v, log_bc, log_alpha, mu, nest_scales):
    """log G and log G'_j for every alternative.

    Shapes: ``v`` and ``log_bc`` (..., J); ``log_alpha`` (..., J, M).  G' is
    the derivative of G with respect to ``exp(v_j)`` divided by
    ``BC_j * mu``, so the choice probability is ``BC_j e^{v_j} G'_j / G``.
    """
    mu_m = np.asarray(nest_scales, dtype=np.float64)
    log_bc = np.asarray(log_bc, dtype=np.float64)
    vj = _expand_last(v)  # (..., J, 1)
    a = ops.add(ops.mul(vj, mu_m), log_bc[..., None] + log_alpha)
    log_y = ops.log_sum_exp(a, axis=-2)  # (..., M)
    log_g = ops.log_sum_exp(ops.mul(log_y, mu / mu_m), axis=-1)

    # nests with no perceived member contribute nothing to G'
    live = np.isfinite(ops.value(log_y))
    log_y_safe = ops.where(live, log_y, 0.0)
    b = ops.add(ops.mul(vj, mu_m - 1.0), log_alpha)
    b = ops.add(b, ops.reshape(ops.mul(log_y_safe, (mu - mu_m) / mu_m), ops.value(log_y).shape[:-1] + (1, mu_m.size)))
    b = ops.where(live[..., None, :] & np.isfinite(log_alpha), b, -np.inf)
    log_gp = ops.log_sum_exp(b, axis=-1)
    return log_g, log_gp


def log_prob_from_numerators(log_num):
    """Normalize log numerators along the last axis."""
    return ops.sub(log_num, ops.log_sum_exp(log_num, axis=-1, keepdims=True))


def iap_mnl_log_prob(v, log_bc):
    return log_prob_from_numerators(ops.add(v, log_bc))


def iap_cnl_log_prob(v, log_bc, log_alpha, mu, nest_scales):
    _, log_gp = cnl_log_terms(v, log_bc, log_alpha, mu, nest_scales)
    return log_prob_from_numerators(ops.add(ops.add(v, log_bc), log_gp))


# -- single-instance API ------------------------------------------------------


def _check_inputs(v, log_bc, nests=None):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ShapeError("utilities must be a non-empty vector")
    if log_bc is None:
        log_bc = np.zeros_like(v)
    log_bc = np.asarray(log_bc, dtype=np.float64)
    if log_bc.shape != v.shape:
        raise ShapeError(f"log_bc shape {log_bc.shape} != utility shape {v.shape}")
    if not np.any(np.isfinite(log_bc)):
        raise DegenerateChoiceSetError("every alternative has zero availability")
    if nests is not None and nests.alpha.shape[0] != v.size:
        raise NestStructureError(
            f"alpha describes {nests.alpha.shape[0]} alternatives, utilities {v.size}"
        )
    return v, log_bc


def iap_mnl_prob(v, log_bc=None) -> np.ndarray:
    """MNL probabilities with availability weights ``exp(log_bc)``."""
    v, log_bc = _check_inputs(v, log_bc)
    return np.exp(iap_mnl_log_prob(v, log_bc))


def mnl_prob(v) -> np.ndarray:
    return iap_mnl_prob(v, None)


def cnl_log_generation(v, log_bc, nests: NestStructure) -> float:
    v, log_bc = _check_inputs(v, log_bc, nests)
    log_g, _ = cnl_log_terms(v, log_bc, safe_log(nests.alpha), nests.mu, nests.nest_scales)
    return float(log_g)


def cnl_generation(v, log_bc, nests: NestStructure) -> float:
    """``sum_m (sum_j BC_j alpha_jm e^{mu_m v_j})^{mu / mu_m}``."""
    with np.errstate(over="ignore"):
        return float(np.exp(cnl_log_generation(v, log_bc, nests)))


def cnl_partials(v, log_bc, nests: NestStructure) -> np.ndarray:
    """G'_j for every alternative (the BC_j * mu factor divided out)."""
    v, log_bc = _check_inputs(v, log_bc, nests)
    _, log_gp = cnl_log_terms(v, log_bc, safe_log(nests.alpha), nests.mu, nests.nest_scales)
    return np.exp(log_gp)


def cnl_partial(v, log_bc, nests: NestStructure, i: int) -> float:
    n = np.asarray(v).size
    if not 0 <= i < n:
        raise IndexError(f"alternative index {i} out of range for {n} alternatives")
    return float(cnl_partials(v, log_bc, nests)[i])


def iap_cnl_prob(v, log_bc, nests: NestStructure) -> np.ndarray:
    v, log_bc = _check_inputs(v, log_bc, nests)
    return np.exp(iap_cnl_log_prob(v, log_bc, safe_log(nests.alpha), nests.mu, nests.nest_scales))


def cnl_prob(v, nests: NestStructure) -> np.ndarray:
    return iap_cnl_prob(v, None, nests)


# -- generation-function property checks ---------------------------------------

FD_STEP = 1e-3
NOISE_FLOOR = 1e-4
HOMOGENEITY_FACTORS = (0.5, 2.0, 10.0)
MAX_ALTERNATIVES = 5
MAX_ORDER = 3


def _generation_of_u(u, bc, nests):
    """G as a plain function of the exponentiated utilities ``u = e^v``."""
    total = 0.0
    for m in range(nests.nest_count):
        mu_m = nests.nest_scales[m]
        y = float(np.sum(bc * nests.alpha[:, m] * u**mu_m))
        if y > 0:
            total += y ** (nests.mu / mu_m)
    return total


def mixed_partial_fd(u, bc, nests, idx, step=FD_STEP):
    """Central-difference mixed partial of G w.r.t. ``u[i]`` for i in idx."""
    k = len(idx)
    acc = 0.0
    for signs in itertools.product((1, -1), repeat=k):
        up = np.array(u, dtype=np.float64)
        for i, s in zip(idx, signs):
            up[i] += s * step
        acc += np.prod(signs) * _generation_of_u(up, bc, nests)
    return acc / (2.0 * step) ** k


def mixed_partial_analytic(u, bc, nests, idx):
    """Closed-form k-th mixed partial over distinct alternatives ``idx``."""
    k = len(idx)
    mu = nests.mu
    total = 0.0
    for m in range(nests.nest_count):
        mu_m = nests.nest_scales[m]
        y = float(np.sum(bc * nests.alpha[:, m] * u**mu_m))
        if y <= 0:
            continue
        inner = 1.0
        for i in idx:
            inner *= bc[i] * nests.alpha[i, m] * u[i] ** (mu_m - 1.0)
        falling = 1.0
        for l in range(k):
            falling *= mu / mu_m - l
        total += mu_m**k * inner * falling * y ** ((mu - k * mu_m) / mu_m)
    return total


@dataclass
class MixedPartial:
    order: int
    indices: tuple
    fd_value: float
    analytic_value: float
    expected_sign: str
    ok: bool


@dataclass
class GenerationReport:
    generation: float
    non_negative: bool
    homogeneity_residuals: dict = field(default_factory=dict)
    divergence: dict = field(default_factory=dict)
    partials: list = field(default_factory=list)
    degenerate_scales: bool = False

    @property
    def homogeneity_ok(self) -> bool:
        return all(r < 1e-10 for r in self.homogeneity_residuals.values())

    @property
    def divergence_ok(self) -> bool:
        return all(inc and ratio > 1e6 for inc, ratio in self.divergence.values())

    @property
    def partials_ok(self) -> bool:
        return all(p.ok for p in self.partials)

    @property
    def ok(self) -> bool:
        return self.non_negative and self.homogeneity_ok and self.divergence_ok and self.partials_ok

    def format(self) -> str:
        lines = [
            f"generation\t{self.generation:.12g}\tnon_negative={self.non_negative}",
        ]
        for beta, r in self.homogeneity_residuals.items():
            lines.append(f"homogeneity\tfactor={beta:g}\tresidual={r:.3e}")
        for i, (inc, ratio) in self.divergence.items():
            lines.append(f"divergence\talt={i}\tincreasing={inc}\tgrowth={ratio:.3e}")
        for p in self.partials:
            idx = ",".join(str(i) for i in p.indices)
            lines.append(
                f"partial\tk={p.order}\talts={idx}\tfd={p.fd_value:.6e}\t"
                f"analytic={p.analytic_value:.6e}\texpect={p.expected_sign}\tok={p.ok}"
            )
        lines.append(f"overall\tok={self.ok}")
        return "\n".join(lines)


def verify_generation_properties(nests: NestStructure, v, log_bc, max_order: int = 3) -> GenerationReport:
    """Numerically check the generation-function properties of the CNL G.

    Checks non-negativity, homogeneity of degree ``mu`` for the factors in
    ``HOMOGENEITY_FACTORS``, growth as one ``exp(v_i)`` is scaled by up to 1e8
    (a finite surrogate for the limit property), and the alternating signs of
    mixed partials over 1..``max_order`` distinct perceived alternatives.
    """
    v, log_bc = _check_inputs(v, log_bc, nests)
    if max_order < 1 or max_order > MAX_ORDER:
        raise UnsupportedCheckError(f"mixed partials are checked up to order {MAX_ORDER}")
    if v.size > MAX_ALTERNATIVES:
        raise UnsupportedCheckError(f"at most {MAX_ALTERNATIVES} alternatives are supported")

    log_g = cnl_log_generation(v, log_bc, nests)
    g = math.exp(log_g)
    report = GenerationReport(generation=g, non_negative=g >= 0.0)

    for beta in HOMOGENEITY_FACTORS:
        scaled = math.exp(cnl_log_generation(v + math.log(beta), log_bc, nests))
        report.homogeneity_residuals[beta] = abs(scaled - beta**nests.mu * g) / g

    perceived = [i for i in range(v.size) if np.isfinite(log_bc[i])]
    ladder = [10.0**p for p in range(9)]
    for i in perceived:
        values = []
        for t in ladder:
            w = v.copy()
            w[i] += math.log(t)
            values.append(math.exp(cnl_log_generation(w, log_bc, nests)))
        increasing = all(b > a for a, b in zip(values, values[1:]))
        report.divergence[i] = (increasing, values[-1] / values[0])

    u = np.exp(v)
    if np.any(u[perceived] <= 2 * FD_STEP):
        raise UnsupportedCheckError("exp(v) too small for the finite-difference step")
    bc = np.exp(log_bc)
    report.degenerate_scales = bool(np.allclose(nests.nest_scales, nests.mu, rtol=0, atol=1e-12))
    for k in range(1, max_order + 1):
        for idx in itertools.combinations(perceived, k):
            fd = mixed_partial_fd(u, bc, nests, idx)
            an = mixed_partial_analytic(u, bc, nests, idx)
            if k == 1:
                sign, ok = ">=0", fd >= -NOISE_FLOOR
            elif report.degenerate_scales:
                sign, ok = "=0", abs(fd) < NOISE_FLOOR
            elif k % 2:
                sign, ok = ">=0", fd >= -NOISE_FLOOR
            else:
                sign, ok = "<=0", fd <= NOISE_FLOOR
            report.partials.append(MixedPartial(k, idx, fd, an, sign, bool(ok)))
    return report


def random_instance(rng, n_alternatives, n_nests, mu=1.0, degenerate=False, scale_high=3.0):
    """Random valid (v, log_bc, nests) for property checks."""
    v = rng.uniform(-1.0, 1.0, size=n_alternatives)
    log_bc = np.log(rng.uniform(0.1, 1.0, size=n_alternatives))
    alpha = rng.uniform(0.05, 1.0, size=(n_alternatives, n_nests))
    alpha /= alpha.sum(axis=1, keepdims=True)
    if degenerate:
        scales = np.full(n_nests, mu)
    else:
        scales = rng.uniform(mu, scale_high * mu, size=n_nests)
    return v, log_bc, NestStructure(mu, scales, alpha)


def generation_suite(n_instances: int = 200, seed: int = 0, max_alternatives: int = MAX_ALTERNATIVES, max_nests: int = 3):
    """Run :func:`verify_generation_properties` on seeded random instances.

    Every fourth instance uses equal nest scales so the vanishing-partials
    branch is exercised.  Returns a list of ``(J, M, degenerate, report)``.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        J = int(rng.integers(1, max_alternatives + 1))
        M = int(rng.integers(1, max_nests + 1))
        degenerate = i % 4 == 3
        v, log_bc, nests = random_instance(rng, J, M, degenerate=degenerate)
        out.append((J, M, degenerate, verify_generation_properties(nests, v, log_bc)))
    return out
