"""Self-contained verification suites pairing every closed form with an
independent numeric oracle (Monte Carlo, quadrature, or finite
differences).  The CLI's ``verify`` subcommand runs these and turns the
results into a pass/fail table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import capacity as cap
from . import losses


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_uniform_balance(seed: int = 2, n_samples: int = 100_000) -> CheckResult:
    """Orthogonal equal-norm gating must route uniform sphere tokens
    evenly: every assignment fraction within 3 binomial sigma of 1/n."""
    worst = 0.0
    detail = []
    for dim, n in ((64, 8), (128, 16)):
        f, sigma = cap.mc_assignment_fractions(dim, n, n_samples, seed=seed)
        z = float(np.abs(f - 1.0 / n).max() / sigma)
        worst = max(worst, z)
        detail.append(f"(d={dim},n={n}) max|f-1/n|={z:.2f} sigma")
    return CheckResult("uniform-balance", worst <= 3.0, "; ".join(detail))


_MC_GRID = (
    (0.03125, 1024),  # 1/sqrt(d)
    (0.015625, 4096),
    (0.25, 16),
    (0.5, 8),
    (0.1, 64),
    (0.2, 32),
    (0.3, 12),
    (0.15, 48),
    (0.05, 128),
    (0.35, 10),
)


def check_cap_probability_mc(seed: int = 2, n_samples: int = 1_000_000) -> CheckResult:
    """Monte Carlo two-cap probability vs. the incomplete-beta formula,
    within 3 binomial standard errors on every grid case."""
    worst = 0.0
    worst_case = None
    for i, (delta, dim) in enumerate(_MC_GRID):
        analytic = cap.p_delta(cap.CapacityTheoryInput(delta=delta, dim=dim, n_experts=1))
        est, stderr = cap.mc_p_delta(delta, dim, n_samples, seed=seed + i)
        z = abs(est - analytic) / max(stderr, 1e-12)
        if z > worst:
            worst, worst_case = z, (delta, dim)
    return CheckResult(
        "cap-probability-mc",
        worst <= 3.0,
        f"10 cases, worst |mc-analytic| = {worst:.2f} sigma at {worst_case}",
    )


def check_cap_identity() -> CheckResult:
    """Spherical-cap quadrature vs. the beta identity, abs err <= 1e-6
    for d in 3..20 and delta in 0.1..0.9."""
    worst = 0.0
    for dim in range(3, 21):
        for delta in np.arange(0.1, 0.95, 0.1):
            _, _, err = cap.cap_area_identity_check(float(delta), dim)
            worst = max(worst, err)
    return CheckResult("cap-identity", worst <= 1e-6, f"max abs err {worst:.2e}")


def check_capacity_bounds(n_experts: int = 16) -> CheckResult:
    """The erfc form of the capacity bound must exceed the exponential
    form at every grid point with d >= 256 and delta * sqrt(d) >= 1.

    The exact-vs-erfc gap is reported for inspection: at finite d the
    erfc approximation sits slightly above the exact 1/(n p_delta) in the
    moderate regime, so only the erfc > exp leg is gated here.
    """
    ok = True
    worst_gap = 0.0
    n_points = 0
    for dim in (256, 512, 1024, 2048, 4096):
        for mult in (1.0, 1.5, 2.0, 3.0, 5.0):
            delta = mult / math.sqrt(dim)
            if delta >= 1.0:
                continue
            res = cap.ec_min(cap.CapacityTheoryInput(delta=delta, dim=dim, n_experts=n_experts))
            n_points += 1
            if math.isfinite(res.erfc_bound) and math.isfinite(res.exp_bound):
                if not res.erfc_bound > res.exp_bound:
                    ok = False
            if math.isfinite(res.ec_min) and math.isfinite(res.erfc_bound):
                worst_gap = max(worst_gap, (res.erfc_bound - res.ec_min) / res.ec_min)
    return CheckResult(
        "capacity-bounds",
        ok,
        f"erfc-form > exp-form at {n_points} points; "
        f"max rel gap of erfc form above exact: {worst_gap:.2e}",
    )


def check_grad(seed: int = 2, n_points: int = 100, rel_tol: float = 1e-4) -> CheckResult:
    """Analytic gradients of all three losses vs. central differences."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_points):
        kind = rng.integers(3)
        if kind == 0:
            n = int(rng.integers(2, 9))
            f = rng.dirichlet(np.ones(n))
            alpha = float(rng.uniform(0.001, 0.1))
            rep = losses.grad_check(
                lambda p: losses.aux_loss(f, p / p.sum(), alpha),
                lambda p: losses.aux_loss_grad_p(f, alpha) / p.sum()
                - np.dot(losses.aux_loss_grad_p(f, alpha), p) / p.sum() ** 2,
                rng.dirichlet(np.ones(n)),
            )
        elif kind == 1:
            n = int(rng.integers(2, 9))
            d_l = rng.dirichlet(np.ones(n)) + 1e-3
            d_l /= d_l.sum()
            mu = float(rng.uniform(0.001, 0.1))
            rep = losses.grad_check(
                lambda z: losses.locality_loss(
                    np.exp(z - z.max()) / np.exp(z - z.max()).sum(), d_l, mu
                ),
                lambda z: losses.locality_loss_grad_logits(z, d_l, mu),
                rng.normal(0, 1, n),
            )
        else:
            t, k = int(rng.integers(2, 6)), int(rng.integers(2, 6))
            targets = rng.integers(0, k, t)
            rep = losses.grad_check(
                lambda lg: losses.cross_entropy(lg.reshape(t, k), targets),
                lambda lg: losses.cross_entropy_grad(lg.reshape(t, k), targets).ravel(),
                rng.normal(0, 2, t * k),
            )
        worst = max(worst, rep.max_rel_err)
    return CheckResult(
        "grad-check", worst <= rel_tol, f"{n_points} points, max rel err {worst:.2e}"
    )


CHECKS = {
    "uniform-balance": lambda seed: check_uniform_balance(seed=seed),
    "cap-probability-mc": lambda seed: check_cap_probability_mc(seed=seed),
    "cap-identity": lambda seed: check_cap_identity(),
    "capacity-bounds": lambda seed: check_capacity_bounds(),
    "grad-check": lambda seed: check_grad(seed=seed),
}


def run_checks(only: str | None = None, seed: int = 2, inject_failure: bool = False) -> list[CheckResult]:
    """Run all (or one named) verification suite.

    ``inject_failure`` is a test hook that falsifies the first result so
    the failure exit path can be exercised.
    """
    names = [only] if only else list(CHECKS)
    for name in names:
        if name not in CHECKS:
            raise KeyError(f"unknown check {name!r}; known: {', '.join(CHECKS)}")
    results = [CHECKS[name](seed) for name in names]
    if inject_failure and results:
        first = results[0]
        results[0] = CheckResult(first.name, False, "failure injected by test hook")
    return results
