"""Brute-force verification suites behind the ``verify`` CLI command.

Four scopes, each a list of named checks returning (name, passed, detail):

* ``algebra``      — probabilistic-sum identities and the ordered-selection
                     representation of the per-group mask space, M <= 8;
* ``probability``  — permutation-sum probabilities normalize over the
                     enumerated mask set and are shift invariant;
* ``gradients``    — the closed-form score against central finite
                     differences, per-group zero sums, and the enumerated
                     score mean;
* ``unbiasedness`` — Monte Carlo means of all three estimators against the
                     enumerated exact gradient on the packaged instance.

Checks run on fixed, versioned instances (packaged config files plus pinned
seeds) so failures are reproducible bit for bit.
"""

from __future__ import annotations

import math
from importlib import resources

import numpy as np

from .config import RunConfig, build_task, parse_config_text, resolve_m0
from .estimators import EstimatorKind
from .exact import estimator_stats, exact_grad_phi
from .masks import NMMask, SparsityPattern, compose_basis, enumerate_masks, oplus, verify_representation
from .sampling import GroupLogits, grad_log_prob, group_mask_prob, mask_group_probs
from .tasks import magnitude_mask

PROBABILITY_PATTERNS = ((1, 4), (2, 4), (3, 4), (2, 6), (4, 8))


def load_instance(name: str) -> RunConfig:
    """Load a packaged, versioned oracle instance config."""
    text = resources.files("nmpg.instances").joinpath(f"{name}.cfg").read_text()
    return parse_config_text(text, source=f"instances/{name}.cfg")


# ---------------------------------------------------------------------------
# algebra
# ---------------------------------------------------------------------------


def _check_oplus_laws() -> tuple[str, bool, str]:
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(200):
        m = int(rng.integers(1, 9))
        a, b, c = rng.random((3, m))
        if rng.random() < 0.5:
            a, b = (a > 0.5).astype(float), (b > 0.5).astype(float)
        worst = max(worst, float(np.abs(oplus(a, b) - oplus(b, a)).max()))
        worst = max(
            worst,
            float(np.abs(oplus(oplus(a, b), c) - oplus(a, oplus(b, c))).max()),
        )
    return ("oplus commutative+associative", worst <= 1e-12, f"max dev {worst:.2e}")


def _check_basis_norms() -> tuple[str, bool, str]:
    rng = np.random.default_rng(7)
    for _ in range(200):
        m = int(rng.integers(1, 13))
        n = int(rng.integers(1, m + 1))
        idx = rng.permutation(m)[:n] + 1
        vec = compose_basis(idx.tolist(), m)
        if vec.sum() != n or not set(np.unique(vec)) <= {0.0, 1.0}:
            return ("basis composition L1 norm", False, f"failed at M={m} idx={idx}")
    return ("basis composition L1 norm", True, "200 random index sets")


def _check_representation() -> tuple[str, bool, str]:
    for m in range(1, 9):
        for n in range(1, m + 1):
            if not verify_representation(SparsityPattern(n, m)):
                return ("ordered-selection representation", False, f"failed at {n}:{m}")
    return ("ordered-selection representation", True, "all patterns with M <= 8")


# ---------------------------------------------------------------------------
# probability
# ---------------------------------------------------------------------------


def _check_normalization() -> tuple[str, bool, str]:
    rng = np.random.default_rng(100)
    worst = 0.0
    for n, m in PROBABILITY_PATTERNS:
        pat = SparsityPattern(n, m)
        space = enumerate_masks(pat)
        for _ in range(100):
            logits = rng.standard_normal(m) * 2
            total = sum(group_mask_prob(row, logits, pat) for row in space)
            worst = max(worst, abs(total - 1.0))
    return ("probabilities normalize", worst <= 1e-10, f"max |sum-1| {worst:.2e}")


def _check_shift_invariance() -> tuple[str, bool, str]:
    rng = np.random.default_rng(101)
    worst_p, worst_g = 0.0, 0.0
    pat = SparsityPattern(2, 4)
    space = enumerate_masks(pat)
    for _ in range(100):
        logits = rng.standard_normal(4)
        shift = float(rng.uniform(-20, 20))
        row = space[rng.integers(len(space))]
        p0 = group_mask_prob(row, logits, pat)
        p1 = group_mask_prob(row, logits + shift, pat)
        worst_p = max(worst_p, abs(p0 - p1))
        g0 = grad_log_prob(NMMask(row, pat), GroupLogits(logits, pat))
        g1 = grad_log_prob(NMMask(row, pat), GroupLogits(logits + shift, pat))
        worst_g = max(worst_g, float(np.abs(g0 - g1).max()))
    ok = worst_p <= 1e-12 and worst_g <= 1e-10
    return ("shift invariance", ok, f"prob dev {worst_p:.2e}, grad dev {worst_g:.2e}")


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def _fd_group_grad(bits: np.ndarray, logits: np.ndarray, pat: SparsityPattern,
                   h: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(logits)
    for k in range(logits.size):
        up, down = logits.copy(), logits.copy()
        up[k] += h
        down[k] -= h
        out[k] = (
            math.log(group_mask_prob(bits, up, pat))
            - math.log(group_mask_prob(bits, down, pat))
        ) / (2 * h)
    return out


def _check_fd_agreement() -> tuple[str, bool, str]:
    rng = np.random.default_rng(12)
    worst_rel, worst_abs = 0.0, 0.0
    for n, m in PROBABILITY_PATTERNS:
        pat = SparsityPattern(n, m)
        space = enumerate_masks(pat)
        for _ in range(200):
            logits = rng.standard_normal(m)
            bits = space[rng.integers(len(space))]
            g = grad_log_prob(NMMask(bits, pat), GroupLogits(logits, pat))
            fd = _fd_group_grad(bits, logits, pat)
            for k in range(m):
                if abs(g[k]) < 1e-6:
                    worst_abs = max(worst_abs, abs(g[k] - fd[k]))
                else:
                    worst_rel = max(worst_rel, abs(g[k] - fd[k]) / abs(g[k]))
    ok = worst_rel <= 1e-5 and worst_abs <= 1e-8
    return (
        "closed form vs finite differences",
        ok,
        f"worst rel {worst_rel:.2e}, worst abs {worst_abs:.2e}",
    )


def _check_zero_sum() -> tuple[str, bool, str]:
    rng = np.random.default_rng(13)
    worst = 0.0
    for n, m in PROBABILITY_PATTERNS:
        pat = SparsityPattern(n, m)
        space = enumerate_masks(pat)
        for _ in range(100):
            logits = rng.standard_normal(2 * m) * 2
            gl = GroupLogits(logits, pat)
            bits = np.concatenate(
                [space[rng.integers(len(space))], space[rng.integers(len(space))]]
            )
            g = grad_log_prob(NMMask(bits, pat), gl).reshape(2, m)
            worst = max(worst, float(np.abs(g.sum(axis=1)).max()))
    return ("per-group score zero sum", worst <= 1e-8, f"max |sum| {worst:.2e}")


def _check_score_mean_zero() -> tuple[str, bool, str]:
    rng = np.random.default_rng(14)
    worst = 0.0
    for m in range(2, 9):
        for n in range(1, min(m, 4) + 1):
            pat = SparsityPattern(n, m)
            space = enumerate_masks(pat)
            logits = rng.standard_normal(m)
            gl = GroupLogits(logits, pat)
            acc = np.zeros(m)
            for row in space:
                mask = NMMask(row, pat)
                acc += mask_group_probs(mask, gl)[0] * grad_log_prob(mask, gl)
            worst = max(worst, float(np.abs(acc).max()))
    return ("enumerated score mean zero", worst <= 1e-10, f"max |mean| {worst:.2e}")


# ---------------------------------------------------------------------------
# unbiasedness
# ---------------------------------------------------------------------------


def _unbiasedness_checks() -> list[tuple[str, bool, str]]:
    cfg = load_instance("unbiased_d8")
    task, _ = build_task(cfg)
    m0 = resolve_m0(cfg, task) or magnitude_mask(task.weights, task.pattern)
    settings = {
        "uniform": np.zeros(task.dim),
        "baseline-init": m0.bits * cfg.init_magnitude,
        "random": np.random.default_rng(2).standard_normal(task.dim),
    }
    out = []
    for label, values in settings.items():
        logits = GroupLogits(values, task.pattern)
        exact = exact_grad_phi(logits, task)
        for kind in EstimatorKind:
            st = estimator_stats(kind, logits, task, m0, 0.05, cfg.samples, cfg.seed)
            z = float((np.abs(st.mean - exact.gradient) / st.standard_error).max())
            out.append(
                (
                    f"unbiased {kind.value} @ {label}",
                    z <= 3.0,
                    f"max |mean-exact|/SE = {z:.3f} at {cfg.samples} samples",
                )
            )
    return out


SCOPES = {
    "algebra": lambda: [_check_oplus_laws(), _check_basis_norms(), _check_representation()],
    "probability": lambda: [_check_normalization(), _check_shift_invariance()],
    "gradients": lambda: [_check_fd_agreement(), _check_zero_sum(), _check_score_mean_zero()],
    "unbiasedness": _unbiasedness_checks,
}


def run_scope(scope: str) -> list[tuple[str, bool, str]]:
    if scope == "all":
        results = []
        for name in ("algebra", "probability", "gradients", "unbiasedness"):
            results.extend(SCOPES[name]())
        return results
    if scope not in SCOPES:
        raise ValueError(f"unknown scope {scope!r}")
    return SCOPES[scope]()
