"""Weak-form consistency checks for simulated measure flows.

For a smooth test function ``phi`` the flow should satisfy, over a grid span
``[s, t]``,

    <mu_t, phi> - <mu_s, phi> =  integral of <mu_r, L_r phi> dr
                               + <mu_s, G_k phi> dW^k(s, t)
                               + <mu_s, (G_k G_l + G'_{lk}) phi> WW^{kl}(s, t)
                               + (higher order),

where ``L`` is the diffusion generator built from drift and diffusion, ``G_k``
differentiates along channel ``k`` of the signal coefficient, and ``G'`` adds
the measure-derivative and time-control contributions.  The defect of this
identity on single cells shrinks like ``|t-s|^(3 alpha)`` when the scheme and
the operators are mutually consistent, which is what the order scan measures.

The time integral is discretised by the composite trapezoid rule on grid
nodes; its error is quadratic in the cell width and sits below the target
order for every admissible ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .coefficients import CoefficientSet, area_coefficient, diffusion_square
from .measures import EmpiricalMeasure, MeasureFlow, pairing, symmetric_mean
from .roughpath import GridRoughPath

__all__ = [
    "TestFunction",
    "constant_function",
    "linear_function",
    "quadratic_function",
    "gaussian_bump",
    "gaussian_linear",
    "sinusoid_function",
    "default_bank",
    "gradient_consistency",
    "op_generator",
    "op_rough",
    "op_rough_second",
    "weak_residual",
    "ResidualScan",
    "residual_order_scan",
    "controlled_pairing_check",
    "save_residual_csv",
]


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Scalar test function with closed-form gradient and Hessian.

    ``value`` maps ``(N, d) -> (N,)``, ``grad`` to ``(N, d)`` and ``hess`` to
    ``(N, d, d)``.  ``c3_bound`` is a declared bound on derivatives up to
    third order over the region of interest; it scales defect tolerances.
    """

    __test__ = False  # keep pytest from collecting the mathematical name

    name: str
    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hess: Callable[[np.ndarray], np.ndarray]
    c3_bound: float


# ---------------------------------------------------------------------------
# bank constructors


def constant_function(c: float = 1.0) -> TestFunction:
    return TestFunction(
        name=f"const_{c}",
        value=lambda x: np.full(x.shape[0], float(c)),
        grad=lambda x: np.zeros_like(x),
        hess=lambda x: np.zeros(x.shape + (x.shape[1],)),
        c3_bound=abs(float(c)),
    )


def linear_function(a: np.ndarray) -> TestFunction:
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    return TestFunction(
        name="linear",
        value=lambda x: x @ a,
        grad=lambda x: np.broadcast_to(a, x.shape).copy(),
        hess=lambda x: np.zeros(x.shape + (x.shape[1],)),
        c3_bound=float(np.linalg.norm(a)),
    )


def quadratic_function(Q: np.ndarray) -> TestFunction:
    """``phi(x) = 0.5 x^T Q x`` with ``Q`` symmetrised."""
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    Q = 0.5 * (Q + Q.T)
    return TestFunction(
        name="quadratic",
        value=lambda x: 0.5 * np.einsum("ai,ij,aj->a", x, Q, x),
        grad=lambda x: x @ Q,
        hess=lambda x: np.broadcast_to(Q, x.shape + (x.shape[1],)).copy(),
        c3_bound=float(np.max(np.abs(Q))),
    )


def gaussian_bump(center: np.ndarray, width: float, amp: float = 1.0) -> TestFunction:
    c = np.atleast_1d(np.asarray(center, dtype=np.float64))
    w2 = float(width) ** 2

    def value(x):
        return amp * np.exp(-0.5 * np.sum((x - c) ** 2, axis=1) / w2)

    def grad(x):
        return value(x)[:, None] * (-(x - c) / w2)

    def hess(x):
        r = (x - c) / w2
        eye = np.eye(c.size) / w2
        return value(x)[:, None, None] * (np.einsum("ai,aj->aij", r, r) - eye)

    # crude but valid: derivatives of a unit-width-normalised bump are within
    # a small constant of amp / width^order
    bound = abs(amp) * max(1.0, 1.0 / float(width)) ** 3 * 3.0
    return TestFunction(f"bump_w{width}", value, grad, hess, bound)


def gaussian_linear(
    center: np.ndarray, width: float, slope: np.ndarray, amp: float = 1.0
) -> TestFunction:
    """Gaussian bump times a linear factor: mixes odd and even derivatives."""
    base = gaussian_bump(center, width, amp)
    a = np.atleast_1d(np.asarray(slope, dtype=np.float64))

    def value(x):
        return base.value(x) * (x @ a)

    def grad(x):
        return base.grad(x) * (x @ a)[:, None] + base.value(x)[:, None] * a

    def hess(x):
        lin = (x @ a)[:, None, None]
        g = base.grad(x)
        cross = np.einsum("ai,j->aij", g, a)
        return base.hess(x) * lin + cross + np.swapaxes(cross, 1, 2)

    bound = base.c3_bound * (1.0 + float(np.linalg.norm(a))) * 4.0
    return TestFunction(f"bump_lin_w{width}", value, grad, hess, bound)


def sinusoid_function(freq: np.ndarray, phase: float = 0.0) -> TestFunction:
    k = np.atleast_1d(np.asarray(freq, dtype=np.float64))

    def value(x):
        return np.sin(x @ k + phase)

    def grad(x):
        return np.cos(x @ k + phase)[:, None] * k

    def hess(x):
        return -value(x)[:, None, None] * np.einsum("i,j->ij", k, k)

    return TestFunction(
        f"sin_k{np.linalg.norm(k):.3g}", value, grad, hess,
        float(max(1.0, np.linalg.norm(k)) ** 3),
    )


def default_bank(dim: int) -> list[TestFunction]:
    """Bounded smooth probes used by the order scans."""
    e0 = np.zeros(dim)
    e0[0] = 1.0
    bank = [
        gaussian_bump(np.zeros(dim), 1.0),
        gaussian_bump(0.5 * e0, 1.5, amp=0.8),
        gaussian_linear(np.zeros(dim), 1.2, e0),
        sinusoid_function(1.0 * e0),
        sinusoid_function(2.0 * e0, phase=0.7),
    ]
    if dim > 1:
        e1 = np.zeros(dim)
        e1[1] = 1.0
        bank.append(sinusoid_function(e0 + e1, phase=0.3))
    return bank


def gradient_consistency(phi: TestFunction, points: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error of grad/hess against central differences."""
    x = np.atleast_2d(np.asarray(points, dtype=np.float64))
    d = x.shape[1]
    g, H = phi.grad(x), phi.hess(x)
    worst = 0.0
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fd_g = (phi.value(x + e) - phi.value(x - e)) / (2 * h)
        fd_H = (phi.grad(x + e) - phi.grad(x - e)) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(g))), float(np.max(np.abs(H))))
        worst = max(
            worst,
            float(np.max(np.abs(fd_g - g[:, j]))) / scale,
            float(np.max(np.abs(fd_H - H[:, :, j]))) / scale,
        )
    return worst


# ---------------------------------------------------------------------------
# operators paired against the empirical measure


def op_generator(
    mu: EmpiricalMeasure, t: float, phi: TestFunction, coeffs: CoefficientSet
) -> float:
    """``<mu, 0.5 a:Hess phi + b . grad phi>`` with ``a = sigma sigma^T``."""
    x = mu.points
    marg = None if coeffs.measure_free else mu
    a = diffusion_square(coeffs, t, x, marg)
    b = coeffs.drift(t, x, marg)
    integrand = 0.5 * np.einsum("aij,aij->a", a, phi.hess(x)) + np.einsum(
        "ai,ai->a", b, phi.grad(x)
    )
    return float(symmetric_mean(integrand))


def op_rough(
    mu: EmpiricalMeasure, t: float, phi: TestFunction, kappa: int,
    coeffs: CoefficientSet,
) -> float:
    """``<mu, grad phi . f_kappa>``, the first-order signal pairing."""
    x = mu.points
    marg = None if coeffs.measure_free else mu
    f = coeffs.rough.eval(t, x, marg)
    return float(symmetric_mean(np.einsum("ai,ai->a", phi.grad(x), f[:, :, kappa])))


def op_rough_second(
    mu: EmpiricalMeasure, t: float, phi: TestFunction, kappa: int, lam: int,
    coeffs: CoefficientSet,
) -> float:
    """Pairing of the second-order signal operator for channel pair (kappa, lam).

    Expands to ``f_kappa . D(f_lam . grad phi)`` plus the measure-derivative
    and time-control parts; written through the area tensor so it matches the
    one-step scheme identically:

        <mu, f^i_kap f^j_lam Hess_ij phi + area[., kap, lam] . grad phi>.
    """
    x = mu.points
    marg = None if coeffs.measure_free else mu
    f = coeffs.rough.eval(t, x, marg)
    area = area_coefficient(coeffs, t, x, marg)
    integrand = np.einsum(
        "ai,aj,aij->a", f[:, :, kappa], f[:, :, lam], phi.hess(x)
    ) + np.einsum("ai,ai->a", area[:, :, kappa, lam], phi.grad(x))
    return float(symmetric_mean(integrand))


def _generator_curve(
    flow: MeasureFlow, phi: TestFunction, coeffs: CoefficientSet, i: int, j: int
) -> np.ndarray:
    pts = flow.grid.points
    return np.array(
        [
            op_generator(flow.measure(k), float(pts[k]), phi, coeffs)
            for k in range(i, j + 1)
        ]
    )


def weak_residual(
    flow: MeasureFlow,
    rp: GridRoughPath,
    phi: TestFunction,
    coeffs: CoefficientSet,
    s: float,
    t: float,
) -> float:
    """Defect of the weak-form expansion over the grid span ``[s, t]``."""
    i, j = flow.grid.span_indices(s, t)
    if i == j:
        return 0.0
    mu_s, mu_t = flow.measure(i), flow.measure(j)
    lhs = pairing(mu_t, phi.value) - pairing(mu_s, phi.value)

    gen = _generator_curve(flow, phi, coeffs, i, j)
    dt = np.diff(flow.grid.points[i : j + 1])
    time_part = float(np.sum(0.5 * dt * (gen[:-1] + gen[1:])))

    dw = rp.increment(s, t)
    ww = rp.second(s, t)
    n = rp.dim
    first = sum(
        op_rough(mu_s, float(s), phi, k, coeffs) * dw[k] for k in range(n)
    )
    second = sum(
        op_rough_second(mu_s, float(s), phi, k, l, coeffs) * ww[k, l]
        for k in range(n)
        for l in range(n)
    )
    return float(lhs - time_part - first - second)


# ---------------------------------------------------------------------------
# order scan


@dataclass(frozen=True, eq=False)
class ResidualScan:
    """Single-cell residual maxima per dyadic level, with fitted decay order.

    ``table`` rows are ``(phi, level, delta, max_residual, noise_floor)``;
    ``slopes[name]`` is the log-log fitted order, or ``inf`` for probes whose
    residual never leaves machine zero (reported as exact).
    """

    table: list[tuple[str, int, float, float, float]]
    slopes: dict[str, float]
    exact: dict[str, bool]


_MACHINE_FLOOR = 1e-13


def residual_order_scan(
    runs: Sequence[tuple[MeasureFlow, GridRoughPath]],
    bank: Sequence[TestFunction],
    coeffs: CoefficientSet,
    replicates: Sequence[Sequence[tuple[MeasureFlow, GridRoughPath]]] = (),
) -> ResidualScan:
    """Fit the single-cell residual decay across dyadic resolutions.

    ``runs[l]`` is the flow/signal pair at level ``l`` (finer with ``l``); the
    statistic per level is the max over that grid's cells of the absolute
    weak-form defect.  Optional ``replicates`` are re-runs with different
    seeds; the spread of their statistics is reported as a noise floor next
    to each residual.
    """
    if len(runs) < 2:
        raise ValueError("need at least two resolutions to fit a slope")
    for reps in replicates:
        if len(reps) != len(runs):
            raise ValueError("every replicate needs one run per level")

    def level_stat(flow: MeasureFlow, rp: GridRoughPath, phi: TestFunction) -> float:
        pts = flow.grid.points
        return max(
            abs(weak_residual(flow, rp, phi, coeffs, float(pts[k]), float(pts[k + 1])))
            for k in range(flow.grid.num_cells)
        )

    table: list[tuple[str, int, float, float, float]] = []
    slopes: dict[str, float] = {}
    exact: dict[str, bool] = {}
    for phi in bank:
        deltas, stats, floors = [], [], []
        for level, (flow, rp) in enumerate(runs):
            stat = level_stat(flow, rp, phi)
            rep_stats = [level_stat(f, r, phi) for reps in replicates for (f, r) in [reps[level]]]
            floor = 0.0
            if rep_stats:
                allstats = rep_stats + [stat]
                floor = 0.5 * (max(allstats) - min(allstats))
            delta = float(np.max(flow.grid.dt))
            table.append((phi.name, level, delta, stat, floor))
            deltas.append(delta)
            stats.append(stat)
            floors.append(floor)
        if max(stats) < _MACHINE_FLOOR:
            exact[phi.name] = True
            slopes[phi.name] = float("inf")
        else:
            exact[phi.name] = False
            clipped = np.maximum(stats, 1e-300)
            slopes[phi.name] = float(
                np.polyfit(np.log(deltas), np.log(clipped), 1)[0]
            )
    return ResidualScan(table=table, slopes=slopes, exact=exact)


def save_residual_csv(scan: ResidualScan, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("phi,level,delta,max_residual,noise_floor\n")
        for name, level, delta, stat, floor in scan.table:
            fh.write(
                f"{name},{level},{delta!r},{stat!r},{floor!r}\n"
            )


# ---------------------------------------------------------------------------
# controlled-pairing diagnostic


def controlled_pairing_check(
    flow: MeasureFlow,
    rp: GridRoughPath,
    phi: TestFunction,
    coeffs: CoefficientSet,
) -> tuple[float, float]:
    """Grid quotients behind the expansion's remainder hierarchy.

    Returns ``(q_second, q_first_remainder)``: the plain Holder quotient (at
    exponent alpha) of the second-order pairing curve, and the 2 alpha
    quotient of the first-order pairing curve after removing its predicted
    linear response to the signal, whose coefficient is the second-order
    pairing.  Both finite means the flow carries the controlled structure the
    expansion assumes.
    """
    pts = flow.grid.points
    K1 = pts.size
    n = rp.dim
    first = np.empty((K1, n))
    second = np.empty((K1, n, n))
    for k in range(K1):
        mu = flow.measure(k)
        tk = float(pts[k])
        for kap in range(n):
            first[k, kap] = op_rough(mu, tk, phi, kap, coeffs)
            for lam in range(n):
                second[k, kap, lam] = op_rough_second(mu, tk, phi, kap, lam, coeffs)
    q_second = 0.0
    q_rem = 0.0
    for i in range(K1 - 1):
        gap = pts[i + 1 :] - pts[i]
        dsec = second[i + 1 :] - second[i]
        q_second = max(
            q_second,
            float(np.max(np.max(np.abs(dsec.reshape(len(gap), -1)), axis=1) / gap**rp.alpha)),
        )
        dw = rp.values[i + 1 :] - rp.values[i]             # (J, n)
        # predicted response of the first-order pairing along channel kap is
        # sum_eta second[eta, kap] dW^eta
        pred = np.einsum("ek,je->jk", second[i], dw)
        rem = np.abs(first[i + 1 :] - first[i] - pred)
        q_rem = max(
            q_rem, float(np.max(np.max(rem, axis=1) / gap ** (2 * rp.alpha)))
        )
    return q_second, q_rem
