"""Measurement strength, information and disturbance functionals.

The strength of a measurement is defined through the average uncertainty it
leaves behind when applied to the maximally mixed state: sharper measurements
leave purer (lower-entropy) conditional states.  Disturbance is the entropy
gained (or purity lost) by the outcome-averaged state.  Both notions use the
final, post-measurement state, which is what a feedback controller acts on.
"""

import math
from dataclasses import dataclass

import numpy as np

from .states import check_density_matrix, overlap, purity, von_neumann_entropy
from .povm import EPS_PROB, KappaMeasurement, MeasurementOperatorSet, kappa_povm, nonselective_apply


@dataclass(frozen=True)
class StrengthReport:
    u_v: float   # average post-measurement von Neumann entropy at I/N (nats)
    u_p: float   # average post-measurement impurity at I/N
    s_v: float   # entropy-based strength; math.inf for rank-one-containing sets
    s_p: float   # purity-based strength; math.inf likewise


@dataclass(frozen=True)
class DisturbanceReport:
    n_e_v: float  # excess entropy of the outcome-averaged state (nats)
    n_e_p: float  # purity lost by the outcome-averaged state
    i_f_p: float  # average final purity (information metric)


@dataclass(frozen=True)
class RateEstimate:
    rate_v: float
    rate_v_se: float
    rate_p: float
    rate_p_se: float


def _outcome_terms(mset, rho):
    """Yield (probability, normalized post-state) for outcomes with P > eps."""
    for om in mset.ops:
        raw = om @ rho @ om.conj().T
        p = np.trace(raw).real
        if p > EPS_PROB:
            yield p, raw / p


def uncertainty_v(mset: MeasurementOperatorSet, rho):
    """Probability-weighted average post-outcome von Neumann entropy."""
    rho = check_density_matrix(rho)
    return float(sum(p * von_neumann_entropy(r) for p, r in _outcome_terms(mset, rho)))


def uncertainty_p(mset: MeasurementOperatorSet, rho):
    """Probability-weighted average post-outcome impurity, 1 - sum Tr[(O rho O^dag)^2]/Tr[O rho O^dag]."""
    rho = check_density_matrix(rho)
    return float(1.0 - sum(p * purity(r) for p, r in _outcome_terms(mset, rho)))


# u(I/N) below this threshold is treated as exactly zero
_ZERO_UNCERTAINTY = 1e-12


def _contains_rank_one(mset):
    for om in mset.ops:
        sv = np.linalg.svd(om, compute_uv=False)
        if sv[0] > 1e-12 and (sv.size == 1 or sv[1] <= 1e-10 * sv[0]):
            return True
    return False


def strength(mset: MeasurementOperatorSet) -> StrengthReport:
    """Strengths s_v = 1/u_v(I/N) - 1/ln(N) and s_p = 1/u_p(I/N) - N/(N-1).

    A set containing any rank-one operator is an infinite-strength measurement
    categorically, independent of the residual uncertainty of its other
    outcomes.
    """
    n = mset.dim
    mixed = np.eye(n, dtype=complex) / n
    u_v = uncertainty_v(mset, mixed)
    u_p = uncertainty_p(mset, mixed)
    if _contains_rank_one(mset):
        return StrengthReport(u_v=u_v, u_p=u_p, s_v=math.inf, s_p=math.inf)
    s_v = math.inf if u_v < _ZERO_UNCERTAINTY else 1.0 / u_v - 1.0 / math.log(n)
    s_p = math.inf if u_p < _ZERO_UNCERTAINTY else 1.0 / u_p - n / (n - 1.0)
    return StrengthReport(u_v=u_v, u_p=u_p, s_v=max(s_v, 0.0), s_p=max(s_p, 0.0))


def disturbance(mset: MeasurementOperatorSet, rho) -> DisturbanceReport:
    """Excess noise of the outcome-averaged state and the average final purity."""
    rho = check_density_matrix(rho)
    rho_f = nonselective_apply(mset, rho)
    return DisturbanceReport(
        n_e_v=von_neumann_entropy(rho_f) - von_neumann_entropy(rho),
        n_e_p=purity(rho) - purity(rho_f),
        i_f_p=1.0 - uncertainty_p(mset, rho),
    )


def theta_sweep(p, kappa, theta_grid):
    """Information/disturbance trade-off of a kappa measurement on diag(p, 1-p).

    Returns a list of (theta, i_f_p, n_e_p, n_e_v) rows, one per grid angle.
    """
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    rho = np.diag([p, 1.0 - p]).astype(complex)
    rows = []
    for theta in np.asarray(theta_grid, dtype=float):
        rep = disturbance(kappa_povm(KappaMeasurement(kappa, theta)), rho)
        rows.append((float(theta), rep.i_f_p, rep.n_e_p, rep.n_e_v))
    return rows


def fidelity_bound_check(mset: MeasurementOperatorSet, rho, psi_target, slack=1e-12):
    """True iff the outcome-averaged overlap with the target respects the
    largest-eigenvalue bound.  Only meaningful for pure (all-PSD) sets."""
    if mset.kind not in ("pure", "projective"):
        raise ValueError("bound applies to pure measurements only")
    rho = check_density_matrix(rho)
    lam_max = float(np.linalg.eigvalsh(rho).max())
    return overlap(nonselective_apply(mset, rho), psi_target) <= lam_max + slack


def strength_rate_numeric(
    Q,
    k,
    n_traj=4000,
    n_batches=20,
    horizon=None,
    n_steps=50,
    n_samples=5,
    seed=0,
) -> RateEstimate:
    """Monte Carlo estimate of d s_v/dt and d s_p/dt at rho = I/N.

    Simulates an ensemble of diffusive measurement trajectories started from
    the maximally mixed state over a short horizon, evaluates the two
    uncertainties on the conditional states, and fits the strength-vs-time
    slope through the origin.  Standard errors come from batching the
    trajectories.  The horizon defaults to 0.005/k so estimates scale exactly
    linearly in k.
    """
    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    if k < 0:
        raise ValueError("k must be non-negative")
    if k == 0:
        return RateEstimate(0.0, 0.0, 0.0, 0.0)
    if horizon is None:
        horizon = 0.005 / k
    dt = horizon / n_steps
    sample_every = n_steps // n_samples
    sqrt2k = np.sqrt(2.0 * k)

    rng = np.random.Generator(np.random.Philox(seed=np.random.SeedSequence(seed)))
    rho = np.broadcast_to(np.eye(n, dtype=complex) / n, (n_traj, n, n)).copy()

    t_samples = []
    ent_samples = []   # (n_samples, n_traj)
    pur_samples = []
    for step in range(1, n_steps + 1):
        dw = rng.standard_normal(n_traj) * np.sqrt(dt)
        q_rho = np.einsum("ij,mjk->mik", Q, rho)
        rho_q = np.einsum("mij,jk->mik", rho, Q)
        exp_q = np.einsum("mii->m", q_rho).real
        comm2 = np.einsum("ij,mjk->mik", Q, q_rho - rho_q) - np.einsum(
            "mij,jk->mik", q_rho - rho_q, Q
        )
        stoch = q_rho + rho_q - 2.0 * exp_q[:, None, None] * rho
        rho = rho - k * dt * comm2 + sqrt2k * dw[:, None, None] * stoch
        # project back to the physical manifold
        rho = (rho + np.conj(np.swapaxes(rho, 1, 2))) / 2
        vals, vecs = np.linalg.eigh(rho)
        vals = np.clip(vals, 0.0, None)
        vals /= vals.sum(axis=1)[:, None]
        rho = np.einsum("mij,mj,mkj->mik", vecs, vals, np.conj(vecs))
        if step % sample_every == 0:
            t_samples.append(step * dt)
            lam = np.clip(np.linalg.eigvalsh(rho), 1e-18, None)
            ent_samples.append(-(lam * np.log(lam)).sum(axis=1))
            pur_samples.append((lam**2).sum(axis=1))

    t = np.array(t_samples)
    ent = np.array(ent_samples)
    pur = np.array(pur_samples)

    batches = np.array_split(np.arange(n_traj), n_batches)
    slopes_v, slopes_p = [], []
    for idx in batches:
        u_v = ent[:, idx].mean(axis=1)
        u_p = 1.0 - pur[:, idx].mean(axis=1)
        s_v = 1.0 / u_v - 1.0 / np.log(n)
        s_p = 1.0 / u_p - n / (n - 1.0)
        slopes_v.append(np.sum(t * s_v) / np.sum(t * t))
        slopes_p.append(np.sum(t * s_p) / np.sum(t * t))
    slopes_v = np.array(slopes_v)
    slopes_p = np.array(slopes_p)
    nb = len(batches)
    return RateEstimate(
        rate_v=float(slopes_v.mean()),
        rate_v_se=float(slopes_v.std(ddof=1) / np.sqrt(nb)),
        rate_p=float(slopes_p.mean()),
        rate_p_se=float(slopes_p.std(ddof=1) / np.sqrt(nb)),
    )


def printed_rate_v(Q, k):
    """Closed-form entropy-strength rate as printed: 4k/(N ln^2 N) (Tr[Q^2] + 3 Tr[Q]^2)."""
    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    tr_q2 = np.trace(Q @ Q).real
    tr_q = np.trace(Q).real
    return 4.0 * k / (n * np.log(n) ** 2) * (tr_q2 + 3.0 * tr_q**2)


def printed_rate_p(Q, k):
    """Closed-form purity-strength rate as printed: 8k N^2/(N-1)^2 Tr[Q^2]."""
    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    return 8.0 * k * n**2 / (n - 1.0) ** 2 * np.trace(Q @ Q).real


def ito_rate_v(Q, k):
    """Independent Ito-expansion entropy-strength rate at rho = I/N:
    4k/(N ln^2 N) (Tr[Q^2] - Tr[Q]^2/N)."""
    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    tr_q2 = np.trace(Q @ Q).real
    tr_q = np.trace(Q).real
    return 4.0 * k / (n * np.log(n) ** 2) * (tr_q2 - tr_q**2 / n)


def ito_rate_p(Q, k):
    """Independent Ito-expansion purity-strength rate at rho = I/N:
    8k/(N-1)^2 (Tr[Q^2] - Tr[Q]^2/N)."""
    Q = np.asarray(Q, dtype=complex)
    n = Q.shape[0]
    tr_q2 = np.trace(Q @ Q).real
    tr_q = np.trace(Q).real
    return 8.0 * k / (n - 1.0) ** 2 * (tr_q2 - tr_q**2 / n)
