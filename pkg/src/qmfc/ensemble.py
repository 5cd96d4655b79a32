"""Monte Carlo orchestration of closed-loop trajectory ensembles.

Trajectories are advanced in lockstep as stacked (R, N, N) arrays, split into
fixed-size chunks; chunks may be farmed out to worker threads.  Each
trajectory owns a counter-based random stream derived from (master seed,
sweep index, trajectory index), and aggregation is a deterministic reduction
over a preallocated per-trajectory array, so results are bit-identical for a
given master seed regardless of the degree of parallelism.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .feedback import optimal_feedback
from .povm import bloch_rotation
from .sde import MeasurementPolicy, SmeConfig, StepRejected, _default_reject_tol
from .states import SIGMA_Z, check_density_matrix

CHUNK = 256  # trajectories per lockstep batch; fixed so threading cannot reorder math


@dataclass(frozen=True)
class EnsembleConfig:
    realizations: int
    master_seed: int
    sme: SmeConfig
    policy: MeasurementPolicy
    mu: float
    rho0: np.ndarray
    target_fn: object            # callable t -> pure-state vector, or None
    stat_stride: int = 10        # store statistics every this many steps
    transient_cut: float = 0.0   # drop times < this from the time averages

    def __post_init__(self):
        if self.realizations < 1:
            raise ValueError("need at least one realization")
        if self.stat_stride < 1 or self.sme.n_steps % self.stat_stride != 0:
            raise ValueError("stat_stride must divide the number of steps")
        object.__setattr__(self, "rho0", check_density_matrix(self.rho0))


@dataclass
class EnsembleStats:
    times: np.ndarray
    purity_mean: np.ndarray
    purity_se: np.ndarray
    overlap_mean: np.ndarray
    overlap_se: np.ndarray
    time_avg_purity: float
    time_avg_purity_se: float
    time_avg_overlap: float
    time_avg_overlap_se: float
    realizations: int


def trajectory_rng(master_seed, sweep_index, traj_index):
    """Counter-based per-trajectory stream; independent of execution order."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(sweep_index, traj_index))
    return np.random.Generator(np.random.Philox(seed=seq))


def precessing_plus_x(omega):
    """Target trajectory: spin along +x precessing about z at angular rate omega."""

    def target(t):
        return np.array([np.exp(-1j * omega * t), np.exp(1j * omega * t)]) / np.sqrt(2.0)

    return target


def _eig2_bounds(rho):
    """(lambda_min, lambda_max) of a stack of Hermitian 2x2 matrices."""
    half_tr = (rho[:, 0, 0].real + rho[:, 1, 1].real) / 2
    gap = np.sqrt(
        ((rho[:, 0, 0].real - rho[:, 1, 1].real) / 2) ** 2 + np.abs(rho[:, 0, 1]) ** 2
    )
    return half_tr - gap, half_tr + gap


def _project_qubit(rho, reject_tol, chunk_start, master_seed):
    """Hermitize / clip / renormalize for a stack of qubit states."""
    rho = (rho + np.conj(np.swapaxes(rho, 1, 2))) / 2
    lam_min, lam_max = _eig2_bounds(rho)
    worst = lam_min.min()
    if worst < -reject_tol:
        bad = chunk_start + int(np.argmin(lam_min))
        raise StepRejected(
            f"trajectory {bad} (master_seed {master_seed}): pre-projection "
            f"eigenvalue {worst:.3e} below -{reject_tol:.1e}; reduce dt"
        )
    eye = np.eye(2, dtype=complex)
    needs_clip = lam_min < 0.0
    clipped = (rho - lam_min[:, None, None] * eye) / (lam_max - lam_min)[:, None, None]
    normalized = rho / (lam_min + lam_max)[:, None, None]
    return np.where(needs_clip[:, None, None], clipped, normalized)


def _project_general(rho, reject_tol, chunk_start, master_seed):
    rho = (rho + np.conj(np.swapaxes(rho, 1, 2))) / 2
    vals, vecs = np.linalg.eigh(rho)
    worst = vals.min()
    if worst < -reject_tol:
        bad = chunk_start + int(np.argmin(vals.min(axis=1)))
        raise StepRejected(
            f"trajectory {bad} (master_seed {master_seed}): pre-projection "
            f"eigenvalue {worst:.3e} below -{reject_tol:.1e}; reduce dt"
        )
    vals = np.clip(vals, 0.0, None)
    vals /= vals.sum(axis=1)[:, None]
    return np.einsum("mij,mj,mkj->mik", vecs, vals, np.conj(vecs))


def _qubit_bases(rho, prev):
    """Eigenbasis stack for qubit states, reusing prev where rho is degenerate."""
    rx = 2.0 * rho[:, 0, 1].real
    ry = -2.0 * rho[:, 0, 1].imag
    rz = rho[:, 0, 0].real - rho[:, 1, 1].real
    r = np.sqrt(rx * rx + ry * ry + rz * rz)
    ok = r >= 1e-12
    r_safe = np.where(ok, r, 1.0)
    big_theta = np.arccos(np.clip(rz / r_safe, -1.0, 1.0))
    big_phi = np.arctan2(ry, rx)
    c, s = np.cos(big_theta / 2), np.sin(big_theta / 2)
    e = np.exp(1j * big_phi)
    basis = np.empty_like(prev)
    basis[:, 0, 0] = c
    basis[:, 0, 1] = -s / e
    basis[:, 1, 0] = s * e
    basis[:, 1, 1] = c
    return np.where(ok[:, None, None], basis, prev)


def _feedback_stack(rho, psi, mu, tau_degen=1e-8):
    """Optimal feedback Hamiltonians for a stack of states toward one target."""
    m = rho.shape[0]
    rho_psi = np.einsum("mij,j->mi", rho, psi)
    sig_rho = psi[None, :, None] * np.conj(rho_psi)[:, None, :]
    comm = sig_rho - np.conj(np.swapaxes(sig_rho, 1, 2))
    comm_norm = np.sqrt(np.einsum("mij,mij->m", comm, np.conj(comm)).real)
    rho_norm = np.sqrt(np.einsum("mij,mij->m", rho, np.conj(rho)).real)
    active = comm_norm > tau_degen * rho_norm
    h = np.zeros_like(rho)
    if np.any(active):
        chi = np.zeros(m)
        chi[active] = np.sqrt(mu) / comm_norm[active]
        h = 1j * chi[:, None, None] * comm
        h = (h + np.conj(np.swapaxes(h, 1, 2))) / 2
    for idx in np.nonzero(~active)[0]:
        h[idx] = optimal_feedback(
            np.asarray(rho[idx]), psi, mu
        ).hamiltonian
    return h


def _advance_chunk(cfg: EnsembleConfig, chunk_start, chunk_size, sweep_index,
                   checkpoint_steps=None):
    """Run one lockstep batch of trajectories.

    Returns (purity, overlap, states) series; states is None unless
    checkpoint_steps (a sequence of step indices) was given, in which case it
    holds the conditioned states at those steps, shape (chunk, n_cp, N, N).
    """
    sme = cfg.sme
    policy = cfg.policy
    n = cfg.rho0.shape[0]
    n_steps = sme.n_steps
    dt = sme.dt
    beta = sme.dephasing_beta
    k = sme.k
    sqrt2k = np.sqrt(2.0 * k) if k > 0 else 0.0
    reject_tol = _default_reject_tol(k, beta, dt)
    project = _project_qubit if n == 2 else _project_general
    if beta > 0 and n != 2:
        raise ValueError("dephasing term is defined for qubit configurations")

    dw = np.empty((chunk_size, n_steps))
    for j in range(chunk_size):
        gen = trajectory_rng(cfg.master_seed, sweep_index, chunk_start + j)
        dw[j] = gen.standard_normal(n_steps) * np.sqrt(dt)

    rho = np.broadcast_to(cfg.rho0, (chunk_size, n, n)).astype(complex).copy()
    if policy.mode == "relative_angle":
        rot = bloch_rotation(policy.theta, policy.phi)
        rotated_z = rot @ SIGMA_Z @ rot.conj().T
        bases = _qubit_bases(rho, np.broadcast_to(np.eye(2, dtype=complex),
                                                  (chunk_size, 2, 2)).copy())
    n_stat = n_steps // cfg.stat_stride
    pur = np.empty((chunk_size, n_stat + 1))
    ovl = np.empty((chunk_size, n_stat + 1))
    states = None
    cp_slots = {}
    if checkpoint_steps is not None:
        cp_slots = {int(s): i for i, s in enumerate(checkpoint_steps)}
        states = np.empty((chunk_size, len(cp_slots), n, n), dtype=complex)
        if 0 in cp_slots:
            states[:, cp_slots[0]] = rho

    def record(slot, psi_t):
        pur[:, slot] = np.einsum("mij,mji->m", rho, rho).real
        if psi_t is None:
            ovl[:, slot] = np.nan
        else:
            ovl[:, slot] = np.einsum(
                "i,mij,j->m", psi_t.conj(), rho, psi_t
            ).real

    psi0 = cfg.target_fn(0.0) if cfg.target_fn is not None else None
    record(0, psi0)

    for step in range(n_steps):
        t = step * dt
        psi_t = cfg.target_fn(t) if cfg.target_fn is not None else None

        if policy.mode == "relative_angle":
            bases = _qubit_bases(rho, bases)
            q_obs = np.einsum("mij,jk,mlk->mil", bases, rotated_z, np.conj(bases))
        else:
            q_obs = policy.observable

        if cfg.mu > 0:
            h = sme.h0[None, :, :] + _feedback_stack(rho, psi_t, cfg.mu)
        else:
            h = np.broadcast_to(sme.h0, (chunk_size, n, n))

        new = rho - 1j * dt * (h @ rho - rho @ h)
        if k > 0:
            if policy.mode == "relative_angle":
                q_rho = q_obs @ rho
                rho_q = rho @ q_obs
            else:
                q_rho = np.einsum("ij,mjk->mik", q_obs, rho)
                rho_q = np.einsum("mij,jk->mik", rho, q_obs)
            exp_q = np.einsum("mii->m", q_rho).real
            comm = q_rho - rho_q
            if policy.mode == "relative_angle":
                dbl = q_obs @ comm - comm @ q_obs
            else:
                dbl = np.einsum("ij,mjk->mik", q_obs, comm) - np.einsum(
                    "mij,jk->mik", comm, q_obs
                )
            new -= k * dt * dbl
            new += sqrt2k * dw[:, step, None, None] * (
                q_rho + rho_q - 2.0 * exp_q[:, None, None] * rho
            )
        if beta > 0:
            comm_z = np.einsum("ij,mjk->mik", SIGMA_Z, rho) - np.einsum(
                "mij,jk->mik", rho, SIGMA_Z
            )
            new -= beta * dt * (
                np.einsum("ij,mjk->mik", SIGMA_Z, comm_z)
                - np.einsum("mij,jk->mik", comm_z, SIGMA_Z)
            )

        rho = project(new, reject_tol, chunk_start, cfg.master_seed)

        if step + 1 in cp_slots:
            states[:, cp_slots[step + 1]] = rho
        if (step + 1) % cfg.stat_stride == 0:
            slot = (step + 1) // cfg.stat_stride
            psi_next = cfg.target_fn((step + 1) * dt) if cfg.target_fn is not None else None
            record(slot, psi_next)

    return pur, ovl, states


def run_ensemble(cfg: EnsembleConfig, threads=1, sweep_index=0) -> EnsembleStats:
    """Advance all realizations and aggregate purity/overlap statistics.

    Bit-identical output for a fixed master seed at any thread count: chunk
    boundaries are fixed and each chunk's arithmetic is independent of where
    it runs.
    """
    r = cfg.realizations
    n_stat = cfg.sme.n_steps // cfg.stat_stride
    times = np.arange(n_stat + 1) * cfg.stat_stride * cfg.sme.dt
    pur = np.empty((r, n_stat + 1))
    ovl = np.empty((r, n_stat + 1))

    starts = list(range(0, r, CHUNK))

    def work(start):
        size = min(CHUNK, r - start)
        p, o, _ = _advance_chunk(cfg, start, size, sweep_index)
        pur[start:start + size] = p
        ovl[start:start + size] = o

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)

    keep = times >= cfg.transient_cut
    tavg_p = pur[:, keep].mean(axis=1)
    tavg_o = ovl[:, keep].mean(axis=1)

    def se(x, axis=0):
        if r < 2:
            return np.full(np.shape(np.mean(x, axis=axis)), np.nan)
        return np.std(x, axis=axis, ddof=1) / np.sqrt(r)

    return EnsembleStats(
        times=times,
        purity_mean=pur.mean(axis=0),
        purity_se=se(pur),
        overlap_mean=ovl.mean(axis=0),
        overlap_se=se(ovl),
        time_avg_purity=float(tavg_p.mean()),
        time_avg_purity_se=float(se(tavg_p)) if r > 1 else float("nan"),
        time_avg_overlap=float(tavg_o.mean()),
        time_avg_overlap_se=float(se(tavg_o)) if r > 1 else float("nan"),
        realizations=r,
    )


def ensemble_states(cfg: EnsembleConfig, checkpoint_times, threads=1, sweep_index=0):
    """Per-trajectory conditioned states at the requested times.

    Returns an array of shape (realizations, n_checkpoints, N, N) using the
    same random streams and chunking as run_ensemble, so the conditional
    ensemble average can be compared entrywise against the outcome-averaged
    master equation.
    """
    dt = cfg.sme.dt
    steps = []
    for t in checkpoint_times:
        step = int(round(t / dt))
        if not 0 <= step <= cfg.sme.n_steps or abs(step * dt - t) > 1e-9 * max(t, dt):
            raise ValueError(f"checkpoint time {t} is not on the step grid")
        steps.append(step)

    r = cfg.realizations
    n = cfg.rho0.shape[0]
    out = np.empty((r, len(steps), n, n), dtype=complex)
    starts = list(range(0, r, CHUNK))

    def work(start):
        size = min(CHUNK, r - start)
        _, _, states = _advance_chunk(cfg, start, size, sweep_index, checkpoint_steps=steps)
        out[start:start + size] = states

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, starts))
    else:
        for start in starts:
            work(start)
    return out


def theta_experiment(base: EnsembleConfig, theta_grid, threads=1):
    """Closed-loop ensemble per measurement angle; rows of
    (theta, time_avg_purity, se, time_avg_overlap, se)."""
    rows = []
    for i, theta in enumerate(np.asarray(theta_grid, dtype=float)):
        policy = MeasurementPolicy(
            mode="relative_angle", theta=float(theta), phi=base.policy.phi
        )
        cfg = EnsembleConfig(
            realizations=base.realizations,
            master_seed=base.master_seed,
            sme=base.sme,
            policy=policy,
            mu=base.mu,
            rho0=base.rho0,
            target_fn=base.target_fn,
            stat_stride=base.stat_stride,
            transient_cut=base.transient_cut,
        )
        stats = run_ensemble(cfg, threads=threads, sweep_index=i)
        rows.append(
            (
                float(theta),
                stats.time_avg_purity,
                stats.time_avg_purity_se,
                stats.time_avg_overlap,
                stats.time_avg_overlap_se,
            )
        )
    return rows
