"""Time evolution: diffusive measurement trajectories and closed-loop control.

One trajectory is an Euler-Maruyama integration of the nonlinear conditioned
master equation

    drho = -i[H, rho] dt - k[Q, [Q, rho]] dt - beta[sz, [sz, rho]] dt
           + sqrt(2k)(Q rho + rho Q - 2 Tr[Q rho] rho) dW,

with the simulated record increment dy = 4k Tr[Q rho] dt + sqrt(2k) dW.  Each
step ends with a projection back to the physical manifold (Hermitize, clip
eigenvalues at zero, renormalize); a pre-clip eigenvalue far below zero means
dt is too large and the step is rejected.

The closed loop measures a spin direction at a fixed Bloch angle from the
instantaneous eigenbasis of rho and applies the optimal constrained feedback
Hamiltonian recomputed every step.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .feedback import optimal_feedback
from .povm import bloch_rotation
from .states import SIGMA_Z, check_density_matrix, check_hermitian, ket, overlap


class StepRejected(RuntimeError):
    """Raised when a step leaves the physical manifold beyond repair (dt too large)."""


@dataclass(frozen=True)
class SmeConfig:
    k: float                 # measurement constant [1/time]
    h0: np.ndarray           # drift Hamiltonian
    dephasing_beta: float = 0.0
    dt: float = 1e-4
    t_end: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.k < 0 or self.dephasing_beta < 0:
            raise ValueError("k and dephasing_beta must be non-negative")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        h0 = check_hermitian(np.asarray(self.h0, dtype=complex))
        object.__setattr__(self, "h0", h0)
        scale = max(self.k, self.dephasing_beta, float(np.linalg.norm(h0, 2)))
        if self.dt * scale > 0.05:
            warnings.warn(
                f"dt * max(k, beta, ||H0||) = {self.dt * scale:.3g} > 0.05; "
                f"integration error may be significant",
                stacklevel=2,
            )

    @property
    def n_steps(self):
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class MeasurementPolicy:
    """Which spin direction to measure at each step.

    mode "fixed_observable" measures the given observable throughout; mode
    "relative_angle" measures, on a qubit, the spin direction at Bloch angle
    (theta, phi) from the instantaneous eigenbasis of rho.
    """

    mode: str
    observable: np.ndarray = None
    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if self.mode not in ("fixed_observable", "relative_angle"):
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if self.mode == "fixed_observable":
            if self.observable is None:
                raise ValueError("fixed_observable mode requires an observable")
            object.__setattr__(
                self, "observable", check_hermitian(np.asarray(self.observable, dtype=complex))
            )
        else:
            if not 0.0 <= self.theta <= np.pi:
                raise ValueError("theta must lie in [0, pi]")
            if not 0.0 <= self.phi < 2 * np.pi:
                raise ValueError("phi must lie in [0, 2*pi)")


@dataclass
class TrajectoryResult:
    times: np.ndarray
    states: np.ndarray            # (n_times, N, N)
    records: np.ndarray           # (n_times - 1,) record increments dy
    fb_hamiltonians: np.ndarray   # (n_times - 1, N, N)
    seed: object = None

    @property
    def purities(self):
        return np.einsum("tij,tji->t", self.states, self.states).real

    def overlaps(self, psi_target_fn):
        return np.array(
            [overlap(s, psi_target_fn(t)) for t, s in zip(self.times, self.states)]
        )


def _default_reject_tol(k, beta, dt):
    # Euler-Maruyama leaves the manifold by O(sqrt(dt)) near pure states;
    # anything much beyond that signals a genuinely unstable step size
    return np.sqrt(2.0 * max(k, beta, 1.0) * dt)


def sme_step(rho, Q, k, H, dt, dW, beta=0.0, reject_tol=None):
    """One Euler-Maruyama step of the conditioned evolution.

    Returns (rho_next, dy).  dy is 0 by convention when k = 0.  beta adds
    z-axis dephasing (qubit configurations).
    """
    rho = np.asarray(rho, dtype=complex)
    H = np.asarray(H, dtype=complex)
    new = rho - 1j * dt * (H @ rho - rho @ H)
    dy = 0.0
    if k > 0:
        Q = np.asarray(Q, dtype=complex)
        q_rho = Q @ rho
        rho_q = rho @ Q
        exp_q = np.trace(q_rho).real
        comm = q_rho - rho_q
        new -= k * dt * (Q @ comm - comm @ Q)
        new += np.sqrt(2.0 * k) * dW * (q_rho + rho_q - 2.0 * exp_q * rho)
        dy = 4.0 * k * exp_q * dt + np.sqrt(2.0 * k) * dW
    if beta > 0:
        if rho.shape[0] != 2:
            raise ValueError("dephasing term is defined for qubit configurations")
        comm_z = SIGMA_Z @ rho - rho @ SIGMA_Z
        new -= beta * dt * (SIGMA_Z @ comm_z - comm_z @ SIGMA_Z)

    new = (new + new.conj().T) / 2
    vals, vecs = np.linalg.eigh(new)
    if reject_tol is None:
        reject_tol = _default_reject_tol(k, beta, dt)
    if vals.min() < -reject_tol:
        raise StepRejected(
            f"pre-projection eigenvalue {vals.min():.3e} below -{reject_tol:.1e}; "
            f"reduce dt"
        )
    vals = np.clip(vals, 0.0, None)
    vals /= vals.sum()
    return (vecs * vals) @ vecs.conj().T, dy


def nonselective_step(rho, Q, k, H, beta, dt):
    """One Euler step of the outcome-averaged (deterministic) evolution."""
    rho = np.asarray(rho, dtype=complex)
    H = np.asarray(H, dtype=complex)
    new = rho - 1j * dt * (H @ rho - rho @ H)
    if k > 0:
        Q = np.asarray(Q, dtype=complex)
        comm = Q @ rho - rho @ Q
        new -= k * dt * (Q @ comm - comm @ Q)
    if beta > 0:
        if rho.shape[0] != 2:
            raise ValueError("dephasing term is defined for qubit configurations")
        comm = SIGMA_Z @ rho - rho @ SIGMA_Z
        new -= beta * dt * (SIGMA_Z @ comm - comm @ SIGMA_Z)
    new = (new + new.conj().T) / 2
    return new / np.trace(new).real


def nonselective_solve(rho0, Q, k, H, beta, t_eval):
    """Outcome-averaged evolution integrated with an adaptive ODE solver.

    Independent reference for trajectory-ensemble consistency checks.
    """
    from scipy.integrate import solve_ivp

    rho0 = check_density_matrix(rho0)
    n = rho0.shape[0]
    H = np.asarray(H, dtype=complex)
    Q = None if Q is None else np.asarray(Q, dtype=complex)

    def rhs(_t, y):
        rho = y.reshape(n, n)
        out = -1j * (H @ rho - rho @ H)
        if k > 0:
            comm = Q @ rho - rho @ Q
            out -= k * (Q @ comm - comm @ Q)
        if beta > 0:
            comm = SIGMA_Z @ rho - rho @ SIGMA_Z
            out -= beta * (SIGMA_Z @ comm - comm @ SIGMA_Z)
        return out.ravel()

    t_eval = np.asarray(t_eval, dtype=float)
    sol = solve_ivp(
        rhs,
        (0.0, t_eval[-1]),
        rho0.ravel().astype(complex),
        t_eval=t_eval,
        rtol=1e-10,
        atol=1e-12,
    )
    return sol.y.T.reshape(-1, n, n)


def qubit_eigenbasis(rho, prev=None, degen_tol=1e-12):
    """Columns (top eigenvector, bottom eigenvector) of a qubit rho, with a
    deterministic Bloch-sphere phase convention.

    At eigen-degeneracy (maximally mixed rho) the previous basis is reused so
    the measured direction varies continuously along a trajectory.
    """
    rho = np.asarray(rho, dtype=complex)
    rx = 2.0 * rho[0, 1].real
    ry = -2.0 * rho[0, 1].imag
    rz = (rho[0, 0] - rho[1, 1]).real
    r = np.sqrt(rx * rx + ry * ry + rz * rz)
    if r < degen_tol:
        if prev is not None:
            return prev
        return np.eye(2, dtype=complex)
    big_theta = np.arccos(np.clip(rz / r, -1.0, 1.0))
    big_phi = np.arctan2(ry, rx)
    c, s = np.cos(big_theta / 2), np.sin(big_theta / 2)
    e = np.exp(1j * big_phi)
    return np.array([[c, -s / e], [s * e, c]], dtype=complex)


def relative_observable(basis, theta, phi=0.0):
    """Spin observable at Bloch angle (theta, phi) from the given eigenbasis."""
    a = bloch_rotation(theta, phi)
    rotated = a @ SIGMA_Z @ a.conj().T
    return basis @ rotated @ basis.conj().T


def policy_observable(policy: MeasurementPolicy, rho, prev_basis=None):
    """Observable to measure this step; returns (Q, basis) where basis is the
    eigenbasis used (None for a fixed observable)."""
    if policy.mode == "fixed_observable":
        return policy.observable, None
    if np.asarray(rho).shape[0] != 2:
        raise ValueError("relative_angle policy is defined for qubits")
    basis = qubit_eigenbasis(rho, prev=prev_basis)
    return relative_observable(basis, policy.theta, policy.phi), basis


def run_control_trajectory(
    cfg: SmeConfig,
    policy: MeasurementPolicy,
    rho0,
    psi_target_fn,
    mu,
    rng,
    store_every=1,
    seed_label=None,
) -> TrajectoryResult:
    """One closed-loop realization.

    Per step: pick the measured observable from the policy, compute the
    optimal feedback Hamiltonian toward the current target (skipped when
    mu = 0), then advance the conditioned state one measurement step under
    H0 + H_fb.
    """
    rho = check_density_matrix(rho0)
    n = rho.shape[0]
    n_steps = cfg.n_steps
    n_store = n_steps // store_every

    times = np.empty(n_store + 1)
    states = np.empty((n_store + 1, n, n), dtype=complex)
    records = np.empty(n_store)
    fb_hams = np.empty((n_store, n, n), dtype=complex)
    times[0] = 0.0
    states[0] = rho

    basis = None
    stored = 0
    for step in range(n_steps):
        t = step * cfg.dt
        q_obs, basis = policy_observable(policy, rho, prev_basis=basis)
        if mu > 0:
            h_fb = optimal_feedback(rho, psi_target_fn(t), mu).hamiltonian
        else:
            h_fb = np.zeros((n, n), dtype=complex)
        dw = rng.standard_normal() * np.sqrt(cfg.dt)
        rho, dy = sme_step(
            rho, q_obs, cfg.k, cfg.h0 + h_fb, cfg.dt, dw, beta=cfg.dephasing_beta
        )
        if (step + 1) % store_every == 0:
            stored += 1
            times[stored] = (step + 1) * cfg.dt
            states[stored] = rho
            records[stored - 1] = dy
            fb_hams[stored - 1] = h_fb

    return TrajectoryResult(
        times=times, states=states, records=records, fb_hamiltonians=fb_hams,
        seed=seed_label,
    )


def inverse_zeno_run(psi_start, psi_target, n_measurements, rng):
    """Drag a state to the target with a sequence of slightly rotated projections.

    The geodesic between the two states is split into n_measurements equal
    angular increments; each step applies the two-outcome projective
    measurement onto the advanced state.  Success means every outcome landed
    on the advanced branch, in which case the final state is the target.
    """
    if n_measurements < 1:
        raise ValueError("need at least one measurement")
    psi_start = ket(psi_start)
    psi_target = ket(psi_target)
    c = np.vdot(psi_start, psi_target)
    if abs(c) > 1.0 - 1e-12:
        return True, np.outer(psi_target, psi_target.conj())

    # orthonormal frame (f0, f1) of the 2-plane with the target at angle gamma
    # from f0 and f0 physically equal to the start state
    residual = psi_target - c * psi_start
    f1 = residual / np.linalg.norm(residual)
    phase = c / abs(c) if abs(c) > 1e-15 else 1.0
    f0 = phase * psi_start
    gamma = np.arccos(np.clip(abs(c), 0.0, 1.0))

    eps = gamma / n_measurements
    current = f0
    for i in range(1, n_measurements + 1):
        advanced = np.cos(i * eps) * f0 + np.sin(i * eps) * f1
        p_success = abs(np.vdot(advanced, current)) ** 2
        if rng.random() < p_success:
            current = advanced
        else:
            failed = current - np.vdot(advanced, current) * advanced
            norm = np.linalg.norm(failed)
            if norm < 1e-15:
                failed = f1 if i == n_measurements else f0
                norm = 1.0
            current = failed / norm
            return False, np.outer(current, current.conj())
    return True, np.outer(current, current.conj())
