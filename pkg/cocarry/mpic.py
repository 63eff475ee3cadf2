"""
Model-predictive impedance controller for two cooperating arms

Per horizon step k the decision variables are the applied force u_k and its
three components: the impedance part w_k, the collaborative part v_k and the
force-feedback part s_k. The cost is

    |w_k + K_I X~_k|^2_QI + |v_k + K_C C X~_k|^2_QC
    + |s_k + F_e - K_F (F_e - F_ref)|^2_QF + |u_k - w_k - v_k - s_k|^2_Qu

summed over k = 0..N-1, with X~ = X - X_ref and predicted states
X_{k+1} = A X_k + B (u_k + F_e) (measured external force held constant).
States are eliminated, so the QP is over the stacked decision vector only.
Input boxes and state limits on X_1..X_N become linear inequalities.
A term whose weight matrix is zero is disabled and its variable removed.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import quadprog
from scipy.linalg import block_diag, cholesky, expm, solve_triangular

from .exceptions import DimensionMismatch, QpInfeasible, QpMaxIterations

logger = logging.getLogger(__name__)

TERMS = ("w", "v", "s")
RIDGE = 1e-9
STATE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class InteractionModel:
    """Discrete interaction model X_{k+1} = A X_k + B u_k"""

    A: np.ndarray
    B: np.ndarray
    dt: float

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        if A.shape[0] != A.shape[1] or B.shape[0] != A.shape[0]:
            raise DimensionMismatch(f"inconsistent model shapes A{A.shape} B{B.shape}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @classmethod
    def from_continuous(cls, A_c: np.ndarray, B_c: np.ndarray, dt: float) -> "InteractionModel":
        """Zero-order-hold discretization through the matrix exponential"""
        A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
        B_c = np.asarray(B_c, dtype=float).reshape(A_c.shape[0], -1)
        n, m = B_c.shape
        augmented = np.zeros((n + m, n + m))
        augmented[:n, :n] = A_c
        augmented[:n, n:] = B_c
        phi = expm(augmented * dt)
        return cls(phi[:n, :n], phi[:n, n:], dt)

    @classmethod
    def double_integrator(cls, mass: float = 5.0, damping: float = 0.0, dt: float = 0.01, arms: int = 2, dof: int = 3) -> "InteractionModel":
        """
        Per-arm Cartesian double integrator, state [p, p_dot] per arm

        m p_ddot = u - damping * p_dot
        """
        if mass <= 0:
            raise ValueError("virtual mass must be positive")
        eye = np.eye(dof)
        a_arm = np.block([[np.zeros((dof, dof)), eye], [np.zeros((dof, dof)), -damping / mass * eye]])
        b_arm = np.vstack([np.zeros((dof, dof)), eye / mass])
        A_c = block_diag(*([a_arm] * arms))
        B_c = block_diag(*([b_arm] * arms))
        return cls.from_continuous(A_c, B_c, dt)

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.A @ x + self.B @ u


def _psd(matrix: np.ndarray, name: str, strict: bool = False) -> None:
    if not np.allclose(matrix, matrix.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    smallest = float(np.linalg.eigvalsh(matrix).min())
    if smallest < (1e-14 if strict else -1e-12):
        raise ValueError(f"{name} must be positive {'definite' if strict else 'semidefinite'}")


@dataclass(frozen=True)
class MpcGains:
    """Gains, weights, horizon and limits of the controller"""

    K_I: np.ndarray
    K_C: np.ndarray
    C: np.ndarray
    K_F: np.ndarray
    Q_I: np.ndarray
    Q_C: np.ndarray
    Q_F: np.ndarray
    Q_u: np.ndarray
    horizon: int = 20
    u_max: Optional[np.ndarray] = None
    x_max: Optional[np.ndarray] = None
    force_sign: float = 1.0

    def __post_init__(self):
        for name in ("K_I", "K_C", "C", "K_F", "Q_I", "Q_C", "Q_F", "Q_u"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        for name in ("Q_I", "Q_C", "Q_F"):
            _psd(getattr(self, name), name)
        _psd(self.Q_u, "Q_u", strict=True)
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        for name in ("u_max", "x_max"):
            limit = getattr(self, name)
            if limit is not None:
                limit = np.asarray(limit, dtype=float).reshape(-1)
                if np.any(limit <= 0):
                    raise ValueError(f"{name} entries must be positive")
                object.__setattr__(self, name, limit)
        if self.force_sign not in (1.0, -1.0):
            raise ValueError("force_sign must be +1 or -1")

    @property
    def m(self) -> int:
        return self.K_I.shape[0]

    def enabled(self) -> Tuple[str, ...]:
        weights = {"w": self.Q_I, "v": self.Q_C, "s": self.Q_F}
        return tuple(t for t in TERMS if np.any(weights[t] != 0.0))

    def replace(self, **changes) -> "MpcGains":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return MpcGains(**values)

    @classmethod
    def impedance(
        cls,
        stiffness: float = 400.0,
        damping: float = 40.0,
        collaborative: float = 200.0,
        force_gain: float = 0.5,
        q_impedance: float = 1.0,
        q_collaborative: float = 1.0,
        q_force: float = 0.1,
        q_input: float = 0.01,
        horizon: int = 20,
        u_max: Optional[float] = 150.0,
        position_limit: Optional[float] = 2.0,
        velocity_limit: Optional[float] = 1.0,
        force_sign: float = 1.0,
        arms: int = 2,
        dof: int = 3,
    ) -> "MpcGains":
        """
        Gains for ``arms`` Cartesian arms with state [p, p_dot] per arm

        K_I holds stiffness/damping blocks per arm, C extracts the relative
        position of the first two arms and K_C = k_c [I; -I] maps it back to
        equal and opposite forces.
        """
        eye = np.eye(dof)
        m, n = arms * dof, 2 * arms * dof
        K_I = block_diag(*([np.hstack([stiffness * eye, damping * eye])] * arms))
        C = np.zeros((dof, n))
        K_C = np.zeros((m, dof))
        if arms >= 2:
            C[:, 0:dof] = eye
            C[:, 2 * dof:3 * dof] = -eye
            K_C[0:dof] = collaborative * eye
            K_C[dof:2 * dof] = -collaborative * eye
        x_max = None
        if position_limit is not None or velocity_limit is not None:
            per_arm = np.concatenate(
                [np.full(dof, np.inf if position_limit is None else position_limit),
                 np.full(dof, np.inf if velocity_limit is None else velocity_limit)]
            )
            x_max = np.tile(per_arm, arms)
        return cls(
            K_I=K_I,
            K_C=K_C,
            C=C,
            K_F=force_gain * np.eye(m),
            Q_I=q_impedance * np.eye(m),
            Q_C=q_collaborative * np.eye(m),
            Q_F=q_force * np.eye(m),
            Q_u=q_input * np.eye(m),
            horizon=horizon,
            u_max=None if u_max is None else np.full(m, float(u_max)),
            x_max=x_max,
            force_sign=force_sign,
        )


@dataclass(frozen=True)
class MpcStep:
    """Controller input at one sample"""

    x: np.ndarray
    x_ref: np.ndarray  # (N + 1, n) reference window
    f_ext: np.ndarray
    f_ref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "x_ref", np.atleast_2d(np.asarray(self.x_ref, dtype=float)))
        object.__setattr__(self, "f_ext", np.asarray(self.f_ext, dtype=float).reshape(-1))
        object.__setattr__(self, "f_ref", np.asarray(self.f_ref, dtype=float).reshape(-1))


@dataclass(frozen=True)
class Layout:
    """Position of each variable block inside the stacked decision vector"""

    horizon: int
    m: int
    blocks: Tuple[str, ...]

    @property
    def size(self) -> int:
        return self.horizon * self.m * len(self.blocks)

    def index(self, k: int, block: str) -> slice:
        start = (k * len(self.blocks) + self.blocks.index(block)) * self.m
        return slice(start, start + self.m)

    def selector(self, k: int, block: str) -> np.ndarray:
        sel = np.zeros((self.m, self.size))
        sel[:, self.index(k, block)] = np.eye(self.m)
        return sel

    def unpack(self, z: np.ndarray, block: str) -> np.ndarray:
        if block not in self.blocks:
            return np.zeros((self.horizon, self.m))
        return np.vstack([z[self.index(k, block)] for k in range(self.horizon)])


@dataclass
class QuadraticProgram:
    """min 1/2 z'Hz + g'z + constant  s.t.  A_ineq z <= b_ineq,  A_eq z = b_eq"""

    H: np.ndarray
    g: np.ndarray
    constant: float = 0.0
    A_ineq: Optional[np.ndarray] = None
    b_ineq: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    labels: List[str] = field(default_factory=list)
    layout: Optional[Layout] = None

    def __post_init__(self):
        nz = self.g.size
        if self.A_ineq is None:
            self.A_ineq, self.b_ineq = np.zeros((0, nz)), np.zeros(0)
        if self.A_eq is None:
            self.A_eq, self.b_eq = np.zeros((0, nz)), np.zeros(0)
        if self.H.shape != (nz, nz) or self.A_ineq.shape[1] != nz or self.A_eq.shape[1] != nz:
            raise DimensionMismatch("QP matrices do not agree on the number of variables")
        if not self.labels:
            self.labels = [f"ineq[{i}]" for i in range(self.A_ineq.shape[0])]

    @property
    def size(self) -> int:
        return self.g.size

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.H @ z + self.g @ z + self.constant)

    def violation(self, z: np.ndarray) -> float:
        ineq = self.A_ineq @ z - self.b_ineq
        eq = self.A_eq @ z - self.b_eq
        return float(max(ineq.max(initial=0.0), np.abs(eq).max(initial=0.0), 0.0))


@dataclass
class QpSolution:
    z: np.ndarray
    objective: float
    multipliers: np.ndarray
    active: List[str]
    iterations: int
    kkt_residual: float
    layout: Optional[Layout] = None

    def block(self, name: str) -> np.ndarray:
        if self.layout is None:
            raise ValueError("solution has no variable layout")
        return self.layout.unpack(self.z, name)

    @property
    def u(self) -> np.ndarray:
        return self.block("u")

    @property
    def w(self) -> np.ndarray:
        return self.block("w")

    @property
    def v(self) -> np.ndarray:
        return self.block("v")

    @property
    def s(self) -> np.ndarray:
        return self.block("s")


def prediction_matrices(model: InteractionModel, horizon: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Phi (N+1, n, n) and Gamma (N+1, n, N*m) with X_k = Phi_k X_0 + Gamma_k U
    """
    n, m = model.n, model.m
    phi = np.zeros((horizon + 1, n, n))
    gamma = np.zeros((horizon + 1, n, horizon * m))
    phi[0] = np.eye(n)
    for k in range(horizon):
        phi[k + 1] = model.A @ phi[k]
        gamma[k + 1] = model.A @ gamma[k]
        gamma[k + 1][:, k * m:(k + 1) * m] = model.B
    return phi, gamma


def _check_dimensions(model: InteractionModel, gains: MpcGains) -> None:
    n, m = model.n, model.m
    c = gains.C.shape[0]
    expected = {
        "K_I": (m, n),
        "K_C": (m, c),
        "C": (c, n),
        "K_F": (m, m),
        "Q_I": (m, m),
        "Q_C": (m, m),
        "Q_F": (m, m),
        "Q_u": (m, m),
    }
    for name, shape in expected.items():
        actual = getattr(gains, name).shape
        if actual != shape:
            raise DimensionMismatch(f"{name} has shape {actual}, expected {shape}", details={"matrix": name})
    if gains.u_max is not None and gains.u_max.size != m:
        raise DimensionMismatch(f"u_max has {gains.u_max.size} entries, expected {m}")
    if gains.x_max is not None and gains.x_max.size != n:
        raise DimensionMismatch(f"x_max has {gains.x_max.size} entries, expected {n}")


class QpStructure:
    """
    Step-independent part of the controller QP

    Everything except the linear term, the constant and the right-hand side
    of the state constraints depends only on the model and the gains, so it
    is built once per controller.
    """

    def __init__(self, model: InteractionModel, gains: MpcGains):
        _check_dimensions(model, gains)
        self.model = model
        self.gains = gains
        N, n, m = gains.horizon, model.n, model.m
        self.layout = Layout(N, m, ("u",) + gains.enabled())
        nz = self.layout.size

        self.phi, self.gamma = prediction_matrices(model, N)
        select_u = np.vstack([self.layout.selector(k, "u") for k in range(N)])
        # predicted-state sensitivity to z: X_k = free_k + GU_k z
        self.gu = np.einsum("kij,jz->kiz", self.gamma, select_u)

        rows: Dict[str, List[np.ndarray]] = {"u": [], "w": [], "v": [], "s": []}
        KCC = gains.K_C @ gains.C
        for k in range(N):
            sel = {b: self.layout.selector(k, b) for b in self.layout.blocks}
            coupling = sel["u"].copy()
            if "w" in sel:
                rows["w"].append(sel["w"] + gains.K_I @ self.gu[k])
                coupling -= sel["w"]
            if "v" in sel:
                rows["v"].append(sel["v"] + KCC @ self.gu[k])
                coupling -= sel["v"]
            if "s" in sel:
                rows["s"].append(sel["s"])
                coupling -= sel["s"]
            rows["u"].append(coupling)

        weights = {"w": gains.Q_I, "v": gains.Q_C, "s": gains.Q_F, "u": gains.Q_u}
        self.terms = [t for t in ("w", "v", "s", "u") if rows[t]]
        self.A = np.vstack([np.vstack(rows[t]) for t in self.terms])
        self.W = block_diag(*[np.kron(np.eye(N), weights[t]) for t in self.terms])

        H = 2.0 * self.A.T @ self.W @ self.A
        H = 0.5 * (H + H.T)
        self.H = H + RIDGE * float(np.mean(np.diag(H))) * np.eye(nz)
        self._factor: Optional[np.ndarray] = None

        self._build_constraints()

    def _build_constraints(self) -> None:
        gains, layout = self.gains, self.layout
        N, n, m = gains.horizon, self.model.n, self.model.m
        A_rows, b_rows, labels = [], [], []

        if gains.u_max is not None:
            for k in range(N):
                sel = layout.selector(k, "u")
                for i in range(m):
                    if np.isfinite(gains.u_max[i]):
                        A_rows += [sel[i], -sel[i]]
                        b_rows += [gains.u_max[i], gains.u_max[i]]
                        labels += [f"u[{k}][{i}]<=max", f"u[{k}][{i}]>=-max"]
        self._n_input_rows = len(A_rows)

        self._state_index: List[Tuple[int, int, float]] = []
        if gains.x_max is not None:
            for k in range(1, N + 1):
                for j in range(n):
                    if np.isfinite(gains.x_max[j]):
                        A_rows += [self.gu[k][j], -self.gu[k][j]]
                        b_rows += [gains.x_max[j], gains.x_max[j]]
                        labels += [f"x[{k}][{j}]<=max", f"x[{k}][{j}]>=-max"]
                        self._state_index.append((k, j, 1.0))
                        self._state_index.append((k, j, -1.0))

        nz = layout.size
        self.A_ineq = np.vstack(A_rows) if A_rows else np.zeros((0, nz))
        self._b_base = np.asarray(b_rows, dtype=float)
        self.labels = labels

    @property
    def factor(self) -> np.ndarray:
        """R^-1 with H = R'R, for quadprog's pre-factorized mode"""
        if self._factor is None:
            R = cholesky(self.H, lower=False)
            self._factor = solve_triangular(R, np.eye(R.shape[0]), lower=False)
        return self._factor

    def check_step(self, step: MpcStep) -> None:
        N, n, m = self.gains.horizon, self.model.n, self.model.m
        if step.x.size != n:
            raise DimensionMismatch(f"state has {step.x.size} entries, expected {n}")
        if step.x_ref.shape != (N + 1, n):
            raise DimensionMismatch(f"reference window has shape {step.x_ref.shape}, expected {(N + 1, n)}")
        if step.f_ext.size != m or step.f_ref.size != m:
            raise DimensionMismatch(f"force vectors must have {m} entries")

    def free_response(self, step: MpcStep) -> np.ndarray:
        """Predicted absolute states with U = 0 (external force included), shape (N+1, n)"""
        N = self.gains.horizon
        forces = np.tile(step.f_ext, N)
        return np.einsum("kij,j->ki", self.phi, step.x) + np.einsum("kij,j->ki", self.gamma, forces)

    def qp(self, step: MpcStep) -> QuadraticProgram:
        self.check_step(step)
        gains = self.gains
        N, m = gains.horizon, self.model.m

        x_max = gains.x_max
        if x_max is not None:
            excess = np.abs(step.x) - x_max
            if np.any(excess > STATE_TOLERANCE):
                j = int(np.argmax(excess))
                raise QpInfeasible(
                    f"current state violates its limit: |x[0][{j}]| = {abs(step.x[j]):.4g} > {x_max[j]:.4g}",
                    details={"constraint": f"x[0][{j}]", "value": float(step.x[j]), "limit": float(x_max[j])},
                )

        free = self.free_response(step)
        error = free - step.x_ref
        force_target = gains.force_sign * step.f_ext - gains.K_F @ (step.f_ext - step.f_ref)
        offsets = {
            "w": (gains.K_I @ error[:N].T).T.reshape(-1),
            "v": (gains.K_C @ gains.C @ error[:N].T).T.reshape(-1),
            "s": np.tile(force_target, N),
            "u": np.zeros(N * m),
        }
        b = np.concatenate([offsets[t] for t in self.terms])
        Wb = self.W @ b
        g = 2.0 * self.A.T @ Wb
        constant = float(b @ Wb)

        b_ineq = self._b_base.copy()
        offset = self._n_input_rows
        for row, (k, j, sign) in enumerate(self._state_index):
            b_ineq[offset + row] -= sign * free[k][j]

        return QuadraticProgram(
            H=self.H,
            g=g,
            constant=constant,
            A_ineq=self.A_ineq,
            b_ineq=b_ineq,
            labels=self.labels,
            layout=self.layout,
        )


def build_qp(step: MpcStep, model: InteractionModel, gains: MpcGains) -> QuadraticProgram:
    """
    Assemble the horizon QP for one controller step

    Raises:
        DimensionMismatch: Step, model and gains disagree on sizes
        QpInfeasible: The current state already violates a state limit
    """
    return QpStructure(model, gains).qp(step)


def kkt_residual(qp: QuadraticProgram, z: np.ndarray, multipliers: np.ndarray) -> float:
    """
    Scaled KKT residual: stationarity, primal and dual feasibility, complementarity

    ``multipliers`` follow quadprog's ordering (equalities first).
    """
    meq = qp.A_eq.shape[0]
    lam_eq, lam_ineq = multipliers[:meq], multipliers[meq:]
    grad = qp.H @ z + qp.g
    stationarity = grad - qp.A_eq.T @ lam_eq + qp.A_ineq.T @ lam_ineq
    scale = max(1.0, float(np.abs(qp.g).max(initial=0.0)), float(np.abs(qp.H @ z).max(initial=0.0)))

    slack = qp.b_ineq - qp.A_ineq @ z
    rhs_scale = max(1.0, float(np.abs(qp.b_ineq).max(initial=0.0)), float(np.abs(qp.b_eq).max(initial=0.0)))
    primal = max(float(np.maximum(-slack, 0.0).max(initial=0.0)), float(np.abs(qp.A_eq @ z - qp.b_eq).max(initial=0.0)))
    dual = float(np.maximum(-lam_ineq, 0.0).max(initial=0.0))
    complementarity = float(np.abs(lam_ineq * slack).max(initial=0.0))

    return max(
        float(np.abs(stationarity).max(initial=0.0)) / scale,
        primal / rhs_scale,
        dual / scale,
        complementarity / (scale * rhs_scale),
    )


def _most_violated(qp: QuadraticProgram) -> Tuple[str, float]:
    z = np.linalg.solve(qp.H, -qp.g)
    excess = qp.A_ineq @ z - qp.b_ineq
    if excess.size == 0:
        return "none", 0.0
    i = int(np.argmax(excess))
    return qp.labels[i], float(excess[i])


def solve_qp(
    qp: QuadraticProgram,
    factor: Optional[np.ndarray] = None,
    max_iterations: Optional[int] = None,
) -> QpSolution:
    """
    Solve a convex QP with quadprog's dual active-set method

    Args:
        qp: Problem with positive-definite H
        factor: Optional R^-1 (H = R'R) to skip the factorization
        max_iterations: Fail if the solver needs more active-set iterations

    Returns:
        QpSolution

    Raises:
        QpInfeasible: Constraint set is empty
        QpMaxIterations: Iteration budget exceeded
    """
    meq = qp.A_eq.shape[0]
    C = np.vstack([qp.A_eq, -qp.A_ineq]).T
    b = np.concatenate([qp.b_eq, -qp.b_ineq])
    G = (factor if factor is not None else qp.H).copy()
    a = -qp.g

    try:
        if C.shape[1] == 0:
            z, _, _, iterations, multipliers, active = quadprog.solve_qp(G, a, factorized=factor is not None)
        else:
            z, _, _, iterations, multipliers, active = quadprog.solve_qp(
                G, a, np.ascontiguousarray(C), b, meq, factorized=factor is not None
            )
    except ValueError as exc:
        if "inconsistent" not in str(exc):
            raise
        label, excess = _most_violated(qp)
        raise QpInfeasible(
            f"QP constraints are inconsistent (most violated at the unconstrained optimum: {label})",
            details={"constraint": label, "excess": excess},
        ) from exc

    n_iter = int(iterations[0])
    if max_iterations is not None and n_iter > max_iterations:
        raise QpMaxIterations(f"QP needed {n_iter} iterations (limit {max_iterations})")

    multipliers = np.asarray(multipliers, dtype=float)
    labels = ["eq"] * meq + list(qp.labels)
    active_labels = [labels[i - 1] for i in active if i > 0]
    return QpSolution(
        z=np.asarray(z),
        objective=qp.objective(np.asarray(z)),
        multipliers=multipliers,
        active=active_labels,
        iterations=n_iter,
        kkt_residual=kkt_residual(qp, np.asarray(z), multipliers),
        layout=qp.layout,
    )


@dataclass
class ControlResult:
    """First input of the horizon solution and its decomposition"""

    u: np.ndarray
    w: np.ndarray
    v: np.ndarray
    s: np.ndarray
    fallback: bool = False
    saturated: bool = False
    status: str = "optimal"
    objective: float = 0.0
    kkt_residual: float = 0.0
    active: List[str] = field(default_factory=list)


class MpcController:
    """Receding-horizon controller; one instance per simulation, stepped sequentially"""

    def __init__(self, model: InteractionModel, gains: MpcGains, max_iterations: Optional[int] = None):
        self.model = model
        self.gains = gains
        self.max_iterations = max_iterations
        self.structure = QpStructure(model, gains)
        self.steps = 0
        self.fallbacks = 0

    @property
    def horizon(self) -> int:
        return self.gains.horizon

    def fallback(self, step: MpcStep, reason: str) -> ControlResult:
        """Saturated impedance-only law"""
        error = step.x - step.x_ref[0]
        u = -self.gains.K_I @ error
        if self.gains.u_max is not None:
            u = np.clip(u, -self.gains.u_max, self.gains.u_max)
        zeros = np.zeros_like(u)
        self.fallbacks += 1
        logger.warning(f"Controller fallback at step {self.steps}: {reason}")
        return ControlResult(u, u.copy(), zeros, zeros.copy(), fallback=True, saturated=self._saturated(u), status=f"fallback: {reason}")

    def _saturated(self, u: np.ndarray) -> bool:
        if self.gains.u_max is None:
            return False
        return bool(np.any(np.abs(u) >= self.gains.u_max - 1e-9))

    def step(self, step: MpcStep) -> ControlResult:
        try:
            qp = self.structure.qp(step)
            solution = solve_qp(qp, factor=self.structure.factor, max_iterations=self.max_iterations)
        except QpInfeasible as exc:
            result = self.fallback(step, exc.message)
            self.steps += 1
            return result

        u, w, v, s = (solution.block(b)[0] for b in ("u", "w", "v", "s"))
        logger.debug(
            f"MPC step {self.steps}: |u|={np.linalg.norm(u):.3f} |w|={np.linalg.norm(w):.3f} "
            f"|v|={np.linalg.norm(v):.3f} |s|={np.linalg.norm(s):.3f} active={len(solution.active)}"
        )
        self.steps += 1
        return ControlResult(
            u=u,
            w=w,
            v=v,
            s=s,
            saturated=self._saturated(u),
            objective=solution.objective,
            kkt_residual=solution.kkt_residual,
            active=solution.active,
        )


def control_step(step: MpcStep, model: InteractionModel, gains: MpcGains) -> ControlResult:
    """
    First control input of the horizon solution (receding horizon)

    Falls back to the saturated impedance-only law, flagged, when the QP is
    infeasible. Other solver errors propagate.
    """
    return MpcController(model, gains).step(step)


def impedance_law(step: MpcStep, gains: MpcGains) -> np.ndarray:
    """Unconstrained optimum of the first input: -K_I X~ - K_C C X~ - F_e + K_F F~"""
    error = step.x - step.x_ref[0]
    enabled = gains.enabled()
    u = np.zeros(gains.m)
    if "w" in enabled:
        u -= gains.K_I @ error
    if "v" in enabled:
        u -= gains.K_C @ gains.C @ error
    if "s" in enabled:
        u -= gains.force_sign * step.f_ext - gains.K_F @ (step.f_ext - step.f_ref)
    return u


def reference_window(references: np.ndarray, k: int, horizon: int) -> np.ndarray:
    """References k..k+N, padded with the last row past the end"""
    idx = np.minimum(np.arange(k, k + horizon + 1), len(references) - 1)
    return references[idx]
