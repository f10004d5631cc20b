"""Glove-to-hand kinematic retargeting.

The glove pose is summarized by weighted key vectors (palm-to-fingertip
and fingertip-to-fingertip displacements). Each frame solves

    E(q) = sum_k w_k ||v_k(q) - alpha * u_k||^2 + beta * ||q - q_prev||^2

over the hand's joint limits, where v_k are the hand's key vectors, u_k
the glove's, alpha a size scale, and the beta term anchors redundant
directions to the previous frame (warm start). The solver is projected
gradient descent with an Armijo backtracking line search, so iterates
stay feasible and the objective never increases along accepted steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, ModelError, SolverError
from .kinematics import HandModel

_KINDS = ("palm_to_tip", "tip_to_tip")


@dataclass(frozen=True)
class KeyVectorSpec:
    """One retargeting feature: a displacement between two endpoints."""

    kind: str
    start: str  # "palm" or a finger name
    end: str  # a finger name
    weight: float = 1.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ModelError(f"unknown key-vector kind {self.kind!r}")
        if self.kind == "palm_to_tip" and self.start != "palm":
            raise ModelError("palm_to_tip vectors must start at 'palm'")
        if self.kind == "tip_to_tip" and self.start == "palm":
            raise ModelError("tip_to_tip vectors join two fingers")
        if self.weight < 0:
            raise ModelError("key-vector weight must be >= 0")


# Pinch fidelity leans on the pairwise vectors, hence their heavier weight.
DEFAULT_KEY_VECTORS = (
    KeyVectorSpec("palm_to_tip", "palm", "thumb", 1.0),
    KeyVectorSpec("palm_to_tip", "palm", "index", 1.0),
    KeyVectorSpec("palm_to_tip", "palm", "middle", 1.0),
    KeyVectorSpec("tip_to_tip", "thumb", "index", 2.0),
    KeyVectorSpec("tip_to_tip", "thumb", "middle", 2.0),
    KeyVectorSpec("tip_to_tip", "index", "middle", 2.0),
)


@dataclass
class RetargetConfig:
    specs: tuple[KeyVectorSpec, ...] = DEFAULT_KEY_VECTORS
    alpha: float = 1.0
    beta: float = 1e-2
    max_iters: int = 50
    grad_tol: float = 1e-8
    step_rule: str = "backtracking"  # "backtracking" | "fixed"
    step_size: float = 0.5  # fixed step, or the line search's first trial
    armijo_c: float = 1e-4
    shrink: float = 0.5

    def __post_init__(self):
        if self.alpha <= 0:
            raise ModelError("alpha must be positive")
        if self.beta < 0:
            raise ModelError("beta must be >= 0")
        if self.max_iters < 1:
            raise ModelError("max_iters must be >= 1")
        if self.step_rule not in ("backtracking", "fixed"):
            raise ModelError(f"unknown step rule {self.step_rule!r}")
        if not self.specs:
            raise ModelError("need at least one key-vector spec")

    def validated_for(self, model: HandModel) -> "RetargetConfig":
        """Check every endpoint exists and each finger is covered."""
        names = {f.name for f in model.fingers}
        covered = set()
        for spec in self.specs:
            for endpoint in (spec.start, spec.end):
                if endpoint != "palm" and endpoint not in names:
                    raise ModelError(
                        f"key vector references unknown finger {endpoint!r}"
                    )
            covered.add(spec.end)
            if spec.start != "palm":
                covered.add(spec.start)
        missing = names - covered
        if missing:
            raise ModelError(f"fingers {sorted(missing)} have no key vector")
        return self


@dataclass
class RetargetState:
    """Warm start carried between frames; q_prev is in hand joint space."""

    q_prev: np.ndarray | None = None

    @property
    def initialized(self) -> bool:
        return self.q_prev is not None


def keyvectors(model: HandModel, q: np.ndarray, specs) -> np.ndarray:
    """Key vectors (m, 3) of a model at joint vector q."""
    q = model.check_q(q)
    tips = {
        f.name: f.tip(q[model.slices[f.name]], model.palm) for f in model.fingers
    }
    out = np.empty((len(specs), 3))
    for k, spec in enumerate(specs):
        if spec.kind == "palm_to_tip":
            out[k] = tips[spec.end] - model.palm.translation
        else:
            out[k] = tips[spec.end] - tips[spec.start]
    return out


def glove_keyvectors(glove_model: HandModel, q_glove: np.ndarray, specs) -> np.ndarray:
    """Alias making call sites read as glove-side feature extraction."""
    return keyvectors(glove_model, q_glove, specs)


def _tips_and_jacobians(model: HandModel, q: np.ndarray):
    tips, jacs = {}, {}
    for f in model.fingers:
        tips[f.name], jacs[f.name] = f.tip_and_jacobian(
            q[model.slices[f.name]], model.palm
        )
    return tips, jacs


def objective_value(model: HandModel, q: np.ndarray, u: np.ndarray,
                    config: RetargetConfig, q_prev: np.ndarray) -> float:
    """E(q) without the gradient (cheap line-search evaluations)."""
    q = model.check_q(q)
    v = keyvectors(model, q, config.specs)
    if v.shape != u.shape:
        raise DimensionError(
            f"expected {v.shape[0]} target vectors, got {u.shape[0]}"
        )
    value = 0.0
    for k, spec in enumerate(config.specs):
        r = v[k] - config.alpha * u[k]
        value += spec.weight * float(r @ r)
    d = q - q_prev
    return value + config.beta * float(d @ d)


def objective_and_gradient(model: HandModel, q: np.ndarray, u: np.ndarray,
                           config: RetargetConfig, q_prev: np.ndarray):
    """E(q) and its analytic gradient.

    dE/dq = sum_k 2 w_k J_k^T (v_k - alpha u_k) + 2 beta (q - q_prev),
    where J_k stacks the signed finger Jacobians of vector k's endpoints.
    """
    q = model.check_q(q)
    u = np.asarray(u, dtype=float)
    if u.shape != (len(config.specs), 3):
        raise DimensionError(
            f"expected target vectors of shape {(len(config.specs), 3)}, got {u.shape}"
        )
    tips, jacs = _tips_and_jacobians(model, q)
    value = 0.0
    grad = np.zeros(model.n_joints)
    for k, spec in enumerate(config.specs):
        if spec.kind == "palm_to_tip":
            v = tips[spec.end] - model.palm.translation
        else:
            v = tips[spec.end] - tips[spec.start]
        r = v - config.alpha * u[k]
        value += spec.weight * float(r @ r)
        grad[model.slices[spec.end]] += 2.0 * spec.weight * (jacs[spec.end].T @ r)
        if spec.kind == "tip_to_tip":
            grad[model.slices[spec.start]] -= 2.0 * spec.weight * (jacs[spec.start].T @ r)
    d = q - q_prev
    value += config.beta * float(d @ d)
    grad += 2.0 * config.beta * d
    return value, grad


def solve_frame(model: HandModel, u: np.ndarray, state: RetargetState,
                config: RetargetConfig) -> np.ndarray:
    """One retargeting solve; updates state.q_prev with the result."""
    q_prev = state.q_prev if state.initialized else model.mid_range()
    q_prev = model.clamp(np.asarray(q_prev, dtype=float))
    q = q_prev.copy()

    value, grad = objective_and_gradient(model, q, u, config, q_prev)
    if not np.isfinite(value):
        raise SolverError("retargeting objective is not finite")

    eta0 = config.step_size
    q_old = grad_old = None
    for _ in range(config.max_iters):
        if np.linalg.norm(grad) <= config.grad_tol:
            break
        if config.step_rule == "fixed":
            q = model.clamp(q - config.step_size * grad)
            value, grad = objective_and_gradient(model, q, u, config, q_prev)
            if not np.isfinite(value):
                raise SolverError("retargeting objective diverged (fixed step)")
            continue

        # Barzilai-Borwein spectral guess for the first trial step; the
        # Armijo backtracking below still guarantees descent.
        if q_old is not None:
            dq, dg = q - q_old, grad - grad_old
            curv = float(dq @ dg)
            if curv > 1e-18:
                eta0 = min(max(float(dq @ dq) / curv, 1e-6), 1e4)

        eta, accepted = eta0, None
        while eta > 1e-16:
            cand = model.clamp(q - eta * grad)
            step = cand - q
            if not step.any():
                break  # fully clipped: projected stationary point
            cand_value = objective_value(model, cand, u, config, q_prev)
            if cand_value <= value + config.armijo_c * float(grad @ step):
                accepted = (cand, cand_value)
                break
            eta *= config.shrink
        if accepted is None:
            break  # no feasible descent direction left
        q_old, grad_old = q, grad
        q, value = accepted
        _, grad = objective_and_gradient(model, q, u, config, q_prev)

    state.q_prev = q.copy()
    return q


def retarget_trajectory(glove_model: HandModel, hand_model: HandModel,
                        glove_frames, config: RetargetConfig,
                        state: RetargetState | None = None) -> list[np.ndarray]:
    """Retarget a whole gesture with a shared warm-start state."""
    frames = list(glove_frames)
    if not frames:
        raise SolverError("empty glove trajectory")
    config.validated_for(hand_model)
    config.validated_for(glove_model)
    state = state if state is not None else RetargetState()
    out = []
    for i, q_glove in enumerate(frames):
        try:
            u = glove_keyvectors(glove_model, np.asarray(q_glove, dtype=float),
                                 config.specs)
            out.append(solve_frame(hand_model, u, state, config))
        except (SolverError, DimensionError) as e:
            raise SolverError(f"frame {i}: {e}") from e
    return out
