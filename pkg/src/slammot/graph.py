"""Joint factor graph over ego keyframe poses and per-frame object states.

Variables
    ``EgoPose(k*)`` at keyframes, ``ObjPose(track, k)`` and ``ObjVel(track, k)``
    at every frame a track is alive.

Factors (residual conventions; all Jacobians are w.r.t. additive updates)
    Prior          pose_error(X, prior)  or  V - prior
    Odo            pose_error(X_a * rel, X_b)
    ObjPerception  [sqrt(-2 ln(c_j/c_max)), R_j pose_error(O, X * Z_j)] for the
                   max-mixture winner j, re-selected at every evaluation
    ObjMotion      pose_error(ctrv(O_a, V_a, dt), O_b)
    ObjVelocity    V_a - V_b

Residuals of each kind are evaluated together in numpy batches; see
:class:`CompiledGraph`.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .confidence import detection_sigma
from .ctrv import EPS_OMEGA, jacobians_arrays, predict_arrays
from .core import Detection
from .geometry import (
    NoiseModel,
    Pose2,
    Velocity2,
    compose,
    compose_arrays,
    compose_jacobian_left,
    pose_error_arrays,
    wrap_angles,
)


class GraphStructureError(ValueError):
    """A factor refers to a variable that does not exist, or arity is wrong."""


class VarKind(enum.IntEnum):
    EGO_POSE = 0
    OBJ_POSE = 1
    OBJ_VEL = 2


class FactorKind(enum.IntEnum):
    PRIOR = 0
    ODO = 1
    OBJ_PERCEPTION = 2
    OBJ_MOTION = 3
    OBJ_VELOCITY = 4


VAR_DIM = {VarKind.EGO_POSE: 3, VarKind.OBJ_POSE: 3, VarKind.OBJ_VEL: 2}
ARITY = {
    FactorKind.PRIOR: 1,
    FactorKind.ODO: 2,
    FactorKind.OBJ_PERCEPTION: 2,
    FactorKind.OBJ_MOTION: 3,
    FactorKind.OBJ_VELOCITY: 2,
}


@dataclass(frozen=True, order=True)
class VariableKey:
    kind: VarKind
    frame: int
    track: int = -1

    @property
    def dim(self) -> int:
        return VAR_DIM[self.kind]

    @property
    def is_pose(self) -> bool:
        return self.kind is not VarKind.OBJ_VEL

    def __str__(self) -> str:
        if self.kind is VarKind.EGO_POSE:
            return f"X{self.frame}"
        prefix = "O" if self.kind is VarKind.OBJ_POSE else "V"
        return f"{prefix}{self.track}@{self.frame}"


def ego_key(frame: int) -> VariableKey:
    return VariableKey(VarKind.EGO_POSE, frame)


def obj_key(track: int, frame: int) -> VariableKey:
    return VariableKey(VarKind.OBJ_POSE, frame, track)


def vel_key(track: int, frame: int) -> VariableKey:
    return VariableKey(VarKind.OBJ_VEL, frame, track)


@dataclass(frozen=True)
class PerceptionPayload:
    """Mixture components of one perception factor, stored in the keyframe ego frame."""

    z_ego: np.ndarray  # (M, 3)
    sqrt_info: np.ndarray  # (M, 3, 3)
    log_c: np.ndarray  # (M,)
    det_indices: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        m = len(self.log_c)
        if m == 0:
            raise GraphStructureError("perception factor needs at least one component")
        if self.z_ego.shape != (m, 3) or self.sqrt_info.shape != (m, 3, 3):
            raise GraphStructureError("inconsistent mixture component arrays")

    @property
    def size(self) -> int:
        return len(self.log_c)


@dataclass(frozen=True)
class Factor:
    kind: FactorKind
    keys: tuple[VariableKey, ...]
    noise: NoiseModel | None
    payload: Any = None

    def __post_init__(self) -> None:
        if len(self.keys) != ARITY[self.kind]:
            raise GraphStructureError(
                f"{self.kind.name} factor takes {ARITY[self.kind]} keys, got {len(self.keys)}"
            )


@dataclass
class FactorGraph:
    variables: dict[VariableKey, np.ndarray] = field(default_factory=dict)
    factors: list[Factor] = field(default_factory=list)
    keyframes: list[int] = field(default_factory=list)

    def add_variable(self, key: VariableKey, value) -> VariableKey:
        if key in self.variables:
            raise GraphStructureError(f"variable {key} already exists")
        arr = _as_array(value, key.dim)
        self.variables[key] = arr
        if key.kind is VarKind.EGO_POSE:
            self.keyframes.append(key.frame)
            self.keyframes.sort()
        return key

    def has(self, key: VariableKey) -> bool:
        return key in self.variables

    def set_value(self, key: VariableKey, value) -> None:
        if key not in self.variables:
            raise GraphStructureError(f"unknown variable {key}")
        self.variables[key] = _as_array(value, key.dim)

    def value(self, key: VariableKey) -> np.ndarray:
        try:
            return self.variables[key]
        except KeyError:
            raise GraphStructureError(f"unknown variable {key}") from None

    def pose(self, key: VariableKey) -> Pose2:
        return Pose2.from_array(self.value(key))

    def velocity(self, key: VariableKey) -> Velocity2:
        return Velocity2.from_array(self.value(key))

    def add_factor(self, factor: Factor) -> int:
        for k in factor.keys:
            if k not in self.variables:
                raise GraphStructureError(f"{factor.kind.name} factor references unknown variable {k}")
        self.factors.append(factor)
        return len(self.factors) - 1

    def without_object_factors(self) -> "FactorGraph":
        """Copy that keeps only ego variables, priors on them, and odometry."""
        g = FactorGraph()
        for k, v in self.variables.items():
            if k.kind is VarKind.EGO_POSE:
                g.add_variable(k, v.copy())
        for f in self.factors:
            if all(k.kind is VarKind.EGO_POSE for k in f.keys):
                g.factors.append(f)
        return g

    def copy(self) -> "FactorGraph":
        g = FactorGraph()
        g.variables = {k: v.copy() for k, v in self.variables.items()}
        g.factors = list(self.factors)
        g.keyframes = list(self.keyframes)
        return g


def _as_array(value, dim: int) -> np.ndarray:
    if isinstance(value, Pose2):
        arr = value.as_array()
    elif isinstance(value, Velocity2):
        arr = value.as_array()
    else:
        arr = np.array(value, dtype=float).reshape(-1)
    if arr.shape != (dim,):
        raise GraphStructureError(f"expected {dim} values, got shape {arr.shape}")
    if dim == 3:
        arr[2] = wrap_angles(arr[2])
    return arr


# -- construction helpers ------------------------------------------------------


def add_prior(graph: FactorGraph, key: VariableKey, value, noise: NoiseModel) -> int:
    target = _as_array(value, key.dim)
    if noise.dim != key.dim:
        raise GraphStructureError(f"prior noise dim {noise.dim} != variable dim {key.dim}")
    return graph.add_factor(Factor(FactorKind.PRIOR, (key,), noise, target))


def add_odometry(
    graph: FactorGraph, k_prev: int, k_cur: int, rel: Pose2, noise: NoiseModel
) -> int:
    """Ego motion constraint between consecutive keyframes.

    ``EgoPose(k_cur)`` is created at ``X_prev * rel`` when missing;
    ``EgoPose(k_prev)`` must exist.
    """
    a, b = ego_key(k_prev), ego_key(k_cur)
    if a not in graph.variables:
        raise GraphStructureError(f"odometry from unknown keyframe {k_prev}")
    if b not in graph.variables:
        graph.add_variable(b, compose(graph.pose(a), rel))
    return graph.add_factor(Factor(FactorKind.ODO, (a, b), noise, rel.as_array()))


def perception_payload(
    dets: Sequence[Detection], gamma_diag, beta: float, eps_det: float
) -> PerceptionPayload:
    m = len(dets)
    if m == 0:
        raise GraphStructureError("perception factor needs at least one component")
    z = np.array([d.pose_ego.as_array() for d in dets])
    L = np.empty((m, 3, 3))
    log_c = np.empty(m)
    for j, d in enumerate(dets):
        n = detection_sigma(d.score, gamma_diag, beta, eps_det)
        L[j] = n.sqrt_info
        log_c[j] = np.log(1.0 / m) + n.log_det()
    return PerceptionPayload(z, L, log_c, tuple(range(m)))


def add_perception(
    graph: FactorGraph,
    k_star: int,
    track: int,
    frame: int,
    payload: PerceptionPayload,
    init_component: int | None = None,
) -> int:
    """Max-mixture perception factor between ``EgoPose(k_star)`` and ``ObjPose(track, frame)``.

    ``payload.z_ego`` must already be expressed in the ``k_star`` ego frame
    (see :func:`promote_to_keyframe`). A missing object pose is created at
    ``X_{k*} * Z`` for ``init_component`` (default: the highest weight).
    """
    xk = ego_key(k_star)
    ok = obj_key(track, frame)
    if xk not in graph.variables:
        raise GraphStructureError(f"perception factor on unknown keyframe {k_star}")
    if ok not in graph.variables:
        j = int(np.argmax(payload.log_c)) if init_component is None else init_component
        graph.add_variable(ok, compose(graph.pose(xk), Pose2.from_array(payload.z_ego[j])))
    return graph.add_factor(Factor(FactorKind.OBJ_PERCEPTION, (xk, ok), None, payload))


def add_motion(
    graph: FactorGraph, track: int, k_prev: int, k_cur: int, dt: float, noise: NoiseModel
) -> int:
    if dt < 0.0:
        raise GraphStructureError(f"negative dt {dt} in motion factor")
    keys = (obj_key(track, k_prev), obj_key(track, k_cur), vel_key(track, k_prev))
    return graph.add_factor(Factor(FactorKind.OBJ_MOTION, keys, noise, float(dt)))


def add_velocity(graph: FactorGraph, track: int, k_prev: int, k_cur: int, noise: NoiseModel) -> int:
    keys = (vel_key(track, k_prev), vel_key(track, k_cur))
    return graph.add_factor(Factor(FactorKind.OBJ_VELOCITY, keys, noise))


def promote_to_keyframe(dets: Iterable[Detection], rel_pose: Pose2) -> list[Detection]:
    """Re-express detections taken at frame ``k`` in the ego frame of keyframe ``k*``.

    ``rel_pose`` is the ego pose at ``k`` seen from the ego pose at ``k*``.
    Frame index, stamp, size and score are preserved.
    """
    out = []
    for d in dets:
        out.append(
            Detection(
                pose_ego=compose(rel_pose, d.pose_ego),
                length=d.length,
                width=d.width,
                score=d.score,
                frame=d.frame,
                stamp=d.stamp,
                z=d.z,
            )
        )
    return out


# -- batched residual kernels ----------------------------------------------------
#
# Each kernel returns (residual (N, r), [jacobian block per key (N, r, d_key)]),
# already whitened.


def _whiten(L: np.ndarray, r: np.ndarray, blocks: list[np.ndarray]):
    rw = np.einsum("nij,nj->ni", L, r)
    return rw, [np.einsum("nij,njk->nik", L, B) for B in blocks]


def prior_kernel(vals, target, L, is_pose: np.ndarray):
    (x,) = vals
    r = x - target
    if r.shape[1] == 3:
        r[:, 2] = np.where(is_pose, wrap_angles(r[:, 2]), r[:, 2])
    n, d = r.shape
    J = np.broadcast_to(np.eye(d), (n, d, d)).copy()
    return _whiten(L, r, [J])


def odometry_kernel(vals, rel, L):
    xa, xb = vals
    pred = compose_arrays(xa, rel)
    r = pose_error_arrays(pred, xb)
    Ja = compose_jacobian_left(xa, rel)
    Jb = np.broadcast_to(-np.eye(3), Ja.shape).copy()
    return _whiten(L, r, [Ja, Jb])


def motion_kernel(vals, dt, L, eps_omega=EPS_OMEGA):
    oa, ob, va = vals
    pred = predict_arrays(oa, va, dt, eps_omega)
    r = pose_error_arrays(pred, ob)
    Jp, Jv = jacobians_arrays(oa, va, dt, eps_omega)
    Jb = np.broadcast_to(-np.eye(3), Jp.shape).copy()
    return _whiten(L, r, [Jp, Jb, Jv])


def velocity_kernel(vals, L):
    va, vb = vals
    r = va - vb
    n = r.shape[0]
    I = np.broadcast_to(np.eye(2), (n, 2, 2))
    return _whiten(L, r, [I.copy(), -I])


def perception_kernel(vals, z, L, log_c, select: np.ndarray | None = None):
    """Max-mixture perception residuals.

    ``z`` (N, M, 3), ``L`` (N, M, 3, 3), ``log_c`` (N, M) with ``-inf`` marking
    padding. ``select`` forces a component per factor (used to freeze the
    mixture for finite-difference checks).

    Returns ``(r, [J_X, J_O], chosen)``.
    """
    X, O = vals
    n, m = log_c.shape
    P = compose_arrays(X[:, None, :], z)
    e = pose_error_arrays(O[:, None, :], P)
    w = np.einsum("nmij,nmj->nmi", L, e)
    d2 = np.einsum("nmi,nmi->nm", w, w)
    if select is None:
        nll = np.where(np.isfinite(log_c), -log_c + 0.5 * d2, np.inf)
        chosen = np.argmin(nll, axis=1)
    else:
        chosen = np.asarray(select, dtype=int)
    rows = np.arange(n)
    log_cmax = np.max(log_c, axis=1)
    head = np.sqrt(np.maximum(-2.0 * (log_c[rows, chosen] - log_cmax), 0.0))
    r = np.empty((n, 4))
    r[:, 0] = head
    r[:, 1:] = w[rows, chosen]
    Lc = L[rows, chosen]
    JX = np.zeros((n, 4, 3))
    JO = np.zeros((n, 4, 3))
    JX[:, 1:, :] = -np.einsum("nij,njk->nik", Lc, compose_jacobian_left(X, z[rows, chosen]))
    JO[:, 1:, :] = Lc
    return r, [JX, JO], chosen


RESIDUAL_DIM = {
    FactorKind.ODO: 3,
    FactorKind.OBJ_PERCEPTION: 4,
    FactorKind.OBJ_MOTION: 3,
    FactorKind.OBJ_VELOCITY: 2,
}


def residual_dim(f: Factor) -> int:
    if f.kind is FactorKind.PRIOR:
        return f.keys[0].dim
    return RESIDUAL_DIM[f.kind]


class _Batch:
    """Packed arrays for every factor of one kind (and, for priors, one dimension)."""

    def __init__(self, kind: FactorKind, factors: list[tuple[int, Factor]], index: dict, row0: int):
        self.kind = kind
        self.ids = np.array([i for i, _ in factors], dtype=int)
        fs = [f for _, f in factors]
        self.n = len(fs)
        self.arity = ARITY[kind]
        self.rdim = residual_dim(fs[0])
        self.dims = [k.dim for k in fs[0].keys]
        self.offsets = [np.array([index[f.keys[p]] for f in fs], dtype=int) for p in range(self.arity)]
        self.row0 = row0
        if kind is FactorKind.OBJ_PERCEPTION:
            m = max(f.payload.size for f in fs)
            self.z = np.zeros((self.n, m, 3))
            self.L = np.broadcast_to(np.eye(3), (self.n, m, 3, 3)).copy()
            self.log_c = np.full((self.n, m), -np.inf)
            for i, f in enumerate(fs):
                k = f.payload.size
                self.z[i, :k] = f.payload.z_ego
                self.L[i, :k] = f.payload.sqrt_info
                self.log_c[i, :k] = f.payload.log_c
        else:
            self.L = np.array([f.noise.sqrt_info for f in fs])
        if kind is FactorKind.PRIOR:
            self.target = np.array([f.payload for f in fs])
            self.is_pose = np.array([f.keys[0].is_pose for f in fs])
        elif kind is FactorKind.ODO:
            self.rel = np.array([f.payload for f in fs])
        elif kind is FactorKind.OBJ_MOTION:
            self.dt = np.array([f.payload for f in fs], dtype=float)

        # sparse pattern of each Jacobian block, row-major inside the block
        rows_local = self.row0 + np.arange(self.n)[:, None] * self.rdim + np.arange(self.rdim)[None, :]
        self.pattern = []
        for p in range(self.arity):
            d = self.dims[p]
            rr = np.repeat(rows_local[:, :, None], d, axis=2)
            cc = np.broadcast_to(self.offsets[p][:, None, None] + np.arange(d)[None, None, :], rr.shape)
            self.pattern.append((rr.ravel(), cc.ravel()))

    def gather(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[off[:, None] + np.arange(d)[None, :]] for off, d in zip(self.offsets, self.dims)]

    def evaluate(self, x: np.ndarray, select=None, eps_omega=EPS_OMEGA):
        vals = self.gather(x)
        chosen = None
        if self.kind is FactorKind.PRIOR:
            r, J = prior_kernel(vals, self.target, self.L, self.is_pose)
        elif self.kind is FactorKind.ODO:
            r, J = odometry_kernel(vals, self.rel, self.L)
        elif self.kind is FactorKind.OBJ_MOTION:
            r, J = motion_kernel(vals, self.dt, self.L, eps_omega)
        elif self.kind is FactorKind.OBJ_VELOCITY:
            r, J = velocity_kernel(vals, self.L)
        else:
            r, J, chosen = perception_kernel(vals, self.z, self.L, self.log_c, select)
        return r, J, chosen


class CompiledGraph:
    """Flat-vector view of a :class:`FactorGraph` for residual and Jacobian evaluation.

    Variables are laid out in insertion order; factors are grouped by kind
    (priors additionally by dimension), each group in insertion order. The
    layout is fixed at construction so evaluation is deterministic.
    """

    def __init__(self, graph: FactorGraph, eps_omega: float = EPS_OMEGA):
        self.graph = graph
        self.eps_omega = eps_omega
        self.keys = list(graph.variables)
        self.index: dict[VariableKey, int] = {}
        off = 0
        for k in self.keys:
            self.index[k] = off
            off += k.dim
        self.size = off
        groups: dict[tuple, list] = {}
        for i, f in enumerate(graph.factors):
            gk = (int(f.kind), residual_dim(f))
            groups.setdefault(gk, []).append((i, f))
        self.batches: list[_Batch] = []
        row = 0
        for gk in sorted(groups):
            b = _Batch(FactorKind(gk[0]), groups[gk], self.index, row)
            self.batches.append(b)
            row += b.n * b.rdim
        self.rows = row
        self.yaw_mask = np.zeros(self.size, dtype=bool)
        for k in self.keys:
            if k.is_pose:
                self.yaw_mask[self.index[k] + 2] = True
        if self.batches:
            self._rows = np.concatenate([p[0] for b in self.batches for p in b.pattern])
            self._cols = np.concatenate([p[1] for b in self.batches for p in b.pattern])
        else:
            self._rows = self._cols = np.zeros(0, dtype=int)

    def pack(self) -> np.ndarray:
        if not self.keys:
            return np.zeros(0)
        return np.concatenate([self.graph.variables[k] for k in self.keys])

    def unpack(self, x: np.ndarray) -> None:
        for k in self.keys:
            i = self.index[k]
            self.graph.variables[k] = x[i : i + k.dim].copy()

    def retract(self, x: np.ndarray, delta: np.ndarray) -> np.ndarray:
        out = x + delta
        out[self.yaw_mask] = wrap_angles(out[self.yaw_mask])
        return out

    def residual(self, x: np.ndarray) -> np.ndarray:
        if not self.batches:
            return np.zeros(0)
        return np.concatenate([b.evaluate(x, eps_omega=self.eps_omega)[0].ravel() for b in self.batches])

    def cost(self, x: np.ndarray) -> float:
        r = self.residual(x)
        return 0.5 * float(r @ r)

    def linearize(self, x: np.ndarray) -> tuple[np.ndarray, sp.csr_matrix]:
        rs, data = [], []
        for b in self.batches:
            r, J, _ = b.evaluate(x, eps_omega=self.eps_omega)
            rs.append(r.ravel())
            data.extend(B.ravel() for B in J)
        if not rs:
            return np.zeros(0), sp.csr_matrix((0, self.size))
        J = sp.csr_matrix(
            (np.concatenate(data), (self._rows, self._cols)), shape=(self.rows, self.size)
        )
        return np.concatenate(rs), J


def factor_residual(graph: FactorGraph, index: int, select: int | None = None) -> np.ndarray:
    """Whitened residual of a single factor at the current estimates."""
    r, _ = factor_linearization(graph, index, select)
    return r


def factor_linearization(
    graph: FactorGraph, index: int, select: int | None = None
) -> tuple[np.ndarray, list[np.ndarray]]:
    """Whitened residual and per-key Jacobian blocks of factor ``index``."""
    f = graph.factors[index]
    sub = FactorGraph()
    for k in f.keys:
        sub.variables[k] = graph.variables[k]
    sub.factors = [f]
    cg = CompiledGraph(sub)
    b = cg.batches[0]
    sel = None if select is None else np.array([select])
    r, J, _ = b.evaluate(cg.pack(), select=sel)
    return r[0], [B[0] for B in J]


def selected_component(graph: FactorGraph, index: int) -> int:
    f = graph.factors[index]
    if f.kind is not FactorKind.OBJ_PERCEPTION:
        raise GraphStructureError("only perception factors carry mixture components")
    X, O = (graph.variables[k][None, :] for k in f.keys)
    p = f.payload
    _, _, chosen = perception_kernel([X, O], p.z_ego[None], p.sqrt_info[None], p.log_c[None])
    return int(chosen[0])
