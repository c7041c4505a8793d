"""Quasi-static mass-spring worlds.

Manipulated nodes are held where the controller puts them; every other node
settles to a minimum of the potential energy

    U = sum_springs 1/2 k s^2 (1 + beta s^2 / (2 L^2))      s = |p_i - p_j| - L
      + sum_bends   k_b (1 - t_1 . t_2)                     t = unit edge tangents
      - sum_nodes   m g . p

which is found by damped Newton iterations with a gradient-descent fallback.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, EquilibriumError, InputError
from .features import FeatureSpec, PointCloud, extract

log = logging.getLogger(__name__)

MANIPULATED, FEEDBACK, UNINFORMATIVE = 0, 1, 2
ROLE_NAMES = {"manipulated": MANIPULATED, "feedback": FEEDBACK, "uninformative": UNINFORMATIVE}

G_TOL = 1e-8
MAX_ITER = 500
GRAVITY = (0.0, 0.0, -9.81)


@dataclass(frozen=True)
class World:
    """Nodes, springs and point roles of one deformable object.

    ``actuated`` lists the (node, axis) coordinates the controller drives;
    the remaining coordinates of manipulated nodes stay where they are.
    """

    nodes: np.ndarray
    springs: np.ndarray  # (s, 2) node indices
    rest: np.ndarray  # (s,)
    stiffness: np.ndarray  # (s,)
    roles: np.ndarray  # (n,) role codes
    bends: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=int))
    bend_stiffness: np.ndarray = field(default_factory=lambda: np.zeros(0))
    gravity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: np.ndarray | float = 0.0
    stiffening: float = 0.0
    faces: np.ndarray | None = None
    actuated: tuple[tuple[int, int], ...] = ()
    feedback_order: tuple[int, ...] = ()

    def __post_init__(self):
        n = len(self.nodes)
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float).reshape(n, 3))
        object.__setattr__(self, "springs", np.asarray(self.springs, dtype=int).reshape(-1, 2))
        object.__setattr__(self, "rest", np.asarray(self.rest, dtype=float).reshape(-1))
        object.__setattr__(self, "stiffness", np.asarray(self.stiffness, dtype=float).reshape(-1))
        object.__setattr__(self, "roles", np.asarray(self.roles, dtype=int).reshape(n))
        object.__setattr__(self, "bends", np.asarray(self.bends, dtype=int).reshape(-1, 3))
        object.__setattr__(
            self, "bend_stiffness", np.asarray(self.bend_stiffness, dtype=float).reshape(-1)
        )
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=float).reshape(3))
        mass = np.broadcast_to(np.asarray(self.mass, dtype=float), (n,)).copy()
        object.__setattr__(self, "mass", mass)
        if not self.actuated:
            acts = tuple((int(i), a) for i in np.flatnonzero(self.roles == MANIPULATED) for a in range(3))
            object.__setattr__(self, "actuated", acts)
        if not self.feedback_order:
            object.__setattr__(
                self, "feedback_order", tuple(int(i) for i in np.flatnonzero(self.roles == FEEDBACK))
            )
        self.validate()

    def validate(self):
        n = len(self.nodes)
        if len(self.springs) != len(self.rest) or len(self.springs) != len(self.stiffness):
            raise ConfigError("springs, rest lengths and stiffnesses differ in length")
        if np.any(self.stiffness <= 0) or np.any(self.bend_stiffness <= 0):
            raise ConfigError("stiffnesses must be positive")
        if len(self.bends) != len(self.bend_stiffness):
            raise ConfigError("bends and bend stiffnesses differ in length")
        if not np.any(self.roles == MANIPULATED) or not np.any(self.roles == FEEDBACK):
            raise ConfigError("a world needs at least one manipulated and one feedback node")
        if not is_connected(n, self.springs):
            raise ConfigError("spring graph is not connected")
        for i, a in self.actuated:
            if self.roles[i] != MANIPULATED or a not in (0, 1, 2):
                raise ConfigError(f"actuated coordinate ({i}, {a}) is not on a manipulated node")
        for i in self.feedback_order:
            if self.roles[i] != FEEDBACK:
                raise ConfigError(f"node {i} in feedback_order is not a feedback node")

    @property
    def manipulated(self) -> np.ndarray:
        return np.flatnonzero(self.roles == MANIPULATED)

    @property
    def free(self) -> np.ndarray:
        return np.flatnonzero(self.roles != MANIPULATED)

    @property
    def n_controls(self) -> int:
        return len(self.actuated)

    def actuated_positions(self) -> np.ndarray:
        return np.array([self.nodes[i, a] for i, a in self.actuated])

    def feedback_cloud(self) -> PointCloud:
        idx = list(self.feedback_order)
        normals = None
        if self.faces is not None and len(self.faces):
            normals = vertex_normals(self.nodes, self.faces)[idx]
        return PointCloud(self.nodes[idx], normals)

    def features(self, spec: FeatureSpec) -> np.ndarray:
        return extract(spec, self.feedback_cloud()).values


def is_connected(n: int, springs: np.ndarray) -> bool:
    adj = [[] for _ in range(n)]
    for i, j in springs:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for u in adj[v]:
            if u not in seen:
                seen.add(u)
                queue.append(u)
    return len(seen) == n


def vertex_normals(nodes: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals of a triangle mesh."""
    a, b, c = nodes[faces[:, 0]], nodes[faces[:, 1]], nodes[faces[:, 2]]
    fn = np.cross(b - a, c - a)
    vn = np.zeros_like(nodes)
    for k in range(3):
        np.add.at(vn, faces[:, k], fn)
    norm = np.linalg.norm(vn, axis=1, keepdims=True)
    norm[norm == 0] = 1.0
    return vn / norm


# -- energy --------------------------------------------------------------


def _spring_terms(world: World, P: np.ndarray):
    i, j = world.springs[:, 0], world.springs[:, 1]
    d = P[i] - P[j]
    length = np.linalg.norm(d, axis=1)
    s = length - world.rest
    k, L, beta = world.stiffness, world.rest, world.stiffening
    energy = 0.5 * k * s**2 * (1.0 + 0.5 * beta * s**2 / L**2)
    dE = k * s * (1.0 + beta * s**2 / L**2)
    d2E = k * (1.0 + 3.0 * beta * s**2 / L**2)
    return d, length, energy, dE, d2E


def _bend_grad_terms(P3: np.ndarray, kb: np.ndarray):
    """Per-term gradients (b, 3, 3) of k_b (1 - t1.t2) w.r.t. the three nodes."""
    e1 = P3[:, 1] - P3[:, 0]
    e2 = P3[:, 2] - P3[:, 1]
    l1 = np.linalg.norm(e1, axis=1, keepdims=True)
    l2 = np.linalg.norm(e2, axis=1, keepdims=True)
    t1, t2 = e1 / l1, e2 / l2
    c = np.sum(t1 * t2, axis=1, keepdims=True)
    g1 = (t2 - c * t1) / l1  # d(t1.t2)/d e1
    g2 = (t1 - c * t2) / l2  # d(t1.t2)/d e2
    k = -kb[:, None]
    grads = np.stack([-g1 * k, (g1 - g2) * k, g2 * k], axis=1)
    return grads, c[:, 0]


def energy(world: World, P: np.ndarray | None = None) -> float:
    P = world.nodes if P is None else P
    _, _, e_s, _, _ = _spring_terms(world, P)
    total = float(e_s.sum())
    if len(world.bends):
        _, c = _bend_grad_terms(P[world.bends], world.bend_stiffness)
        total += float(np.sum(world.bend_stiffness * (1.0 - c)))
    total -= float(np.sum(world.mass * (P @ world.gravity)))
    return total


def gradient(world: World, P: np.ndarray | None = None) -> np.ndarray:
    """dU/dP for every node, shape (n, 3)."""
    P = world.nodes if P is None else P
    G = np.zeros_like(P)
    d, length, _, dE, _ = _spring_terms(world, P)
    f = (dE / length)[:, None] * d
    np.add.at(G, world.springs[:, 0], f)
    np.add.at(G, world.springs[:, 1], -f)
    if len(world.bends):
        gb, _ = _bend_grad_terms(P[world.bends], world.bend_stiffness)
        for a in range(3):
            np.add.at(G, world.bends[:, a], gb[:, a])
    G -= world.mass[:, None] * world.gravity[None, :]
    return G


def hessian(world: World, P: np.ndarray | None = None) -> np.ndarray:
    """Dense (3n, 3n) Hessian; bending blocks by central differences of the exact gradient."""
    P = world.nodes if P is None else P
    n = len(P)
    H = np.zeros((n, n, 3, 3))
    d, length, _, dE, d2E = _spring_terms(world, P)
    u = d / length[:, None]
    uu = u[:, :, None] * u[:, None, :]
    K = d2E[:, None, None] * uu + (dE / length)[:, None, None] * (np.eye(3) - uu)
    i, j = world.springs[:, 0], world.springs[:, 1]
    np.add.at(H, (i, i), K)
    np.add.at(H, (j, j), K)
    np.add.at(H, (i, j), -K)
    np.add.at(H, (j, i), -K)
    if len(world.bends):
        P3 = P[world.bends]
        h = 1e-7 * max(float(np.median(world.rest)), 1e-3)
        Hb = np.zeros((len(P3), 3, 3, 3, 3))  # term, node a, coord, node b, coord
        for b in range(3):
            for c in range(3):
                Pp = P3.copy()
                Pp[:, b, c] += h
                Pm = P3.copy()
                Pm[:, b, c] -= h
                gp, _ = _bend_grad_terms(Pp, world.bend_stiffness)
                gm, _ = _bend_grad_terms(Pm, world.bend_stiffness)
                Hb[:, :, :, b, c] = (gp - gm) / (2 * h)
        Hb = 0.5 * (Hb + Hb.transpose(0, 3, 4, 1, 2))
        for a in range(3):
            for b in range(3):
                np.add.at(H, (world.bends[:, a], world.bends[:, b]), Hb[:, a, :, b, :])
    return H.transpose(0, 2, 1, 3).reshape(3 * n, 3 * n)


# -- solver --------------------------------------------------------------


@dataclass
class SolveStats:
    iterations: int = 0
    residual: float = 0.0
    energies: list = field(default_factory=list)


def solve_equilibrium(
    world: World,
    manipulated_positions=None,
    g_tol: float = G_TOL,
    max_iter: int = MAX_ITER,
    stats: SolveStats | None = None,
) -> World:
    """Settle the free nodes with the manipulated nodes held fixed.

    ``manipulated_positions`` is an (m, 3) array in ``world.manipulated`` order;
    ``None`` keeps the current ones.
    """
    P = world.nodes.copy()
    man = world.manipulated
    if manipulated_positions is not None:
        mp = np.asarray(manipulated_positions, dtype=float).reshape(len(man), 3)
        if not np.all(np.isfinite(mp)):
            raise InputError("manipulated positions must be finite")
        P[man] = mp
    free = world.free
    fdof = (3 * free[:, None] + np.arange(3)[None, :]).reshape(-1)
    stats = stats if stats is not None else SolveStats()

    E = energy(world, P)
    stats.energies.append(E)
    for it in range(max_iter):
        g = gradient(world, P)[free].reshape(-1)
        res = float(np.max(np.abs(g))) if len(g) else 0.0
        stats.iterations, stats.residual = it, res
        if res <= g_tol:
            return replace(world, nodes=P)
        H = hessian(world, P)[np.ix_(fdof, fdof)]
        step = _damped_newton_step(H, g)
        if step is None:
            step = -g
        accepted = False
        for attempt in range(2):
            alpha = 1.0
            slope = float(g @ step)
            if slope >= 0:
                step, slope = -g, -float(g @ g)
            while alpha > 1e-12:
                Q = P.copy()
                Q[free] += alpha * step.reshape(-1, 3)
                E_new = energy(world, Q)
                if E_new <= E + 1e-4 * alpha * slope:
                    accepted = True
                    break
                # at round-off level, accept any step that does not raise the
                # energy measurably and still lowers the gradient
                if E_new <= E + 1e-14 * (1.0 + abs(E)) and np.max(
                    np.abs(gradient(world, Q)[free])
                ) < res:
                    accepted = True
                    E_new = min(E_new, E)
                    break
                alpha *= 0.5
            if accepted:
                break
            step = -g  # gradient-descent fallback
        if not accepted:
            break
        P, E = Q, E_new
        stats.energies.append(E)
    g = gradient(world, P)[free]
    res = float(np.max(np.abs(g))) if g.size else 0.0
    stats.residual = res
    if res <= g_tol:
        return replace(world, nodes=P)
    raise EquilibriumError(
        f"equilibrium not reached: residual {res:.3e} N after {stats.iterations} iterations",
        residual=res,
    )


def _damped_newton_step(H: np.ndarray, g: np.ndarray):
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        # indefinite (e.g. at a buckling saddle): flip negative curvature and
        # floor small eigenvalues so the step still descends along them
        lam, V = np.linalg.eigh(H)
        floor = 1e-8 * max(float(np.max(np.abs(lam))), 1e-12)
        lam = np.maximum(np.abs(lam), floor)
        return -(V @ ((V.T @ g) / lam))
    return -np.linalg.solve(L.T, np.linalg.solve(L, g))


def residual(world: World) -> float:
    g = gradient(world)[world.free]
    return float(np.max(np.abs(g))) if g.size else 0.0


# -- control interface -----------------------------------------------------


def move_actuated(world: World, delta) -> np.ndarray:
    """Manipulated-node positions after shifting the actuated coordinates by ``delta``."""
    delta = np.asarray(delta, dtype=float).reshape(-1)
    if delta.shape[0] != world.n_controls:
        raise InputError(f"command has {delta.shape[0]} entries, world has {world.n_controls} controls")
    P = world.nodes.copy()
    for (i, a), v in zip(world.actuated, delta):
        P[i, a] += v
    return P[world.manipulated]


def apply_control(world: World, delta, spec: FeatureSpec, g_tol: float = G_TOL):
    """Shift the actuated coordinates by ``delta`` (meters), re-settle, and
    return the new world with the realised feature change."""
    x0 = world.features(spec)
    new = solve_equilibrium(world, move_actuated(world, delta), g_tol=g_tol)
    return new, new.features(spec) - x0


def ground_truth_jacobian(world: World, spec: FeatureSpec, h: float = 1e-4, g_tol: float = 1e-11) -> np.ndarray:
    """Central-difference d x / d (actuated coordinates), shape (dim x, n_controls)."""
    if not h > 0:
        raise InputError("finite-difference step must be positive")
    cols = []
    for k in range(world.n_controls):
        e = np.zeros(world.n_controls)
        e[k] = h
        xp = solve_equilibrium(world, move_actuated(world, e), g_tol=g_tol).features(spec)
        xm = solve_equilibrium(world, move_actuated(world, -e), g_tol=g_tol).features(spec)
        cols.append((xp - xm) / (2 * h))
    return np.column_stack(cols)


# -- templates ------------------------------------------------------------


def _grid(rows, cols, spacing, plane):
    nodes = []
    for r in range(rows):
        for c in range(cols):
            if plane == "xy":
                nodes.append((c * spacing, r * spacing, 0.0))
            else:  # hanging in the xz plane, row 0 on top
                nodes.append((c * spacing, 0.0, -r * spacing))
    idx = np.arange(rows * cols).reshape(rows, cols)
    structural, shear, bends, faces = [], [], [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                structural.append((idx[r, c], idx[r, c + 1]))
            if r + 1 < rows:
                structural.append((idx[r, c], idx[r + 1, c]))
            if r + 1 < rows and c + 1 < cols:
                shear.append((idx[r, c], idx[r + 1, c + 1]))
                shear.append((idx[r, c + 1], idx[r + 1, c]))
                faces.append((idx[r, c], idx[r, c + 1], idx[r + 1, c + 1]))
                faces.append((idx[r, c], idx[r + 1, c + 1], idx[r + 1, c]))
            if c + 2 < cols:
                bends.append((idx[r, c], idx[r, c + 1], idx[r, c + 2]))
            if r + 2 < rows:
                bends.append((idx[r, c], idx[r + 1, c], idx[r + 2, c]))
    return np.array(nodes, dtype=float), structural, shear, bends, np.array(faces, dtype=int), idx


def build_rod(
    n: int = 20,
    spacing: float = 0.05,
    k_stretch: float = 500.0,
    k_bend: float = 0.02,
    mass: float = 0.01,
    gravity=GRAVITY,
    stiffening: float = 0.0,
    prestretch: float = 0.0,
    feedback=None,
    actuated=None,
) -> World:
    """Chain of ``n`` nodes along x, both end nodes manipulated.

    ``prestretch`` shortens the rest lengths so the initial chain is under
    tension; without gravity the chain then stays straight and its node
    positions are affine in the end positions.
    """
    if n < 3:
        raise ConfigError("a rod needs at least 3 nodes")
    if not prestretch > -1:
        raise ConfigError("prestretch must be greater than -1")
    nodes = np.zeros((n, 3))
    nodes[:, 0] = np.arange(n) * spacing
    springs = [(i, i + 1) for i in range(n - 1)]
    bends = [(i, i + 1, i + 2) for i in range(n - 2)]
    roles = np.full(n, UNINFORMATIVE)
    roles[[0, n - 1]] = MANIPULATED
    feedback = list(feedback) if feedback is not None else [n // 4, n - 1 - n // 4]
    roles[feedback] = FEEDBACK
    return World(
        nodes=nodes,
        springs=springs,
        rest=np.full(len(springs), spacing / (1.0 + prestretch)),
        stiffness=np.full(len(springs), k_stretch),
        roles=roles,
        bends=bends,
        bend_stiffness=np.full(len(bends), k_bend),
        gravity=gravity,
        mass=mass,
        stiffening=stiffening,
        actuated=_actuated(actuated),
        feedback_order=tuple(feedback),
    )


def _actuated(spec):
    if spec is None:
        return ()
    return tuple((int(i), int(a)) for i, a in spec)


def _build_grid(rows, cols, spacing, k_stretch, k_shear, k_bend, mass, gravity, stiffening,
                manipulated, plane, actuated) -> World:
    nodes, structural, shear, bends, faces, idx = _grid(rows, cols, spacing, plane)
    springs = structural + shear
    rest = [spacing] * len(structural) + [spacing * np.sqrt(2.0)] * len(shear)
    stiff = [k_stretch] * len(structural) + [k_shear] * len(shear)
    roles = np.full(rows * cols, FEEDBACK)
    roles[list(manipulated)] = MANIPULATED
    return World(
        nodes=nodes,
        springs=springs,
        rest=rest,
        stiffness=stiff,
        roles=roles,
        bends=bends,
        bend_stiffness=np.full(len(bends), k_bend),
        gravity=gravity,
        mass=mass,
        stiffening=stiffening,
        faces=faces,
        actuated=_actuated(actuated),
    )


def build_sheet(rows=4, cols=4, spacing=0.05, k_stretch=500.0, k_shear=200.0, k_bend=0.5,
                mass=0.005, gravity=GRAVITY, stiffening=0.0, actuated=None) -> World:
    """Stiff plate in the xy plane held at its four corners."""
    corners = [0, cols - 1, (rows - 1) * cols, rows * cols - 1]
    return _build_grid(rows, cols, spacing, k_stretch, k_shear, k_bend, mass, gravity,
                       stiffening, corners, "xy", actuated)


def build_cloth_grid(rows=6, cols=6, spacing=0.04, k_stretch=300.0, k_shear=100.0, k_bend=0.002,
                     mass=0.004, gravity=GRAVITY, stiffening=0.0, slack=0.2, actuated=None) -> World:
    """Limp cloth draped from its two top corners, held ``slack`` (fraction of
    the width) closer together than the cloth is wide.

    With the corners at full width the flat hanging state sits on a buckling
    threshold and its response to the corners is not differentiable; the slack
    and a small out-of-plane bow put it in a stable drape instead.
    """
    if not 0.0 <= slack < 1.0:
        raise ConfigError("slack must be in [0, 1)")
    world = _build_grid(rows, cols, spacing, k_stretch, k_shear, k_bend, mass, gravity,
                        stiffening, [0, cols - 1], "xz", actuated)
    nodes = world.nodes.copy()
    u = np.arange(rows * cols) % cols / max(cols - 1, 1)
    nodes[:, 0] = nodes[:, 0].min() + (1.0 - slack) * (nodes[:, 0] - nodes[:, 0].min()) + 0.5 * slack * (
        nodes[:, 0].max() - nodes[:, 0].min())
    nodes[world.free, 1] += 0.05 * spacing * np.sin(np.pi * u[world.free])
    return replace(world, nodes=nodes)


TEMPLATES = {"rod": build_rod, "sheet": build_sheet, "cloth_grid": build_cloth_grid}


def build_world(template: str, params: dict | None = None, settle: bool = True) -> World:
    """Instantiate a template; ``settle`` solves the initial equilibrium."""
    if template not in TEMPLATES:
        raise ConfigError(f"unknown world template {template!r}; expected one of {sorted(TEMPLATES)}")
    try:
        world = TEMPLATES[template](**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for template {template!r}: {exc}") from None
    return solve_equilibrium(world) if settle else world
