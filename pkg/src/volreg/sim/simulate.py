"""Implicit Euler dynamics with Rayleigh damping and a Jacobi-preconditioned CG solve."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, cg

from .fem import InversionError, deformation_gradients, lumped_mass, neohookean_energy, stiffness_matrix
from .scene import Scene, spring_energy, spring_forces, spring_hessian_blocks


class SolverError(RuntimeError):
    """The linear solve did not reach the requested tolerance."""


@dataclass
class SimConfig:
    dt: float = 0.05
    rayleigh_mass: float = 0.1
    rayleigh_stiffness: float = 0.1
    cg_rtol: float = 1e-8
    cg_maxiter: int = 1000
    max_steps: int = 400
    equilibrium_velocity: float = 1e-5
    equilibrium_steps: int = 5
    # halve the step this many times when a trial step inverts an element
    max_substep_depth: int = 4

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Trajectory:
    displacements: list = field(default_factory=list)
    times: list = field(default_factory=list)
    mean_velocity: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    converged: bool = False

    def __len__(self) -> int:
        return len(self.displacements)

    def mean_displacement(self) -> np.ndarray:
        return np.array([float(np.linalg.norm(u, axis=1).mean()) for u in self.displacements])


class _System:
    def __init__(self, scene: Scene, cfg: SimConfig):
        self.scene, self.cfg = scene, cfg
        mesh = scene.organ
        self.mass = lumped_mass(mesh, scene.material.density)
        self.m3 = np.repeat(self.mass, 3)
        free = np.ones(mesh.n_vertices, bool)
        free[scene.bcs.fixed] = False
        self.free_dofs = np.flatnonzero(np.repeat(free, 3))
        self.free_mask = free

    def external(self, u):
        s = self.scene
        x = s.organ.vertices + u
        return self.mass[:, None] * s.bcs.gravity[None] + spring_forces(x, s.bcs.springs)

    def stiffness(self, u):
        s = self.scene
        k = stiffness_matrix(s.organ, u, s.material)
        sp = s.bcs.springs
        if len(sp):
            blocks = spring_hessian_blocks(s.organ.vertices + u, sp)
            dof = 3 * sp.vertices[:, None] + np.arange(3)
            rows = np.repeat(dof, 3, axis=1).ravel()
            cols = np.tile(dof, (1, 3)).ravel()
            n = 3 * s.organ.n_vertices
            k = k + sparse.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        return k

    def energy(self, u, v) -> float:
        s = self.scene
        e_el, _ = neohookean_energy(s.organ, u, s.material)
        kin = 0.5 * float(np.sum(self.mass[:, None] * v * v))
        grav = -float(np.sum(self.mass[:, None] * (u @ s.bcs.gravity[:, None])))
        return e_el + kin + grav + spring_energy(s.organ.vertices + u, s.bcs.springs)

    def step(self, u, v, h):
        s, cfg = self.scene, self.cfg
        _, f_int = neohookean_energy(s.organ, u, s.material)
        f = (f_int + self.external(u)).ravel()
        k = self.stiffness(u)
        a = (1.0 + h * cfg.rayleigh_mass) * sparse.diags(self.m3) + (h * cfg.rayleigh_stiffness + h * h) * k
        fd = self.free_dofs
        a = a[fd][:, fd].tocsr()
        b = (self.m3 * v.ravel() + h * f)[fd]
        dinv = 1.0 / a.diagonal()
        pre = LinearOperator(a.shape, matvec=lambda r: dinv * r)
        x, info = cg(a, b, x0=v.ravel()[fd], rtol=cfg.cg_rtol, atol=0.0, maxiter=cfg.cg_maxiter, M=pre)
        if info != 0:
            raise SolverError(f"CG did not converge (info={info})")
        v_new = np.zeros(v.size)
        v_new[fd] = x
        v_new = v_new.reshape(v.shape)
        u_new = u + h * v_new
        J = np.linalg.det(deformation_gradients(s.organ, u_new))
        if not np.all(J > 0):
            raise InversionError(f"{int(np.sum(~(J > 0)))} inverted element(s)")
        return u_new, v_new

    def advance(self, u, v, h, depth=0):
        try:
            return self.step(u, v, h)
        except InversionError:
            if depth >= self.cfg.max_substep_depth:
                raise
            u, v = self.advance(u, v, 0.5 * h, depth + 1)
            return self.advance(u, v, 0.5 * h, depth + 1)


def simulate(scene: Scene, config: SimConfig | None = None, u0=None, v0=None, track_energy: bool = False) -> Trajectory:
    """Integrate until the mean vertex speed stays below threshold or ``max_steps``.

    The rest state is recorded as step 0.
    """
    cfg = config or SimConfig()
    sysm = _System(scene, cfg)
    n = scene.organ.n_vertices
    u = np.zeros((n, 3)) if u0 is None else np.array(u0, dtype=np.float64)
    v = np.zeros((n, 3)) if v0 is None else np.array(v0, dtype=np.float64)
    u[~sysm.free_mask] = 0.0
    v[~sysm.free_mask] = 0.0
    traj = Trajectory()

    def record(t):
        traj.displacements.append(u.copy())
        traj.times.append(t)
        traj.mean_velocity.append(float(np.linalg.norm(v, axis=1).mean()))
        if track_energy:
            traj.energy.append(sysm.energy(u, v))

    record(0.0)
    calm = 0
    for i in range(1, cfg.max_steps + 1):
        u, v = sysm.advance(u, v, cfg.dt)
        record(i * cfg.dt)
        calm = calm + 1 if traj.mean_velocity[-1] < cfg.equilibrium_velocity else 0
        if calm >= cfg.equilibrium_steps:
            traj.converged = True
            break
    return traj


def static_solve(scene: Scene, tol: float = 1e-8, max_iter: int = 30, cg_rtol: float = 1e-10,
                 cg_maxiter: int = 20000) -> np.ndarray:
    """Newton equilibrium under gravity and springs with backtracking.

    Linear systems use Jacobi-preconditioned CG so large refined meshes fit in memory.
    """
    sysm = _System(scene, SimConfig())
    n = scene.organ.n_vertices
    u = np.zeros((n, 3))
    fd = sysm.free_dofs

    def residual(x):
        _, f = neohookean_energy(scene.organ, x, scene.material)
        return (f + sysm.external(x)).ravel()[fd]

    r = residual(u)
    r0 = np.linalg.norm(r)
    for _ in range(max_iter):
        if np.linalg.norm(r) <= tol * max(r0, 1e-300):
            break
        k = sysm.stiffness(u)[fd][:, fd].tocsr()
        dinv = 1.0 / k.diagonal()
        pre = LinearOperator(k.shape, matvec=lambda z: dinv * z)
        du, info = cg(k, r, rtol=cg_rtol, atol=0.0, maxiter=cg_maxiter, M=pre)
        if info != 0:
            raise SolverError(f"CG did not converge in static solve (info={info})")
        step = 1.0
        while True:
            trial = u.copy().ravel()
            trial[fd] += step * du
            trial = trial.reshape(n, 3)
            try:
                rt = residual(trial)
            except InversionError:
                rt = None
            if (rt is not None and np.linalg.norm(rt) < np.linalg.norm(r)) or step < 1e-4:
                break
            step *= 0.5
        if rt is None:
            raise InversionError("static solve could not avoid inversion")
        u, r = trial, rt
    return u


def export_training_sample(scene: Scene, trajectory: Trajectory):
    """(rest vertices, deformed vertices, displacement) at the most deformed step."""
    if len(trajectory) == 0:
        raise ValueError("empty trajectory")
    md = trajectory.mean_displacement()
    if not np.all(np.isfinite(md)):
        raise ValueError("trajectory contains invalid steps")
    best = int(np.argmax(md))
    phi = trajectory.displacements[best]
    rest = scene.organ.vertices
    return rest.copy(), rest + phi, phi.copy(), best
