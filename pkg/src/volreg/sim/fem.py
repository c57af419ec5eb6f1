"""Compressible neo-Hookean elasticity on linear tetrahedra."""

from __future__ import annotations

import numpy as np
from scipy import sparse

from .material import Material
from .tetmesh import TetMesh


class InversionError(RuntimeError):
    """An element reached det(F) <= 0."""


def shape_gradients(mesh: TetMesh) -> np.ndarray:
    """(T, 4, 3): dF_ij / dx_{a,i} = G[a, j]."""
    g = mesh.dm_inv
    return np.concatenate([-g.sum(axis=1, keepdims=True), g], axis=1)


def deformation_gradients(mesh: TetMesh, displacement: np.ndarray) -> np.ndarray:
    # displacement form keeps F exactly the identity at rest
    u = displacement[mesh.tets]
    du = np.stack([u[:, 1] - u[:, 0], u[:, 2] - u[:, 0], u[:, 3] - u[:, 0]], axis=-1)
    return np.eye(3) + du @ mesh.dm_inv


def _check(J: np.ndarray):
    if not np.all(J > 0):
        raise InversionError(f"{int(np.sum(~(J > 0)))} inverted element(s)")


def energy_density(F: np.ndarray, material: Material) -> np.ndarray:
    mu, lam = material.mu, material.lam
    J = np.linalg.det(F)
    _check(J)
    lnj = np.log(J)
    i1 = np.einsum("tij,tij->t", F, F)
    return 0.5 * mu * (i1 - 3.0) - mu * lnj + 0.5 * lam * lnj ** 2


def first_piola(F: np.ndarray, material: Material) -> np.ndarray:
    mu, lam = material.mu, material.lam
    J = np.linalg.det(F)
    _check(J)
    fit = np.linalg.inv(F).transpose(0, 2, 1)
    return mu * F + (lam * np.log(J) - mu)[:, None, None] * fit


def neohookean_energy(mesh: TetMesh, displacement: np.ndarray, material: Material) -> tuple[float, np.ndarray]:
    """Total strain energy and internal forces (V, 3) = -dE/du."""
    displacement = np.asarray(displacement, dtype=np.float64).reshape(-1, 3)
    F = deformation_gradients(mesh, displacement)
    e = float(np.sum(mesh.rest_volumes * energy_density(F, material)))
    P = first_piola(F, material)
    G = shape_gradients(mesh)
    grad = mesh.rest_volumes[:, None, None] * np.einsum("tij,taj->tai", P, G)
    forces = np.zeros_like(displacement)
    np.add.at(forces, mesh.tets, -grad)
    return e, forces


def piola_tangent(F: np.ndarray, material: Material, project: bool = True) -> np.ndarray:
    """(T, 9, 9) dP/dF, optionally clamped to positive semidefinite.

    With A = F^-T = U S V^T the tangent, rotated into the singular frame,
    splits into a 3x3 block on the diagonal entries and three 2x2 blocks on
    the (a, b)/(b, a) pairs, so the projection needs no 9x9 eigensolve.
    """
    mu, lam = material.mu, material.lam
    J = np.linalg.det(F)
    _check(J)
    fit = np.linalg.inv(F).transpose(0, 2, 1)
    beta = mu - lam * np.log(J)
    if not project:
        f9 = fit.reshape(-1, 9)
        c = (mu * np.eye(9)[None] + lam * f9[:, :, None] * f9[:, None, :]
             + beta[:, None, None] * np.einsum("til,tkj->tijkl", fit, fit).reshape(-1, 9, 9))
        return 0.5 * (c + c.transpose(0, 2, 1))
    u, sv, vt = np.linalg.svd(fit)
    t = len(F)
    d = np.zeros((t, 9, 9))
    diag = [0, 4, 8]
    m = mu * np.eye(3)[None] + lam * sv[:, :, None] * sv[:, None, :] + (beta[:, None] * sv ** 2)[:, :, None] * np.eye(3)
    w, q = np.linalg.eigh(m)
    d[:, np.ix_(diag, diag)[0], np.ix_(diag, diag)[1]] = np.einsum("tij,tj,tkj->tik", q, np.maximum(w, 0.0), q)
    for a, b in ((0, 1), (0, 2), (1, 2)):
        off = beta * sv[:, a] * sv[:, b]
        lp, lm = np.maximum(mu + off, 0.0), np.maximum(mu - off, 0.0)
        i, j = 3 * a + b, 3 * b + a
        d[:, i, i] = d[:, j, j] = 0.5 * (lp + lm)
        d[:, i, j] = d[:, j, i] = 0.5 * (lp - lm)
    # row-major vec(U X V^T) = kron(U, V) vec(X)
    v = vt.transpose(0, 2, 1)
    wk = np.einsum("tia,tjb->tijab", u, v).reshape(t, 9, 9)
    c = wk @ d @ wk.transpose(0, 2, 1)
    return 0.5 * (c + c.transpose(0, 2, 1))


def piola_tangent_reference(F: np.ndarray, material: Material) -> np.ndarray:
    """Projected tangent by a dense 9x9 eigendecomposition (test oracle)."""
    c = piola_tangent(F, material, project=False)
    w, q = np.linalg.eigh(c)
    return np.einsum("tij,tj,tkj->tik", q, np.maximum(w, 0.0), q)


def element_stiffness(mesh: TetMesh, displacement: np.ndarray, material: Material, project: bool = True) -> np.ndarray:
    """(T, 12, 12) element tangent stiffness, DOF order (vertex, axis)."""
    F = deformation_gradients(mesh, displacement)
    c = piola_tangent(F, material, project)
    B = strain_operator(mesh)
    return mesh.rest_volumes[:, None, None] * (B.transpose(0, 2, 1) @ c @ B)


def strain_operator(mesh: TetMesh) -> np.ndarray:
    """(T, 9, 12) map from element DOFs (vertex, axis) to row-major F entries."""
    G = shape_gradients(mesh)
    B = np.zeros((len(G), 3, 3, 4, 3))
    for i in range(3):
        B[:, i, :, :, i] = G.transpose(0, 2, 1)
    return B.reshape(-1, 9, 12)


def _block_index(mesh: TetMesh):
    dof = (3 * mesh.tets[:, :, None] + np.arange(3)).reshape(-1, 12)
    rows = np.repeat(dof, 12, axis=1).ravel()
    cols = np.tile(dof, (1, 12)).ravel()
    return rows, cols


def stiffness_matrix(mesh: TetMesh, displacement: np.ndarray, material: Material, project: bool = True) -> sparse.csr_matrix:
    k = element_stiffness(mesh, displacement, material, project)
    rows, cols = _block_index(mesh)
    n = 3 * mesh.n_vertices
    return sparse.coo_matrix((k.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def lumped_mass(mesh: TetMesh, density: float) -> np.ndarray:
    """Per-vertex mass (V,)."""
    m = np.zeros(mesh.n_vertices)
    np.add.at(m, mesh.tets, np.repeat(density * mesh.rest_volumes[:, None] / 4.0, 4, axis=1))
    return m
