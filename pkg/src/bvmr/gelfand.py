"""Finite-dimensional Gelfand triple V -> H -> V'.

A coefficient vector ``v`` of length ``n`` is read in three ways: as an
element of V (norm from ``gram_V``), as an element of H (norm from
``gram_H``) and as the action vector ``w_i = <w, e_i>`` of a functional on
V.  The H inner product is ``(u | v)_H = v^* gram_H u``.
"""

from functools import cached_property

import numpy as np
import scipy.linalg

from ._validation import as_square, as_vector, is_hermitian


class GelfandSpace:
    """Triple of coordinate spaces defined by two Hermitian positive definite Gram matrices.

    Parameters
    ----------
    gram_H : (n, n) array_like
        Gram matrix of the pivot space H.
    gram_V : (n, n) array_like
        Gram matrix of V.

    Raises
    ------
    ValueError
        If a Gram matrix is not square, not Hermitian to 1e-12 relative,
        not positive definite, or if the sizes differ.
    """

    def __init__(self, gram_H, gram_V):
        gram_H = as_square(gram_H, name="gram_H")
        gram_V = as_square(gram_V, n=gram_H.shape[0], name="gram_V")
        for name, g in (("gram_H", gram_H), ("gram_V", gram_V)):
            if not is_hermitian(g):
                raise ValueError(f"{name} is not Hermitian")
        self.gram_H = gram_H
        self.gram_V = gram_V
        self._chol_H = self._factor(gram_H, "gram_H")
        self._chol_V = self._factor(gram_V, "gram_V")
        self.gram_H.setflags(write=False)
        self.gram_V.setflags(write=False)

    @staticmethod
    def _factor(g, name):
        try:
            return scipy.linalg.cho_factor(g, lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"{name} is not positive definite") from exc

    @classmethod
    def identity(cls, n=1):
        return cls(np.eye(n), np.eye(n))

    @property
    def dim(self):
        return self.gram_H.shape[0]

    @property
    def is_complex(self):
        return np.iscomplexobj(self.gram_H) or np.iscomplexobj(self.gram_V)

    def __repr__(self):
        return f"GelfandSpace(dim={self.dim})"

    # -- norms ---------------------------------------------------------
    def _vec(self, v):
        return as_vector(v, self.dim, name="coefficient vector")

    def inner_H(self, u, v):
        u, v = self._vec(u), self._vec(v)
        return np.vdot(v, self.gram_H @ u)

    def inner_V(self, u, v):
        u, v = self._vec(u), self._vec(v)
        return np.vdot(v, self.gram_V @ u)

    def norm_H(self, v):
        v = self._vec(v)
        return float(np.sqrt(max(np.vdot(v, self.gram_H @ v).real, 0.0)))

    def norm_V(self, v):
        v = self._vec(v)
        return float(np.sqrt(max(np.vdot(v, self.gram_V @ v).real, 0.0)))

    def dual_norm_Vprime(self, w):
        """Operator norm on V of the functional with action vector ``w``."""
        w = self._vec(w)
        y = scipy.linalg.solve_triangular(self._chol_V[0], w, lower=True)
        return float(np.linalg.norm(y))

    def h_representative(self, w):
        """Solve ``gram_H z = w``: the element z of H with ``(z | v)_H = <w, v>``."""
        w = self._vec(w)
        return scipy.linalg.cho_solve(self._chol_H, w)

    def solve_H(self, rhs):
        """``gram_H^{-1} rhs`` for a vector or a matrix right-hand side."""
        return scipy.linalg.cho_solve(self._chol_H, rhs)

    # -- batched versions used by the trajectory code -------------------
    def norms_H(self, rows):
        rows = np.atleast_2d(rows)
        return np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", rows.conj(), self.gram_H, rows).real, 0.0))

    def norms_V(self, rows):
        rows = np.atleast_2d(rows)
        return np.sqrt(np.maximum(np.einsum("ki,ij,kj->k", rows.conj(), self.gram_V, rows).real, 0.0))

    def dual_norms_Vprime(self, rows):
        rows = np.atleast_2d(rows)
        y = scipy.linalg.solve_triangular(self._chol_V[0], rows.T, lower=True)
        return np.linalg.norm(y, axis=0)

    # -- V geometry ----------------------------------------------------
    @cached_property
    def _whitener(self):
        # L^{-1} with gram_V = L L^*; L^{-1} S L^{-*} is unitarily similar
        # to gram_V^{-1/2} S gram_V^{-1/2}.
        L = np.tril(self._chol_V[0])
        return scipy.linalg.solve_triangular(L, np.eye(self.dim), lower=True)

    def v_geometry(self, S):
        """Matrix of the form ``S`` in a V-orthonormal basis."""
        W = self._whitener
        return W @ as_square(S, self.dim) @ W.conj().T

    def v_operator_norm(self, S):
        """sup |v^* S u| / (|u|_V |v|_V): largest singular value in V geometry."""
        return float(np.linalg.norm(self.v_geometry(S), 2))

    def embedding_constant(self):
        """Sharp constant c_H with |v|_H <= c_H |v|_V, i.e. sqrt of the largest
        generalized eigenvalue of ``gram_H x = lambda gram_V x``."""
        return float(np.sqrt(self._embedding_eig[0][-1]))

    def embedding_maximizer(self):
        """A coefficient vector attaining the embedding constant."""
        return self._embedding_eig[1][:, -1]

    @cached_property
    def _embedding_eig(self):
        try:
            return scipy.linalg.eigh(self.gram_H, self.gram_V)
        except np.linalg.LinAlgError as exc:
            raise ValueError("generalized eigenproblem failed") from exc


def norm_H(space, v):
    return space.norm_H(v)


def norm_V(space, v):
    return space.norm_V(v)


def dual_norm_Vprime(space, w):
    return space.dual_norm_Vprime(w)


def embedding_constant(space):
    return space.embedding_constant()


def h_representative(space, w):
    return space.h_representative(w)
