"""Robust constraint blocks: Taylor lower bound, S-procedure and
sign-definiteness LMIs, penalty-CCP modulus constraints, realification.

Vectorisation is column-major throughout: ``vec(A)[m + M*n] = A[m, n]``,
which pairs with ``np.kron(w, e.conj())`` for ``e^H A w = vec(A)^T kron(w, e*)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .solver import LinearConstraint, SocConstraint


def vec(A: np.ndarray) -> np.ndarray:
    return np.asarray(A).reshape(-1, order="F")


def hermitian_error(H: np.ndarray) -> float:
    return float(np.abs(H - H.conj().T).max(initial=0.0))


@dataclass(frozen=True)
class TaylorCoefficients:
    J: np.ndarray
    j: np.ndarray
    j0: float

    def quadratic_form(self, dG: np.ndarray) -> float:
        """vec^T(dG) J vec(dG*) + 2 Re{j^T vec(dG*)} + j0."""
        x = vec(np.conj(dG))
        return float(np.real(np.vdot(x, self.J @ x)) + 2.0 * np.real(self.j @ x) + self.j0)


@dataclass
class SlackSet:
    IN: np.ndarray
    tau: np.ndarray
    lam: np.ndarray
    beta: np.ndarray | None = None
    d: np.ndarray | None = None

    def check(self, tol: float = 1e-9) -> None:
        for name in ("tau", "lam", "beta", "d"):
            v = getattr(self, name)
            if v is not None and np.min(v, initial=0.0) < -tol:
                raise ValueError(f"{name} has negative entries")
        if np.min(self.IN, initial=1.0) <= 0.0:
            raise ValueError("IN must be positive")


def taylor_coefficients(w, w_anchor, e, e_anchor, h, G_hat) -> TaylorCoefficients:
    """First-order lower bound of |(h^H + e^H (G_hat + dG)) w|^2 at (w_anchor, e_anchor).

    The bound is a quadratic in dG with coefficients (J, j, j0); it holds for
    every (w, e, dG) and is tight at the anchor.
    """
    w, w0 = np.asarray(w, dtype=complex), np.asarray(w_anchor, dtype=complex)
    e, e0 = np.asarray(e, dtype=complex), np.asarray(e_anchor, dtype=complex)
    h, G_hat = np.asarray(h, dtype=complex), np.asarray(G_hat, dtype=complex)
    M, N = G_hat.shape
    if w.shape != (N,) or w0.shape != (N,) or h.shape != (N,) or e.shape != (M,) or e0.shape != (M,):
        raise ValueError("dimension mismatch in taylor_coefficients")
    c = np.vdot(h, w) + e.conj() @ G_hat @ w
    c0 = np.vdot(h, w0) + e0.conj() @ G_hat @ w0
    a = np.kron(w, e.conj())
    a0 = np.kron(w0, e0.conj())
    J = np.outer(a, a0.conj()) + np.outer(a0, a.conj()) - np.outer(a0, a0.conj())
    j = c0 * a.conj() + c * a0.conj() - c0 * a0.conj()
    j0 = 2.0 * np.real(c0 * np.conj(c)) - abs(c0) ** 2
    return TaylorCoefficients(J=J, j=j, j0=float(j0))


def useful_signal_lmi(coeffs: TaylorCoefficients, IN: float, tau: float, xi: float, gamma: float,
                      beta: float | None = None) -> np.ndarray:
    """S-procedure block certifying  bound(dG) >= IN (2^gamma - 1) + beta  on ||dG||_F <= xi.

    Written in y = vec(dG), the bound reads y^H conj(J) y + 2 Re{j^H y} + j0,
    hence conj(J) in the upper-left corner.
    """
    if xi < 0:
        raise ValueError("xi must be >= 0")
    n = coeffs.J.shape[0]
    if coeffs.j.shape != (n,):
        raise ValueError("dimension mismatch between J and j")
    C = coeffs.j0 - IN * (2.0 ** gamma - 1.0) - tau * xi**2 - (0.0 if beta is None else beta)
    out = np.empty((n + 1, n + 1), dtype=complex)
    out[:n, :n] = tau * np.eye(n) + coeffs.J.conj()
    out[:n, n] = coeffs.j
    out[n, :n] = coeffs.j.conj()
    out[n, n] = C
    return out


def schur_interference_block(IN: float, sigma2: float, T: np.ndarray) -> np.ndarray:
    """[[IN - sigma2, T^H], [T, I]]; PSD iff IN - sigma2 >= ||T||^2."""
    T = np.atleast_1d(np.asarray(T, dtype=complex))
    n = T.size
    out = np.eye(n + 1, dtype=complex)
    out[0, 0] = IN - sigma2
    out[0, 1:] = T.conj()
    out[1:, 0] = T
    return out


def interference_lmi(W_minus_k, e, h, G_hat, IN: float, lam: float, xi: float, sigma2: float,
                     mode: str = "full") -> np.ndarray:
    """Interference-plus-noise bound robust to ||dG||_F <= xi.

    ``mode="full"`` is the (K+N)-square sign-definiteness block; ``"reduced"``
    keeps only the leading K-square part.
    """
    e = np.asarray(e, dtype=complex)
    h = np.asarray(h, dtype=complex)
    G_hat = np.asarray(G_hat, dtype=complex)
    M, N = G_hat.shape
    W = np.asarray(W_minus_k, dtype=complex)
    if W.ndim == 1:
        W = W[:, None]
    if e.shape != (M,) or h.shape != (N,) or W.shape[0] != N:
        raise ValueError("dimension mismatch in interference_lmi")
    T_hat = W.conj().T @ (h + G_hat.conj().T @ e)
    head = schur_interference_block(IN - lam * M, sigma2, T_hat)
    if mode == "reduced":
        return head
    if mode != "full":
        raise ValueError(f"unknown mode {mode!r}")
    k1 = W.shape[1]
    out = np.zeros((1 + k1 + N, 1 + k1 + N), dtype=complex)
    out[:1 + k1, :1 + k1] = head
    out[1:1 + k1, 1 + k1:] = xi * W.conj().T
    out[1 + k1:, 1:1 + k1] = xi * W
    out[1 + k1:, 1 + k1:] = lam * np.eye(N)
    return out


def realify_psd(H: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """[[Re H, -Im H], [Im H, Re H]] for Hermitian H."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("square matrix required")
    if hermitian_error(H) > tol * max(1.0, float(np.abs(H).max(initial=0.0))):
        raise ValueError("matrix is not Hermitian")
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


@dataclass
class LmiBlock:
    """Affine Hermitian matrix ``const + sum_v sum_i x_v[i] coeffs[v][i]`` (must be PSD)."""

    label: str
    const: np.ndarray
    coeffs: dict[str, np.ndarray]

    @property
    def dim(self) -> int:
        return self.const.shape[0]

    def evaluate(self, values: dict[str, np.ndarray]) -> np.ndarray:
        out = np.array(self.const, dtype=complex)
        for v, a in self.coeffs.items():
            out = out + np.tensordot(np.asarray(values[v], dtype=float), a, axes=1)
        return out

    def min_eig(self, values: dict[str, np.ndarray]) -> float:
        F = self.evaluate(values)
        return float(np.linalg.eigvalsh(0.5 * (F + F.conj().T))[0])

    def realified(self) -> LmiBlock:
        def re(X):
            return np.block([[X.real, -X.imag], [X.imag, X.real]])

        coeffs = {
            v: np.stack([re(a[i]) for i in range(a.shape[0])]) for v, a in self.coeffs.items()
        }
        return LmiBlock(self.label, re(np.asarray(self.const, dtype=complex)), coeffs)

    @classmethod
    def from_affine(cls, label: str, fn: Callable[[dict], np.ndarray], sizes: dict[str, int],
                    check: bool = True, seed: int = 0) -> LmiBlock:
        """Read off the affine map ``fn`` (real variables -> Hermitian matrix) by probing.

        With ``check`` the reconstruction is compared against ``fn`` at a
        random point; a mismatch means ``fn`` is not affine.
        """
        zero = {v: np.zeros(n) for v, n in sizes.items()}
        const = np.asarray(fn(zero), dtype=complex)
        coeffs = {}
        for v, n in sizes.items():
            slices = []
            for i in range(n):
                probe = dict(zero)
                x = np.zeros(n)
                x[i] = 1.0
                probe[v] = x
                slices.append(np.asarray(fn(probe), dtype=complex) - const)
            coeffs[v] = np.stack(slices)
        blk = cls(label, const, coeffs)
        if check:
            rng = np.random.default_rng(seed)
            pt = {v: rng.standard_normal(n) for v, n in sizes.items()}
            ref = np.asarray(fn(pt), dtype=complex)
            err = np.abs(blk.evaluate(pt) - ref).max(initial=0.0)
            if err > 1e-8 * max(1.0, np.abs(ref).max(initial=0.0)):
                raise ValueError(f"block {label!r} is not affine in its variables (err {err:.3g})")
        return blk

    def compress(self, basis: np.ndarray, tol: float = 1e-9) -> tuple[LmiBlock, LmiBlock | None]:
        """Exact reduction onto an invariant subspace.

        ``basis`` (n x r, orthonormal columns) must span a subspace that every
        coefficient leaves invariant, with each coefficient acting as a scalar
        multiple of the identity on the orthogonal complement.  Then
        ``F(x) >= 0`` iff ``Q^H F(x) Q >= 0`` and the complement scalar is >= 0.
        Raises ``ValueError`` when the structure does not hold.
        """
        Q = np.asarray(basis, dtype=complex)
        n, r = Q.shape
        P = Q @ Q.conj().T
        Pc = np.eye(n) - P
        mats = [("const", np.asarray(self.const, dtype=complex))]
        for v, a in self.coeffs.items():
            mats += [((v, i), a[i]) for i in range(a.shape[0])]
        reduced, scal = {}, {}
        for key, X in mats:
            scale = max(1.0, float(np.abs(X).max(initial=0.0)))
            if np.abs(Pc @ X @ Q).max(initial=0.0) > tol * scale:
                raise ValueError(f"{self.label!r}: subspace not invariant")
            comp = Pc @ X @ Pc
            alpha = float(np.trace(comp).real) / (n - r) if n > r else 0.0
            if n > r and np.abs(comp - alpha * Pc).max(initial=0.0) > tol * scale:
                raise ValueError(f"{self.label!r}: complement part is not a multiple of identity")
            reduced[key] = Q.conj().T @ X @ Q
            scal[key] = 0.0 if abs(alpha) <= tol * scale else alpha
        red = LmiBlock(
            self.label,
            reduced["const"],
            {v: np.stack([reduced[(v, i)] for i in range(a.shape[0])]) for v, a in self.coeffs.items()},
        )
        if n == r:
            return red, None
        comp_blk = LmiBlock(
            self.label + " (complement)",
            np.array([[scal["const"]]], dtype=complex),
            {v: np.array([[[scal[(v, i)]]] for i in range(a.shape[0])], dtype=complex) for v, a in self.coeffs.items()},
        )
        if not np.any(comp_blk.const) and all(not np.any(a) for a in comp_blk.coeffs.values()):
            return red, None
        return red, comp_blk


def ccp_modulus_constraints(e_anchor, e_var: str = "e", d_var: str = "d") -> list:
    """Penalty-CCP surrogate of |e_m| = 1 around ``e_anchor``.

    Returns M linear rows  d_m - 1 - |e0_m|^2 + 2 Re(e_m^* e0_m) >= 0  and M
    cones  |e_m|^2 <= 1 + d_{M+m}.  ``e`` is packed as [Re; Im] (2M reals),
    ``d`` has 2M entries and is expected to be registered nonnegative.
    """
    e0 = np.asarray(e_anchor, dtype=complex)
    M = e0.size
    if np.min(np.abs(e0)) <= 0.0:
        raise ValueError("anchor has a zero entry; linearisation degenerate")
    out = []
    for m in range(M):
        ce = np.zeros(2 * M)
        ce[m] = 2.0 * e0[m].real
        ce[M + m] = 2.0 * e0[m].imag
        cd = np.zeros(2 * M)
        cd[m] = 1.0
        out.append(LinearConstraint({e_var: ce, d_var: cd}, -1.0 - abs(e0[m]) ** 2, label=f"ccp linear {m}"))
    for m in range(M):
        # |e|^2 <= 1 + d  <=>  ||(2 Re e, 2 Im e, d)|| <= d + 2
        ae = np.zeros((4, 2 * M))
        ae[1, m] = 2.0
        ae[2, M + m] = 2.0
        ad = np.zeros((4, 2 * M))
        ad[0, M + m] = 1.0
        ad[3, M + m] = 1.0
        out.append(SocConstraint({e_var: ae, d_var: ad}, np.array([2.0, 0.0, 0.0, 0.0]), label=f"ccp cone {m}"))
    return out
