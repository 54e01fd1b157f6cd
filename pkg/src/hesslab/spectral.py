"""Empirical spectra, the generalized Marchenko-Pastur fixed point, closed-form
MP transforms, moment extraction, and the decoupling surrogates.

The fixed-point equation solved here is the one for A = (1/d) X Lambda X^T:

    s(z) = 1 / ( (1/gamma) * int t dnu(t) / (1 + t s(z)) - z ),   Im z > 0,

with nu the limiting eigenvalue law of Lambda. Scaling a matrix by c maps its
Stieltjes transform to s(z/c)/c, which converts between the 1/d and 1/N
normalizations (factor gamma).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .randkit import RngStream


class NonSymmetricInputError(ValueError):
    pass


class NonconvergenceError(RuntimeError):
    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class IllConditionedFitError(RuntimeError):
    pass


@dataclass
class EmpiricalSpectrum:
    eigenvalues: np.ndarray  # ascending
    source: str = ""


@dataclass
class MeasureRep:
    """Probability measure as weighted atoms or a bag of cached samples."""

    atoms: Optional[list] = None          # list of (location, weight)
    samples: Optional[np.ndarray] = None

    @classmethod
    def from_atoms(cls, atoms) -> "MeasureRep":
        w = np.array([a[1] for a in atoms], dtype=float)
        if w.min() < 0 or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("atom weights must be nonnegative and sum to 1")
        return cls(atoms=list(atoms))

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "MeasureRep":
        return cls(samples=np.asarray(samples, dtype=float))

    @classmethod
    def from_sampler(cls, draw: Callable[[np.random.Generator, int], np.ndarray],
                     n_cache: int, rng: RngStream) -> "MeasureRep":
        return cls(samples=np.asarray(draw(rng.generator(), n_cache), dtype=float))

    def stieltjes_integrand(self, s: complex) -> complex:
        """int t / (1 + t s) dnu(t)."""
        if self.atoms is not None:
            return sum(w * t / (1.0 + t * s) for t, w in self.atoms)
        t = self.samples
        return complex(np.mean(t / (1.0 + t * s)))


@dataclass
class StieltjesRecord:
    z: complex
    s: complex
    residual: float
    iterations: int

    def to_json_dict(self) -> dict:
        return {
            "z_re": self.z.real,
            "z_im": self.z.imag,
            "s_re": self.s.real,
            "s_im": self.s.imag,
            "residual": self.residual,
            "iterations": self.iterations,
        }


def empirical_spectrum(M: np.ndarray, source: str = "") -> EmpiricalSpectrum:
    """Eigenvalues of a symmetric matrix, ascending."""
    nrm = np.linalg.norm(M)
    if nrm > 0 and np.linalg.norm(M - M.T) > 1e-8 * nrm:
        raise NonSymmetricInputError("matrix is not symmetric within 1e-8 relative")
    return EmpiricalSpectrum(np.linalg.eigvalsh(0.5 * (M + M.T)), source)


def _gmp_solve_upper(gamma: float, nu: MeasureRep, z: complex, tol: float,
                     max_iter: int, damping: float):
    def rhs(s):
        return 1.0 / (nu.stieltjes_integrand(s) / gamma - z)

    s = -1.0 / z
    alpha = damping
    prev_step = np.inf
    for it in range(1, max_iter + 1):
        target = rhs(s)
        step = abs(target - s)
        s_new = (1.0 - alpha) * s + alpha * target
        if s_new.imag <= 0:
            s_new = complex(s_new.real, 1e-12)
        if step > prev_step:
            alpha = max(alpha * 0.5, 1e-3)
        prev_step = step
        if abs(s_new - s) < tol:
            s = s_new
            resid = abs(s - rhs(s))
            return s, resid, it
        s = s_new
    resid = abs(s - rhs(s))
    raise NonconvergenceError(
        f"fixed point stalled at residual {resid:.3e} after {max_iter} iterations",
        residual=resid, iterations=max_iter,
    )


def solve_generalized_mp(gamma: float, nu: MeasureRep, z: complex, tol: float = 1e-13,
                         max_iter: int = 10**5, damping: float = 0.5,
                         full_output: bool = False):
    """Damped fixed-point solve of the generalized MP equation at one z.

    Real-measure symmetry s(conj z) = conj s(z) extends the solve to the lower
    half plane; Im z = 0 is rejected.
    """
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if z.imag == 0:
        raise ValueError("z must have nonzero imaginary part")
    zz = z if z.imag > 0 else z.conjugate()
    s, resid, iters = _gmp_solve_upper(gamma, nu, zz, tol, max_iter, damping)
    if z.imag < 0:
        s = s.conjugate()
    if full_output:
        return StieltjesRecord(z=z, s=s, residual=resid, iterations=iters)
    return s


def mp_closed_form(y: float, sigma2: float, z: complex) -> complex:
    """Stieltjes transform of MP(y, sigma^2): root of y z s^2 sigma^2 + (z - sigma^2(1-y)) s + 1."""
    if y <= 0 or sigma2 <= 0:
        raise ValueError("y and sigma2 must be positive")
    if z.imag == 0:
        raise ValueError("z must have nonzero imaginary part")
    zz = z if z.imag > 0 else z.conjugate()
    a = y * zz * sigma2
    b = zz - sigma2 * (1.0 - y)
    disc = np.sqrt(b * b - 4.0 * a)
    roots = ((-b + disc) / (2 * a), (-b - disc) / (2 * a))
    s = roots[0] if roots[0].imag > 0 else roots[1]
    return s if z.imag > 0 else s.conjugate()


def moments_from_stieltjes(provider: Callable[[complex], complex], order: int = 2,
                           radii: Sequence[float] = (50.0, 100.0, 200.0),
                           resid_tol: float = 1e-4) -> list:
    """First moments of the measure behind s(z), from the 1/z expansion at z = iR.

    e(R) := -z^2 (s(z) + 1/z) = m1 + m2/z + m3/z^2 + ...; Richardson pairs over
    the radii remove the leading truncation terms. Raises when the two
    extrapolation levels disagree beyond resid_tol (relative).
    """
    if order < 1 or order > 3:
        raise ValueError("order must be 1..3")
    if len(radii) < 3:
        raise ValueError("need at least three radii")
    rs = sorted(radii)
    e = {}
    for R in rs:
        z = complex(0.0, R)
        e[R] = -z * z * (provider(z) + 1.0 / z)

    def richardson(vals):
        # vals at (R, 2R, 4R), O(1/R^2) error model
        l1 = (4.0 * vals[1] - vals[0]) / 3.0
        l2 = (4.0 * vals[2] - vals[1]) / 3.0
        return l2, abs(l2 - l1)

    re = [e[R].real for R in rs]
    im = [e[R].imag for R in rs]
    m1, r1 = richardson(re)
    out = [m1]
    resid = r1
    if order >= 2:
        m2_vals = [-R * v for R, v in zip(rs, im)]
        m2, r2 = richardson(m2_vals)
        out.append(m2)
        resid = max(resid, r2)
    if order >= 3:
        m3_vals = [R * R * (m1 - v) for R, v in zip(rs, re)]
        # one Richardson level on the last two radii
        m3 = (4.0 * m3_vals[2] - m3_vals[1]) / 3.0
        out.append(m3)
        resid = max(resid, abs(m3_vals[2] - m3_vals[1]))
    scale = max(1.0, max(abs(v) for v in out))
    if resid > resid_tol * scale:
        raise IllConditionedFitError(f"expansion fit residual {resid:.3e} exceeds tolerance")
    return out


def two_sample_ks(x: np.ndarray, y: np.ndarray) -> float:
    """Max gap between the two empirical CDFs."""
    xs = np.sort(x)
    ys = np.sort(y)
    allv = np.concatenate([xs, ys])
    allv.sort()
    fx = np.searchsorted(xs, allv, side="right") / xs.size
    fy = np.searchsorted(ys, allv, side="right") / ys.size
    return float(np.abs(fx - fy).max())


@dataclass
class DecouplingReport:
    kind: str
    d: int
    N: int
    reps: int
    ks: float                     # pooled over reps
    per_rep_ks: list = field(default_factory=list)

    def to_json_dict(self) -> dict:
        return {"kind": self.kind, "d": self.d, "N": self.N, "reps": self.reps,
                "ks": self.ks, "per_rep_ks": self.per_rep_ks}


def _mask_gram_spectrum(X: np.ndarray, mask: np.ndarray) -> np.ndarray:
    N = X.shape[1]
    return np.linalg.eigvalsh((X * mask) @ X.T / N)


def bernoulli_decoupling_check(d: int, N: int, which: str, rng: RngStream,
                               reps: int = 1) -> DecouplingReport:
    """ReLU-mask Gram matrix vs the i.i.d. Bernoulli-mask surrogate.

    which="ii" uses one first-layer row and ber(1/2); "ij" uses the product of
    two rows' indicators and ber(1/4). The surrogate shares the data matrix:
    only the mask law is replaced. Spectra are pooled over reps before the KS
    distance is taken.
    """
    if d < 50 or N < 50:
        raise ValueError("need d, N >= 50")
    if which not in ("ii", "ij"):
        raise ValueError("which must be ii or ij")
    true_pool, sur_pool, per_rep = [], [], []
    for r in range(reps):
        gen = rng.child(f"ber{which}/{r}").generator()
        X = gen.standard_normal((d, N))
        w1 = gen.standard_normal(d) / np.sqrt(d)
        w2 = gen.standard_normal(d) / np.sqrt(d)
        if which == "ii":
            mask = (w1 @ X > 0).astype(float)
            ber = (gen.random(N) < 0.5).astype(float)
        else:
            mask = ((w1 @ X > 0) & (w2 @ X > 0)).astype(float)
            ber = (gen.random(N) < 0.25).astype(float)
        ev_t = _mask_gram_spectrum(X, mask)
        ev_s = _mask_gram_spectrum(X, ber)
        per_rep.append(two_sample_ks(ev_t, ev_s))
        true_pool.append(ev_t)
        sur_pool.append(ev_s)
    ks = two_sample_ks(np.concatenate(true_pool), np.concatenate(sur_pool))
    return DecouplingReport(f"bernoulli_{which}", d, N, reps, ks, per_rep)


def lindeberg_decoupling_check(d: int, N: int, C: int, rng: RngStream,
                               reps: int = 1) -> DecouplingReport:
    """Linear-CE diagonal weight matrix vs the copy with weights from fresh data.

    The decoupled matrix keeps the outer X and recomputes the softmax weights
    on an independent copy; spectra are pooled over reps.
    """
    if d < 50 or N < 50:
        raise ValueError("need d, N >= 50")
    if C < 2:
        raise ValueError("need C >= 2")
    true_pool, sur_pool, per_rep = [], [], []
    for r in range(reps):
        gen = rng.child(f"lind/{r}").generator()
        X = gen.standard_normal((d, N))
        V = gen.standard_normal((C, d)) / np.sqrt(d)
        Xt = gen.standard_normal((d, N))

        def weights(Xm):
            L = V @ Xm
            L -= L.max(axis=0, keepdims=True)
            P = np.exp(L)
            P /= P.sum(axis=0, keepdims=True)
            return P[0] * (1.0 - P[0])

        ev_t = _mask_gram_spectrum(X, weights(X))
        ev_s = _mask_gram_spectrum(X, weights(Xt))
        per_rep.append(two_sample_ks(ev_t, ev_s))
        true_pool.append(ev_t)
        sur_pool.append(ev_s)
    ks = two_sample_ks(np.concatenate(true_pool), np.concatenate(sur_pool))
    return DecouplingReport("lindeberg", d, N, reps, ks, per_rep)


def h1_measure(C: int, n_cache: int, rng: RngStream) -> MeasureRep:
    """Sampler-backed law of the softmax diagonal weight p_1 (1 - p_1), z ~ N(0, I_C)."""

    def draw(gen: np.random.Generator, n: int) -> np.ndarray:
        out = np.empty(n)
        chunk = max(1, 4_000_000 // C)
        pos = 0
        while pos < n:
            k = min(chunk, n - pos)
            z = gen.standard_normal((k, C))
            z -= z.max(axis=1, keepdims=True)
            e = np.exp(z)
            p = e[:, 0] / e.sum(axis=1)
            out[pos : pos + k] = p * (1.0 - p)
            pos += k
        return out

    return MeasureRep.from_sampler(draw, n_cache, rng)
