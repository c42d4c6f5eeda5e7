//! Smoothed spectral abscissa.
//!
//! For a fixed `ε > 0` the smoothed abscissa `α̃` is the unique root of
//!
//! ```text
//! g(α) = trace(C W(A − αI, x0) Cᵀ) = 1/ε,
//! ```
//!
//! where `W` is the Gramian of the shifted system. `g` is strictly decreasing
//! on `(α(A), ∞)`, so the root can be bracketed and then refined by a
//! safeguarded false-position search. One Schur factorization of `A` serves
//! every shift.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::ModeSet;
use crate::error::{Error, Result};
use crate::lyapunov::RealSchur;
use crate::scalar::Scalar;

/// Root-finder settings.
#[derive(Debug, Clone, Copy)]
pub struct SsaOptions {
    /// The search stops once the bracket is below `rel_tol·(1 + |α̃|)`.
    pub rel_tol: f64,
    /// Cap on bracket doublings when searching for the upper bound.
    pub max_doublings: usize,
}

impl Default for SsaOptions {
    fn default() -> Self {
        SsaOptions {
            rel_tol: 1e-10,
            max_doublings: 200,
        }
    }
}

impl SsaOptions {
    /// Shrink the bracket down to adjacent floating-point numbers.
    pub fn exact() -> Self {
        SsaOptions {
            rel_tol: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SsaResult<T: Scalar> {
    pub alpha_tilde: T,
    pub epsilon: T,
    /// Spectral abscissa `α(A)`.
    pub abscissa: T,
    /// `g(α̃)`, equal to `1/ε` up to the root tolerance.
    pub g_root: T,
    /// Solves `(A−α̃I)P + P(A−α̃I)ᵀ + x0x0ᵀ = 0`.
    pub p: DMatrix<T>,
    /// Solves `(A−α̃I)ᵀQ + Q(A−α̃I) + CᵀC = 0`.
    pub q: DMatrix<T>,
}

/// `g(α)` for any number of shifts, sharing one Schur factorization.
#[derive(Debug, Clone)]
pub struct ShiftedCost<T: Scalar> {
    schur: RealSchur<T>,
    /// `Uᵀ x0 x0ᵀ U`.
    f_hat: DMatrix<T>,
    /// `Uᵀ Cᵀ C U`.
    g_hat: DMatrix<T>,
    abscissa: T,
}

impl<T: Scalar> ShiftedCost<T> {
    pub fn new(a: &DMatrix<T>, c: &DMatrix<T>, x0: &DVector<T>) -> Result<Self> {
        let n = a.nrows();
        if x0.len() != n || c.ncols() != n {
            return Err(Error::Dimension(format!(
                "A is {n}x{}, C is {}x{}, x0 has length {}",
                a.ncols(),
                c.nrows(),
                c.ncols(),
                x0.len()
            )));
        }
        let schur = RealSchur::new(a)?;
        let ux = schur.u().transpose() * x0;
        let cu = c * schur.u();
        Ok(ShiftedCost {
            f_hat: &ux * ux.transpose(),
            g_hat: cu.transpose() * cu,
            abscissa: schur.spectral_abscissa(),
            schur,
        })
    }

    pub fn abscissa(&self) -> T {
        self.abscissa
    }

    /// `g(α)`; requires `α > α(A)`.
    pub fn eval(&self, shift: T) -> Result<T> {
        if shift <= self.abscissa {
            return Err(Error::UnstableMatrix((self.abscissa - shift).as_f64()));
        }
        let y = self.schur.solve_schur(shift, &self.f_hat)?;
        Ok(self.g_hat.dot(&y))
    }

    /// Finds `α̃` with `g(α̃) = 1/ε` and the Lyapunov pair `(P, Q)` at the root.
    pub fn solve(&self, epsilon: T, opts: &SsaOptions) -> Result<SsaResult<T>> {
        if !(epsilon > T::zero() && epsilon.is_finite()) {
            return Err(Error::Validation(format!("epsilon must be positive, got {epsilon}")));
        }
        let target = T::one() / epsilon;
        let alpha = self.abscissa;
        let scale = T::one() + alpha.abs();
        let tiny = T::default_epsilon() * T::default_epsilon();

        // Lower end: just right of α(A); move closer if g is still too small.
        let mut delta = T::lit(1e-6) * scale;
        let mut lo = alpha + delta;
        let mut g_lo = self.eval(lo)?;
        while g_lo <= target {
            delta *= T::lit(1e-2);
            let next = alpha + delta;
            if delta <= T::default_epsilon() * scale || next <= alpha {
                if g_lo <= tiny {
                    return Err(Error::DegenerateSystem(
                        "trace(C W Cᵀ) vanishes for every shift: x0 is not seen through C".into(),
                    ));
                }
                return Err(Error::DegenerateSystem(format!(
                    "g stays below 1/ε = {target} near the spectral abscissa (max {g_lo}); \
                     the dominant mode is not excited by x0 or not observed by C"
                )));
            }
            lo = next;
            g_lo = self.eval(lo)?;
        }

        let mut width = scale;
        let mut hi = lo + width;
        let mut doublings = 0;
        while self.eval(hi)? > target {
            doublings += 1;
            if doublings > opts.max_doublings {
                return Err(Error::NoConvergence(format!(
                    "upper bracket for the smoothed abscissa not found after {} doublings",
                    opts.max_doublings
                )));
            }
            lo = hi;
            width += width;
            hi = lo + width;
        }

        // Bracketed root search on h(α) = 1/g(α) − ε, which is increasing and
        // nearly affine close to the root. Illinois-weighted false position
        // steps, with a bisection whenever the bracket fails to halve.
        let rel_tol = T::lit(opts.rel_tol);
        let half = T::lit(0.5);
        let h = |x: T| -> Result<T> { Ok(T::one() / self.eval(x)? - epsilon) };
        let mut f_lo = T::one() / g_lo - epsilon;
        let mut f_hi = h(hi)?;
        let mut side = 0i8;
        let mut width_before = hi - lo;
        let mut root = (lo + hi) * half;
        for iter in 0..400 {
            let width = hi - lo;
            let mid = (lo + hi) * half;
            if mid <= lo || mid >= hi || width <= rel_tol * (T::one() + mid.abs()) {
                break;
            }
            let bisect = iter % 3 == 2 && width > width_before * half;
            if iter % 3 == 2 {
                width_before = width;
            }
            let mut x = if bisect || f_hi == f_lo {
                mid
            } else {
                hi - f_hi * (hi - lo) / (f_hi - f_lo)
            };
            if !(x > lo && x < hi) {
                x = mid;
            }
            let fx = h(x)?;
            root = x;
            if fx == T::zero() {
                break;
            }
            if fx < T::zero() {
                lo = x;
                f_lo = fx;
                if side == -1 {
                    f_hi *= half;
                }
                side = -1;
            } else {
                hi = x;
                f_hi = fx;
                if side == 1 {
                    f_lo *= half;
                }
                side = 1;
            }
            root = if f_lo.abs() < f_hi.abs() { lo } else { hi };
        }
        let y = self.schur.solve_schur(root, &self.f_hat)?;
        let z = self.schur.solve_schur_adjoint(root, &self.g_hat)?;
        let sym = |m: DMatrix<T>| crate::lyapunov::symmetrize(self.schur.from_schur_basis(&m));
        Ok(SsaResult {
            alpha_tilde: root,
            epsilon,
            abscissa: alpha,
            g_root: self.g_hat.dot(&y),
            p: sym(y),
            q: sym(z),
        })
    }
}

/// Smoothed spectral abscissa of `(A, C, x0)` at smoothing level `ε`.
pub fn smoothed_abscissa<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    epsilon: T,
) -> Result<SsaResult<T>> {
    smoothed_abscissa_with(a, c, x0, epsilon, &SsaOptions::default())
}

pub fn smoothed_abscissa_with<T: Scalar>(
    a: &DMatrix<T>,
    c: &DMatrix<T>,
    x0: &DVector<T>,
    epsilon: T,
    opts: &SsaOptions,
) -> Result<SsaResult<T>> {
    if x0.iter().all(|&v| v == T::zero()) {
        return Err(Error::DegenerateSystem("x0 is zero".into()));
    }
    ShiftedCost::new(a, c, x0)?.solve(epsilon, opts)
}

/// `∂α̃/∂d_i = ⟨A_i, QP⟩_F / (T · trace(QP))` for the mode set's fixed-`T`
/// averaging map.
pub fn ssa_gradient<T: Scalar>(sol: &SsaResult<T>, ms: &ModeSet<T>) -> Result<DVector<T>> {
    let qp = &sol.q * &sol.p;
    let tr = qp.trace();
    let floor = T::tol(1e-14) * sol.q.norm() * sol.p.norm();
    if !(tr > floor) {
        return Err(Error::ZeroTrace(tr.as_f64()));
    }
    let denom = tr * ms.cycle_time;
    Ok(DVector::from_iterator(
        ms.mode_count(),
        ms.modes.iter().map(|a| a.dot(&qp) / denom),
    ))
}
