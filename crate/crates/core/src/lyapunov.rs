//! Dense Lyapunov machinery: real Schur form, spectral abscissa, the
//! Bartels–Stewart solver, controllability Gramians and the congestion cost.
//!
//! A [`RealSchur`] factorization `A = U S Uᵀ` is computed once and then reused
//! for every shifted equation `(A − sI) X + X (A − sI)ᵀ + D = 0`: the shift
//! only touches the diagonal of the quasi-triangular factor `S`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative residual tolerance accepted from the solver.
pub const RESIDUAL_TOL: f64 = 1e-9;

/// Real Schur factorization `A = U S Uᵀ` with `S` upper quasi-triangular.
#[derive(Debug, Clone)]
pub struct RealSchur<T: Scalar> {
    u: DMatrix<T>,
    s: DMatrix<T>,
    /// `Sᵀ`, kept for contiguous row access.
    st: DMatrix<T>,
    /// Diagonal blocks as `(start, size)` with size 1 or 2.
    blocks: Vec<(usize, usize)>,
    /// `J Sᵀ J`, its transpose and blocks, for the adjoint equation.
    s_rev: DMatrix<T>,
    st_rev: DMatrix<T>,
    blocks_rev: Vec<(usize, usize)>,
}

impl<T: Scalar> RealSchur<T> {
    pub fn new(a: &DMatrix<T>) -> Result<Self> {
        let n = a.nrows();
        if n != a.ncols() {
            return Err(Error::Dimension(format!(
                "Schur factorization needs a square matrix, got {}x{}",
                n,
                a.ncols()
            )));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(Error::EigenFailure(n));
        }
        if n == 0 {
            return Ok(Self::from_parts(DMatrix::zeros(0, 0), DMatrix::zeros(0, 0), Vec::new()));
        }
        let (u, mut s) = T::real_schur(a).ok_or(Error::EigenFailure(n))?;

        // Clean up the quasi-triangular structure and locate the 2x2 bumps.
        for j in 0..n {
            for i in (j + 2)..n {
                s[(i, j)] = T::zero();
            }
        }
        let eps = T::default_epsilon();
        for i in 0..n.saturating_sub(1) {
            let scale = s[(i, i)].abs() + s[(i + 1, i + 1)].abs();
            if s[(i + 1, i)].abs() <= eps * scale {
                s[(i + 1, i)] = T::zero();
            }
        }
        let mut blocks = Vec::with_capacity(n);
        let mut i = 0;
        while i < n {
            if i + 1 < n && s[(i + 1, i)] != T::zero() {
                if i + 2 < n && s[(i + 2, i + 1)] != T::zero() {
                    return Err(Error::EigenFailure(n));
                }
                blocks.push((i, 2));
                i += 2;
            } else {
                blocks.push((i, 1));
                i += 1;
            }
        }
        Ok(Self::from_parts(u, s, blocks))
    }

    fn from_parts(u: DMatrix<T>, s: DMatrix<T>, blocks: Vec<(usize, usize)>) -> Self {
        let n = s.nrows();
        let st = s.transpose();
        let s_rev = reversed(&st);
        let st_rev = s_rev.transpose();
        let blocks_rev = blocks.iter().rev().map(|&(k, size)| (n - k - size, size)).collect();
        RealSchur {
            u,
            s,
            st,
            blocks,
            s_rev,
            st_rev,
            blocks_rev,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    /// Orthogonal factor `U`.
    pub fn u(&self) -> &DMatrix<T> {
        &self.u
    }

    /// Quasi-triangular factor `S`.
    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }

    /// Eigenvalues as `(re, im)` pairs, read off the diagonal blocks.
    pub fn eigenvalues(&self) -> Vec<(T, T)> {
        let mut out = Vec::with_capacity(self.dim());
        for &(k, size) in &self.blocks {
            if size == 1 {
                out.push((self.s[(k, k)], T::zero()));
                continue;
            }
            let (a, b) = (self.s[(k, k)], self.s[(k, k + 1)]);
            let (c, d) = (self.s[(k + 1, k)], self.s[(k + 1, k + 1)]);
            let half = T::lit(0.5);
            let mean = (a + d) * half;
            let diff = (a - d) * half;
            let disc = diff * diff + b * c;
            if disc >= T::zero() {
                let r = disc.sqrt();
                out.push((mean + r, T::zero()));
                out.push((mean - r, T::zero()));
            } else {
                let im = (-disc).sqrt();
                out.push((mean, im));
                out.push((mean, -im));
            }
        }
        out
    }

    /// Largest real part of the spectrum.
    pub fn spectral_abscissa(&self) -> T {
        self.eigenvalues()
            .into_iter()
            .map(|(re, _)| re)
            .fold(T::infinity().neg(), |acc, x| acc.max(x))
    }

    /// `Uᵀ M U`.
    pub fn to_schur_basis(&self, m: &DMatrix<T>) -> DMatrix<T> {
        self.u.transpose() * m * &self.u
    }

    /// `U Y Uᵀ`.
    pub fn from_schur_basis(&self, y: &DMatrix<T>) -> DMatrix<T> {
        &self.u * y * self.u.transpose()
    }

    /// Solves `(S − sI) Y + Y (S − sI)ᵀ + F = 0` in Schur coordinates.
    ///
    /// `F` is taken to be symmetric (its symmetric part is used), so `Y` is
    /// symmetric as well and only the upper block triangle is eliminated.
    pub fn solve_schur(&self, shift: T, f: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_square(f, self.dim())?;
        solve_quasi_upper(&self.s, &self.st, &self.blocks, shift, f)
    }

    /// Solves `(S − sI)ᵀ Y + Y (S − sI) + F = 0` in Schur coordinates.
    ///
    /// With the index reversal `J`, `J Sᵀ J` is again upper quasi-triangular,
    /// so this reduces to [`Self::solve_schur`]'s kernel.
    pub fn solve_schur_adjoint(&self, shift: T, f: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_square(f, self.dim())?;
        let y = solve_quasi_upper(&self.s_rev, &self.st_rev, &self.blocks_rev, shift, &reversed(f))?;
        Ok(reversed(&y))
    }

    /// Solves `(A − sI) X + X (A − sI)ᵀ + D = 0`.
    pub fn solve_lyapunov(&self, shift: T, d: &DMatrix<T>) -> Result<DMatrix<T>> {
        let y = self.solve_schur(shift, &self.to_schur_basis(d))?;
        Ok(symmetrize(self.from_schur_basis(&y)))
    }

    /// Solves `(A − sI)ᵀ X + X (A − sI) + D = 0`.
    pub fn solve_lyapunov_adjoint(&self, shift: T, d: &DMatrix<T>) -> Result<DMatrix<T>> {
        let y = self.solve_schur_adjoint(shift, &self.to_schur_basis(d))?;
        Ok(symmetrize(self.from_schur_basis(&y)))
    }
}

fn check_square<T: Scalar>(m: &DMatrix<T>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "expected {n}x{n} matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `J M J` with `J` the index-reversal permutation.
fn reversed<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let (r, c) = m.shape();
    DMatrix::from_fn(r, c, |i, j| m[(r - 1 - i, c - 1 - j)])
}

/// Bartels–Stewart back substitution for `(S − sI) Y + Y (S − sI)ᵀ + F = 0`
/// with `S` upper quasi-triangular and `st = Sᵀ`.
///
/// Block rows are processed bottom-up and block columns right-to-left over
/// the upper triangle; every finished block is mirrored so that all inner
/// products below run over contiguous columns.
fn solve_quasi_upper<T: Scalar>(
    s: &DMatrix<T>,
    st: &DMatrix<T>,
    blocks: &[(usize, usize)],
    shift: T,
    f: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = s.nrows();
    let half = T::lit(0.5);
    let mut y = DMatrix::<T>::zeros(n, n);
    for (bi, &(ri, p)) in blocks.iter().enumerate().rev() {
        let ei = ri + p;
        for &(cj, q) in blocks[bi..].iter().rev() {
            let ej = cj + q;
            let mut rhs = [[T::zero(); 2]; 2];
            for a in 0..p {
                for b in 0..q {
                    let (r, c) = (ri + a, cj + b);
                    let mut acc = -(f[(r, c)] + f[(c, r)]) * half;
                    if ei < n {
                        let srow = st.column(r);
                        let ycol = y.column(c);
                        acc -= srow.rows_range(ei..).dot(&ycol.rows_range(ei..));
                    }
                    if ej < n {
                        let yrow = y.column(r);
                        let scol = st.column(c);
                        acc -= yrow.rows_range(ej..).dot(&scol.rows_range(ej..));
                    }
                    rhs[a][b] = acc;
                }
            }
            let l = small_block(s, ri, p);
            let sjj = small_block(s, cj, q);
            let r = [[sjj[0][0], sjj[1][0]], [sjj[0][1], sjj[1][1]]];
            let sol = solve_small_sylvester(&l, p, &r, q, shift, &rhs)?;
            for a in 0..p {
                for b in 0..q {
                    y[(ri + a, cj + b)] = sol[a][b];
                    y[(cj + b, ri + a)] = sol[a][b];
                }
            }
        }
    }
    Ok(y)
}

fn small_block<T: Scalar>(s: &DMatrix<T>, start: usize, size: usize) -> [[T; 2]; 2] {
    let mut out = [[T::zero(); 2]; 2];
    for a in 0..size {
        for b in 0..size {
            out[a][b] = s[(start + a, start + b)];
        }
    }
    out
}

/// Solves `(L − sI) Y + Y (R − sI) = C` for blocks of size at most 2 via the
/// Kronecker form `(I ⊗ L + Rᵀ ⊗ I − 2sI) vec(Y) = vec(C)`.
fn solve_small_sylvester<T: Scalar>(
    l: &[[T; 2]; 2],
    p: usize,
    r: &[[T; 2]; 2],
    q: usize,
    shift: T,
    c: &[[T; 2]; 2],
) -> Result<[[T; 2]; 2]> {
    let singular = || {
        Error::SolveFailure("λ_i + λ_j vanishes at the requested shift (singular Sylvester block)".into())
    };
    let two_s = shift + shift;
    if p == 1 && q == 1 {
        let denom = l[0][0] + r[0][0] - two_s;
        if denom == T::zero() {
            return Err(singular());
        }
        let mut out = [[T::zero(); 2]; 2];
        out[0][0] = c[0][0] / denom;
        return Ok(out);
    }
    // unknown (a, b) lives at index b * p + a
    let dim = p * q;
    let mut k = [[T::zero(); 5]; 4];
    for b in 0..q {
        for a in 0..p {
            let row = b * p + a;
            for a2 in 0..p {
                k[row][b * p + a2] += l[a][a2];
            }
            for b2 in 0..q {
                k[row][b2 * p + a] += r[b2][b];
            }
            k[row][row] -= two_s;
            k[row][dim] = c[a][b];
        }
    }
    // Gaussian elimination with partial pivoting on the augmented system.
    for col in 0..dim {
        let piv = (col..dim)
            .max_by(|&i, &j| k[i][col].abs().partial_cmp(&k[j][col].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        if !(k[piv][col].abs() > T::zero()) {
            return Err(singular());
        }
        k.swap(col, piv);
        for row in (col + 1)..dim {
            let factor = k[row][col] / k[col][col];
            for j in col..=dim {
                let v = k[col][j];
                k[row][j] -= factor * v;
            }
        }
    }
    let mut x = [T::zero(); 4];
    for row in (0..dim).rev() {
        let mut acc = k[row][dim];
        for j in (row + 1)..dim {
            acc -= k[row][j] * x[j];
        }
        x[row] = acc / k[row][row];
    }
    let mut out = [[T::zero(); 2]; 2];
    for b in 0..q {
        for a in 0..p {
            out[a][b] = x[b * p + a];
        }
    }
    Ok(out)
}

pub(crate) fn symmetrize<T: Scalar>(m: DMatrix<T>) -> DMatrix<T> {
    let half = T::lit(0.5);
    (&m + m.transpose()) * half
}

/// Solution of `Λ X + X Λᵀ + D = 0`.
#[derive(Debug, Clone)]
pub struct LyapunovSolution<T: Scalar> {
    pub x: DMatrix<T>,
    /// `‖Λ X + X Λᵀ + D‖_F`.
    pub residual_norm: T,
}

/// `‖Λ X + X Λᵀ + D‖_F`.
pub fn lyapunov_residual<T: Scalar>(lambda: &DMatrix<T>, x: &DMatrix<T>, d: &DMatrix<T>) -> T {
    let lx = lambda * x;
    (&lx + lx.transpose() + d).norm()
}

/// Largest real part of the eigenvalues of `a`.
pub fn spectral_abscissa<T: Scalar>(a: &DMatrix<T>) -> Result<T> {
    Ok(RealSchur::new(a)?.spectral_abscissa())
}

/// Solves `Λ X + X Λᵀ + D = 0` for Hurwitz `Λ`.
pub fn solve_lyapunov<T: Scalar>(lambda: &DMatrix<T>, d: &DMatrix<T>) -> Result<LyapunovSolution<T>> {
    let schur = RealSchur::new(lambda)?;
    let alpha = schur.spectral_abscissa();
    // Eigenvalues within rounding noise of the imaginary axis count as unstable.
    let margin = T::lit(1e3) * T::default_epsilon() * lambda.norm();
    if alpha >= -margin {
        return Err(Error::UnstableMatrix(alpha.as_f64()));
    }
    let x = schur.solve_lyapunov(T::zero(), d)?;
    let residual_norm = lyapunov_residual(lambda, &x, d);
    let scale = T::one() + d.norm() + T::lit(2.0) * lambda.norm() * x.norm();
    if !residual_norm.is_finite() || residual_norm > T::tol(RESIDUAL_TOL) * scale {
        return Err(Error::SolveFailure(format!(
            "residual {:.3e} exceeds tolerance",
            residual_norm.as_f64()
        )));
    }
    Ok(LyapunovSolution { x, residual_norm })
}

/// Controllability Gramian `W(A, x0) = ∫₀^∞ e^{At} x0 x0ᵀ e^{Aᵀt} dt`.
pub fn gramian<T: Scalar>(a: &DMatrix<T>, x0: &DVector<T>) -> Result<DMatrix<T>> {
    if x0.len() != a.nrows() {
        return Err(Error::Dimension(format!(
            "x0 has length {}, A is {}x{}",
            x0.len(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(solve_lyapunov(a, &(x0 * x0.transpose()))?.x)
}

/// Congestion cost `trace(C W(A, x0) Cᵀ) = ∫₀^∞ ‖C e^{At} x0‖² dt`.
///
/// Returns `+∞` when `A` is not Hurwitz (or the solve breaks down).
pub fn congestion_cost<T: Scalar>(a: &DMatrix<T>, c: &DMatrix<T>, x0: &DVector<T>) -> T {
    match gramian(a, x0) {
        Ok(w) if c.ncols() == w.nrows() => (c * w * c.transpose()).trace(),
        _ => T::infinity(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random matrix shifted so that its spectral abscissa is about -margin.
    fn random_stable(rng: &mut ChaCha8Rng, n: usize, margin: f64) -> DMatrix<f64> {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let alpha = spectral_abscissa(&m).unwrap();
        m - DMatrix::identity(n, n) * (alpha + margin)
    }

    #[test]
    fn abscissa_of_diagonal() {
        assert_eq!(spectral_abscissa(&dmatrix![-1.0, 0.0; 0.0, -2.0]).unwrap(), -1.0);
    }

    #[test]
    fn abscissa_of_rotation_is_zero() {
        let a: f64 = spectral_abscissa(&dmatrix![0.0, 1.0; -1.0, 0.0]).unwrap();
        assert!(a.abs() < 1e-15, "{a}");
    }

    #[test]
    fn abscissa_matches_nalgebra_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..12 {
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let ours = spectral_abscissa(&m).unwrap();
            let theirs = m
                .complex_eigenvalues()
                .iter()
                .map(|z| z.re)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((ours - theirs).abs() < 1e-10, "n={n}: {ours} vs {theirs}");
        }
    }

    #[test]
    fn scalar_equation() {
        let sol = solve_lyapunov::<f64>(&dmatrix![-1.0], &dmatrix![2.0]).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn negative_identity_halves_rhs() {
        let m = dmatrix![1.0, 2.0, 0.5; -1.0, 0.0, 3.0; 0.25, 4.0, -2.0];
        let d = &m + m.transpose();
        let sol = solve_lyapunov(&(-DMatrix::<f64>::identity(3, 3)), &d).unwrap();
        assert!((sol.x - d * 0.5).norm() < 1e-14);
    }

    #[test]
    fn unstable_matrix_rejected() {
        let err = solve_lyapunov(&dmatrix![0.1, 0.0; 0.0, -1.0], &DMatrix::identity(2, 2));
        assert!(matches!(err, Err(Error::UnstableMatrix(_))));
        let err = solve_lyapunov(&dmatrix![0.0, 1.0; -1.0, 0.0], &DMatrix::identity(2, 2));
        assert!(matches!(err, Err(Error::UnstableMatrix(_))));
    }

    #[test]
    fn residual_bound_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..1000 {
            let n = 1 + trial % 12;
            let margin = rng.random_range(0.05..2.0);
            let lambda = random_stable(&mut rng, n, margin);
            let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let d = &m + m.transpose();
            let sol = solve_lyapunov(&lambda, &d).unwrap();
            let bound = RESIDUAL_TOL * (1.0 + d.norm());
            assert!(
                sol.residual_norm <= bound,
                "trial {trial}: residual {} > {bound}",
                sol.residual_norm
            );
            assert_eq!(sol.x, sol.x.transpose());
        }
    }

    #[test]
    fn shifted_solves_reuse_one_factorization() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_stable(&mut rng, 7, 0.3);
        let schur = RealSchur::new(&a).unwrap();
        let alpha = schur.spectral_abscissa();
        let d = DMatrix::<f64>::identity(7, 7);
        for shift in [alpha + 0.01, 0.0, 1.5] {
            let shifted = &a - DMatrix::identity(7, 7) * shift;
            let x = schur.solve_lyapunov(shift, &d).unwrap();
            assert!(lyapunov_residual(&shifted, &x, &d) < 1e-8 * (1.0 + x.norm()));
            let xa = schur.solve_lyapunov_adjoint(shift, &d).unwrap();
            assert!(lyapunov_residual(&shifted.transpose(), &xa, &d) < 1e-8 * (1.0 + xa.norm()));
        }
    }

    #[test]
    fn gramian_scalar_and_zero() {
        let w = gramian::<f64>(&dmatrix![-1.0], &DVector::from_element(1, 1.0)).unwrap();
        assert!((w[(0, 0)] - 0.5).abs() < 1e-15);
        let a = dmatrix![-1.0, 0.0; 1.0, -2.0];
        let w0 = gramian(&a, &DVector::zeros(2)).unwrap();
        assert_eq!(w0.norm(), 0.0);
    }

    #[test]
    fn gramian_is_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let n = 6;
            let a = random_stable(&mut rng, n, 0.2);
            let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let w = gramian(&a, &x0).unwrap();
            let min_eig = w.clone().symmetric_eigenvalues().min();
            assert!(min_eig >= -1e-10 * w.norm(), "{min_eig}");
        }
    }

    #[test]
    fn cost_scalar_and_unstable() {
        let c: DMatrix<f64> = dmatrix![1.0];
        let x0 = DVector::from_element(1, 1.0);
        assert!((congestion_cost(&dmatrix![-1.0], &c, &x0) - 0.5).abs() < 1e-15);
        assert!(congestion_cost(&dmatrix![0.5], &c, &x0).is_infinite());
    }

    #[test]
    fn works_in_single_precision() {
        let a: DMatrix<f32> = dmatrix![-1.0, 0.5; 0.0, -2.0];
        let d: DMatrix<f32> = DMatrix::identity(2, 2);
        let sol = solve_lyapunov(&a, &d).unwrap();
        assert!(sol.residual_norm < 1e-5);
    }
}
