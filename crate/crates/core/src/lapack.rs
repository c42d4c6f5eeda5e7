//! Real Schur factorization (`?gees`) and symmetric eigendecomposition
//! (`?syevd`) through the system LAPACK.

use std::os::raw::c_char;

use nalgebra::DMatrix;

type Select<T> = Option<unsafe extern "C" fn(*const T, *const T) -> i32>;

unsafe extern "C" {
    fn dgees_(
        jobvs: *const c_char,
        sort: *const c_char,
        select: Select<f64>,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        sdim: *mut i32,
        wr: *mut f64,
        wi: *mut f64,
        vs: *mut f64,
        ldvs: *const i32,
        work: *mut f64,
        lwork: *const i32,
        bwork: *mut i32,
        info: *mut i32,
        jobvs_len: usize,
        sort_len: usize,
    );
    fn dsyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
        jobz_len: usize,
        uplo_len: usize,
    );
    fn ssyevd_(
        jobz: *const c_char,
        uplo: *const c_char,
        n: *const i32,
        a: *mut f32,
        lda: *const i32,
        w: *mut f32,
        work: *mut f32,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
        jobz_len: usize,
        uplo_len: usize,
    );
    fn sgees_(
        jobvs: *const c_char,
        sort: *const c_char,
        select: Select<f32>,
        n: *const i32,
        a: *mut f32,
        lda: *const i32,
        sdim: *mut i32,
        wr: *mut f32,
        wi: *mut f32,
        vs: *mut f32,
        ldvs: *const i32,
        work: *mut f32,
        lwork: *const i32,
        bwork: *mut i32,
        info: *mut i32,
        jobvs_len: usize,
        sort_len: usize,
    );
}

macro_rules! gees {
    ($name:ident, $ffi:ident, $t:ty) => {
        /// `A = U S Uᵀ` with `U` orthogonal and `S` in standard quasi-triangular
        /// form; `None` if the QR iteration fails.
        pub(crate) fn $name(a: &DMatrix<$t>) -> Option<(DMatrix<$t>, DMatrix<$t>)> {
            let n = a.nrows();
            assert_eq!(n, a.ncols(), "square matrix expected");
            if n == 0 {
                return Some((DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)));
            }
            let dim = i32::try_from(n).ok()?;
            let mut s = a.clone();
            let mut u = DMatrix::<$t>::zeros(n, n);
            let (mut wr, mut wi) = (vec![0.0 as $t; n], vec![0.0 as $t; n]);
            let mut bwork = vec![0i32; n];
            let (mut sdim, mut info) = (0i32, 0i32);
            let (jobvs, sort) = (b'V' as c_char, b'N' as c_char);
            let mut call = |work: &mut [$t], lwork: i32, s: &mut DMatrix<$t>, u: &mut DMatrix<$t>| {
                // SAFETY: every buffer is sized as LAPACK documents for an n x n
                // problem with leading dimensions n, and `select` is unused.
                unsafe {
                    $ffi(
                        &jobvs,
                        &sort,
                        None,
                        &dim,
                        s.as_mut_ptr(),
                        &dim,
                        &mut sdim,
                        wr.as_mut_ptr(),
                        wi.as_mut_ptr(),
                        u.as_mut_ptr(),
                        &dim,
                        work.as_mut_ptr(),
                        &lwork,
                        bwork.as_mut_ptr(),
                        &mut info,
                        1,
                        1,
                    );
                }
                info
            };
            let mut query = [0.0 as $t];
            if call(&mut query, -1, &mut s, &mut u) != 0 {
                return None;
            }
            let lwork = (query[0] as usize).max(3 * n);
            let mut work = vec![0.0 as $t; lwork];
            if call(&mut work, i32::try_from(lwork).ok()?, &mut s, &mut u) != 0 {
                return None;
            }
            Some((u, s))
        }
    };
}

gees!(real_schur_f64, dgees_, f64);
gees!(real_schur_f32, sgees_, f32);

macro_rules! syevd {
    ($name:ident, $ffi:ident, $t:ty) => {
        /// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric
        /// matrix; only the lower triangle is read.
        pub(crate) fn $name(a: &DMatrix<$t>) -> Option<(Vec<$t>, DMatrix<$t>)> {
            let n = a.nrows();
            assert_eq!(n, a.ncols(), "square matrix expected");
            if n == 0 {
                return Some((Vec::new(), DMatrix::zeros(0, 0)));
            }
            let dim = i32::try_from(n).ok()?;
            let mut v = a.clone();
            let mut w = vec![0.0 as $t; n];
            let mut info = 0i32;
            let (jobz, uplo) = (b'V' as c_char, b'L' as c_char);
            let mut call = |work: &mut [$t], lwork: i32, iwork: &mut [i32], liwork: i32, v: &mut DMatrix<$t>| {
                // SAFETY: buffers follow the LAPACK size contract for n x n input.
                unsafe {
                    $ffi(
                        &jobz,
                        &uplo,
                        &dim,
                        v.as_mut_ptr(),
                        &dim,
                        w.as_mut_ptr(),
                        work.as_mut_ptr(),
                        &lwork,
                        iwork.as_mut_ptr(),
                        &liwork,
                        &mut info,
                        1,
                        1,
                    );
                }
                info
            };
            let (mut wq, mut iq) = ([0.0 as $t], [0i32]);
            if call(&mut wq, -1, &mut iq, -1, &mut v) != 0 {
                return None;
            }
            let lwork = (wq[0] as usize).max(1 + 6 * n + 2 * n * n);
            let liwork = (iq[0] as usize).max(3 + 5 * n);
            let mut work = vec![0.0 as $t; lwork];
            let mut iwork = vec![0i32; liwork];
            let status = call(
                &mut work,
                i32::try_from(lwork).ok()?,
                &mut iwork,
                i32::try_from(liwork).ok()?,
                &mut v,
            );
            if status != 0 {
                return None;
            }
            Some((w, v))
        }
    };
}

syevd!(symmetric_eigen_f64, dsyevd_, f64);
syevd!(symmetric_eigen_f32, ssyevd_, f32);
