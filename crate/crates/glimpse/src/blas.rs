//! Single-threaded dense GEMM used by the convolution kernels.
//!
//! All heavy arithmetic in this crate bottoms out in `C = alpha*op(A)*op(B) +
//! beta*C` on row-major buffers. With the `openblas` feature (default) the
//! call is forwarded to the system OpenBLAS; otherwise the pure-Rust
//! `matrixmultiply` kernels are used. Both paths are forced single-threaded so
//! a GEMM is a deterministic function of its inputs; parallelism lives above
//! this layer.

use std::sync::Once;

/// Whether an operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// Scalar types with a GEMM kernel.
pub trait Gemm: Copy {
    /// `c[m×n] = alpha * op(a) * op(b) + beta * c`, row-major, fully packed
    /// (lda = op(a) columns, etc.).
    fn gemm(
        ta: Trans,
        tb: Trans,
        m: usize,
        n: usize,
        k: usize,
        alpha: Self,
        a: &[Self],
        b: &[Self],
        beta: Self,
        c: &mut [Self],
    );
}

fn check_dims<T>(ta: Trans, tb: Trans, m: usize, n: usize, k: usize, a: &[T], b: &[T], c: &[T]) {
    let (ar, ac) = match ta {
        Trans::No => (m, k),
        Trans::Yes => (k, m),
    };
    let (br, bc) = match tb {
        Trans::No => (k, n),
        Trans::Yes => (n, k),
    };
    assert_eq!(a.len(), ar * ac, "gemm: A buffer size mismatch");
    assert_eq!(b.len(), br * bc, "gemm: B buffer size mismatch");
    assert_eq!(c.len(), m * n, "gemm: C buffer size mismatch");
}

#[cfg(feature = "openblas")]
mod backend {
    use super::*;
    use std::os::raw::{c_char, c_int};

    const ROW_MAJOR: c_int = 101;
    const NO_TRANS: c_int = 111;
    const TRANS: c_int = 112;

    #[link(name = "openblas")]
    extern "C" {
        fn cblas_sgemm(
            layout: c_int,
            ta: c_int,
            tb: c_int,
            m: c_int,
            n: c_int,
            k: c_int,
            alpha: f32,
            a: *const f32,
            lda: c_int,
            b: *const f32,
            ldb: c_int,
            beta: f32,
            c: *mut f32,
            ldc: c_int,
        );
        fn cblas_dgemm(
            layout: c_int,
            ta: c_int,
            tb: c_int,
            m: c_int,
            n: c_int,
            k: c_int,
            alpha: f64,
            a: *const f64,
            lda: c_int,
            b: *const f64,
            ldb: c_int,
            beta: f64,
            c: *mut f64,
            ldc: c_int,
        );
        fn openblas_set_num_threads(n: c_int);
        fn openblas_get_corename() -> *const c_char;
    }

    static INIT: Once = Once::new();

    /// OpenBLAS picks its kernel family from CPUID at load time and falls back
    /// to a generic SSE kernel ("Prescott") on virtualized CPUs it does not
    /// recognize, which costs 2-3x on the shapes we run. Steer it with
    /// OPENBLAS_CORETYPE before the first call unless the user already did.
    pub(super) fn ensure_init() {
        INIT.call_once(|| {
            #[cfg(target_arch = "x86_64")]
            if std::env::var_os("OPENBLAS_CORETYPE").is_none() {
                let core = if is_x86_feature_detected!("avx512f") {
                    Some("SKYLAKEX")
                } else if is_x86_feature_detected!("avx2") {
                    Some("HASWELL")
                } else {
                    None
                };
                if let Some(core) = core {
                    std::env::set_var("OPENBLAS_CORETYPE", core);
                }
            }
            unsafe { openblas_set_num_threads(1) };
        });
    }

    /// Kernel family OpenBLAS selected (diagnostic, used by `--version`-style output).
    pub fn corename() -> String {
        ensure_init();
        unsafe {
            std::ffi::CStr::from_ptr(openblas_get_corename())
                .to_string_lossy()
                .into_owned()
        }
    }

    fn flag(t: Trans) -> c_int {
        match t {
            Trans::No => NO_TRANS,
            Trans::Yes => TRANS,
        }
    }

    fn ld(t: Trans, rows_notrans: usize, cols_notrans: usize) -> c_int {
        // Row-major leading dimension of the *stored* matrix.
        match t {
            Trans::No => cols_notrans as c_int,
            Trans::Yes => rows_notrans as c_int,
        }
    }

    impl Gemm for f32 {
        fn gemm(
            ta: Trans,
            tb: Trans,
            m: usize,
            n: usize,
            k: usize,
            alpha: f32,
            a: &[f32],
            b: &[f32],
            beta: f32,
            c: &mut [f32],
        ) {
            ensure_init();
            check_dims(ta, tb, m, n, k, a, b, c);
            unsafe {
                cblas_sgemm(
                    ROW_MAJOR,
                    flag(ta),
                    flag(tb),
                    m as c_int,
                    n as c_int,
                    k as c_int,
                    alpha,
                    a.as_ptr(),
                    ld(ta, m, k),
                    b.as_ptr(),
                    ld(tb, k, n),
                    beta,
                    c.as_mut_ptr(),
                    n as c_int,
                );
            }
        }
    }

    impl Gemm for f64 {
        fn gemm(
            ta: Trans,
            tb: Trans,
            m: usize,
            n: usize,
            k: usize,
            alpha: f64,
            a: &[f64],
            b: &[f64],
            beta: f64,
            c: &mut [f64],
        ) {
            ensure_init();
            check_dims(ta, tb, m, n, k, a, b, c);
            unsafe {
                cblas_dgemm(
                    ROW_MAJOR,
                    flag(ta),
                    flag(tb),
                    m as c_int,
                    n as c_int,
                    k as c_int,
                    alpha,
                    a.as_ptr(),
                    ld(ta, m, k),
                    b.as_ptr(),
                    ld(tb, k, n),
                    beta,
                    c.as_mut_ptr(),
                    n as c_int,
                );
            }
        }
    }
}

#[cfg(not(feature = "openblas"))]
mod backend {
    use super::*;

    pub fn corename() -> String {
        "matrixmultiply".to_string()
    }

    // matrixmultiply takes arbitrary strides, so transposition is just a
    // stride swap on the stored row-major buffer.
    fn strides(t: Trans, rows_notrans: usize, cols_notrans: usize) -> (isize, isize) {
        match t {
            Trans::No => (cols_notrans as isize, 1),
            Trans::Yes => (1, rows_notrans as isize),
        }
    }

    impl Gemm for f32 {
        fn gemm(
            ta: Trans,
            tb: Trans,
            m: usize,
            n: usize,
            k: usize,
            alpha: f32,
            a: &[f32],
            b: &[f32],
            beta: f32,
            c: &mut [f32],
        ) {
            check_dims(ta, tb, m, n, k, a, b, c);
            let (rsa, csa) = strides(ta, m, k);
            let (rsb, csb) = strides(tb, k, n);
            unsafe {
                matrixmultiply::sgemm(
                    m,
                    k,
                    n,
                    alpha,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }

    impl Gemm for f64 {
        fn gemm(
            ta: Trans,
            tb: Trans,
            m: usize,
            n: usize,
            k: usize,
            alpha: f64,
            a: &[f64],
            b: &[f64],
            beta: f64,
            c: &mut [f64],
        ) {
            check_dims(ta, tb, m, n, k, a, b, c);
            let (rsa, csa) = strides(ta, m, k);
            let (rsb, csb) = strides(tb, k, n);
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    alpha,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }
}

pub use backend::corename;

/// Convenience front door: `c = alpha*op(a)*op(b) + beta*c`.
pub fn gemm<T: Gemm>(
    ta: Trans,
    tb: Trans,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    T::gemm(ta, tb, m, n, k, alpha, a, b, beta, c);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(
        ta: Trans,
        tb: Trans,
        m: usize,
        n: usize,
        k: usize,
        a: &[f64],
        b: &[f64],
    ) -> Vec<f64> {
        let at = |i: usize, l: usize| match ta {
            Trans::No => a[i * k + l],
            Trans::Yes => a[l * m + i],
        };
        let bt = |l: usize, j: usize| match tb {
            Trans::No => b[l * n + j],
            Trans::Yes => b[j * k + l],
        };
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for l in 0..k {
                    s += at(i, l) * bt(l, j);
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matches_naive_all_transpose_combos() {
        let (m, n, k) = (5, 7, 4);
        let mk: Vec<f64> = (0..m * k).map(|i| (i as f64) * 0.3 - 1.0).collect();
        let kn: Vec<f64> = (0..k * n).map(|i| (i as f64) * 0.1 + 0.5).collect();
        for (ta, tb) in [
            (Trans::No, Trans::No),
            (Trans::No, Trans::Yes),
            (Trans::Yes, Trans::No),
            (Trans::Yes, Trans::Yes),
        ] {
            // Reinterpret the same buffers under the requested layout.
            let a = mk.clone();
            let b = kn.clone();
            let mut c = vec![0.0f64; m * n];
            gemm(ta, tb, m, n, k, 1.0, &a, &b, 0.0, &mut c);
            let want = naive(ta, tb, m, n, k, &a, &b);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y} ({ta:?},{tb:?})");
            }
        }
    }

    #[test]
    fn beta_accumulates() {
        let a = [1.0f32, 2.0, 3.0, 4.0];
        let b = [1.0f32, 0.0, 0.0, 1.0];
        let mut c = [10.0f32, 20.0, 30.0, 40.0];
        gemm(Trans::No, Trans::No, 2, 2, 2, 1.0, &a, &b, 1.0, &mut c);
        assert_eq!(c, [11.0, 22.0, 33.0, 44.0]);
    }

    #[test]
    fn f32_f64_agree() {
        let m = 8;
        let a64: Vec<f64> = (0..m * m).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let a32: Vec<f32> = a64.iter().map(|&x| x as f32).collect();
        let mut c64 = vec![0.0f64; m * m];
        let mut c32 = vec![0.0f32; m * m];
        gemm(Trans::No, Trans::Yes, m, m, m, 1.0, &a64, &a64, 0.0, &mut c64);
        gemm(Trans::No, Trans::Yes, m, m, m, 1.0, &a32, &a32, 0.0, &mut c32);
        for (x, y) in c32.iter().zip(&c64) {
            assert!((*x as f64 - y).abs() < 1e-5);
        }
    }
}
