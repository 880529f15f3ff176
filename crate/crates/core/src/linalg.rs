//! Small dense linear algebra: a safe GEMM wrapper, exact integer
//! determinants and adjugates, and a few helpers for square float matrices.

use alloc::vec;
use alloc::vec::Vec;

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k` when
/// `trans_b`), `c` is `m x n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs shape");
    assert_eq!(b.len(), k * n, "gemm: rhs shape");
    assert_eq!(c.len(), m * n, "gemm: output shape");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every index reached through the
    // given strides lies inside the corresponding slice.
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

/// Exact determinant of a square integer matrix (fraction-free Bareiss elimination).
pub fn int_det(n: usize, a: &[i64]) -> i128 {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return 1;
    }
    let mut m: Vec<i128> = a.iter().map(|&x| x as i128).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if m[k * n + k] == 0 {
            let Some(swap) = (k + 1..n).find(|&r| m[r * n + k] != 0) else {
                return 0;
            };
            for c in 0..n {
                m.swap(k * n + c, swap * n + c);
            }
            sign = -sign;
        }
        let pivot = m[k * n + k];
        for i in k + 1..n {
            for j in k + 1..n {
                m[i * n + j] = (m[i * n + j] * pivot - m[i * n + k] * m[k * n + j]) / prev;
            }
        }
        prev = pivot;
    }
    sign * m[(n - 1) * n + (n - 1)]
}

/// Adjugate of a square integer matrix; equals the inverse when the determinant is 1.
pub fn int_adjugate(n: usize, a: &[i64]) -> Vec<i64> {
    assert_eq!(a.len(), n * n);
    if n == 1 {
        return vec![1];
    }
    let mut adj = vec![0i64; n * n];
    let mut minor = vec![0i64; (n - 1) * (n - 1)];
    for r in 0..n {
        for c in 0..n {
            let mut idx = 0;
            for i in (0..n).filter(|&i| i != r) {
                for j in (0..n).filter(|&j| j != c) {
                    minor[idx] = a[i * n + j];
                    idx += 1;
                }
            }
            let cof = int_det(n - 1, &minor);
            let signed = if (r + c) % 2 == 0 { cof } else { -cof };
            // adj = transpose of the cofactor matrix
            adj[c * n + r] = signed as i64;
        }
    }
    adj
}

/// Determinant of a square float matrix by partial-pivot LU.
pub fn det(n: usize, a: &[f64]) -> f64 {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut d = 1.0;
    for k in 0..n {
        let mut piv = k;
        for r in k + 1..n {
            if m[r * n + k].abs() > m[piv * n + k].abs() {
                piv = r;
            }
        }
        if m[piv * n + k] == 0.0 {
            return 0.0;
        }
        if piv != k {
            for c in 0..n {
                m.swap(k * n + c, piv * n + c);
            }
            d = -d;
        }
        let p = m[k * n + k];
        d *= p;
        for r in k + 1..n {
            let f = m[r * n + k] / p;
            for c in k..n {
                m[r * n + c] -= f * m[k * n + c];
            }
        }
    }
    d
}

/// Row-major `n x n` transpose.
pub fn transpose(n: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Transpose of a row-major `rows x cols` matrix.
pub fn transpose_rect(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            t[j * rows + i] = a[i * cols + j];
        }
    }
    t
}

/// `y = A x` for a row-major `rows x cols` matrix.
pub fn matvec(rows: usize, cols: usize, a: &[f64], x: &[f64], y: &mut [f64]) {
    for (r, yr) in y.iter_mut().enumerate().take(rows) {
        *yr = a[r * cols..(r + 1) * cols].iter().zip(x).map(|(w, v)| w * v).sum();
    }
}

/// Max-abs entry of `AᵀA − I` for a row-major `rows x cols` matrix.
pub fn orthogonality_defect(rows: usize, cols: usize, a: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..cols {
        for j in 0..cols {
            let dot: f64 = (0..rows).map(|r| a[r * cols + i] * a[r * cols + j]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((dot - target).abs());
        }
    }
    worst
}
