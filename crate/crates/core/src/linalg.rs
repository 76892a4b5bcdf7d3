//! Small dense-vector helpers over `&[f64]`.
//!
//! Every reduction walks the slice front to back so results are reproducible
//! bit-for-bit for a fixed input.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn scale(alpha: f64, x: &mut [f64]) {
    for xi in x.iter_mut() {
        *xi *= alpha;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Largest singular value of a row-major `rows x cols` matrix by power
/// iteration on `MᵀM`.
pub fn spectral_norm(m: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(m.len(), rows * cols);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let mut v: Vec<f64> = (0..cols).map(|j| 1.0 + 0.01 * j as f64).collect();
    let n0 = norm(&v);
    scale(1.0 / n0, &mut v);
    let mut mv = vec![0.0; rows];
    let mut sigma = 0.0;
    for _ in 0..1000 {
        for (i, out) in mv.iter_mut().enumerate() {
            *out = dot(&m[i * cols..(i + 1) * cols], &v);
        }
        let mut w = vec![0.0; cols];
        for (i, &mvi) in mv.iter().enumerate() {
            axpy(mvi, &m[i * cols..(i + 1) * cols], &mut w);
        }
        let wn = norm(&w);
        if wn == 0.0 {
            return 0.0;
        }
        let next = wn.sqrt();
        scale(1.0 / wn, &mut w);
        v = w;
        if (next - sigma).abs() <= 1e-14 * next {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Solves the dense square system `a x = b` by Gaussian elimination with
/// partial pivoting. Returns `None` when the matrix is numerically singular.
pub fn solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let scale_ref = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    for col in 0..n {
        let (piv, piv_val) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if piv_val <= 1e-13 * scale_ref {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
            }
            b.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for k in (r + 1)..n {
            s -= a[r * n + k] * x[k];
        }
        x[r] = s / a[r * n + r];
    }
    Some(x)
}
