//! Fixed-capacity dense helpers for the inner integration loops.
//!
//! Dimensions in the catalog never exceed [`MAX_DIM`] (intrinsic) or
//! `MAX_DIM + 1` (ambient), so the hot paths work on stack arrays and only
//! the public API converts to `nalgebra` types.

pub const MAX_DIM: usize = 4;
pub const MAX_AMB: usize = MAX_DIM + 1;

pub type Vecn = [f64; MAX_DIM];
pub type Matn = [[f64; MAX_DIM]; MAX_DIM];
pub type Amb = [f64; MAX_AMB];

pub const ZERO_MAT: Matn = [[0.0; MAX_DIM]; MAX_DIM];

pub fn dot_amb(a: &Amb, b: &Amb, m: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..m {
        s += a[i] * b[i];
    }
    s
}

pub fn mat_vec(a: &Matn, x: &[f64], n: usize) -> Vecn {
    let mut out = [0.0; MAX_DIM];
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i][j] * x[j];
        }
        out[i] = s;
    }
    out
}

pub fn quad_form(a: &Matn, x: &[f64], y: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += x[i] * a[i][j] * y[j];
        }
    }
    s
}

/// Inverse of an SPD (or merely nonsingular) n x n block by Gauss-Jordan
/// elimination with partial pivoting. Returns `None` when singular.
pub fn invert(a: &Matn, n: usize) -> Option<Matn> {
    let mut m = *a;
    let mut inv = ZERO_MAT;
    for i in 0..n {
        inv[i][i] = 1.0;
    }
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if m[r][col].abs() > m[piv][col].abs() {
                piv = r;
            }
        }
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Some(inv)
}
