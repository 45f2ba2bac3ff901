//! Small dense helpers on slices. Matrices are row-major.

use nalgebra::DMatrix;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[inline]
pub fn dist_inf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `y = Aᵀ v` for a row-major n×n matrix.
pub fn mat_t_vec(a: &[f64], v: &[f64], n: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for r in 0..n {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        let row = &a[r * n..(r + 1) * n];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vr;
        }
    }
}

/// `y = A v` for a row-major n×n matrix.
pub fn mat_vec(a: &[f64], v: &[f64], n: usize, out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(n) {
        *o = dot(&a[r * n..(r + 1) * n], v);
    }
}

pub fn det(a: &[f64], n: usize) -> f64 {
    DMatrix::from_row_slice(n, n, a).determinant()
}

/// Solves `A x = b`; `None` when A is singular to working precision.
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.lu().solve(&rhs).map(|v| v.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_product() {
        // A = [[1,2],[3,4]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0; 2];
        mat_t_vec(&a, &[1.0, 1.0], 2, &mut out);
        assert_eq!(out, [4.0, 6.0]);
        mat_vec(&a, &[1.0, 1.0], 2, &mut out);
        assert_eq!(out, [3.0, 7.0]);
        assert!((det(&a, 2) + 2.0).abs() < 1e-12);
        let x = solve(&a, &[5.0, 11.0], 2).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12);
    }
}
