//! Small dense kernels for the (d+1)x(d+1) Gram matrices held at leaves.
//!
//! Matrices are row-major `Vec<f64>`; sizes are tiny so nothing here is
//! blocked or vectorised.

/// Cholesky factor `A = L L'` of a symmetric positive definite matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cholesky {
    pub p: usize,
    /// Row-major lower triangle (upper part is zero).
    pub l: Vec<f64>,
    pub log_det: f64,
    /// Condition estimate of the diagonally scaled matrix,
    /// `(max L_ii / min L_ii)^2` of the factor of `D^-1/2 A D^-1/2`.
    pub cond: f64,
}

impl Cholesky {
    /// Factor `a` after Jacobi scaling. Returns `None` when a pivot is not
    /// strictly positive.
    pub fn factor(a: &[f64], p: usize) -> Option<Self> {
        debug_assert_eq!(a.len(), p * p);
        let mut scale = vec![0.0; p];
        for i in 0..p {
            let d = a[i * p + i];
            if !(d > 0.0) || !d.is_finite() {
                return None;
            }
            scale[i] = d.sqrt();
        }
        let mut l = vec![0.0; p * p];
        let mut min_piv = f64::INFINITY;
        let mut max_piv: f64 = 0.0;
        for i in 0..p {
            for j in 0..=i {
                let mut s = a[i * p + j] / (scale[i] * scale[j]);
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    let piv = s.sqrt();
                    min_piv = min_piv.min(piv);
                    max_piv = max_piv.max(piv);
                    l[i * p + i] = piv;
                } else {
                    l[i * p + j] = s / l[j * p + j];
                }
            }
        }
        let cond = (max_piv / min_piv).powi(2);
        // undo the scaling: A = (D Ls)(D Ls)'
        let mut log_det = 0.0;
        for i in 0..p {
            for j in 0..=i {
                l[i * p + j] *= scale[i];
            }
            log_det += 2.0 * l[i * p + i].ln();
        }
        Some(Self {
            p,
            l,
            log_det,
            cond,
        })
    }

    /// Solve `L z = b`.
    pub fn forward(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut z = b.to_vec();
        for i in 0..p {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[i * p + k] * z[k];
            }
            z[i] = s / self.l[i * p + i];
        }
        z
    }

    /// Solve `L' x = z` in place.
    pub fn backward(&self, z: &mut [f64]) {
        let p = self.p;
        for i in (0..p).rev() {
            let mut s = z[i];
            for k in i + 1..p {
                s -= self.l[k * p + i] * z[k];
            }
            z[i] = s / self.l[i * p + i];
        }
    }

    /// `A^-1 b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = self.forward(b);
        self.backward(&mut z);
        z
    }

    /// `v' A^-1 v`.
    pub fn quad_inv(&self, v: &[f64]) -> f64 {
        self.forward(v).iter().map(|z| z * z).sum()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_and_solve_spd() {
        let a = vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let c = Cholesky::factor(&a, 3).unwrap();
        let b = [1.0, -2.0, 0.5];
        let x = c.solve(&b);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - b[i]).abs() < 1e-12);
        }
        // det by cofactor expansion
        let det = 4.0 * (5.0 * 3.0 - 1.0) - 2.0 * (2.0 * 3.0 - 0.6) + 0.6 * (2.0 - 5.0 * 0.6);
        assert!((c.log_det - f64::ln(det)).abs() < 1e-12);
        assert!((c.quad_inv(&b) - dot(&b, &x)).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_huge_condition_or_fails() {
        let a = vec![1.0, 1.0, 1.0, 1.0];
        match Cholesky::factor(&a, 2) {
            None => {}
            Some(c) => assert!(c.cond > 1e10),
        }
        assert!(Cholesky::factor(&[0.0], 1).is_none());
    }
}
