//! Thomas algorithm for constant-coefficient symmetric tridiagonal systems.

/// Pre-factorized `tridiag(off, diag, off)` of size `n`.
#[derive(Debug, Clone)]
pub(crate) struct Tridiagonal {
    off: f64,
    /// Modified super-diagonal `c'_i`.
    c_prime: Vec<f64>,
    /// Reciprocal pivots `1 / (diag - off * c'_{i-1})`.
    inv_pivot: Vec<f64>,
}

impl Tridiagonal {
    pub(crate) fn new(n: usize, diag: f64, off: f64) -> Self {
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev = 0.0;
        for i in 0..n {
            let pivot = diag - off * prev;
            inv_pivot[i] = 1.0 / pivot;
            c_prime[i] = off * inv_pivot[i];
            prev = c_prime[i];
        }
        Self {
            off,
            c_prime,
            inv_pivot,
        }
    }

    /// Solves in place: `rhs` becomes the solution.
    pub(crate) fn solve_in_place(&self, rhs: &mut [f64]) {
        let n = rhs.len();
        if n == 0 {
            return;
        }
        rhs[0] *= self.inv_pivot[0];
        for i in 1..n {
            rhs[i] = (rhs[i] - self.off * rhs[i - 1]) * self.inv_pivot[i];
        }
        for i in (0..n - 1).rev() {
            rhs[i] -= self.c_prime[i] * rhs[i + 1];
        }
    }
}
