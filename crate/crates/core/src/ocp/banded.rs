/// Symmetric banded matrix holding the lower band row by row.
#[derive(Debug, Clone)]
pub(crate) struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub(crate) fn zeros(n: usize, bw: usize) -> Self {
        BandedSym {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        debug_assert!(i - j <= self.bw);
        i * (self.bw + 1) + (self.bw + j - i)
    }

    pub(crate) fn bandwidth(&self) -> usize {
        self.bw
    }

    pub(crate) fn size(&self) -> usize {
        self.n
    }

    /// `self += alpha * other`; both must share size and bandwidth.
    pub(crate) fn add_scaled(&mut self, other: &BandedSym, alpha: f64) {
        assert!(self.n == other.n && self.bw == other.bw);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub(crate) fn shift_diagonal(&mut self, s: f64) {
        for i in 0..self.n {
            self.add(i, i, s);
        }
    }

    /// In-place Cholesky `L L^T`; false if not positive definite.
    pub(crate) fn cholesky(&mut self) -> bool {
        let (n, bw) = (self.n, self.bw);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let mut diag = self.get(j, j);
            for k in lo..j {
                let l = self.get(j, k);
                diag -= l * l;
            }
            if !(diag > 0.0) || !diag.is_finite() {
                return false;
            }
            let ljj = diag.sqrt();
            let k = self.idx(j, j);
            self.data[k] = ljj;
            for i in j + 1..(j + bw + 1).min(n) {
                let lo_i = i.saturating_sub(bw).max(lo);
                let mut v = self.get(i, j);
                for k in lo_i..j {
                    v -= self.get(i, k) * self.get(j, k);
                }
                let k = self.idx(i, j);
                self.data[k] = v / ljj;
            }
        }
        true
    }

    /// Solves `L L^T x = b` after [`Self::cholesky`].
    #[cfg(test)]
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut v = b[i];
            for k in i.saturating_sub(bw)..i {
                v -= self.get(i, k) * b[k];
            }
            b[i] = v / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for k in i + 1..(i + bw + 1).min(n) {
                v -= self.get(k, i) * b[k];
            }
            b[i] = v / self.get(i, i);
        }
    }
}

/// General banded matrix with `kl` sub- and `ku` super-diagonals, factorized
/// in place by Gaussian elimination with partial pivoting. Storage leaves
/// room for the `kl` extra super-diagonals created by row interchanges.
#[derive(Debug, Clone)]
pub(crate) struct BandLu {
    n: usize,
    kl: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    pub(crate) fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandLu {
            n,
            kl,
            width,
            data: vec![0.0; n * width],
            pivots: Vec::new(),
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    /// Row-pivoted LU; false if a zero pivot is met.
    pub(crate) fn factorize(&mut self) -> bool {
        let (n, kl) = (self.n, self.kl);
        let reach = self.width - kl - 1;
        self.pivots = Vec::with_capacity(n);
        for k in 0..n {
            let last_row = (k + kl).min(n - 1);
            let last_col = (k + reach).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return false;
            }
            self.pivots.push(p);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.idx(k, j), self.idx(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last_row {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let kj = self.data[self.idx(k, j)];
                        let ij = self.idx(i, j);
                        self.data[ij] -= l * kj;
                    }
                }
            }
        }
        true
    }

    /// Solves `A x = b` in place after [`Self::factorize`].
    pub(crate) fn solve_in_place(&self, b: &mut [f64]) {
        let (n, kl) = (self.n, self.kl);
        let reach = self.width - kl - 1;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                b[i] -= self.data[self.idx(i, k)] * bk;
            }
        }
        for i in (0..n).rev() {
            let mut v = b[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                v -= self.data[self.idx(i, j)] * b[j];
            }
            b[i] = v / self.data[self.idx(i, i)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_solves_tridiagonal_system() {
        let n = 6;
        let mut a = BandedSym::zeros(n, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
        }
        let x: Vec<f64> = (0..n).map(|i| i as f64 - 1.5).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|i| {
                let left = if i > 0 { -x[i - 1] } else { 0.0 };
                let right = if i + 1 < n { -x[i + 1] } else { 0.0 };
                2.0 * x[i] + left + right
            })
            .collect();
        assert!(a.cholesky());
        a.solve_in_place(&mut b);
        for (got, want) in b.iter().zip(&x) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let mut a = BandedSym::zeros(2, 1);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        assert!(!a.cholesky());
    }

    #[test]
    fn band_lu_solves_system_needing_pivoting() {
        // saddle-point matrix [[0, 1, 0], [1, 0, 2], [0, 2, 1]]
        let mut a = BandLu::zeros(3, 1, 1);
        a.add(0, 1, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 2, 2.0);
        a.add(2, 1, 2.0);
        a.add(2, 2, 1.0);
        let x = [0.5, -1.0, 2.0];
        let mut b = vec![x[1], x[0] + 2.0 * x[2], 2.0 * x[1] + x[2]];
        assert!(a.factorize());
        a.solve_in_place(&mut b);
        for (got, want) in b.iter().zip(&x) {
            assert!((got - want).abs() < 1e-14, "{got} vs {want}");
        }
    }

    #[test]
    fn band_lu_matches_dense_solve() {
        use rand::{Rng, SeedableRng};
        let n = 40;
        let (kl, ku) = (3, 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut dense = nalgebra::DMatrix::zeros(n, n);
        let mut band = BandLu::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                let v: f64 = rng.random_range(-1.0..1.0);
                dense[(i, j)] = v;
                band.add(i, j, v);
            }
        }
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let want = dense.lu().solve(&nalgebra::DVector::from_column_slice(&b)).unwrap();
        let mut got = b.clone();
        assert!(band.factorize());
        band.solve_in_place(&mut got);
        for i in 0..n {
            assert!((got[i] - want[i]).abs() < 1e-9 * want.amax().max(1.0));
        }
    }
}
