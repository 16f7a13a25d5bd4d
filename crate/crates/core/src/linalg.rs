//! Small self-contained linear algebra: banded LDU without pivoting (the
//! propagation matrices keep a unit diagonal and behave well; growth is
//! monitored and reported), a Takahashi-style in-band inverse subset, a
//! dense pivoted solver used for validation and small systems, and a
//! skew-symmetric Pfaffian over complex numbers for the Kac-Ward backend.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("zero or tiny pivot at index {0} (|p| = {1:.3e}); matrix is numerically singular")]
    TinyPivot(usize, f64),
    #[error("element growth {0:.3e} exceeds the stability bound; factorization aborted")]
    Growth(f64),
}

/// Row-major band storage: entry (i, j) with j - i in [-bl, bu] lives at
/// data[i * (bl + bu + 1) + (j - i + bl)].
#[derive(Clone, Debug)]
pub struct BandMatrix {
    pub n: usize,
    pub bl: usize,
    pub bu: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bl: usize, bu: usize) -> Self {
        BandMatrix {
            n,
            bl,
            bu,
            data: vec![0.0; n * (bl + bu + 1)],
        }
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bl >= i && j <= i + self.bu);
        i * (self.bl + self.bu + 1) + (j + self.bl - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.bl < i || j > i + self.bu {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }
}

/// LDU factors of a band matrix (unit lower, unit upper, diagonal d).
pub struct BandLdu {
    pub n: usize,
    pub bl: usize,
    pub bu: usize,
    /// Same band layout as the input; subdiagonals hold L, the diagonal holds
    /// d, superdiagonals hold d * U (i.e. the raw U of Doolittle).
    data: Vec<f64>,
    pub growth: f64,
}

pub fn band_factorize(mut a: BandMatrix, pivot_floor: f64) -> Result<BandLdu, LinalgError> {
    let n = a.n;
    let (bl, bu) = (a.bl, a.bu);
    let mut growth: f64 = 0.0;
    for k in 0..n {
        let pivot = a.get(k, k);
        if pivot.abs() < pivot_floor {
            return Err(LinalgError::TinyPivot(k, pivot.abs()));
        }
        growth = growth.max(pivot.abs());
        let imax = (k + bl).min(n - 1);
        let jmax = (k + bu).min(n - 1);
        for i in (k + 1)..=imax {
            let l = a.get(i, k) / pivot;
            a.set(i, k, l);
            if l != 0.0 {
                for j in (k + 1)..=jmax {
                    let v = a.get(k, j);
                    if v != 0.0 {
                        a.add(i, j, -l * v);
                    }
                }
            }
        }
    }
    if growth > 1e12 {
        return Err(LinalgError::Growth(growth));
    }
    Ok(BandLdu {
        n,
        bl,
        bu,
        data: a.data,
        growth,
    })
}

impl BandLdu {
    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * (self.bl + self.bu + 1) + (j + self.bl - i)]
    }

    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        // L y = b (unit lower).
        for i in 0..n {
            let j0 = i.saturating_sub(self.bl);
            let mut acc = b[i];
            for j in j0..i {
                acc -= self.at(i, j) * b[j];
            }
            b[i] = acc;
        }
        // U x = y (diagonal in U).
        for i in (0..n).rev() {
            let j1 = (i + self.bu).min(n - 1);
            let mut acc = b[i];
            for j in (i + 1)..=j1 {
                acc -= self.at(i, j) * b[j];
            }
            b[i] = acc / self.at(i, i);
        }
    }

    /// Solve for a unit right-hand side e_k, exploiting the zero head.
    pub fn solve_unit(&self, k: usize, out: &mut [f64]) {
        let n = self.n;
        out[..].iter_mut().for_each(|v| *v = 0.0);
        out[k] = 1.0;
        for i in (k + 1)..n {
            let j0 = i.saturating_sub(self.bl).max(k);
            let mut acc = out[i];
            for j in j0..i {
                acc -= self.at(i, j) * out[j];
            }
            out[i] = acc;
        }
        for i in (0..n).rev() {
            let j1 = (i + self.bu).min(n - 1);
            let mut acc = out[i];
            for j in (i + 1)..=j1 {
                acc -= self.at(i, j) * out[j];
            }
            out[i] = acc / self.at(i, i);
        }
    }

    /// Entries of A^{-1} within |i - j| <= bl + bu, by the Takahashi
    /// recursions. Returns a band of half-width bl + bu.
    pub fn inverse_band(&self) -> InverseBand {
        let n = self.n;
        let w = self.bl + self.bu;
        let mut z = InverseBand {
            n,
            w,
            data: vec![0.0; n * (2 * w + 1)],
        };
        for j in (0..n).rev() {
            // Lower part of column j: Z[i][j] = -sum_{k in (j, j+bl]} Z[i][k] L[k][j].
            let imax = (j + w).min(n - 1);
            for i in ((j + 1)..=imax).rev() {
                let kmax = (j + self.bl).min(n - 1);
                let mut acc = 0.0;
                for k in (j + 1)..=kmax {
                    let l = self.at_checked(k, j);
                    if l != 0.0 {
                        acc -= z.get(i, k) * l;
                    }
                }
                z.set(i, j, acc);
            }
            // Diagonal: Z[j][j] = 1/d_j - sum_{k in (j, j+bu]} U[j][k] Z[k][j],
            // where U[j][k] = raw(j,k)/d_j.
            let dj = self.at(j, j);
            let kmax = (j + self.bu).min(n - 1);
            let mut acc = 1.0 / dj;
            for k in (j + 1)..=kmax {
                let u = self.at(j, k) / dj;
                if u != 0.0 {
                    acc -= u * z.get(k, j);
                }
            }
            z.set(j, j, acc);
            // Upper part: Z[i][j] = -sum_{k in (i, i+bu]} U[i][k] Z[k][j].
            let imin = j.saturating_sub(w);
            for i in (imin..j).rev() {
                let di = self.at(i, i);
                let kmax = (i + self.bu).min(n - 1);
                let mut acc = 0.0;
                for k in (i + 1)..=kmax {
                    let u = self.at(i, k) / di;
                    if u != 0.0 {
                        acc -= u * z.get(k, j);
                    }
                }
                z.set(i, j, acc);
            }
        }
        z
    }

    #[inline]
    fn at_checked(&self, i: usize, j: usize) -> f64 {
        if j + self.bl < i || j > i + self.bu {
            0.0
        } else {
            self.at(i, j)
        }
    }
}

/// Band of A^{-1} entries produced by `inverse_band`.
pub struct InverseBand {
    n: usize,
    w: usize,
    data: Vec<f64>,
}

impl InverseBand {
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.w < i || j > i + self.w {
            panic!("inverse entry ({i},{j}) outside the computed band");
        }
        self.data[i * (2 * self.w + 1) + (j + self.w - i)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * (2 * self.w + 1) + (j + self.w - i)] = v;
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        let _ = self.n;
        j + self.w >= i && j <= i + self.w
    }
}

/// Dense Gaussian elimination with partial pivoting. Used as the reference
/// solver in tests and for small systems where banding buys nothing.
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

pub fn dense_factorize(mut a: Vec<f64>, n: usize) -> Result<DenseLu, LinalgError> {
    let mut piv = vec![0usize; n];
    for k in 0..n {
        let mut p = k;
        let mut best = a[k * n + k].abs();
        for i in (k + 1)..n {
            let v = a[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best < 1e-300 {
            return Err(LinalgError::TinyPivot(k, best));
        }
        piv[k] = p;
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
        }
        let pivot = a[k * n + k];
        for i in (k + 1)..n {
            let l = a[i * n + k] / pivot;
            a[i * n + k] = l;
            if l != 0.0 {
                for j in (k + 1)..n {
                    a[i * n + j] -= l * a[k * n + j];
                }
            }
        }
    }
    Ok(DenseLu { n, lu: a, piv })
}

impl DenseLu {
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for k in 0..n {
            b.swap(k, self.piv[k]);
            let bk = b[k];
            if bk != 0.0 {
                for i in (k + 1)..n {
                    b[i] -= self.lu[i * n + k] * bk;
                }
            }
        }
        for i in (0..n).rev() {
            let mut acc = b[i];
            for j in (i + 1)..n {
                acc -= self.lu[i * n + j] * b[j];
            }
            b[i] = acc / self.lu[i * n + i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_band(n: usize, bl: usize, bu: usize, rng: &mut StdRng) -> (BandMatrix, Vec<f64>) {
        let mut a = BandMatrix::zeros(n, bl, bu);
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for j in i.saturating_sub(bl)..=(i + bu).min(n - 1) {
                let v = if i == j {
                    2.0 + rng.gen::<f64>()
                } else {
                    rng.gen::<f64>() - 0.5
                };
                a.set(i, j, v);
                dense[i * n + j] = v;
            }
        }
        (a, dense)
    }

    #[test]
    fn band_solve_matches_dense() {
        let mut rng = StdRng::seed_from_u64(7);
        for &(n, bl, bu) in &[(12usize, 3usize, 2usize), (40, 5, 5), (9, 1, 4)] {
            let (a, dense) = random_band(n, bl, bu, &mut rng);
            let f = band_factorize(a, 1e-12).unwrap();
            let d = dense_factorize(dense, n).unwrap();
            let b0: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let mut b1 = b0.clone();
            let mut b2 = b0.clone();
            f.solve(&mut b1);
            d.solve(&mut b2);
            for i in 0..n {
                assert!((b1[i] - b2[i]).abs() < 1e-10, "mismatch at {i}");
            }
            // Unit solves agree with full solves.
            let mut u = vec![0.0; n];
            f.solve_unit(3, &mut u);
            let mut e = vec![0.0; n];
            e[3] = 1.0;
            d.solve(&mut e);
            for i in 0..n {
                assert!((u[i] - e[i]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn takahashi_matches_dense_inverse() {
        let mut rng = StdRng::seed_from_u64(11);
        for &(n, bl, bu) in &[(15usize, 2usize, 3usize), (30, 4, 4)] {
            let (a, dense) = random_band(n, bl, bu, &mut rng);
            let f = band_factorize(a, 1e-12).unwrap();
            let z = f.inverse_band();
            let d = dense_factorize(dense, n).unwrap();
            // Columns of the dense inverse.
            for j in 0..n {
                let mut col = vec![0.0; n];
                col[j] = 1.0;
                d.solve(&mut col);
                for i in 0..n {
                    if z.in_band(i, j) {
                        assert!(
                            (z.get(i, j) - col[i]).abs() < 1e-9,
                            "Z[{i}][{j}] = {} vs {}",
                            z.get(i, j),
                            col[i]
                        );
                    }
                }
            }
        }
    }

}
