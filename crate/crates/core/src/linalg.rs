//! Banded LU with partial pivoting and a 1-norm condition estimate.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Real square matrix with `bw` sub- and super-diagonals, stored by rows
/// with room for the fill-in created by row interchanges.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    width: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        let width = 3 * bw + 1;
        Self {
            n,
            bw,
            width,
            data: vec![0.0; n * width],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.bw >= i && j <= i + 2 * self.bw);
        i * self.width + (j + self.bw - i)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(j + self.bw >= i && j <= i + self.bw, "entry outside band");
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.bw < i || j > i + self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// y = A x.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            y[i] = (lo..=hi).map(|j| self.data[self.slot(i, j)] * x[j]).sum();
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        let mut cols = vec![0.0; self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let hi = (i + self.bw).min(self.n - 1);
            for j in lo..=hi {
                cols[j] += self.data[self.slot(i, j)].abs();
            }
        }
        cols.into_iter().fold(0.0, f64::max)
    }

    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let bw = self.bw;
        let mut pivots = vec![0usize; n];
        for k in 0..n {
            let last = (k + bw).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for i in k + 1..=last {
                let v = self.data[self.slot(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::SolveFailure(format!("zero pivot in column {k}")));
            }
            pivots[k] = p;
            let right = (k + 2 * bw).min(n - 1);
            if p != k {
                for j in k..=right {
                    let a = self.slot(k, j);
                    let b = self.slot(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            for i in k + 1..=last {
                let sik = self.slot(i, k);
                let l = self.data[sik] / pivot;
                self.data[sik] = l;
                if l == 0.0 {
                    continue;
                }
                for j in k + 1..=right {
                    let skj = self.slot(k, j);
                    let sij = self.slot(i, j);
                    self.data[sij] -= l * self.data[skj];
                }
            }
        }
        Ok(BandLu { m: self, pivots })
    }
}

/// Factorization `P A = L U` of a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let bw = self.m.bw;
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + bw).min(n - 1) {
                    b[i] -= self.m.data[self.m.slot(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let right = (k + 2 * bw).min(n - 1);
            let mut acc = b[k];
            for j in k + 1..=right {
                acc -= self.m.data[self.m.slot(k, j)] * b[j];
            }
            b[k] = acc / self.m.data[self.m.slot(k, k)];
        }
    }

    /// Solves `Aᵀ x = b` in place.
    pub fn solve_transpose_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let bw = self.m.bw;
        // Uᵀ y = b
        for k in 0..n {
            let mut acc = b[k];
            for j in k.saturating_sub(2 * bw)..k {
                acc -= self.m.data[self.m.slot(j, k)] * b[j];
            }
            b[k] = acc / self.m.data[self.m.slot(k, k)];
        }
        // Lᵀ Pᵀ
        for k in (0..n).rev() {
            let mut acc = b[k];
            for i in k + 1..=(k + bw).min(n - 1) {
                acc -= self.m.data[self.m.slot(i, k)] * b[i];
            }
            b[k] = acc;
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
        }
    }

    /// Solves with a complex right-hand side, real and imaginary parts separately.
    pub fn solve_complex(&self, b: &mut [Complex64]) {
        let mut re: Vec<f64> = b.iter().map(|v| v.re).collect();
        let mut im: Vec<f64> = b.iter().map(|v| v.im).collect();
        self.solve_in_place(&mut re);
        if im.iter().any(|v| *v != 0.0) {
            self.solve_in_place(&mut im);
        }
        for ((v, r), i) in b.iter_mut().zip(re).zip(im) {
            *v = Complex64::new(r, i);
        }
    }

    /// Hager–Higham estimate of `‖A⁻¹‖₁`.
    pub fn inverse_norm1_estimate(&self) -> f64 {
        let n = self.m.n;
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let mut y = x.clone();
            self.solve_in_place(&mut y);
            let norm: f64 = y.iter().map(|v| v.abs()).sum();
            if norm <= est {
                break;
            }
            est = norm;
            let mut z: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            self.solve_transpose_in_place(&mut z);
            let (jmax, zmax) =
                z.iter().enumerate().fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (j, v)| {
                        if v.abs() > acc.1 {
                            (j, v.abs())
                        } else {
                            acc
                        }
                    },
                );
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x.iter_mut().for_each(|v| *v = 0.0);
            x[jmax] = 1.0;
        }
        // Higham's alternating-sign probe.
        let mut alt: Vec<f64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                s * (1.0 + i as f64 / (n.max(2) - 1) as f64)
            })
            .collect();
        self.solve_in_place(&mut alt);
        let alt_est = 2.0 * alt.iter().map(|v| v.abs()).sum::<f64>() / (3.0 * n as f64);
        est.max(alt_est)
    }
}
