//! Cosine and sine transforms realised as FFTs of reflected sequences.
//!
//! `dct2` acts on cell-centred samples (even reflection about the end faces),
//! `dst1` on interior vertex samples with zero end values (odd reflection).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Reflect {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    twiddle: Vec<Complex64>,
}

impl std::fmt::Debug for Reflect {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Reflect").field("n", &self.n).finish()
    }
}

impl Reflect {
    /// Transforms for `n` cells (DCT-II length `n`, DST-I length `n - 1`).
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let twiddle = (0..n)
            .map(|m| Complex64::from_polar(1.0, PI * m as f64 / (2.0 * n as f64)))
            .collect();
        Self {
            n,
            fwd: planner.plan_fft_forward(2 * n),
            inv: planner.plan_fft_inverse(2 * n),
            twiddle,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `C_m = sum_j x_j cos(pi m (j + 1/2) / n)`.
    pub fn dct2(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y: Vec<Complex64> = x.iter().chain(x.iter().rev()).copied().collect();
        self.fwd.process(&mut y);
        (0..n).map(|m| 0.5 * self.twiddle[m].conj() * y[m]).collect()
    }

    /// Inverse of [`Reflect::dct2`].
    pub fn idct2(&self, c: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut z = vec![Complex64::new(0.0, 0.0); 2 * n];
        z[0] = c[0];
        for m in 1..n {
            z[m] = c[m] * self.twiddle[m];
            z[2 * n - m] = c[m] * self.twiddle[m].conj();
        }
        self.inv.process(&mut z);
        let s = 1.0 / n as f64;
        z.truncate(n);
        z.iter_mut().for_each(|v| *v *= s);
        z
    }

    /// `S_m = sum_{j=1}^{n-1} x_j sin(pi j m / n)` for `m = 1..n-1`; input and output have length `n - 1`.
    pub fn dst1(&self, x: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y = vec![Complex64::new(0.0, 0.0); 2 * n];
        for j in 1..n {
            y[j] = x[j - 1];
            y[2 * n - j] = -x[j - 1];
        }
        self.fwd.process(&mut y);
        (1..n).map(|m| Complex64::new(0.0, 0.5) * y[m]).collect()
    }

    pub fn idst1(&self, s: &[Complex64]) -> Vec<Complex64> {
        let scale = 2.0 / self.n as f64;
        self.dst1(s).into_iter().map(|v| v * scale).collect()
    }
}
