//! Dense linear algebra, elementwise nonlinearities, a numerically stable
//! softmax and a seeded pseudo-random generator. All math is 64-bit.
//!
//! The generator is xorshift64* seeded through splitmix64, so streams are
//! bit-exact across platforms and implementations:
//!
//! ```text
//! seed:  z = seed + 0x9E3779B97F4A7C15
//!        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!        state = z ^ (z >> 31)            (0 replaced by 0x9E3779B97F4A7C15)
//! next:  state ^= state >> 12
//!        state ^= state << 25
//!        state ^= state >> 27
//!        output = state * 0x2545F4914F6CDD1D   (wrapping)
//! f64:   (output >> 11) * 2^-53              (uniform in [0, 1))
//! ```

use crate::error::{Error, Result};

/// Dense row-major 2-D array of `f64`. The carrier for every parameter,
/// activation and gradient in the crate. Values are immutable once a
/// matrix is returned from an operation; mutation happens through
/// `data_mut` on owned values only.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a flat row-major buffer. Rejects length mismatches and
    /// non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(format!(
                "matrix {}x{} needs {} elements, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::argument("matrix data contains a non-finite value".to_string()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|row| row.len()).unwrap_or(0);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::dimension("ragged rows in matrix literal".to_string()));
        }
        Matrix::from_vec(r, c, rows.into_iter().flatten().collect())
    }

    /// Column vector (n x 1) from a slice.
    pub fn column(data: &[f64]) -> Self {
        Matrix { rows: data.len(), cols: 1, data: data.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copy of column `c`. Embedding tables are laid out one column per
    /// vocabulary entry, so this is the lookup primitive.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Standard matrix product. Shapes must agree (`self.cols == rhs.rows`).
    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::dimension(format!(
                "matmul shape mismatch: {}x{} * {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs_row = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (o, &b) in out_row.iter_mut().zip(lhs_row) {
                    *o += a * b;
                }
            }
        }
        debug_assert!(out.is_finite());
        Ok(out)
    }

    /// `W x` for a vector `x` of length `self.cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.cols != x.len() {
            return Err(Error::dimension(format!(
                "matvec shape mismatch: {}x{} * {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.rows];
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
        Ok(out)
    }

    /// `Wᵀ x` for a vector `x` of length `self.rows`. Used by backward
    /// passes to send gradients through a linear map.
    pub fn matvec_t(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.rows != x.len() {
            return Err(Error::dimension(format!(
                "matvec_t shape mismatch: ({}x{})ᵀ * {}",
                self.rows,
                self.cols,
                x.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (r, &xv) in x.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += xv * w;
            }
        }
        Ok(out)
    }

    /// Rank-1 accumulation `self += u vᵀ`. Gradient of a linear map with
    /// respect to its weight matrix.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(self.rows, u.len());
        debug_assert_eq!(self.cols, v.len());
        for (r, &uv) in u.iter().enumerate() {
            if uv == 0.0 {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, &vv) in row.iter_mut().zip(v) {
                *w += uv * vv;
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(m: &Matrix) -> Matrix {
    m.map(|x| x.max(0.0))
}

/// Elementwise logistic function, overflow-safe on both tails.
pub fn sigmoid(m: &Matrix) -> Matrix {
    m.map(sigmoid_scalar)
}

/// Elementwise hyperbolic tangent.
pub fn tanh(m: &Matrix) -> Matrix {
    m.map(f64::tanh)
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

pub fn tanh_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.tanh()).collect()
}

/// Max-subtracted softmax. Outputs are nonnegative and sum to 1.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::argument("softmax of an empty vector".to_string()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(out)
}

/// log(softmax(v)) computed directly in the log domain:
/// `v - max - ln Σ exp(v - max)`. Safe for very wide vectors.
pub fn log_softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::argument("log_softmax of an empty vector".to_string()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
    Ok(v.iter().map(|&x| x - max - log_sum).collect())
}

/// Seeded xorshift64* generator. Single-owner: fork per-task generators
/// with [`Rng::fork`] instead of sharing one across threads.
#[derive(Debug, Clone)]
pub struct Rng {
    state: u64,
}

const SPLITMIX_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

// rejects NaN bounds as well as empty ranges
fn check_range(lo: f64, hi: f64) -> Result<()> {
    if matches!(lo.partial_cmp(&hi), Some(std::cmp::Ordering::Less)) {
        Ok(())
    } else {
        Err(Error::argument(format!("uniform bounds must satisfy lo < hi, got [{lo}, {hi})")))
    }
}

fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(SPLITMIX_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        let state = splitmix64(seed);
        Rng { state: if state == 0 { SPLITMIX_GAMMA } else { state } }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state ^= self.state >> 12;
        self.state ^= self.state << 25;
        self.state ^= self.state >> 27;
        self.state.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform draw in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        check_range(lo, hi)?;
        Ok(lo + (hi - lo) * self.next_f64())
    }

    /// Matrix of uniform draws in [lo, hi), filled in row-major order.
    pub fn uniform_matrix(&mut self, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Matrix> {
        check_range(lo, hi)?;
        let data = (0..rows * cols).map(|_| lo + (hi - lo) * self.next_f64()).collect();
        Ok(Matrix { rows, cols, data })
    }

    /// Uniform index in [0, n).
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Derive an independent child generator. Advances this one.
    pub fn fork(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }
}

/// In-place Fisher-Yates shuffle using the given generator.
pub fn shuffle<T>(items: &mut [T], rng: &mut Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.next_index(i + 1);
        items.swap(i, j);
    }
}
