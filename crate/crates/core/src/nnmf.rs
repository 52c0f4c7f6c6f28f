//! Non-negative matrix factorization `V ≈ W·H` by Lee–Seung multiplicative
//! updates on the Frobenius objective.

use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(alloc::format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |i| self[(i, j)])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[(j, i)] = self[(i, j)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NnmfOptions {
    pub components: usize,
    pub max_iters: usize,
    /// Stop once the relative error improvement of one iteration drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Added to every update denominator.
    pub delta: f64,
}

impl Default for NnmfOptions {
    fn default() -> Self {
        Self {
            components: 2,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
            delta: 1e-9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FactorizationResult {
    /// n×k collaborator loadings.
    pub w: Matrix,
    /// k×m feature loadings.
    pub h: Matrix,
    /// Frobenius error `‖V − WH‖_F`; entry 0 is the error at initialization,
    /// entry t the error after iteration t.
    pub error_trace: Vec<f64>,
    pub iterations_run: usize,
}

impl FactorizationResult {
    pub fn final_error(&self) -> f64 {
        *self
            .error_trace
            .last()
            .expect("trace holds the initial error")
    }

    pub fn reconstruct(&self) -> Matrix {
        self.w.matmul(&self.h)
    }
}

pub fn frobenius_error(v: &Matrix, w: &Matrix, h: &Matrix) -> f64 {
    let approx = w.matmul(h);
    let sq: f64 = v
        .as_slice()
        .iter()
        .zip(approx.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    libm::sqrt(sq)
}

/// `x ← x ⊙ numer ⊘ (denom + δ)`
fn multiplicative_update(x: &mut Matrix, numer: &Matrix, denom: &Matrix, delta: f64) {
    for ((x, n), d) in x.data.iter_mut().zip(&numer.data).zip(&denom.data) {
        *x *= n / (d + delta);
    }
}

/// Factorizes a nonnegative matrix into `W (n×k)` and `H (k×m)`.
///
/// Factors start from seeded uniform (0, 1] draws; each iteration updates
/// `H` then `W`. Components are reordered afterwards by decreasing
/// `‖W[:,c]‖·‖H[c,:]‖`, so column 0 of `W` carries the dominant latent
/// pattern.
pub fn factorize(v: &Matrix, opts: &NnmfOptions) -> Result<FactorizationResult> {
    factorize_observed(v, opts, |_, _, _| {})
}

/// [`factorize`], calling `observe(iteration, &w, &h)` after every iteration.
pub fn factorize_observed<F>(
    v: &Matrix,
    opts: &NnmfOptions,
    mut observe: F,
) -> Result<FactorizationResult>
where
    F: FnMut(usize, &Matrix, &Matrix),
{
    let (n, m, k) = (v.rows(), v.cols(), opts.components);
    if k == 0 || k > n.min(m) {
        return Err(Error::RankOutOfRange {
            k,
            rows: n,
            cols: m,
        });
    }
    if v.as_slice().iter().any(|x| *x < 0.0 || !x.is_finite()) {
        return Err(Error::NotNonnegative);
    }

    let mut rng = stream_rng(opts.seed, Stream::Factorization, 0);
    // 1 - [0, 1) is (0, 1]; zero entries would be fixed points of the updates.
    let mut draw = |rows, cols| {
        let data = (0..rows * cols)
            .map(|_| 1.0 - rng.random::<f64>())
            .collect();
        Matrix { rows, cols, data }
    };
    let mut w = draw(n, k);
    let mut h = draw(k, m);

    let mut trace = Vec::with_capacity(opts.max_iters + 1);
    trace.push(frobenius_error(v, &w, &h));
    let mut iterations = 0;
    while iterations < opts.max_iters {
        let wt = w.transpose();
        let numer = wt.matmul(v);
        let denom = wt.matmul(&w).matmul(&h);
        multiplicative_update(&mut h, &numer, &denom, opts.delta);

        let ht = h.transpose();
        let numer = v.matmul(&ht);
        let denom = w.matmul(&h.matmul(&ht));
        multiplicative_update(&mut w, &numer, &denom, opts.delta);

        iterations += 1;
        observe(iterations, &w, &h);
        let prev = trace[trace.len() - 1];
        let err = frobenius_error(v, &w, &h);
        trace.push(err);
        if err == 0.0 || prev == 0.0 || (prev - err) / prev < opts.tol {
            break;
        }
    }

    sort_components(&mut w, &mut h);
    Ok(FactorizationResult {
        w,
        h,
        error_trace: trace,
        iterations_run: iterations,
    })
}

/// Permutes latent components by decreasing contribution. `W·H` is unchanged.
fn sort_components(w: &mut Matrix, h: &mut Matrix) {
    let k = w.cols();
    let norm = |it: &mut dyn Iterator<Item = f64>| libm::sqrt(it.map(|x| x * x).sum());
    let strength: Vec<f64> = (0..k)
        .map(|c| norm(&mut w.column(c)) * norm(&mut h.row(c).iter().copied()))
        .collect();
    let mut order: Vec<usize> = (0..k).collect();
    // stable, so equal strengths keep their original order
    order.sort_by(|&a, &b| strength[b].total_cmp(&strength[a]));
    if order.iter().enumerate().all(|(i, &c)| i == c) {
        return;
    }
    let (w0, h0) = (w.clone(), h.clone());
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..w.rows() {
            w[(i, dst)] = w0[(i, src)];
        }
        for j in 0..h.cols() {
            h[(dst, j)] = h0[(src, j)];
        }
    }
}

/// Row indices by decreasing first latent factor; ties go to the lower index.
pub fn rank_by_first_factor(result: &FactorizationResult) -> Vec<usize> {
    let first: Vec<f64> = result.w.column(0).collect();
    let mut order: Vec<usize> = (0..first.len()).collect();
    order.sort_by(|&a, &b| first[b].total_cmp(&first[a]).then(a.cmp(&b)));
    order
}
