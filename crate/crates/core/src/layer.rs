//! Dense reference layer and WTA-sparse layer.
//!
//! The layer has no bias: `y_ji = Σ_k w_ik x_jk`. In the sparse path only the
//! logits of each sample's active units are computed; every other unit holds
//! the default logit `c`, which enters the softmax through the closed-form
//! tail `(N − |active|)·e^{c−m}`. Inactive units never receive gradient.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{LeReader, LeWriter};
use crate::index::ActiveSet;
use crate::matrix::{axpy, dot, DenseMatrix};

const WEIGHTS_MAGIC: &[u8; 4] = b"WTAW";

/// Rows of `W` processed together in the dense kernels.
const ROW_BLOCK: usize = 64;

#[cfg(debug_assertions)]
static SPARSE_MACS: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);

/// Multiply-adds performed by [`forward_sparse`] since the process started.
/// Only counted in debug builds.
#[cfg(debug_assertions)]
pub fn forward_sparse_macs() -> u64 {
    SPARSE_MACS.load(std::sync::atomic::Ordering::Relaxed)
}

/// Weight matrix of the layer, row `i` holding the weights of output unit `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    weights: DenseMatrix,
}

impl LayerParams {
    pub fn new(weights: DenseMatrix) -> Result<Self> {
        if let Some(index) = weights.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { weights })
    }

    /// Zero-mean uniform weights in `[−1/√K, 1/√K]`.
    pub fn init_uniform(num_units: usize, input_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (input_dim.max(1) as f32).sqrt();
        let data = (0..num_units * input_dim)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weights: DenseMatrix::from_vec(num_units, input_dim, data).expect("sized"),
        }
    }

    pub fn num_units(&self) -> usize {
        self.weights.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn into_weights(self) -> DenseMatrix {
        self.weights
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = LeWriter::new(w);
        w.header(WEIGHTS_MAGIC)?;
        for v in [self.num_units(), self.input_dim()] {
            let v = u32::try_from(v)
                .map_err(|_| Error::Config(format!("dimension {v} does not fit in u32")))?;
            w.u32(v)?;
        }
        w.f32_slice(self.weights.as_slice())?;
        w.finish()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "weights file");
        r.header(WEIGHTS_MAGIC)?;
        let n = r.u32()? as usize;
        let k = r.u32()? as usize;
        let count = n
            .checked_mul(k)
            .ok_or_else(|| Error::Config("weight count overflows".into()))?;
        let data = r.f32_vec(count)?;
        r.expect_end()?;
        Self::new(DenseMatrix::from_vec(n, k, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

/// Per-sample `(unit, value)` lists in compressed-row form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    offsets: Vec<usize>,
    units: Vec<u32>,
    values: Vec<f32>,
}

impl SparseRows {
    pub fn from_rows(rows: &[Vec<(u32, f32)>]) -> Self {
        let mut out = Self {
            offsets: vec![0],
            ..Self::default()
        };
        for r in rows {
            for &(u, v) in r {
                out.units.push(u);
                out.values.push(v);
            }
            out.offsets.push(out.units.len());
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    pub fn row(&self, j: usize) -> (&[u32], &[f32]) {
        let (a, b) = (self.offsets[j], self.offsets[j + 1]);
        (&self.units[a..b], &self.values[a..b])
    }

    pub fn nnz(&self) -> usize {
        self.units.len()
    }

    /// Materialises the rows as an `M × n` matrix with `fill` off-pattern.
    pub fn densify(&self, n: usize, fill: f32) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows(), n);
        m.as_mut_slice().fill(fill);
        for j in 0..self.rows() {
            let (u, v) = self.row(j);
            for (&i, &val) in u.iter().zip(v) {
                m.set(j, i as usize, val);
            }
        }
        m
    }
}

fn pattern_from_active(active: &[ActiveSet]) -> (Vec<usize>, Vec<u32>) {
    let mut offsets = Vec::with_capacity(active.len() + 1);
    offsets.push(0);
    let mut units = Vec::with_capacity(active.iter().map(ActiveSet::len).sum());
    for a in active {
        units.extend(a.units());
        offsets.push(units.len());
    }
    (offsets, units)
}

/// Logits at the active coordinates, with a shared default for the rest.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOutput {
    pub logits: SparseRows,
    pub default_logit: f32,
    pub total_units: usize,
}

/// Weight gradient with explicit rows only for units that were active in
/// at least one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparseGrad {
    units: Vec<u32>,
    cols: usize,
    data: Vec<f32>,
}

impl RowSparseGrad {
    pub fn empty(cols: usize) -> Self {
        Self {
            units: Vec::new(),
            cols,
            data: Vec::new(),
        }
    }

    pub fn from_rows(cols: usize, rows: Vec<(u32, Vec<f32>)>) -> Result<Self> {
        let mut rows = rows;
        rows.sort_by_key(|r| r.0);
        let mut out = Self::empty(cols);
        for (u, r) in rows {
            if r.len() != cols {
                return Err(Error::dim("gradient row length", cols, r.len()));
            }
            if out.units.last() == Some(&u) {
                return Err(Error::Precondition(format!("duplicate gradient row {u}")));
            }
            out.units.push(u);
            out.data.extend_from_slice(&r);
        }
        Ok(out)
    }

    /// Ascending ids of the explicit rows.
    pub fn units(&self) -> &[u32] {
        &self.units
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, unit: u32) -> Option<&[f32]> {
        self.units.binary_search(&unit).ok().map(|r| self.row(r))
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn to_dense(&self, n: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(n, self.cols);
        for (r, &u) in self.units.iter().enumerate() {
            m.row_mut(u as usize).copy_from_slice(self.row(r));
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseGrad {
    pub dw: RowSparseGrad,
    /// Present only when requested.
    pub dx: Option<DenseMatrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub dw: DenseMatrix,
    pub dx: Option<DenseMatrix>,
}

fn check_inner(x: &DenseMatrix, w: &DenseMatrix) -> Result<()> {
    if x.cols() != w.cols() {
        return Err(Error::dim(
            "input columns vs weight columns",
            w.cols(),
            x.cols(),
        ));
    }
    Ok(())
}

/// `Y = X·Wᵀ`, every entry computed by [`dot`].
pub fn forward_dense(x: &DenseMatrix, w: &DenseMatrix) -> Result<DenseMatrix> {
    check_inner(x, w)?;
    let (m, n) = (x.rows(), w.rows());
    let mut y = DenseMatrix::zeros(m, n);
    if n == 0 {
        return Ok(y);
    }
    let fill = |j0: usize, out: &mut [f32]| {
        let rows = out.len() / n;
        for b in (0..n).step_by(ROW_BLOCK) {
            let end = (b + ROW_BLOCK).min(n);
            for dj in 0..rows {
                let xj = x.row(j0 + dj);
                let yj = &mut out[dj * n..(dj + 1) * n];
                for (i, y) in yj.iter_mut().enumerate().take(end).skip(b) {
                    *y = dot(w.row(i), xj);
                }
            }
        }
    };
    const SAMPLES: usize = 16;
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        y.as_mut_slice()
            .par_chunks_mut(SAMPLES * n)
            .enumerate()
            .for_each(|(c, out)| fill(c * SAMPLES, out));
    }
    #[cfg(not(feature = "parallel"))]
    for (c, out) in y.as_mut_slice().chunks_mut(SAMPLES * n).enumerate() {
        fill(c * SAMPLES, out);
    }
    Ok(y)
}

fn check_active(active: &[ActiveSet], m: usize, n: usize) -> Result<()> {
    if active.len() != m {
        return Err(Error::dim("active sets vs samples", m, active.len()));
    }
    for a in active {
        for u in a.units() {
            if u as usize >= n {
                return Err(Error::UnitOutOfRange {
                    unit: u,
                    num_units: n,
                });
            }
        }
    }
    Ok(())
}

/// Logits of the active units only, in active-set order.
pub fn forward_sparse(
    x: &DenseMatrix,
    w: &DenseMatrix,
    active: &[ActiveSet],
    default_logit: f32,
) -> Result<SparseOutput> {
    check_inner(x, w)?;
    check_active(active, x.rows(), w.rows())?;
    let (offsets, units) = pattern_from_active(active);
    let mut values = vec![0.0f32; units.len()];
    let fill = |j: usize, out: &mut [f32]| {
        let xj = x.row(j);
        for (v, &u) in out.iter_mut().zip(&units[offsets[j]..offsets[j + 1]]) {
            *v = dot(w.row(u as usize), xj);
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let mut chunks = Vec::with_capacity(active.len());
        let mut rest = values.as_mut_slice();
        for j in 0..active.len() {
            let (head, tail) = rest.split_at_mut(offsets[j + 1] - offsets[j]);
            chunks.push(head);
            rest = tail;
        }
        chunks
            .into_par_iter()
            .enumerate()
            .for_each(|(j, out)| fill(j, out));
    }
    #[cfg(not(feature = "parallel"))]
    for j in 0..active.len() {
        fill(j, &mut values[offsets[j]..offsets[j + 1]]);
    }
    #[cfg(debug_assertions)]
    SPARSE_MACS.fetch_add(
        (units.len() * x.cols()) as u64,
        std::sync::atomic::Ordering::Relaxed,
    );
    Ok(SparseOutput {
        logits: SparseRows {
            offsets,
            units,
            values,
        },
        default_logit,
        total_units: w.rows(),
    })
}

/// Cross-entropy of one sample over explicit logits plus `tail` units at
/// `c`. Writes `p_i − [i == label]` scaled by `scale` into `grad`.
fn xent_row(
    logits: &[f32],
    label_pos: usize,
    tail: usize,
    c: f32,
    scale: f64,
    grad: &mut [f32],
) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for &y in logits {
        m = m.max(y as f64);
    }
    if tail > 0 {
        m = m.max(c as f64);
    }
    let mut z = 0.0f64;
    for &y in logits {
        z += (y as f64 - m).exp();
    }
    if tail > 0 {
        z += tail as f64 * (c as f64 - m).exp();
    }
    for (g, &y) in grad.iter_mut().zip(logits) {
        *g = (((y as f64 - m).exp() / z) * scale) as f32;
    }
    grad[label_pos] = ((((logits[label_pos] as f64 - m).exp() / z) - 1.0) * scale) as f32;
    -((logits[label_pos] as f64 - m) - z.ln())
}

/// Mean softmax cross-entropy over the batch and `∂L/∂y` on the active
/// pattern.
pub fn softmax_xent_sparse(out: &SparseOutput, labels: &[u32]) -> Result<(f64, SparseRows)> {
    let rows = out.logits.rows();
    if labels.len() != rows {
        return Err(Error::dim("labels vs samples", rows, labels.len()));
    }
    let scale = 1.0 / rows.max(1) as f64;
    let mut grad = SparseRows {
        offsets: out.logits.offsets.clone(),
        units: out.logits.units.clone(),
        values: vec![0.0; out.logits.nnz()],
    };
    let mut total = 0.0f64;
    for (j, &label) in labels.iter().enumerate() {
        let (units, logits) = out.logits.row(j);
        let pos = units
            .iter()
            .position(|&u| u == label)
            .ok_or(Error::LabelNotActive { sample: j, label })?;
        let tail = out.total_units.saturating_sub(units.len());
        let g = &mut grad.values[out.logits.offsets[j]..out.logits.offsets[j + 1]];
        total += xent_row(logits, pos, tail, out.default_logit, scale, g);
    }
    Ok((total * scale, grad))
}

/// Full softmax cross-entropy of dense logits.
pub fn softmax_xent_dense(y: &DenseMatrix, labels: &[u32]) -> Result<(f64, DenseMatrix)> {
    if labels.len() != y.rows() {
        return Err(Error::dim("labels vs samples", y.rows(), labels.len()));
    }
    let scale = 1.0 / y.rows().max(1) as f64;
    let mut dy = DenseMatrix::zeros(y.rows(), y.cols());
    let mut total = 0.0;
    for (j, &label) in labels.iter().enumerate() {
        if label as usize >= y.cols() {
            return Err(Error::UnitOutOfRange {
                unit: label,
                num_units: y.cols(),
            });
        }
        total += xent_row(y.row(j), label as usize, 0, 0.0, scale, dy.row_mut(j));
    }
    Ok((total * scale, dy))
}

/// `∂L/∂W` and optionally `∂L/∂X` restricted to the active pattern.
///
/// Each explicit `dW` row accumulates samples in ascending order and each
/// `dX` row accumulates units in ascending id order, matching
/// [`backward_dense`] term for term.
pub fn backward_sparse(
    dy: &SparseRows,
    x: &DenseMatrix,
    w: &DenseMatrix,
    active: &[ActiveSet],
    compute_dx: bool,
) -> Result<SparseGrad> {
    check_inner(x, w)?;
    check_active(active, x.rows(), w.rows())?;
    if dy.rows() != x.rows() {
        return Err(Error::dim("gradient rows vs samples", x.rows(), dy.rows()));
    }
    for (j, a) in active.iter().enumerate() {
        let (units, _) = dy.row(j);
        if units.len() != a.len() || !units.iter().copied().eq(a.units()) {
            return Err(Error::PatternMismatch { sample: j });
        }
    }
    let k = x.cols();
    let mut union: Vec<u32> = dy.units.clone();
    union.sort_unstable();
    union.dedup();
    let mut data = vec![0.0f32; union.len() * k];
    for j in 0..dy.rows() {
        let (units, vals) = dy.row(j);
        let xj = x.row(j);
        for (&u, &g) in units.iter().zip(vals) {
            let r = union.binary_search(&u).expect("unit in union");
            axpy(g, xj, &mut data[r * k..(r + 1) * k]);
        }
    }
    let dx = compute_dx.then(|| {
        let mut dx = DenseMatrix::zeros(x.rows(), k);
        let mut order: Vec<(u32, f32)> = Vec::new();
        for j in 0..dy.rows() {
            let (units, vals) = dy.row(j);
            order.clear();
            order.extend(units.iter().copied().zip(vals.iter().copied()));
            order.sort_unstable_by_key(|p| p.0);
            let dxj = dx.row_mut(j);
            for &(u, g) in &order {
                axpy(g, w.row(u as usize), dxj);
            }
        }
        dx
    });
    Ok(SparseGrad {
        dw: RowSparseGrad {
            units: union,
            cols: k,
            data,
        },
        dx,
    })
}

/// `dW = dYᵀ·X` and optionally `dX = dY·W`.
pub fn backward_dense(
    dy: &DenseMatrix,
    x: &DenseMatrix,
    w: &DenseMatrix,
    compute_dx: bool,
) -> Result<DenseGrad> {
    check_inner(x, w)?;
    if dy.rows() != x.rows() {
        return Err(Error::dim("gradient rows vs samples", x.rows(), dy.rows()));
    }
    if dy.cols() != w.rows() {
        return Err(Error::dim("gradient columns vs units", w.rows(), dy.cols()));
    }
    let (m, n, k) = (x.rows(), w.rows(), x.cols());
    let mut dw = DenseMatrix::zeros(n, k);
    if k > 0 {
        let fill = |i: usize, out: &mut [f32]| {
            for j in 0..m {
                axpy(dy.get(j, i), x.row(j), out);
            }
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            dw.as_mut_slice()
                .par_chunks_mut(k)
                .enumerate()
                .with_min_len(16)
                .for_each(|(i, out)| fill(i, out));
        }
        #[cfg(not(feature = "parallel"))]
        for (i, out) in dw.as_mut_slice().chunks_mut(k).enumerate() {
            fill(i, out);
        }
    }
    let dx = (compute_dx && k > 0).then(|| {
        let mut dx = DenseMatrix::zeros(m, k);
        let fill = |j0: usize, out: &mut [f32]| {
            let rows = out.len() / k;
            for b in (0..n).step_by(ROW_BLOCK) {
                let end = (b + ROW_BLOCK).min(n);
                for dj in 0..rows {
                    let dxj = &mut out[dj * k..(dj + 1) * k];
                    for i in b..end {
                        axpy(dy.get(j0 + dj, i), w.row(i), dxj);
                    }
                }
            }
        };
        const SAMPLES: usize = 16;
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            dx.as_mut_slice()
                .par_chunks_mut(SAMPLES * k)
                .enumerate()
                .for_each(|(c, out)| fill(c * SAMPLES, out));
        }
        #[cfg(not(feature = "parallel"))]
        for (c, out) in dx.as_mut_slice().chunks_mut(SAMPLES * k).enumerate() {
            fill(c * SAMPLES, out);
        }
        dx
    });
    let dx = if compute_dx && dx.is_none() {
        Some(DenseMatrix::zeros(m, k))
    } else {
        dx
    };
    Ok(DenseGrad { dw, dx })
}

fn check_lr(lr: f32) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::Precondition(format!(
            "learning rate must be positive and finite, got {lr}"
        )));
    }
    Ok(())
}

fn debug_check_finite(params: &LayerParams) {
    debug_assert!(
        params.weights.first_non_finite().is_none(),
        "non-finite weight after update"
    );
}

/// `W_i ← W_i − lr·dW_i` for the explicit rows of `dw`; other rows are
/// left untouched.
pub fn sgd_update(params: &mut LayerParams, dw: &RowSparseGrad, lr: f32) -> Result<()> {
    check_lr(lr)?;
    if dw.cols != params.input_dim() && !dw.is_empty() {
        return Err(Error::dim("gradient columns", params.input_dim(), dw.cols));
    }
    let n = params.num_units();
    if let Some(&u) = dw.units.iter().find(|&&u| u as usize >= n) {
        return Err(Error::UnitOutOfRange {
            unit: u,
            num_units: n,
        });
    }
    for (r, &u) in dw.units.iter().enumerate() {
        axpy(-lr, dw.row(r), params.weights.row_mut(u as usize));
    }
    debug_check_finite(params);
    Ok(())
}

/// Dense counterpart of [`sgd_update`], touching every row.
pub fn sgd_update_dense(params: &mut LayerParams, dw: &DenseMatrix, lr: f32) -> Result<()> {
    check_lr(lr)?;
    if dw.rows() != params.num_units() || dw.cols() != params.input_dim() {
        return Err(Error::dim(
            "dense gradient size",
            params.num_units() * params.input_dim(),
            dw.rows() * dw.cols(),
        ));
    }
    axpy(-lr, dw.as_slice(), params.weights.as_mut_slice());
    debug_check_finite(params);
    Ok(())
}
