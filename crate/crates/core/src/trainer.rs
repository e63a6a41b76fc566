//! Mini-batch SGD for a single classification layer, in dense or hashed
//! mode, plus top-1 evaluation and `(A, Q)` sweeps.

use std::io::Write;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use web_time::Instant;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::index::{select_batch, ActiveSet, MultiHashIndex};
use crate::layer::{
    backward_dense, backward_sparse, forward_dense, forward_sparse, sgd_update, sgd_update_dense,
    softmax_xent_dense, softmax_xent_sparse, LayerParams,
};
use crate::matrix::DenseMatrix;
use crate::wta::{hash_matrix, PermutationSet, WtaConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Dense,
    Hashed,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Mode::Dense),
            "hashed" => Ok(Mode::Hashed),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub epochs: usize,
    /// `A`, units selected per sample in hashed mode.
    pub active_units: usize,
    pub wta: WtaConfig,
    pub default_logit: f32,
    pub label_force: bool,
    /// Seeds the weight init, the split and the epoch shuffles.
    pub seed: u64,
    /// Rebuild the index every this many batches.
    pub rehash_period: usize,
    /// Evaluate every this many batches; 0 evaluates only at epoch ends.
    pub eval_every: usize,
    /// Held-out fraction used by [`fit`].
    pub holdout: f64,
    /// Also compute `∂L/∂X`. A single layer has no use for it.
    pub compute_dx: bool,
}

impl TrainConfig {
    pub fn new(mode: Mode, input_dim: usize) -> Self {
        Self {
            mode,
            batch_size: 64,
            learning_rate: 0.5,
            epochs: 10,
            active_units: 32,
            wta: WtaConfig::with_defaults(input_dim, 0x5eed),
            default_logit: 0.0,
            label_force: true,
            seed: 0x5eed,
            rehash_period: 1,
            eval_every: 0,
            holdout: 0.1,
            compute_dx: false,
        }
    }

    fn validate(&self, num_units: usize, input_dim: usize, rows: usize) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.batch_size > rows {
            return Err(Error::Config(format!(
                "batch_size {} exceeds the {rows} training rows",
                self.batch_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.rehash_period == 0 {
            return Err(Error::Config("rehash_period must be >= 1".into()));
        }
        if self.mode == Mode::Hashed {
            if self.active_units == 0 || self.active_units > num_units {
                return Err(Error::Config(format!(
                    "active_units A = {} must be in 1..={num_units}",
                    self.active_units
                )));
            }
            if self.wta.input_dim != input_dim {
                return Err(Error::dim("hash input_dim", input_dim, self.wta.input_dim));
            }
            self.wta.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Rehash,
    HashInputs,
    Select,
    Forward,
    Loss,
    Backward,
    Update,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Rehash,
        Phase::HashInputs,
        Phase::Select,
        Phase::Forward,
        Phase::Loss,
        Phase::Backward,
        Phase::Update,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Rehash => "rehash",
            Phase::HashInputs => "hash_inputs",
            Phase::Select => "select",
            Phase::Forward => "forward",
            Phase::Loss => "loss",
            Phase::Backward => "backward",
            Phase::Update => "update",
        }
    }
}

/// Accumulated wall time and call count per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    totals: [Duration; 7],
    calls: [u64; 7],
}

impl PhaseTimes {
    pub fn record(&mut self, phase: Phase, d: Duration) {
        self.totals[phase as usize] += d;
        self.calls[phase as usize] += 1;
    }

    pub fn total(&self, phase: Phase) -> Duration {
        self.totals[phase as usize]
    }

    pub fn calls(&self, phase: Phase) -> u64 {
        self.calls[phase as usize]
    }

    pub fn sum(&self) -> Duration {
        self.totals.iter().sum()
    }

    pub fn merge(&mut self, other: &PhaseTimes) {
        for p in 0..7 {
            self.totals[p] += other.totals[p];
            self.calls[p] += other.calls[p];
        }
    }

    /// `phase,total_s,calls`, one row per phase in [`Phase::ALL`] order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "phase,total_s,calls")?;
        for p in Phase::ALL {
            writeln!(
                w,
                "{},{},{}",
                p.name(),
                self.total(p).as_secs_f64(),
                self.calls(p)
            )?;
        }
        Ok(())
    }
}

fn timed<T>(times: &mut PhaseTimes, phase: Phase, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    times.record(phase, t.elapsed());
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOutcome {
    pub loss: f64,
    pub phases: PhaseTimes,
    pub wall: Duration,
}

/// One dense step: full forward, full softmax, full backward, all rows updated.
/// A learning rate of exactly zero skips the update and only measures the loss.
pub fn train_batch_dense(
    params: &mut LayerParams,
    x: &DenseMatrix,
    labels: &[u32],
    cfg: &TrainConfig,
) -> Result<BatchOutcome> {
    let start = Instant::now();
    let mut ph = PhaseTimes::default();
    let y = timed(&mut ph, Phase::Forward, || {
        forward_dense(x, params.weights())
    })?;
    let (loss, dy) = timed(&mut ph, Phase::Loss, || softmax_xent_dense(&y, labels))?;
    let g = timed(&mut ph, Phase::Backward, || {
        backward_dense(&dy, x, params.weights(), cfg.compute_dx)
    })?;
    if cfg.learning_rate != 0.0 {
        timed(&mut ph, Phase::Update, || {
            sgd_update_dense(params, &g.dw, cfg.learning_rate)
        })?;
    }
    Ok(BatchOutcome {
        loss,
        phases: ph,
        wall: start.elapsed(),
    })
}

/// Hashed-mode state carried across batches: the permutations and the
/// current (possibly stale) index.
#[derive(Debug, Clone)]
pub struct HashedTrainer {
    perms: PermutationSet,
    index: Option<MultiHashIndex>,
    batches: u64,
}

impl HashedTrainer {
    pub fn new(wta: WtaConfig) -> Result<Self> {
        Ok(Self::with_perms(PermutationSet::generate(wta)?))
    }

    pub fn with_perms(perms: PermutationSet) -> Self {
        Self {
            perms,
            index: None,
            batches: 0,
        }
    }

    pub fn perms(&self) -> &PermutationSet {
        &self.perms
    }

    /// Rehash (per `rehash_period`), hash the batch, select with label
    /// forcing, sparse forward, sparse softmax, sparse backward, update.
    pub fn train_batch(
        &mut self,
        params: &mut LayerParams,
        x: &DenseMatrix,
        labels: &[u32],
        cfg: &TrainConfig,
    ) -> Result<BatchOutcome> {
        let start = Instant::now();
        let mut ph = PhaseTimes::default();
        if self.index.is_none() || self.batches.is_multiple_of(cfg.rehash_period as u64) {
            let idx = timed(&mut ph, Phase::Rehash, || {
                MultiHashIndex::build(params.weights(), &self.perms)
            })?;
            self.index = Some(idx);
        }
        self.batches += 1;
        let index = self.index.as_ref().expect("index built above");
        let codes = timed(&mut ph, Phase::HashInputs, || hash_matrix(x, &self.perms))?;
        let forced: Vec<Vec<u32>> = if cfg.label_force {
            labels.iter().map(|&l| vec![l]).collect()
        } else {
            Vec::new()
        };
        let active = timed(&mut ph, Phase::Select, || {
            select_batch(&codes, index, cfg.active_units, &forced)
        })?;
        let out = timed(&mut ph, Phase::Forward, || {
            forward_sparse(x, params.weights(), &active, cfg.default_logit)
        })?;
        let (loss, dy) = timed(&mut ph, Phase::Loss, || softmax_xent_sparse(&out, labels))?;
        let g = timed(&mut ph, Phase::Backward, || {
            backward_sparse(&dy, x, params.weights(), &active, cfg.compute_dx)
        })?;
        if cfg.learning_rate != 0.0 {
            timed(&mut ph, Phase::Update, || {
                sgd_update(params, &g.dw, cfg.learning_rate)
            })?;
        }
        Ok(BatchOutcome {
            loss,
            phases: ph,
            wall: start.elapsed(),
        })
    }
}

/// Hashed step with a fresh trainer built from `perms`, so the index is
/// rebuilt from the current weights.
pub fn train_batch_hashed(
    params: &mut LayerParams,
    x: &DenseMatrix,
    labels: &[u32],
    perms: &PermutationSet,
    cfg: &TrainConfig,
) -> Result<BatchOutcome> {
    HashedTrainer::with_perms(perms.clone()).train_batch(params, x, labels, cfg)
}

#[derive(Debug, Clone, Copy)]
pub enum EvalMode<'a> {
    Dense,
    Hashed {
        perms: &'a PermutationSet,
        active_units: usize,
    },
}

/// Rows evaluated per dense forward call.
const EVAL_CHUNK: usize = 512;

fn argmax_lowest(vals: impl Iterator<Item = (u32, f32)>) -> Option<u32> {
    let mut best: Option<(u32, f32)> = None;
    for (u, v) in vals {
        best = match best {
            Some((bu, bv)) if v < bv || (v == bv && u > bu) => Some((bu, bv)),
            _ => Some((u, v)),
        };
    }
    best.map(|b| b.0)
}

fn check_eval(params: &LayerParams, x: &DenseMatrix, labels: &[u32]) -> Result<()> {
    if x.cols() != params.input_dim() {
        return Err(Error::dim("input columns", params.input_dim(), x.cols()));
    }
    if labels.len() != x.rows() {
        return Err(Error::dim("labels vs samples", x.rows(), labels.len()));
    }
    if x.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn chunk_rows(x: &DenseMatrix, start: usize, end: usize) -> DenseMatrix {
    x.gather_rows(&(start..end).collect::<Vec<_>>())
}

fn eval_dense(params: &LayerParams, x: &DenseMatrix, labels: &[u32]) -> Result<(usize, f64)> {
    let mut correct = 0;
    let mut loss = 0.0;
    for start in (0..x.rows()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(x.rows());
        let xc = chunk_rows(x, start, end);
        let y = forward_dense(&xc, params.weights())?;
        let (l, _) = softmax_xent_dense(&y, &labels[start..end])?;
        loss += l * (end - start) as f64;
        for (j, &label) in labels[start..end].iter().enumerate() {
            let pred = argmax_lowest(y.row(j).iter().enumerate().map(|(i, &v)| (i as u32, v)));
            correct += usize::from(pred == Some(label));
        }
    }
    Ok((correct, loss / x.rows() as f64))
}

/// Hashed prediction with a prebuilt index: argmax over the active logits,
/// no label forcing. Samples with no active units count as wrong.
pub fn evaluate_hashed_with_index(
    params: &LayerParams,
    x: &DenseMatrix,
    labels: &[u32],
    perms: &PermutationSet,
    index: &MultiHashIndex,
    active_units: usize,
) -> Result<f64> {
    check_eval(params, x, labels)?;
    let preds = predict_hashed(params, x, perms, index, active_units)?;
    let correct = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == Some(**l))
        .count();
    Ok(correct as f64 / x.rows() as f64)
}

fn predict_hashed(
    params: &LayerParams,
    x: &DenseMatrix,
    perms: &PermutationSet,
    index: &MultiHashIndex,
    active_units: usize,
) -> Result<Vec<Option<u32>>> {
    let codes = hash_matrix(x, perms)?;
    let active: Vec<ActiveSet> = select_batch(&codes, index, active_units, &[])?;
    let out = forward_sparse(x, params.weights(), &active, 0.0)?;
    Ok((0..x.rows())
        .map(|j| {
            let (u, v) = out.logits.row(j);
            argmax_lowest(u.iter().copied().zip(v.iter().copied()))
        })
        .collect())
}

/// Top-1 accuracy in `[0, 1]`. Argmax ties go to the lowest unit id.
pub fn evaluate_top1(
    params: &LayerParams,
    x: &DenseMatrix,
    labels: &[u32],
    mode: EvalMode<'_>,
) -> Result<f64> {
    check_eval(params, x, labels)?;
    match mode {
        EvalMode::Dense => Ok(eval_dense(params, x, labels)?.0 as f64 / x.rows() as f64),
        EvalMode::Hashed {
            perms,
            active_units,
        } => {
            let index = MultiHashIndex::build(params.weights(), perms)?;
            evaluate_hashed_with_index(params, x, labels, perms, &index, active_units)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub active_units: usize,
    pub num_hashes: usize,
    pub top1: f64,
    /// Hashing the inputs, selection and the sparse forward pass; the
    /// index build is excluded.
    pub forward_s: f64,
}

/// Hashed accuracy and forward time for every `(A, Q)` pair. Permutations
/// for each `Q` come from `base` with only `num_hashes` changed, so smaller
/// `Q` use a prefix of the larger sets. The index is built once per `Q`.
pub fn sweep_eval(
    params: &LayerParams,
    x: &DenseMatrix,
    labels: &[u32],
    a_list: &[usize],
    q_list: &[usize],
    base: WtaConfig,
) -> Result<Vec<SweepRow>> {
    check_eval(params, x, labels)?;
    let mut rows = Vec::with_capacity(a_list.len() * q_list.len());
    for &a in a_list {
        if a == 0 {
            return Err(Error::Config("active unit counts must be >= 1".into()));
        }
    }
    let mut by_q = Vec::with_capacity(q_list.len());
    for &q in q_list {
        let perms = PermutationSet::generate(WtaConfig {
            num_hashes: q,
            ..base
        })?;
        let index = MultiHashIndex::build(params.weights(), &perms)?;
        by_q.push((q, perms, index));
    }
    for &a in a_list {
        for (q, perms, index) in &by_q {
            let t = Instant::now();
            let preds = predict_hashed(params, x, perms, index, a)?;
            let forward_s = t.elapsed().as_secs_f64();
            let correct = preds
                .iter()
                .zip(labels)
                .filter(|(p, l)| **p == Some(**l))
                .count();
            rows.push(SweepRow {
                active_units: a,
                num_hashes: *q,
                top1: correct as f64 / x.rows() as f64,
                forward_s,
            });
        }
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "A,Q,top1,forward_s")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.active_units, r.num_hashes, r.top1, r.forward_s
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    /// Cumulative training wall time; evaluation time is not counted.
    pub elapsed_s: f64,
    pub epoch: usize,
    /// Batches completed so far.
    pub batch: usize,
    pub split: String,
    pub top1: f64,
    /// Mean training loss over the batches since the previous point; for
    /// the initial point, the dense loss over the training split.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub points: Vec<EvalPoint>,
    pub phases: PhaseTimes,
}

pub const REPORT_HEADER: &str = "elapsed_s,epoch,batch,split,top1,loss";

impl TrainReport {
    pub fn final_top1(&self) -> Option<f64> {
        self.points.last().map(|p| p.top1)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{REPORT_HEADER}")?;
        for p in &self.points {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                p.elapsed_s, p.epoch, p.batch, p.split, p.top1, p.loss
            )?;
        }
        Ok(())
    }

    /// Parses the output of [`write_csv`](Self::write_csv).
    pub fn read_points_csv(text: &str) -> Result<Vec<EvalPoint>> {
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_HEADER) {
            return Err(Error::Config("missing report header".into()));
        }
        let bad = |l: &str| Error::Config(format!("malformed report row {l:?}"));
        lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                if f.len() != 6 {
                    return Err(bad(l));
                }
                Ok(EvalPoint {
                    elapsed_s: f[0].parse().map_err(|_| bad(l))?,
                    epoch: f[1].parse().map_err(|_| bad(l))?,
                    batch: f[2].parse().map_err(|_| bad(l))?,
                    split: f[3].to_string(),
                    top1: f[4].parse().map_err(|_| bad(l))?,
                    loss: f[5].parse().map_err(|_| bad(l))?,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub params: LayerParams,
    pub report: TrainReport,
}

/// Splits `dataset` by `cfg.holdout`, then runs [`fit_split`].
pub fn fit(dataset: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train, heldout) = dataset.split(cfg.holdout, cfg.seed)?;
    fit_split(&train, &heldout, cfg)
}

/// Trains a fresh layer with one unit per class on `train`, evaluating
/// dense top-1 on `heldout` at the configured cadence.
pub fn fit_split(train: &Dataset, heldout: &Dataset, cfg: &TrainConfig) -> Result<FitOutcome> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = train.num_classes as usize;
    let k = train.dim();
    if heldout.dim() != k {
        return Err(Error::dim("held-out columns", k, heldout.dim()));
    }
    if let Some(row) = heldout.labels.iter().position(|&l| l as usize >= n) {
        return Err(Error::LabelOutOfRange {
            row,
            label: heldout.labels[row],
            num_classes: train.num_classes,
        });
    }
    cfg.validate(n, k, train.len())?;
    let mut params = LayerParams::init_uniform(n, k, cfg.seed);
    let mut hashed = match cfg.mode {
        Mode::Hashed => Some(HashedTrainer::new(cfg.wta)?),
        Mode::Dense => None,
    };
    let mut report = TrainReport::default();
    let (acc, _) = eval_dense(&params, &heldout.features, &heldout.labels)?;
    let (_, train_loss) = eval_dense(&params, &train.features, &train.labels)?;
    report.points.push(EvalPoint {
        elapsed_s: 0.0,
        epoch: 0,
        batch: 0,
        split: "heldout".into(),
        top1: acc as f64 / heldout.len() as f64,
        loss: train_loss,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut elapsed = Duration::ZERO;
    let mut batches = 0usize;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let nb = order.len().div_ceil(cfg.batch_size);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let t = Instant::now();
            let x = train.features.gather_rows(chunk);
            let labels: Vec<u32> = chunk.iter().map(|&i| train.labels[i]).collect();
            let out = match hashed.as_mut() {
                Some(h) => h.train_batch(&mut params, &x, &labels, cfg)?,
                None => train_batch_dense(&mut params, &x, &labels, cfg)?,
            };
            elapsed += t.elapsed();
            report.phases.merge(&out.phases);
            batches += 1;
            loss_sum += out.loss;
            loss_count += 1;
            let cadence = cfg.eval_every > 0 && batches.is_multiple_of(cfg.eval_every);
            if cadence || b + 1 == nb {
                let (acc, _) = eval_dense(&params, &heldout.features, &heldout.labels)?;
                report.points.push(EvalPoint {
                    elapsed_s: elapsed.as_secs_f64(),
                    epoch,
                    batch: batches,
                    split: "heldout".into(),
                    top1: acc as f64 / heldout.len() as f64,
                    loss: loss_sum / loss_count as f64,
                });
                loss_sum = 0.0;
                loss_count = 0;
            }
        }
    }
    Ok(FitOutcome { params, report })
}
