use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wta_core::trainer::{
    evaluate_top1, fit, sweep_eval, train_batch_dense, write_sweep_csv, EvalMode, HashedTrainer,
    Phase, PhaseTimes,
};
use wta_core::{
    dataset::{gen_synthetic, SyntheticSpec},
    Dataset, DenseMatrix, LayerParams, Mode, PermutationSet, TrainConfig, WtaConfig,
};

use crate::args::{
    BenchArgs, Command, DataArgs, EvalArgs, GenArgs, HashArgs, ModeArg, SplitArg, SweepArgs,
    TrainArgs,
};
use crate::timing::median;
use crate::usage;

pub fn run(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sweep(a) => cmd_sweep(a, out),
        Command::Bench(a) => cmd_bench(a, out),
    }
}

fn require_file(p: &Path, flag: &str) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: no such file: {}", p.display())))
    }
}

fn require_parent(p: &Path, flag: &str) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(usage(format!(
            "{flag}: directory does not exist: {}",
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn require_inputs(d: &DataArgs) -> Result<()> {
    require_file(&d.features, "--features")?;
    require_file(&d.labels, "--labels")
}

fn check_holdout(h: f64) -> Result<()> {
    if (0.0..1.0).contains(&h) && h > 0.0 {
        Ok(())
    } else {
        Err(usage(format!("--holdout must be in (0, 1), got {h}")))
    }
}

fn check_hash(h: &HashArgs) -> Result<()> {
    if h.num_hashes == 0 || h.sections == 0 || h.elems < 2 {
        return Err(usage(
            "--num-hashes and --sections must be >= 1 and --elems >= 2",
        ));
    }
    if h.active == 0 {
        return Err(usage("--active must be >= 1"));
    }
    if h.rehash_period == 0 {
        return Err(usage("--rehash-period must be >= 1"));
    }
    if !h.default_logit.is_finite() {
        return Err(usage("--default-logit must be finite"));
    }
    Ok(())
}

fn wta_config(h: &HashArgs, input_dim: usize, seed: u64) -> WtaConfig {
    WtaConfig {
        input_dim,
        num_hashes: h.num_hashes,
        sections: h.sections,
        elems: h.elems,
        seed,
    }
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
    Ok(BufWriter::new(f))
}

fn load(d: &DataArgs) -> Result<Dataset> {
    Dataset::load_binary(&d.features, &d.labels)
        .with_context(|| format!("loading {} / {}", d.features.display(), d.labels.display()))
}

fn select_split(ds: Dataset, split: SplitArg, holdout: f64, seed: u64) -> Result<Dataset> {
    Ok(match split {
        SplitArg::All => ds,
        SplitArg::Heldout => ds.split(holdout, seed)?.1,
        SplitArg::Train => ds.split(holdout, seed)?.0,
    })
}

pub fn cmd_gen(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    if a.classes == 0 {
        return Err(usage("--classes must be >= 1"));
    }
    if a.dim == 0 || a.per_class == 0 {
        return Err(usage("--dim and --per-class must be >= 1"));
    }
    if !(0.0..=1.0).contains(&a.sparsity) {
        return Err(usage("--sparsity must be in [0, 1]"));
    }
    if !(a.sigma >= 0.0 && a.sigma.is_finite()) {
        return Err(usage("--sigma must be finite and >= 0"));
    }
    require_parent(&a.data.features, "--features")?;
    require_parent(&a.data.labels, "--labels")?;
    let spec = SyntheticSpec {
        sparsity: a.sparsity,
        ..SyntheticSpec::new(a.classes, a.dim, a.per_class, a.sigma, a.seed)
    };
    let ds = gen_synthetic(spec)?;
    ds.save_binary(&a.data.features, &a.data.labels)?;
    writeln!(
        out,
        "rows={} dim={} classes={} features={} labels={}",
        ds.len(),
        ds.dim(),
        ds.num_classes,
        a.data.features.display(),
        a.data.labels.display()
    )?;
    Ok(())
}

pub fn train_config(a: &TrainArgs, input_dim: usize) -> TrainConfig {
    TrainConfig {
        batch_size: a.batch,
        learning_rate: a.lr,
        epochs: a.epochs,
        active_units: a.hash.active,
        wta: wta_config(&a.hash, input_dim, a.seed),
        default_logit: a.hash.default_logit,
        label_force: !a.no_label_force,
        seed: a.seed,
        rehash_period: a.hash.rehash_period,
        eval_every: a.eval_every,
        holdout: a.holdout,
        ..TrainConfig::new(a.mode.into(), input_dim)
    }
}

fn phases_path(a: &TrainArgs) -> PathBuf {
    a.phases
        .clone()
        .unwrap_or_else(|| a.out.with_extension("phases.csv"))
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    require_inputs(&a.data)?;
    check_holdout(a.holdout)?;
    check_hash(&a.hash)?;
    if a.batch == 0 {
        return Err(usage("--batch must be >= 1"));
    }
    if !(a.lr > 0.0 && a.lr.is_finite()) {
        return Err(usage(format!("--lr must be positive, got {}", a.lr)));
    }
    let phases = phases_path(a);
    for (p, flag) in [
        (&a.out, "--out"),
        (&a.weights, "--weights"),
        (&phases, "--phases"),
    ] {
        require_parent(p, flag)?;
    }
    if let Some(p) = &a.perms {
        require_parent(p, "--perms")?;
    }
    let ds = load(&a.data)?;
    let cfg = train_config(a, ds.dim());
    let fitted = fit(&ds, &cfg)?;
    fitted.report.write_csv(create(&a.out)?)?;
    fitted.report.phases.write_csv(create(&phases)?)?;
    fitted.params.save(&a.weights)?;
    if let (Some(p), Mode::Hashed) = (&a.perms, cfg.mode) {
        PermutationSet::generate(cfg.wta)?.save(p)?;
    }
    let last = fitted
        .report
        .points
        .last()
        .expect("initial row always present");
    writeln!(
        out,
        "mode={} epochs={} top1={:.6} loss={:.6} train_s={:.3}",
        match a.mode {
            ModeArg::Dense => "dense",
            ModeArg::Hashed => "hashed",
        },
        a.epochs,
        last.top1,
        last.loss,
        last.elapsed_s
    )?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    require_inputs(&a.data)?;
    require_file(&a.weights, "--weights")?;
    if let Some(p) = &a.perms {
        require_file(p, "--perms")?;
    }
    check_holdout(a.holdout)?;
    check_hash(&a.hash)?;
    let params = LayerParams::load(&a.weights)?;
    let ds = select_split(load(&a.data)?, a.split, a.holdout, a.seed)?;
    let top1 = match a.mode {
        ModeArg::Dense => evaluate_top1(&params, &ds.features, &ds.labels, EvalMode::Dense)?,
        ModeArg::Hashed => {
            let perms = match &a.perms {
                Some(p) => PermutationSet::load(p)?,
                None => PermutationSet::generate(wta_config(&a.hash, ds.dim(), a.seed))?,
            };
            evaluate_top1(
                &params,
                &ds.features,
                &ds.labels,
                EvalMode::Hashed {
                    perms: &perms,
                    active_units: a.hash.active,
                },
            )?
        }
    };
    writeln!(out, "top1={top1:.6} rows={}", ds.len())?;
    Ok(())
}

pub fn cmd_sweep(a: &SweepArgs, out: &mut dyn Write) -> Result<()> {
    require_inputs(&a.data)?;
    require_file(&a.weights, "--weights")?;
    require_parent(&a.out, "--out")?;
    check_holdout(a.holdout)?;
    if a.a_list.contains(&0) || a.q_list.contains(&0) {
        return Err(usage("--a-list and --q-list entries must be >= 1"));
    }
    let params = LayerParams::load(&a.weights)?;
    let ds = select_split(load(&a.data)?, a.split, a.holdout, a.seed)?;
    let base = WtaConfig {
        input_dim: ds.dim(),
        num_hashes: 1,
        sections: a.sections,
        elems: a.elems,
        seed: a.seed,
    };
    let rows = sweep_eval(
        &params,
        &ds.features,
        &ds.labels,
        &a.a_list,
        &a.q_list,
        base,
    )?;
    write_sweep_csv(&rows, create(&a.out)?)?;
    writeln!(out, "rows={} out={}", rows.len(), a.out.display())?;
    Ok(())
}

/// Sizes and repetition counts for one timing run.
#[derive(Debug, Clone, Copy)]
pub struct BenchSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub active: usize,
    pub num_hashes: usize,
    pub sections: usize,
    pub elems: usize,
    pub reps: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl BenchSpec {
    pub fn from_args(a: &BenchArgs) -> Self {
        Self {
            m: a.m,
            k: a.k,
            n: a.n,
            active: a.hash.active,
            num_hashes: a.hash.num_hashes,
            sections: a.hash.sections,
            elems: a.hash.elems,
            reps: a.reps,
            warmup: a.warmup,
            seed: a.seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || self.k == 0 || self.n == 0 {
            return Err(usage("--M, --K and --N must be >= 1"));
        }
        if self.reps == 0 {
            return Err(usage("--reps must be >= 1"));
        }
        if self.active == 0 || self.active > self.n {
            return Err(usage(format!(
                "--active {} must be in 1..={}",
                self.active, self.n
            )));
        }
        if self.elems > self.k {
            return Err(usage("--elems must not exceed --K"));
        }
        Ok(())
    }
}

/// Median per-batch times of one update step, in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTimes {
    /// (phase name, median) for the dense step, ending with `total`.
    pub dense: Vec<(&'static str, f64)>,
    /// (phase name, median) for the hashed step, ending with `total`.
    pub hashed: Vec<(&'static str, f64)>,
    /// Hashed step without the index rebuild.
    pub hashed_no_rehash: f64,
    /// Dense forward, loss and backward.
    pub dense_fwd_bwd: f64,
    /// Hashed input hashing, selection, forward, loss and backward.
    pub hashed_fwd_bwd: f64,
}

const DENSE_PHASES: [Phase; 4] = [Phase::Forward, Phase::Loss, Phase::Backward, Phase::Update];
const FWD_BWD: [Phase; 5] = [
    Phase::HashInputs,
    Phase::Select,
    Phase::Forward,
    Phase::Loss,
    Phase::Backward,
];

fn secs(p: &PhaseTimes, phases: &[Phase]) -> f64 {
    phases.iter().map(|&ph| p.total(ph).as_secs_f64()).sum()
}

fn med_of(samples: &[(PhaseTimes, Duration)], f: impl Fn(&PhaseTimes, Duration) -> f64) -> f64 {
    let mut v: Vec<f64> = samples.iter().map(|(p, w)| f(p, *w)).collect();
    median(&mut v)
}

/// State for timing dense and hashed steps at one size: random inputs in
/// `[-1, 1)`, random labels, uniform-initialised weights, and a hashed
/// trainer that rebuilds its index on every step.
struct StepRig {
    x: DenseMatrix,
    labels: Vec<u32>,
    cfg: TrainConfig,
    dense: LayerParams,
    hashed: LayerParams,
    trainer: HashedTrainer,
    dense_samples: Vec<(PhaseTimes, Duration)>,
    hashed_samples: Vec<(PhaseTimes, Duration)>,
}

impl StepRig {
    fn new(spec: &BenchSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let x: Vec<f32> = (0..spec.m * spec.k)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        let labels = (0..spec.m)
            .map(|_| rng.random_range(0..spec.n as u32))
            .collect();
        let cfg = TrainConfig {
            batch_size: spec.m,
            learning_rate: 0.01,
            active_units: spec.active,
            wta: WtaConfig {
                input_dim: spec.k,
                num_hashes: spec.num_hashes,
                sections: spec.sections,
                elems: spec.elems,
                seed: spec.seed,
            },
            rehash_period: 1,
            compute_dx: true,
            ..TrainConfig::new(Mode::Hashed, spec.k)
        };
        let params = LayerParams::init_uniform(spec.n, spec.k, spec.seed);
        Ok(Self {
            x: DenseMatrix::from_vec(spec.m, spec.k, x)?,
            labels,
            trainer: HashedTrainer::new(cfg.wta)?,
            cfg,
            dense: params.clone(),
            hashed: params,
            dense_samples: Vec::new(),
            hashed_samples: Vec::new(),
        })
    }

    /// One dense and one hashed step; recorded unless `warmup`.
    fn round(&mut self, warmup: bool) -> Result<()> {
        let t = Instant::now();
        let dense = train_batch_dense(&mut self.dense, &self.x, &self.labels, &self.cfg)?;
        let dt = t.elapsed();
        let t = Instant::now();
        let hashed =
            self.trainer
                .train_batch(&mut self.hashed, &self.x, &self.labels, &self.cfg)?;
        let ht = t.elapsed();
        if !warmup {
            self.dense_samples.push((dense.phases, dt));
            self.hashed_samples.push((hashed.phases, ht));
        }
        Ok(())
    }

    fn medians(&self) -> StepTimes {
        let (dense, hashed) = (&self.dense_samples, &self.hashed_samples);
        let mut dense_rows: Vec<(&'static str, f64)> = DENSE_PHASES
            .iter()
            .map(|&ph| (ph.name(), med_of(dense, |p, _| p.total(ph).as_secs_f64())))
            .collect();
        dense_rows.push(("total", med_of(dense, |_, w| w.as_secs_f64())));
        let mut hashed_rows: Vec<(&'static str, f64)> = Phase::ALL
            .iter()
            .map(|&ph| (ph.name(), med_of(hashed, |p, _| p.total(ph).as_secs_f64())))
            .collect();
        hashed_rows.push(("total", med_of(hashed, |_, w| w.as_secs_f64())));
        StepTimes {
            dense: dense_rows,
            hashed: hashed_rows,
            hashed_no_rehash: med_of(hashed, |p, w| {
                w.as_secs_f64() - p.total(Phase::Rehash).as_secs_f64()
            }),
            dense_fwd_bwd: med_of(dense, |p, _| {
                secs(p, &[Phase::Forward, Phase::Loss, Phase::Backward])
            }),
            hashed_fwd_bwd: med_of(hashed, |p, _| secs(p, &FWD_BWD)),
        }
    }
}

/// Median times of `warmup + reps` dense and hashed steps at one size.
pub fn time_step(spec: &BenchSpec) -> Result<StepTimes> {
    let mut rig = StepRig::new(spec)?;
    for r in 0..spec.warmup + spec.reps {
        rig.round(r < spec.warmup)?;
    }
    Ok(rig.medians())
}

/// One `N,impl,median_s` row.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderRow {
    pub n: usize,
    pub imp: &'static str,
    pub median_s: f64,
}

/// [`time_step`] for every `N` in `ns`, with repetitions interleaved
/// across sizes so slow drifts in machine load affect every size alike.
pub fn time_ladder(spec: &BenchSpec, ns: &[usize]) -> Result<Vec<LadderRow>> {
    let mut rigs = ns
        .iter()
        .map(|&n| StepRig::new(&BenchSpec { n, ..*spec }))
        .collect::<Result<Vec<_>>>()?;
    for r in 0..spec.warmup + spec.reps {
        for rig in &mut rigs {
            rig.round(r < spec.warmup)?;
        }
    }
    let mut rows = Vec::with_capacity(ns.len() * 5);
    for (&n, rig) in ns.iter().zip(&rigs) {
        let t = rig.medians();
        let total = |v: &[(&str, f64)]| v.last().map(|r| r.1).unwrap_or(0.0);
        for (imp, s) in [
            ("dense", total(&t.dense)),
            ("hashed", total(&t.hashed)),
            ("hashed_no_rehash", t.hashed_no_rehash),
            ("dense_fwd_bwd", t.dense_fwd_bwd),
            ("hashed_fwd_bwd", t.hashed_fwd_bwd),
        ] {
            rows.push(LadderRow {
                n,
                imp,
                median_s: s,
            });
        }
    }
    Ok(rows)
}

pub fn cmd_bench(a: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let spec = BenchSpec::from_args(a);
    spec.validate()?;
    if let Some(p) = &a.out {
        require_parent(p, "--out")?;
    }
    let mut sink: Box<dyn Write + '_> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(&mut *out),
    };
    match &a.n_ladder {
        Some(ns) => {
            if ns.is_empty() || ns.iter().any(|&n| n < spec.active) {
                return Err(usage("--n-ladder entries must be >= --active"));
            }
            let rows = time_ladder(&spec, ns)?;
            writeln!(sink, "N,impl,median_s")?;
            for r in rows {
                writeln!(sink, "{},{},{}", r.n, r.imp, r.median_s)?;
            }
        }
        None => {
            let t = time_step(&spec)?;
            writeln!(sink, "impl,phase,median_s")?;
            for (imp, rows) in [("dense", &t.dense), ("hashed", &t.hashed)] {
                for (ph, s) in rows {
                    writeln!(sink, "{imp},{ph},{s}")?;
                }
            }
        }
    }
    sink.flush()?;
    Ok(())
}

/// Writes to standard output through a lock held for the whole command.
pub fn run_stdout(cmd: &Command) -> Result<()> {
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    run(cmd, &mut lock)
}
