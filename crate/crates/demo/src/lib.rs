//! Browser demo: hashing a vector by hand, measuring how often the hash
//! tables find the best-matching unit, and training the same layer dense
//! and hashed side by side.
//!
//! Each operation is an ordinary function returning a serializable struct;
//! the `#[wasm_bindgen]` wrappers hand the page a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;
use wta_core::dataset::{gen_synthetic, SyntheticSpec};
use wta_core::index::{query_votes, select_active};
use wta_core::layer::forward_dense;
use wta_core::trainer::fit;
use wta_core::wta::{hash_vector, hash_vector_all};
use wta_core::{
    Error, LayerParams, Mode, MultiHashIndex, PermutationSet, Result, TrainConfig, WtaConfig,
};

/// Keeps a single call under a few seconds in the browser.
const MAX_WORK: usize = 40_000_000;

fn limit(what: &str, work: usize) -> Result<()> {
    if work > MAX_WORK {
        return Err(Error::Config(format!("{what} is too large for the demo")));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct SectionView {
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
    pub winner: usize,
}

#[derive(Debug, Serialize)]
pub struct HashView {
    pub sections: Vec<SectionView>,
    pub code: u32,
    /// `exp(x)` hashed with the same permutations.
    pub exp_code: u32,
    /// `3x - 1` hashed with the same permutations.
    pub affine_code: u32,
}

/// One WTA hash of `x`, section by section.
pub fn hash_view(x: &[f32], sections: usize, elems: usize, seed: u64) -> Result<HashView> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("inputs must be finite numbers".into()));
    }
    let perms = PermutationSet::generate(WtaConfig {
        input_dim: x.len(),
        num_hashes: 1,
        sections,
        elems,
        seed,
    })?;
    let sections = (0..sections)
        .map(|s| {
            let indices = perms.section(0, s).to_vec();
            let values: Vec<f32> = indices.iter().map(|&i| x[i as usize]).collect();
            let mut winner = 0;
            for (p, &v) in values.iter().enumerate() {
                if v > values[winner] {
                    winner = p;
                }
            }
            SectionView {
                indices,
                values,
                winner,
            }
        })
        .collect();
    let ex: Vec<f32> = x.iter().map(|v| v.exp()).collect();
    let af: Vec<f32> = x.iter().map(|v| 3.0 * v - 1.0).collect();
    Ok(HashView {
        sections,
        code: hash_vector(x, &perms, 0)?.0,
        exp_code: hash_vector(&ex, &perms, 0)?.0,
        affine_code: hash_vector(&af, &perms, 0)?.0,
    })
}

#[derive(Debug, Serialize)]
pub struct RecallView {
    pub trials: usize,
    /// Fraction of queries whose best unit made the active set.
    pub recall: f64,
    /// `A / N`, the hit rate of a random choice of `A` units.
    pub baseline: f64,
    /// Mean number of units that received at least one vote.
    pub mean_voted: f64,
}

/// Random weights and queries; the best unit per query by brute force,
/// checked against the top `a` units by vote.
pub fn recall_view(
    n: usize,
    k: usize,
    q: usize,
    a: usize,
    trials: usize,
    seed: u64,
) -> Result<RecallView> {
    if a == 0 || a > n || trials == 0 {
        return Err(Error::Config(
            "need 1 <= A <= N and at least one trial".into(),
        ));
    }
    limit("N x K x Q", n.saturating_mul(k).saturating_mul(q) / 4)?;
    let perms = PermutationSet::generate(q_default(k, q, seed))?;
    let w = LayerParams::init_uniform(n, k, seed);
    let x = LayerParams::init_uniform(trials, k, seed ^ 0x5151);
    let index = MultiHashIndex::build(w.weights(), &perms)?;
    let y = forward_dense(x.weights(), w.weights())?;
    let mut hits = 0usize;
    let mut voted = 0usize;
    for j in 0..trials {
        let row = y.row(j);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        let votes = query_votes(&hash_vector_all(x.weights().row(j), &perms)?, &index)?;
        voted += votes.len();
        hits += usize::from(select_active(&votes, a, &[]).contains(best as u32));
    }
    Ok(RecallView {
        trials,
        recall: hits as f64 / trials as f64,
        baseline: a as f64 / n as f64,
        mean_voted: voted as f64 / trials as f64,
    })
}

fn q_default(k: usize, q: usize, seed: u64) -> WtaConfig {
    WtaConfig {
        num_hashes: q,
        ..WtaConfig::with_defaults(k, seed)
    }
}

#[derive(Debug, Serialize)]
pub struct Curve {
    /// `(elapsed seconds, held-out top-1)` after each epoch, starting at 0.
    pub points: Vec<(f64, f64)>,
    pub final_top1: f64,
}

#[derive(Debug, Serialize)]
pub struct TrainView {
    pub rows: usize,
    pub dense: Curve,
    pub hashed: Curve,
}

/// Trains on a generated clustered dataset in both modes.
pub fn train_view(
    classes: u32,
    dim: usize,
    epochs: usize,
    active: usize,
    q: usize,
    seed: u64,
) -> Result<TrainView> {
    let per_class = 50;
    limit(
        "classes x dim x epochs",
        (classes as usize)
            .saturating_mul(per_class)
            .saturating_mul(dim)
            .saturating_mul(epochs)
            .saturating_mul(classes as usize)
            / 64,
    )?;
    let data = gen_synthetic(SyntheticSpec::new(classes, dim, per_class, 0.05, seed))?;
    let run = |mode| -> Result<Curve> {
        let mut cfg = TrainConfig::new(mode, dim);
        cfg.epochs = epochs;
        cfg.seed = seed;
        cfg.batch_size = 32;
        cfg.active_units = active;
        cfg.wta = q_default(dim, q, seed);
        let out = fit(&data, &cfg)?;
        Ok(Curve {
            points: out
                .report
                .points
                .iter()
                .map(|p| (p.elapsed_s, p.top1))
                .collect(),
            final_top1: out.report.final_top1().unwrap_or(0.0),
        })
    };
    Ok(TrainView {
        rows: data.len(),
        dense: run(Mode::Dense)?,
        hashed: run(Mode::Hashed)?,
    })
}

fn json<T: Serialize>(r: Result<T>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = hashView)]
pub fn hash_view_js(
    x: &[f32],
    sections: usize,
    elems: usize,
    seed: u32,
) -> Result<String, JsError> {
    json(hash_view(x, sections, elems, seed as u64))
}

#[wasm_bindgen(js_name = recallView)]
pub fn recall_view_js(
    n: usize,
    k: usize,
    q: usize,
    a: usize,
    trials: usize,
    seed: u32,
) -> Result<String, JsError> {
    json(recall_view(n, k, q, a, trials, seed as u64))
}

#[wasm_bindgen(js_name = trainView)]
pub fn train_view_js(
    classes: u32,
    dim: usize,
    epochs: usize,
    active: usize,
    q: usize,
    seed: u32,
) -> Result<String, JsError> {
    json(train_view(classes, dim, epochs, active, q, seed as u64))
}
