//! Multi-table index over the layer's weight rows and active-unit selection.
//!
//! Table `q` partitions the output units by their `q`-th WTA code. A sample
//! votes for every unit sharing its bin in each table; the top-`A` units by
//! vote count become that sample's active set.

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::wta::{hash_matrix, CodeMatrix, HashCode, PermutationSet, WtaConfig};

/// Largest number of bins a dense table may have.
pub const MAX_DENSE_BINS: u64 = 1 << 24;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHashIndex {
    config: WtaConfig,
    num_units: usize,
    bins: usize,
    /// `Q` blocks of `bins + 1` offsets into the matching block of `units`.
    offsets: Vec<u32>,
    /// `Q` blocks of `N` unit ids, grouped by bin, ascending within a bin.
    units: Vec<u32>,
}

impl MultiHashIndex {
    /// Bins every row of `weights` under each of the `Q` hashes.
    pub fn build(weights: &DenseMatrix, perms: &PermutationSet) -> Result<Self> {
        let config = *perms.config();
        let bins = config
            .code_space()
            .filter(|&b| b <= MAX_DENSE_BINS)
            .ok_or_else(|| {
                Error::Config(format!(
                    "code space {}^{} is too large for a dense table (max {MAX_DENSE_BINS} bins)",
                    config.elems, config.sections
                ))
            })? as usize;
        let n = weights.rows();
        if n > u32::MAX as usize {
            return Err(Error::Config(format!("{n} units do not fit in u32 ids")));
        }
        let codes = hash_matrix(weights, perms)?;
        let q = config.num_hashes;
        let mut offsets = vec![0u32; q * (bins + 1)];
        let mut units = vec![0u32; q * n];
        fill_tables(&codes, bins, &mut offsets, &mut units);
        Ok(Self {
            config,
            num_units: n,
            bins,
            offsets,
            units,
        })
    }

    pub fn num_units(&self) -> usize {
        self.num_units
    }

    pub fn num_hashes(&self) -> usize {
        self.config.num_hashes
    }

    pub fn num_bins(&self) -> usize {
        self.bins
    }

    pub fn config(&self) -> &WtaConfig {
        &self.config
    }

    /// Units in bin `code` of table `q`, ascending.
    pub fn bin(&self, q: usize, code: HashCode) -> &[u32] {
        let off = &self.offsets[q * (self.bins + 1)..(q + 1) * (self.bins + 1)];
        let c = code.0 as usize;
        if c >= self.bins {
            return &[];
        }
        let base = q * self.num_units;
        &self.units[base + off[c] as usize..base + off[c + 1] as usize]
    }

    pub(crate) fn bin_raw(&self, q: usize, code: u32) -> &[u32] {
        self.bin(q, HashCode(code))
    }
}

fn fill_table(codes: &CodeMatrix, q: usize, offsets: &mut [u32], units: &mut [u32]) {
    let nq = codes.num_hashes();
    let all = codes.as_slice();
    offsets.fill(0);
    for i in 0..codes.rows() {
        offsets[all[i * nq + q] as usize + 1] += 1;
    }
    for b in 1..offsets.len() {
        offsets[b] += offsets[b - 1];
    }
    let mut cursor = offsets[..offsets.len() - 1].to_vec();
    for i in 0..codes.rows() {
        let c = all[i * nq + q] as usize;
        units[cursor[c] as usize] = i as u32;
        cursor[c] += 1;
    }
}

#[cfg(feature = "parallel")]
fn fill_tables(codes: &CodeMatrix, bins: usize, offsets: &mut [u32], units: &mut [u32]) {
    use rayon::prelude::*;
    let n = codes.rows().max(1);
    offsets
        .par_chunks_mut(bins + 1)
        .zip(units.par_chunks_mut(n))
        .enumerate()
        .for_each(|(q, (off, un))| fill_table(codes, q, off, un));
}

#[cfg(not(feature = "parallel"))]
fn fill_tables(codes: &CodeMatrix, bins: usize, offsets: &mut [u32], units: &mut [u32]) {
    let n = codes.rows().max(1);
    for (q, (off, un)) in offsets
        .chunks_mut(bins + 1)
        .zip(units.chunks_mut(n))
        .enumerate()
    {
        fill_table(codes, q, off, un);
    }
}

/// Units with at least one vote, ascending by unit id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Votes {
    pub entries: Vec<(u32, u32)>,
}

impl Votes {
    pub fn get(&self, unit: u32) -> u32 {
        self.entries
            .binary_search_by_key(&unit, |&(u, _)| u)
            .map_or(0, |i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Reusable vote accumulator over unit ids.
pub(crate) struct VoteCounter {
    counts: Vec<u32>,
    touched: Vec<u32>,
}

impl VoteCounter {
    pub fn new(num_units: usize) -> Self {
        Self {
            counts: vec![0; num_units],
            touched: Vec::new(),
        }
    }

    fn count(&mut self, codes: &[u32], index: &MultiHashIndex) {
        for &u in &self.touched {
            self.counts[u as usize] = 0;
        }
        self.touched.clear();
        for (q, &code) in codes.iter().enumerate() {
            for &u in index.bin_raw(q, code) {
                let c = &mut self.counts[u as usize];
                if *c == 0 {
                    self.touched.push(u);
                }
                *c += 1;
            }
        }
    }

    fn votes(&self, unit: u32) -> u32 {
        self.counts[unit as usize]
    }

    fn select(&self, a: usize, forced: &[u32]) -> ActiveSet {
        let mut cand: Vec<(u32, u32)> = self
            .touched
            .iter()
            .map(|&u| (u, self.counts[u as usize]))
            .collect();
        top_a(&mut cand, a);
        let mut set = ActiveSet {
            entries: cand
                .into_iter()
                .map(|(unit, votes)| ActiveUnit {
                    unit,
                    votes,
                    forced: false,
                })
                .collect(),
        };
        set.append_forced(forced, |u| self.votes(u));
        set
    }
}

fn rank(a: &(u32, u32), b: &(u32, u32)) -> std::cmp::Ordering {
    b.1.cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Keeps the `a` best `(unit, votes)` pairs, ordered by votes descending
/// then unit ascending.
fn top_a(cand: &mut Vec<(u32, u32)>, a: usize) {
    if a == 0 {
        cand.clear();
        return;
    }
    if cand.len() > a {
        cand.select_nth_unstable_by(a - 1, rank);
        cand.truncate(a);
    }
    cand.sort_unstable_by(rank);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveUnit {
    pub unit: u32,
    pub votes: u32,
    /// Added because it was forced, not because it ranked in the top `A`.
    pub forced: bool,
}

/// Active output units of one sample.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActiveSet {
    pub entries: Vec<ActiveUnit>,
}

impl ActiveSet {
    /// Every unit in `0..n`, zero votes, in ascending order.
    pub fn all(n: usize) -> Self {
        Self {
            entries: (0..n as u32)
                .map(|unit| ActiveUnit {
                    unit,
                    votes: 0,
                    forced: false,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn units(&self) -> impl ExactSizeIterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.unit)
    }

    pub fn contains(&self, unit: u32) -> bool {
        self.entries.iter().any(|e| e.unit == unit)
    }

    fn append_forced(&mut self, forced: &[u32], votes: impl Fn(u32) -> u32) {
        for &f in forced {
            if !self.contains(f) {
                self.entries.push(ActiveUnit {
                    unit: f,
                    votes: votes(f),
                    forced: true,
                });
            }
        }
    }
}

/// Vote count of every unit sharing a bin with `sample_codes`.
pub fn query_votes(sample_codes: &[HashCode], index: &MultiHashIndex) -> Result<Votes> {
    if sample_codes.len() != index.num_hashes() {
        return Err(Error::dim(
            "sample code count",
            index.num_hashes(),
            sample_codes.len(),
        ));
    }
    let raw: Vec<u32> = sample_codes.iter().map(|c| c.0).collect();
    let mut counter = VoteCounter::new(index.num_units());
    counter.count(&raw, index);
    let mut entries: Vec<(u32, u32)> = counter
        .touched
        .iter()
        .map(|&u| (u, counter.counts[u as usize]))
        .collect();
    entries.sort_unstable();
    Ok(Votes { entries })
}

/// The `a` most-voted units (ties to the lower id), then any `forced` units
/// not already present, with their actual vote counts. Fewer than `a`
/// voted units are never padded.
pub fn select_active(votes: &Votes, a: usize, forced: &[u32]) -> ActiveSet {
    let mut cand = votes.entries.clone();
    top_a(&mut cand, a);
    let mut set = ActiveSet {
        entries: cand
            .into_iter()
            .map(|(unit, votes)| ActiveUnit {
                unit,
                votes,
                forced: false,
            })
            .collect(),
    };
    set.append_forced(forced, |u| votes.get(u));
    set
}

/// [`query_votes`] followed by [`select_active`] for every row of `codes`.
///
/// `forced` is either empty or holds one list per row.
pub fn select_batch(
    codes: &CodeMatrix,
    index: &MultiHashIndex,
    a: usize,
    forced: &[Vec<u32>],
) -> Result<Vec<ActiveSet>> {
    if codes.num_hashes() != index.num_hashes() {
        return Err(Error::dim(
            "code matrix hashes",
            index.num_hashes(),
            codes.num_hashes(),
        ));
    }
    if !forced.is_empty() && forced.len() != codes.rows() {
        return Err(Error::dim("forced unit lists", codes.rows(), forced.len()));
    }
    let n = index.num_units();
    for f in forced.iter().flatten() {
        if *f as usize >= n {
            return Err(Error::UnitOutOfRange {
                unit: *f,
                num_units: n,
            });
        }
    }
    let forced_of = |j: usize| forced.get(j).map_or(&[][..], |v| v.as_slice());
    Ok(run_selection(codes, index, a, forced_of))
}

#[cfg(feature = "parallel")]
fn run_selection<'a>(
    codes: &CodeMatrix,
    index: &MultiHashIndex,
    a: usize,
    forced_of: impl Fn(usize) -> &'a [u32] + Sync,
) -> Vec<ActiveSet> {
    use rayon::prelude::*;
    (0..codes.rows())
        .into_par_iter()
        .with_min_len(8)
        .map_init(
            || VoteCounter::new(index.num_units()),
            |counter, j| {
                counter.count(codes.row(j), index);
                counter.select(a, forced_of(j))
            },
        )
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_selection<'a>(
    codes: &CodeMatrix,
    index: &MultiHashIndex,
    a: usize,
    forced_of: impl Fn(usize) -> &'a [u32],
) -> Vec<ActiveSet> {
    let mut counter = VoteCounter::new(index.num_units());
    (0..codes.rows())
        .map(|j| {
            counter.count(codes.row(j), index);
            counter.select(a, forced_of(j))
        })
        .collect()
}
