//! Winner-take-all hash codes built from seeded truncated permutations.
//!
//! A hash is `N_s` sections; each section looks at `N_e` coordinates of the
//! input picked by its own permutation and records the position of the
//! largest one. The positions are concatenated as base-`N_e` digits, section
//! 0 least significant. Only the relative order of coordinates matters, so
//! any strictly increasing elementwise transform leaves every code unchanged.

use std::io::{Read, Write};
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::format::{LeReader, LeWriter};
use crate::matrix::DenseMatrix;

const PERM_MAGIC: &[u8; 4] = b"WTAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WtaConfig {
    /// Length `K` of the hashed vectors.
    pub input_dim: usize,
    /// Number of independent hashes `Q`.
    pub num_hashes: usize,
    /// Sections per hash `N_s`.
    pub sections: usize,
    /// Elements compared per section `N_e`.
    pub elems: usize,
    pub seed: u64,
}

impl WtaConfig {
    /// `N_e = 8`, `N_s = 3`, `Q = 256`.
    pub fn with_defaults(input_dim: usize, seed: u64) -> Self {
        Self {
            input_dim,
            num_hashes: 256,
            sections: 3,
            elems: 8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_hashes == 0 {
            return Err(Error::Config("num_hashes Q must be >= 1".into()));
        }
        if self.sections == 0 {
            return Err(Error::Config("sections N_s must be >= 1".into()));
        }
        if self.elems < 2 {
            return Err(Error::Config(format!(
                "elems N_e = {} must be >= 2",
                self.elems
            )));
        }
        if self.elems > self.input_dim {
            return Err(Error::Config(format!(
                "elems N_e = {} exceeds input_dim K = {}",
                self.elems, self.input_dim
            )));
        }
        if self.input_dim > u32::MAX as usize {
            return Err(Error::Config(format!(
                "input_dim K = {} does not fit in u32",
                self.input_dim
            )));
        }
        if self.code_space().is_none() {
            return Err(Error::Config(format!(
                "code space N_e^N_s = {}^{} exceeds 2^32",
                self.elems, self.sections
            )));
        }
        Ok(())
    }

    /// `N_e^N_s`, or `None` when it exceeds `2^32`.
    pub fn code_space(&self) -> Option<u64> {
        let mut total: u64 = 1;
        for _ in 0..self.sections {
            total = total.checked_mul(self.elems as u64)?;
            if total > 1 << 32 {
                return None;
            }
        }
        Some(total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct HashCode(pub u32);

/// Draws uniformly from `[0, n)` by Lemire's multiply-and-reject on 64-bit
/// outputs.
fn bounded(rng: &mut ChaCha8Rng, n: u64) -> u64 {
    debug_assert!(n > 0);
    let threshold = n.wrapping_neg() % n;
    loop {
        let m = (rng.next_u64() as u128) * (n as u128);
        if (m as u64) >= threshold {
            return (m >> 64) as u64;
        }
    }
}

/// The first `N_e` entries of every section's permutation, laid out
/// `[q][s][e]`.
///
/// Section `(q, s)` is drawn by a truncated Fisher-Yates shuffle of
/// `0..K`, driven by ChaCha8 seeded with `seed_from_u64(config.seed)` on
/// stream `q·N_s + s`. Swap `e` exchanges position `e` with a position drawn
/// uniformly from `[e, K)` (see [`bounded`]). Sections are therefore
/// independent of one another and of generation order, and the sections of
/// a smaller `Q` are a prefix of those of a larger one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    config: WtaConfig,
    indices: Vec<u32>,
}

impl PermutationSet {
    pub fn generate(config: WtaConfig) -> Result<Self> {
        config.validate()?;
        let k = config.input_dim;
        let ne = config.elems;
        let mut indices = Vec::with_capacity(config.num_hashes * config.sections * ne);
        let mut scratch: Vec<u32> = (0..k as u32).collect();
        let mut swaps = Vec::with_capacity(ne);
        for q in 0..config.num_hashes {
            for s in 0..config.sections {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream((q * config.sections + s) as u64);
                for e in 0..ne {
                    let j = e + bounded(&mut rng, (k - e) as u64) as usize;
                    scratch.swap(e, j);
                    swaps.push(j);
                }
                indices.extend_from_slice(&scratch[..ne]);
                for (e, j) in swaps.drain(..).enumerate().rev() {
                    scratch.swap(e, j);
                }
            }
        }
        Ok(Self { config, indices })
    }

    pub fn config(&self) -> &WtaConfig {
        &self.config
    }

    pub fn num_hashes(&self) -> usize {
        self.config.num_hashes
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    /// The `N_e` coordinates read by section `s` of hash `q`.
    pub fn section(&self, q: usize, s: usize) -> &[u32] {
        let ne = self.config.elems;
        let start = (q * self.config.sections + s) * ne;
        &self.indices[start..start + ne]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.indices
    }

    fn hash_slice(&self, q: usize) -> &[u32] {
        let w = self.config.sections * self.config.elems;
        &self.indices[q * w..(q + 1) * w]
    }

    /// Hash `q` of `x`, assuming `x.len() == K`.
    #[inline]
    pub(crate) fn hash_unchecked(&self, x: &[f32], q: usize) -> u32 {
        let ne = self.config.elems;
        let mut code = 0u32;
        let mut radix = 1u32;
        for sec in self.hash_slice(q).chunks_exact(ne) {
            let mut best = x[sec[0] as usize];
            let mut pos = 0u32;
            for (e, &ix) in sec.iter().enumerate().skip(1) {
                let v = x[ix as usize];
                if v > best {
                    best = v;
                    pos = e as u32;
                }
            }
            code = code.wrapping_add(pos.wrapping_mul(radix));
            radix = radix.wrapping_mul(ne as u32);
        }
        code
    }

    #[inline]
    pub(crate) fn hash_all_into(&self, x: &[f32], out: &mut [u32]) {
        for (q, o) in out.iter_mut().enumerate() {
            *o = self.hash_unchecked(x, q);
        }
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let c = &self.config;
        let mut w = LeWriter::new(w);
        w.header(PERM_MAGIC)?;
        for v in [c.input_dim, c.num_hashes, c.sections, c.elems] {
            let v = u32::try_from(v)
                .map_err(|_| Error::Config(format!("dimension {v} does not fit in u32")))?;
            w.u32(v)?;
        }
        w.u64(c.seed)?;
        w.u32_slice(&self.indices)?;
        w.finish()
    }

    /// Reads a `WTAP` blob, checking the header and that each section holds
    /// distinct in-range indices. The stored indices are taken as-is; they
    /// are not required to match what [`generate`](Self::generate) would
    /// produce for the stored seed.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = LeReader::new(r, "permutation file");
        r.header(PERM_MAGIC)?;
        let input_dim = r.u32()? as usize;
        let num_hashes = r.u32()? as usize;
        let sections = r.u32()? as usize;
        let elems = r.u32()? as usize;
        let seed = r.u64()?;
        let config = WtaConfig {
            input_dim,
            num_hashes,
            sections,
            elems,
            seed,
        };
        config.validate()?;
        let n = num_hashes
            .checked_mul(sections)
            .and_then(|v| v.checked_mul(elems))
            .ok_or_else(|| Error::Config("permutation count overflows".into()))?;
        let indices = r.u32_vec(n)?;
        r.expect_end()?;
        for (sec_id, sec) in indices.chunks_exact(elems).enumerate() {
            for (e, &ix) in sec.iter().enumerate() {
                if ix as usize >= input_dim {
                    return Err(Error::Config(format!(
                        "permutation index {ix} in section {sec_id} is >= K = {input_dim}"
                    )));
                }
                if sec[..e].contains(&ix) {
                    return Err(Error::Config(format!(
                        "permutation index {ix} repeats within section {sec_id}"
                    )));
                }
            }
        }
        Ok(Self { config, indices })
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

/// `M × Q` hash codes, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    num_hashes: usize,
    codes: Vec<u32>,
}

impl CodeMatrix {
    pub fn from_vec(rows: usize, num_hashes: usize, codes: Vec<u32>) -> Result<Self> {
        if codes.len() != rows * num_hashes {
            return Err(Error::dim(
                "code matrix length",
                rows * num_hashes,
                codes.len(),
            ));
        }
        Ok(Self {
            rows,
            num_hashes,
            codes,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_hashes(&self) -> usize {
        self.num_hashes
    }

    pub fn row(&self, j: usize) -> &[u32] {
        &self.codes[j * self.num_hashes..(j + 1) * self.num_hashes]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.codes
    }
}

fn check_len(x: &[f32], perms: &PermutationSet) -> Result<()> {
    if x.len() != perms.input_dim() {
        return Err(Error::dim(
            "hashed vector length",
            perms.input_dim(),
            x.len(),
        ));
    }
    Ok(())
}

pub fn gen_permutations(cfg: WtaConfig) -> Result<PermutationSet> {
    PermutationSet::generate(cfg)
}

/// Hash `q` of `x`. Ties within a section go to the lowest position.
pub fn hash_vector(x: &[f32], perms: &PermutationSet, q: usize) -> Result<HashCode> {
    check_len(x, perms)?;
    if q >= perms.num_hashes() {
        return Err(Error::dim("hash index bound", perms.num_hashes(), q));
    }
    Ok(HashCode(perms.hash_unchecked(x, q)))
}

pub fn hash_vector_all(x: &[f32], perms: &PermutationSet) -> Result<Vec<HashCode>> {
    check_len(x, perms)?;
    Ok((0..perms.num_hashes())
        .map(|q| HashCode(perms.hash_unchecked(x, q)))
        .collect())
}

/// Row `j` of the result is [`hash_vector_all`] of row `j` of `x`.
pub fn hash_matrix(x: &DenseMatrix, perms: &PermutationSet) -> Result<CodeMatrix> {
    if x.cols() != perms.input_dim() {
        return Err(Error::dim(
            "hashed matrix columns",
            perms.input_dim(),
            x.cols(),
        ));
    }
    let q = perms.num_hashes();
    let mut codes = vec![0u32; x.rows() * q];
    if q > 0 {
        fill_codes(x, perms, &mut codes);
    }
    Ok(CodeMatrix {
        rows: x.rows(),
        num_hashes: q,
        codes,
    })
}

#[cfg(feature = "parallel")]
fn fill_codes(x: &DenseMatrix, perms: &PermutationSet, codes: &mut [u32]) {
    use rayon::prelude::*;
    codes
        .par_chunks_mut(perms.num_hashes())
        .enumerate()
        .with_min_len(16)
        .for_each(|(j, out)| perms.hash_all_into(x.row(j), out));
}

#[cfg(not(feature = "parallel"))]
fn fill_codes(x: &DenseMatrix, perms: &PermutationSet, codes: &mut [u32]) {
    for (j, out) in codes.chunks_exact_mut(perms.num_hashes()).enumerate() {
        perms.hash_all_into(x.row(j), out);
    }
}
