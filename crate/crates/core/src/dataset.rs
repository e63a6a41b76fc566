//! Feature/label datasets: binary files, CSV, and a synthetic generator.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::format::{to_usize, LeReader, LeWriter};
use crate::matrix::DenseMatrix;

const FEATURES_MAGIC: &[u8; 4] = b"WTAF";
const LABELS_MAGIC: &[u8; 4] = b"WTAL";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DenseMatrix,
    pub labels: Vec<u32>,
    pub num_classes: u32,
}

/// Where the label lives in a CSV row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
}

impl Dataset {
    pub fn new(features: DenseMatrix, labels: Vec<u32>, num_classes: u32) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if features.rows() != labels.len() {
            return Err(Error::RowCountMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        check_labels(&labels, num_classes)?;
        if let Some(index) = features.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Self::new(
            self.features.gather_rows(idx),
            idx.iter().map(|&i| self.labels[i]).collect(),
            self.num_classes,
        )
    }

    /// Seeded shuffle, then the first `1 − holdout` fraction for training and
    /// the rest held out. Both parts keep at least one row when possible.
    pub fn split(&self, holdout: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&holdout) || self.len() < 2 {
            return Err(Error::Config(format!(
                "cannot hold out a {holdout} fraction of {} rows",
                self.len()
            )));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_hold = ((self.len() as f64 * holdout).round() as usize).clamp(1, self.len() - 1);
        let (hold, train) = idx.split_at(n_hold);
        Ok((self.subset(train)?, self.subset(hold)?))
    }

    pub fn write_features<W: Write>(&self, w: W) -> Result<()> {
        let mut w = LeWriter::new(w);
        w.header(FEATURES_MAGIC)?;
        w.u64(self.features.rows() as u64)?;
        w.u32(u32::try_from(self.dim()).map_err(|_| Error::Config("too many columns".into()))?)?;
        w.f32_slice(self.features.as_slice())?;
        w.finish()
    }

    pub fn write_labels<W: Write>(&self, w: W) -> Result<()> {
        let mut w = LeWriter::new(w);
        w.header(LABELS_MAGIC)?;
        w.u64(self.labels.len() as u64)?;
        w.u32(self.num_classes)?;
        w.u32_slice(&self.labels)?;
        w.finish()
    }

    pub fn read_from<F: Read, L: Read>(features: F, labels: L) -> Result<Self> {
        let features = read_features(features)?;
        let (labels, num_classes) = read_labels(labels)?;
        if features.rows() != labels.len() {
            return Err(Error::RowCountMismatch {
                features: features.rows(),
                labels: labels.len(),
            });
        }
        Self::new(features, labels, num_classes)
    }

    pub fn save_binary(&self, features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
        use std::io::BufWriter;
        self.write_features(BufWriter::new(std::fs::File::create(features)?))?;
        self.write_labels(BufWriter::new(std::fs::File::create(labels)?))
    }

    pub fn load_binary(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        use std::io::BufReader;
        Self::read_from(
            BufReader::new(std::fs::File::open(features)?),
            BufReader::new(std::fs::File::open(labels)?),
        )
    }

    /// Parses a header-less numeric CSV. `num_classes` defaults to one more
    /// than the largest label.
    pub fn read_csv<R: Read>(r: R, label: LabelColumn, num_classes: Option<u32>) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(r);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut cols = None;
        for rec in reader.records() {
            let rec = rec.map_err(|e| match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    pos,
                    expected_len,
                    len,
                } => Error::RaggedRow {
                    line: pos.as_ref().map_or(0, |p| p.line()),
                    expected: *expected_len,
                    found: *len,
                },
                _ => Error::Csv(e),
            })?;
            let line = rec.position().map_or(0, |p| p.line());
            let width = rec.len();
            if width < 2 {
                return Err(Error::Config(format!(
                    "CSV line {line} needs a label and at least one feature"
                )));
            }
            let label_at = match label {
                LabelColumn::First => 0,
                LabelColumn::Last => width - 1,
                LabelColumn::Index(i) if i < width => i,
                LabelColumn::Index(i) => {
                    return Err(Error::Config(format!(
                        "label column {i} out of range for {width} columns"
                    )))
                }
            };
            cols.get_or_insert(width - 1);
            for (c, cell) in rec.iter().enumerate() {
                let bad = || Error::NonNumeric {
                    line,
                    column: c,
                    value: cell.to_string(),
                };
                if c == label_at {
                    labels.push(cell.parse::<u32>().map_err(|_| bad())?);
                } else {
                    let v = cell.parse::<f32>().map_err(|_| bad())?;
                    if !v.is_finite() {
                        return Err(bad());
                    }
                    data.push(v);
                }
            }
        }
        let cols = cols.ok_or(Error::EmptyDataset)?;
        let num_classes = num_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        Self::new(
            DenseMatrix::from_vec(labels.len(), cols, data)?,
            labels,
            num_classes,
        )
    }

    pub fn load_csv(
        path: impl AsRef<Path>,
        label: LabelColumn,
        num_classes: Option<u32>,
    ) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, label, num_classes)
    }

    /// Writes features followed by the label as the last column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        let mut rec: Vec<String> = Vec::with_capacity(self.dim() + 1);
        for (row, label) in self.features.iter_rows().zip(&self.labels) {
            rec.clear();
            rec.extend(row.iter().map(f32::to_string));
            rec.push(label.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn check_labels(labels: &[u32], num_classes: u32) -> Result<()> {
    match labels.iter().position(|&l| l >= num_classes) {
        Some(row) => Err(Error::LabelOutOfRange {
            row,
            label: labels[row],
            num_classes,
        }),
        None => Ok(()),
    }
}

fn read_features<R: Read>(r: R) -> Result<DenseMatrix> {
    let mut r = LeReader::new(r, "features file");
    r.header(FEATURES_MAGIC)?;
    let rows = to_usize(r.u64()?, "row count")?;
    let cols = r.u32()? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Config("feature count overflows".into()))?;
    let data = r.f32_vec(n)?;
    r.expect_end()?;
    DenseMatrix::from_vec(rows, cols, data)
}

fn read_labels<R: Read>(r: R) -> Result<(Vec<u32>, u32)> {
    let mut r = LeReader::new(r, "labels file");
    r.header(LABELS_MAGIC)?;
    let rows = to_usize(r.u64()?, "row count")?;
    let num_classes = r.u32()?;
    let labels = r.u32_vec(rows)?;
    r.expect_end()?;
    check_labels(&labels, num_classes)?;
    Ok((labels, num_classes))
}

/// Parameters of [`gen_synthetic`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: u32,
    pub dim: usize,
    pub per_class: usize,
    pub sigma: f32,
    /// Fraction of centroid coordinates forced to zero.
    pub sparsity: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(num_classes: u32, dim: usize, per_class: usize, sigma: f32, seed: u64) -> Self {
        Self {
            num_classes,
            dim,
            per_class,
            sigma,
            sparsity: 0.75,
            seed,
        }
    }
}

/// Nonnegative sparse clusters: one centroid per class drawn from
/// `[0, 1)^K` with `round(sparsity·K)` random coordinates zeroed, and
/// samples `max(0, centroid + N(0, σ²))`. Rows are grouped by class.
pub fn gen_synthetic(spec: SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.dim == 0 || spec.per_class == 0 {
        return Err(Error::Config(
            "num_classes, dim and per_class must all be positive".into(),
        ));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(Error::Config(format!(
            "spread must be >= 0, got {}",
            spec.sigma
        )));
    }
    if !(0.0..=1.0).contains(&spec.sparsity) {
        return Err(Error::Config(format!(
            "sparsity must be in [0, 1], got {}",
            spec.sparsity
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.dim;
    let zeroed = (spec.sparsity * k as f64).round() as usize;
    let noise = Normal::new(0.0f32, spec.sigma).expect("sigma validated");
    let rows = spec.num_classes as usize * spec.per_class;
    let mut data = Vec::with_capacity(rows * k);
    let mut labels = Vec::with_capacity(rows);
    let mut coords: Vec<usize> = (0..k).collect();
    let mut centroid = vec![0.0f32; k];
    for class in 0..spec.num_classes {
        for c in centroid.iter_mut() {
            *c = rng.random::<f32>();
        }
        let (picked, _) = coords.partial_shuffle(&mut rng, zeroed);
        for &i in picked.iter() {
            centroid[i] = 0.0;
        }
        for _ in 0..spec.per_class {
            if spec.sigma == 0.0 {
                data.extend_from_slice(&centroid);
            } else {
                data.extend(
                    centroid
                        .iter()
                        .map(|&c| (c + noise.sample(&mut rng)).max(0.0)),
                );
            }
            labels.push(class);
        }
    }
    Dataset::new(
        DenseMatrix::from_vec(rows, k, data)?,
        labels,
        spec.num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip_bytes(d: &Dataset) -> (Vec<u8>, Vec<u8>) {
        let (mut f, mut l) = (Vec::new(), Vec::new());
        d.write_features(&mut f).unwrap();
        d.write_labels(&mut l).unwrap();
        (f, l)
    }

    #[test]
    fn tiny_binary_dataset() {
        let d = Dataset::new(DenseMatrix::from_vec(1, 1, vec![0.5]).unwrap(), vec![0], 1).unwrap();
        let (f, l) = roundtrip_bytes(&d);
        assert_eq!(&f[..4], b"WTAF");
        assert_eq!(f.len(), 4 + 4 + 8 + 4 + 4);
        assert_eq!(l.len(), 4 + 4 + 8 + 4 + 4);
        assert_eq!(Dataset::read_from(&f[..], &l[..]).unwrap(), d);
    }

    #[test]
    fn label_equal_to_class_count_is_rejected() {
        let mut l = Vec::new();
        l.extend_from_slice(b"WTAL");
        l.extend_from_slice(&1u32.to_le_bytes());
        l.extend_from_slice(&1u64.to_le_bytes());
        l.extend_from_slice(&3u32.to_le_bytes());
        l.extend_from_slice(&3u32.to_le_bytes());
        let d = Dataset::new(DenseMatrix::from_vec(1, 1, vec![0.5]).unwrap(), vec![0], 1).unwrap();
        let (f, _) = roundtrip_bytes(&d);
        assert!(matches!(
            Dataset::read_from(&f[..], &l[..]),
            Err(Error::LabelOutOfRange {
                row: 0,
                label: 3,
                num_classes: 3
            })
        ));
    }

    #[test]
    fn row_count_mismatch() {
        let a = Dataset::new(DenseMatrix::zeros(2, 3), vec![0, 1], 2).unwrap();
        let b = Dataset::new(DenseMatrix::zeros(3, 3), vec![0, 1, 1], 2).unwrap();
        let (f, _) = roundtrip_bytes(&a);
        let (_, l) = roundtrip_bytes(&b);
        assert!(matches!(
            Dataset::read_from(&f[..], &l[..]),
            Err(Error::RowCountMismatch {
                features: 2,
                labels: 3
            })
        ));
    }

    #[test]
    fn csv_basics() {
        let d = Dataset::read_csv("0.5,0\n".as_bytes(), LabelColumn::Index(1), None).unwrap();
        assert_eq!(d.features.as_slice(), &[0.5]);
        assert_eq!(d.labels, vec![0]);
        assert_eq!(d.num_classes, 1);
        let e = Dataset::read_csv("0.5,1.0,0\n0.5,1\n".as_bytes(), LabelColumn::Last, None)
            .unwrap_err();
        assert!(matches!(e, Error::RaggedRow { line: 2, .. }), "{e}");
        let e = Dataset::read_csv("0.5,x,0\n".as_bytes(), LabelColumn::Last, None).unwrap_err();
        assert!(
            matches!(
                e,
                Error::NonNumeric {
                    line: 1,
                    column: 1,
                    ..
                }
            ),
            "{e}"
        );
        let e = Dataset::read_csv("0.5,1.5\n".as_bytes(), LabelColumn::Last, None).unwrap_err();
        assert!(matches!(e, Error::NonNumeric { .. }), "{e}");
        let e = Dataset::read_csv("0.5,2\n".as_bytes(), LabelColumn::Last, Some(2)).unwrap_err();
        assert!(matches!(e, Error::LabelOutOfRange { .. }), "{e}");
    }

    #[test]
    fn synthetic_shapes() {
        let d = gen_synthetic(SyntheticSpec::new(3, 8, 1, 0.1, 5)).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.labels, vec![0, 1, 2]);
        let d = gen_synthetic(SyntheticSpec::new(4, 16, 5, 0.0, 1)).unwrap();
        for c in 0..4 {
            let first = d.features.row(c * 5);
            assert_eq!(first.iter().filter(|&&v| v == 0.0).count(), 12);
            for r in 1..5 {
                assert_eq!(d.features.row(c * 5 + r), first);
            }
        }
        assert!(gen_synthetic(SyntheticSpec::new(0, 8, 1, 0.1, 5)).is_err());
        assert!(gen_synthetic(SyntheticSpec::new(2, 8, 1, -0.1, 5)).is_err());
    }

    #[test]
    fn synthetic_is_seeded_nonnegative_and_balanced() {
        let s = SyntheticSpec::new(6, 32, 7, 0.2, 11);
        let a = gen_synthetic(s).unwrap();
        assert_eq!(a, gen_synthetic(s).unwrap());
        assert!(a.features.as_slice().iter().all(|&v| v >= 0.0));
        for c in 0..6 {
            assert_eq!(a.labels.iter().filter(|&&l| l == c).count(), 7);
        }
    }

    #[test]
    fn split_is_disjoint_and_seeded() {
        let d = gen_synthetic(SyntheticSpec::new(5, 4, 20, 0.1, 2)).unwrap();
        let (tr, ho) = d.split(0.1, 3).unwrap();
        assert_eq!(tr.len(), 90);
        assert_eq!(ho.len(), 10);
        assert_eq!(d.split(0.1, 3).unwrap().1, ho);
        assert!(d.split(1.0, 3).is_err());
    }
}
