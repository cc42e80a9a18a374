//! Sparse bag-of-words features: term frequency or binary counts, optional
//! idf weighting, and max or length normalization.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, BinReader, BinWriter};
use crate::error::{Error, Result};
use crate::numfmt::sig9;
use crate::textproc::{TokenizedDoc, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
enum Values {
    /// Sorted by index, no explicit zeros.
    Sparse(Vec<(usize, f64)>),
    Dense(Vec<f64>),
}

/// A document's feature vector, sparse for BOW features and dense after
/// reduction or embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub doc_id: String,
    dim: usize,
    values: Values,
}

impl FeatureVector {
    pub fn sparse(
        doc_id: impl Into<String>,
        dim: usize,
        mut entries: Vec<(usize, f64)>,
    ) -> Result<Self> {
        entries.retain(|&(_, w)| w != 0.0);
        entries.sort_by_key(|&(i, _)| i);
        for pair in entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Validation(format!(
                    "index {} stored twice",
                    pair[0].0
                )));
            }
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: i + 1,
                });
            }
        }
        if let Some(&(i, w)) = entries.iter().find(|(_, w)| !w.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite weight {w} at index {i}"
            )));
        }
        Ok(FeatureVector {
            doc_id: doc_id.into(),
            dim,
            values: Values::Sparse(entries),
        })
    }

    pub fn dense(doc_id: impl Into<String>, values: Vec<f64>) -> Self {
        FeatureVector {
            doc_id: doc_id.into(),
            dim: values.len(),
            values: Values::Dense(values),
        }
    }

    pub fn zeros(doc_id: impl Into<String>, dim: usize) -> Self {
        FeatureVector {
            doc_id: doc_id.into(),
            dim,
            values: Values::Sparse(Vec::new()),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.values, Values::Sparse(_))
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        match &self.values {
            Values::Sparse(e) => e.len(),
            Values::Dense(v) => v.len(),
        }
    }

    pub fn get(&self, index: usize) -> f64 {
        match &self.values {
            Values::Sparse(e) => e
                .binary_search_by_key(&index, |&(i, _)| i)
                .map(|p| e[p].1)
                .unwrap_or(0.0),
            Values::Dense(v) => v.get(index).copied().unwrap_or(0.0),
        }
    }

    /// Stored entries in index order (all entries for dense vectors).
    pub fn entries(&self) -> Box<dyn Iterator<Item = (usize, f64)> + '_> {
        match &self.values {
            Values::Sparse(e) => Box::new(e.iter().copied()),
            Values::Dense(v) => Box::new(v.iter().copied().enumerate()),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match &self.values {
            Values::Sparse(e) => {
                let mut out = vec![0.0; self.dim];
                for &(i, w) in e {
                    out[i] = w;
                }
                out
            }
            Values::Dense(v) => v.clone(),
        }
    }

    pub fn densified(&self) -> FeatureVector {
        FeatureVector::dense(self.doc_id.clone(), self.to_dense())
    }

    pub fn is_zero(&self) -> bool {
        self.entries().all(|(_, w)| w == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.entries().map(|(_, w)| w * w).sum::<f64>().sqrt()
    }

    pub fn max_entry(&self) -> f64 {
        self.entries()
            .map(|(_, w)| w)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> FeatureVector {
        let values = match &self.values {
            Values::Sparse(e) => Values::Sparse(
                e.iter()
                    .map(|&(i, w)| (i, w * factor))
                    .filter(|&(_, w)| w != 0.0)
                    .collect(),
            ),
            Values::Dense(v) => Values::Dense(v.iter().map(|w| w * factor).collect()),
        };
        FeatureVector {
            doc_id: self.doc_id.clone(),
            dim: self.dim,
            values,
        }
    }

    pub fn check_dim(&self, other: &FeatureVector) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        Ok(())
    }

    /// Visit `(x_i, y_i)` for every index where either vector stores an entry.
    pub fn for_each_union(&self, other: &FeatureVector, mut f: impl FnMut(f64, f64)) {
        match (&self.values, &other.values) {
            (Values::Sparse(a), Values::Sparse(b)) => {
                let (mut i, mut j) = (0, 0);
                while i < a.len() || j < b.len() {
                    match (a.get(i), b.get(j)) {
                        (Some(&(ia, wa)), Some(&(ib, wb))) if ia == ib => {
                            f(wa, wb);
                            i += 1;
                            j += 1;
                        }
                        (Some(&(ia, wa)), Some(&(ib, _))) if ia < ib => {
                            f(wa, 0.0);
                            i += 1;
                        }
                        (Some(&(_, wa)), None) => {
                            f(wa, 0.0);
                            i += 1;
                        }
                        (_, Some(&(_, wb))) => {
                            f(0.0, wb);
                            j += 1;
                        }
                        (None, None) => unreachable!(),
                    }
                }
            }
            (Values::Dense(a), Values::Dense(b)) => a.iter().zip(b).for_each(|(&x, &y)| f(x, y)),
            (Values::Dense(a), Values::Sparse(_)) => {
                a.iter().enumerate().for_each(|(i, &x)| f(x, other.get(i)))
            }
            (Values::Sparse(_), Values::Dense(b)) => {
                b.iter().enumerate().for_each(|(i, &y)| f(self.get(i), y))
            }
        }
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        let mut acc = 0.0;
        match (&self.values, &other.values) {
            (Values::Sparse(a), _) => a.iter().for_each(|&(i, w)| acc += w * other.get(i)),
            (_, Values::Sparse(b)) => b.iter().for_each(|&(i, w)| acc += self.get(i) * w),
            _ => self.for_each_union(other, |x, y| acc += x * y),
        }
        acc
    }
}

/// Rows of feature vectors sharing one dimension, in stable order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    rows: Vec<FeatureVector>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, rows: Vec<FeatureVector>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.dim != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.dim,
                });
            }
            if index.insert(row.doc_id.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate row id {:?}",
                    row.doc_id
                )));
            }
        }
        Ok(FeatureMatrix { dim, rows, index })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn into_rows(self) -> Vec<FeatureVector> {
        self.rows
    }

    pub fn row(&self, i: usize) -> &FeatureVector {
        &self.rows[i]
    }

    pub fn get(&self, doc_id: &str) -> Option<&FeatureVector> {
        self.index.get(doc_id).map(|&i| &self.rows[i])
    }

    pub fn row_ids(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|r| r.doc_id.as_str())
    }

    /// Sparse triplet text form: `#dim=<L> rows=<D>` then
    /// `doc_id<TAB>index:weight ...` per row, weights at 9 significant digits.
    pub fn write_triplets(&self, mut w: impl Write) -> Result<()> {
        let mut buf = format!("#dim={} rows={}\n", self.dim, self.rows.len());
        for row in &self.rows {
            buf.push_str(&row.doc_id);
            buf.push('\t');
            let mut first = true;
            for (i, v) in row.entries().filter(|&(_, v)| v != 0.0) {
                if !first {
                    buf.push(' ');
                }
                first = false;
                let _ = write!(buf, "{i}:{}", sig9(v));
            }
            buf.push('\n');
            if buf.len() > 1 << 16 {
                w.write_all(buf.as_bytes())
                    .map_err(|e| Error::io("writing features", e))?;
                buf.clear();
            }
        }
        w.write_all(buf.as_bytes())
            .map_err(|e| Error::io("writing features", e))?;
        w.flush().map_err(|e| Error::io("writing features", e))
    }

    pub fn read_triplets(path: &Path) -> Result<Self> {
        let reader = binio::open(path)?;
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::io(path.display().to_string(), e))?
            .ok_or_else(|| perr(1, "missing header".into()))?;
        let parse_header = || -> Option<(usize, usize)> {
            let rest = header.strip_prefix("#dim=")?;
            let (dim, rows) = rest.split_once(" rows=")?;
            Some((dim.trim().parse().ok()?, rows.trim().parse().ok()?))
        };
        let (dim, n_rows) =
            parse_header().ok_or_else(|| perr(1, format!("bad header {header:?}")))?;
        let mut rows = Vec::with_capacity(n_rows);
        for (ln, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            let ln = ln + 2;
            let (id, body) = line
                .split_once('\t')
                .ok_or_else(|| perr(ln, "expected doc_id<TAB>entries".into()))?;
            let entries = body
                .split_whitespace()
                .map(|tok| {
                    let (i, v) = tok.split_once(':')?;
                    Some((i.parse().ok()?, v.parse().ok()?))
                })
                .collect::<Option<Vec<(usize, f64)>>>()
                .ok_or_else(|| perr(ln, "bad index:weight entry".into()))?;
            rows.push(FeatureVector::sparse(id, dim, entries)?);
        }
        if rows.len() != n_rows {
            return Err(perr(
                1,
                format!("header declares {n_rows} rows, found {}", rows.len()),
            ));
        }
        FeatureMatrix::new(dim, rows)
    }

    const MAGIC: &'static [u8; 8] = b"PAFMAT01";

    /// Exact binary form: dim, row count, then per row the id, a storage
    /// flag (0 sparse / 1 dense) and the stored values.
    pub fn save_binary(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, Self::MAGIC)?;
        self.write_body(&mut w)?;
        w.finish()?;
        Ok(())
    }

    pub fn load_binary(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, Self::MAGIC)?;
        Self::read_body(&mut r)
    }

    pub(crate) fn write_body<W: Write>(&self, w: &mut BinWriter<W>) -> Result<()> {
        w.usize(self.dim)?;
        w.usize(self.rows.len())?;
        for row in &self.rows {
            w.str(&row.doc_id)?;
            match &row.values {
                Values::Sparse(e) => {
                    w.u64(0)?;
                    w.usize(e.len())?;
                    for &(i, v) in e {
                        w.usize(i)?;
                        w.f64(v)?;
                    }
                }
                Values::Dense(v) => {
                    w.u64(1)?;
                    w.f64s(v)?;
                }
            }
        }
        Ok(())
    }

    pub(crate) fn read_body<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        let dim = r.usize()?;
        let n = r.usize()?;
        let mut rows = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let id = r.str()?;
            match r.u64()? {
                0 => {
                    let nnz = r.usize()?;
                    let mut e = Vec::with_capacity(nnz.min(dim));
                    for _ in 0..nnz {
                        e.push((r.usize()?, r.f64()?));
                    }
                    rows.push(FeatureVector::sparse(id, dim, e)?);
                }
                1 => rows.push(FeatureVector::dense(id, r.f64s(dim)?)),
                flag => return Err(Error::Format(format!("bad row storage flag {flag}"))),
            }
        }
        FeatureMatrix::new(dim, rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Counting {
    #[default]
    Tf,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Length,
    Max,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    pub counting: Counting,
    pub idf: bool,
    pub normalization: Normalization,
}

impl Default for BowConfig {
    /// Length-normalized tf-idf.
    fn default() -> Self {
        BowConfig {
            counting: Counting::Tf,
            idf: true,
            normalization: Normalization::Length,
        }
    }
}

/// Natural-log inverse document frequency, `ln(|D| / df)`.
pub fn idf(vocab: &Vocabulary, term: usize) -> Result<f64> {
    let df = vocab.doc_freq(term);
    if df == 0 {
        return Err(Error::Domain(format!(
            "term {term} has document frequency 0"
        )));
    }
    Ok((vocab.total_docs() as f64 / df as f64).ln())
}

fn counts(doc: &TokenizedDoc, vocab: &Vocabulary) -> (Vec<(usize, f64)>, usize) {
    let mut counts: HashMap<usize, f64> = HashMap::new();
    let mut total = 0;
    for id in vocab.encode(doc) {
        *counts.entry(id).or_insert(0.0) += 1.0;
        total += 1;
    }
    (counts.into_iter().collect(), total)
}

/// Count of each in-vocabulary term divided by the document's in-vocabulary
/// token count.
pub fn term_frequency(doc: &TokenizedDoc, vocab: &Vocabulary) -> FeatureVector {
    let (mut entries, total) = counts(doc, vocab);
    for e in &mut entries {
        e.1 /= total as f64;
    }
    FeatureVector::sparse(doc.doc_id.clone(), vocab.len(), entries)
        .expect("indices come from the vocabulary")
}

/// Precomputed weighting for one vocabulary and configuration.
#[derive(Debug, Clone)]
pub struct BowFeaturizer {
    cfg: BowConfig,
    dim: usize,
    idf: Option<Vec<f64>>,
}

impl BowFeaturizer {
    pub fn new(vocab: &Vocabulary, cfg: BowConfig) -> Result<Self> {
        let idf = if cfg.idf {
            Some(
                (0..vocab.len())
                    .map(|t| idf(vocab, t))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(BowFeaturizer {
            cfg,
            dim: vocab.len(),
            idf,
        })
    }

    pub fn config(&self) -> BowConfig {
        self.cfg
    }

    pub fn featurize(&self, doc: &TokenizedDoc, vocab: &Vocabulary) -> FeatureVector {
        let (mut entries, total) = counts(doc, vocab);
        for e in &mut entries {
            e.1 = match self.cfg.counting {
                Counting::Tf => e.1 / total as f64,
                Counting::Binary => 1.0,
            };
            if let Some(idf) = &self.idf {
                e.1 *= idf[e.0];
            }
        }
        let v = FeatureVector::sparse(doc.doc_id.clone(), self.dim, entries)
            .expect("indices come from the vocabulary");
        let divisor = match self.cfg.normalization {
            Normalization::Length => v.norm(),
            Normalization::Max => v.max_entry(),
            Normalization::None => 1.0,
        };
        if v.nnz() == 0 || divisor == 0.0 || divisor == 1.0 {
            v
        } else {
            v.scaled(1.0 / divisor)
        }
    }
}

pub fn build_features(
    docs: &[TokenizedDoc],
    vocab: &Vocabulary,
    cfg: BowConfig,
) -> Result<FeatureMatrix> {
    let featurizer = BowFeaturizer::new(vocab, cfg)?;
    let rows: Vec<FeatureVector> = docs
        .par_iter()
        .map(|d| featurizer.featurize(d, vocab))
        .collect();
    FeatureMatrix::new(vocab.len(), rows)
}
