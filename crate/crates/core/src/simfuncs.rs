//! Similarity coefficients, kernels and distances between feature vectors.
//!
//! Coefficients work on the overlap counts `a` (shared mass), `b` and `c`
//! (mass exclusive to either side). Distances are turned into similarities
//! by negation. Any term whose denominator is zero contributes zero.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::bow::{FeatureMatrix, FeatureVector};
use crate::corpus::{DatasetKind, LabeledPair, PairDataset, PairLabel};
use crate::error::{Error, Result};

/// Tolerance on ‖x‖ = 1 for the geodesic distance.
const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapCounts {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Coefficient {
    Cosine,
    BraunBlanquet,
    Dice,
    Jaccard,
    Kulczynski,
    Ochiai,
    Simpson,
    SokalSneath,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    Gaussian { sigma: f64 },
    HistogramIntersection,
    Polynomial { p: f64, theta: f64 },
    Sigmoidal { theta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Distance {
    Canberra,
    Chebyshev,
    /// Squared Euclidean distance.
    Euclidean,
    Geodesic,
    HellingerSq,
    JensenShannon,
    Manhattan,
    /// p-th power of the Minkowski distance.
    Minkowski {
        p: f64,
    },
    ChiSq,
}

/// A similarity measure from any of the three families.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureSpec {
    Coefficient(Coefficient),
    Kernel(Kernel),
    Distance(Distance),
}

impl Default for MeasureSpec {
    fn default() -> Self {
        MeasureSpec::Coefficient(Coefficient::Cosine)
    }
}

fn check_non_negative(x: &FeatureVector, what: &str) -> Result<()> {
    match x.entries().find(|&(_, w)| w < 0.0) {
        Some((i, w)) => Err(Error::Domain(format!(
            "{what} requires non-negative features; {:?}[{i}] = {w}",
            x.doc_id
        ))),
        None => Ok(()),
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("{what} evaluated to {value}")))
    }
}

pub fn overlap_counts(x: &FeatureVector, y: &FeatureVector) -> Result<OverlapCounts> {
    x.check_dim(y)?;
    check_non_negative(x, "overlap counts")?;
    check_non_negative(y, "overlap counts")?;
    let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
    x.for_each_union(y, |p, q| {
        let m = p.min(q);
        a += m;
        b += p - m;
        c += q - m;
    });
    Ok(OverlapCounts { a, b, c })
}

pub fn cosine(x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    x.check_dim(y)?;
    let (mut dot, mut xx, mut yy) = (0.0, 0.0, 0.0);
    x.for_each_union(y, |p, q| {
        dot += p * q;
        xx += p * p;
        yy += q * q;
    });
    finite(ratio(dot, xx.sqrt() * yy.sqrt()), "cosine")
}

impl Coefficient {
    pub const ALL: [Coefficient; 8] = [
        Coefficient::Cosine,
        Coefficient::BraunBlanquet,
        Coefficient::Dice,
        Coefficient::Jaccard,
        Coefficient::Kulczynski,
        Coefficient::Ochiai,
        Coefficient::Simpson,
        Coefficient::SokalSneath,
    ];

    /// Evaluate on precomputed overlap counts. Not defined for cosine.
    pub fn from_counts(self, o: OverlapCounts) -> f64 {
        let OverlapCounts { a, b, c } = o;
        match self {
            Coefficient::Cosine => panic!("cosine is not a function of overlap counts"),
            Coefficient::BraunBlanquet => ratio(a, (a + b).max(a + c)),
            Coefficient::Dice => ratio(2.0 * a, 2.0 * a + b + c),
            Coefficient::Jaccard => ratio(a, a + b + c),
            Coefficient::Kulczynski => ratio(a, 2.0 * (a + b)) + ratio(a, 2.0 * (a + c)),
            Coefficient::Ochiai => ratio(a, ((a + b) * (a + c)).sqrt()),
            Coefficient::Simpson => ratio(a, (a + b).min(a + c)),
            Coefficient::SokalSneath => ratio(a, a + 2.0 * (b + c)),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Coefficient::Cosine => "cosine",
            Coefficient::BraunBlanquet => "braun_blanquet",
            Coefficient::Dice => "dice",
            Coefficient::Jaccard => "jaccard",
            Coefficient::Kulczynski => "kulczynski",
            Coefficient::Ochiai => "ochiai",
            Coefficient::Simpson => "simpson",
            Coefficient::SokalSneath => "sokal_sneath",
        }
    }
}

pub fn coefficient(kind: Coefficient, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    match kind {
        Coefficient::Cosine => cosine(x, y),
        _ => finite(kind.from_counts(overlap_counts(x, y)?), kind.name()),
    }
}

pub fn kernel(kind: Kernel, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    x.check_dim(y)?;
    let value = match kind {
        Kernel::Linear => x.dot(y),
        Kernel::Gaussian { sigma } => {
            if sigma <= 0.0 {
                return Err(Error::Parameter(format!(
                    "gaussian sigma must be positive, got {sigma}"
                )));
            }
            (-distance(Distance::Euclidean, x, y)? / (2.0 * sigma * sigma)).exp()
        }
        Kernel::HistogramIntersection => {
            check_non_negative(x, "histogram intersection")?;
            check_non_negative(y, "histogram intersection")?;
            let mut acc = 0.0;
            x.for_each_union(y, |p, q| acc += p.min(q));
            acc
        }
        Kernel::Polynomial { p, theta } => {
            if p < 1.0 {
                return Err(Error::Parameter(format!(
                    "polynomial degree must be >= 1, got {p}"
                )));
            }
            (x.dot(y) + theta).powf(p)
        }
        Kernel::Sigmoidal { theta } => (x.dot(y) + theta).tanh(),
    };
    finite(value, "kernel")
}

pub fn distance(kind: Distance, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    x.check_dim(y)?;
    let needs_non_negative = matches!(
        kind,
        Distance::Canberra | Distance::HellingerSq | Distance::JensenShannon | Distance::ChiSq
    );
    if needs_non_negative {
        check_non_negative(x, "this distance")?;
        check_non_negative(y, "this distance")?;
    }
    let mut acc = 0.0;
    match kind {
        Distance::Canberra => x.for_each_union(y, |p, q| acc += ratio((p - q).abs(), p + q)),
        Distance::Chebyshev => x.for_each_union(y, |p, q| acc = f64::max(acc, (p - q).abs())),
        Distance::Euclidean => x.for_each_union(y, |p, q| acc += (p - q) * (p - q)),
        Distance::Geodesic => {
            for v in [x, y] {
                let n = v.norm();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(Error::Domain(format!(
                        "geodesic distance requires length-normalized vectors; ‖{}‖ = {n}",
                        v.doc_id
                    )));
                }
            }
            acc = x.dot(y).clamp(-1.0, 1.0).acos();
        }
        Distance::HellingerSq => x.for_each_union(y, |p, q| {
            let d = p.sqrt() - q.sqrt();
            acc += d * d
        }),
        Distance::JensenShannon => x.for_each_union(y, |p, q| {
            let m = 0.5 * (p + q);
            if p > 0.0 {
                acc += p * (p / m).ln();
            }
            if q > 0.0 {
                acc += q * (q / m).ln();
            }
        }),
        Distance::Manhattan => x.for_each_union(y, |p, q| acc += (p - q).abs()),
        Distance::Minkowski { p } => {
            if p < 1.0 {
                return Err(Error::Parameter(format!(
                    "minkowski p must be >= 1, got {p}"
                )));
            }
            x.for_each_union(y, |a, b| acc += (a - b).abs().powf(p))
        }
        Distance::ChiSq => x.for_each_union(y, |p, q| acc += ratio((p - q) * (p - q), p + q)),
    }
    finite(acc, "distance")
}

pub fn distance_as_similarity(kind: Distance, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    distance(kind, x, y).map(|d| -d)
}

impl MeasureSpec {
    /// Similarity score: larger means more similar.
    pub fn similarity(&self, x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
        match *self {
            MeasureSpec::Coefficient(kind) => coefficient(kind, x, y),
            MeasureSpec::Kernel(kind) => kernel(kind, x, y),
            MeasureSpec::Distance(kind) => distance_as_similarity(kind, x, y),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            MeasureSpec::Coefficient(_) => "coefficient",
            MeasureSpec::Kernel(_) => "kernel",
            MeasureSpec::Distance(_) => "distance",
        }
    }

    /// Every measure with default parameters.
    pub fn catalogue() -> Vec<MeasureSpec> {
        let mut all: Vec<MeasureSpec> = Coefficient::ALL
            .into_iter()
            .map(MeasureSpec::Coefficient)
            .collect();
        for name in [
            "linear",
            "gaussian",
            "histogram_intersection",
            "polynomial",
            "sigmoidal",
        ] {
            all.push(format!("kernel:{name}").parse().expect("catalogue entry"));
        }
        for name in [
            "canberra",
            "chebyshev",
            "euclidean",
            "geodesic",
            "hellinger_sq",
            "jensen_shannon",
            "manhattan",
            "minkowski",
            "chi_sq",
        ] {
            all.push(format!("distance:{name}").parse().expect("catalogue entry"));
        }
        all
    }
}

impl fmt::Display for MeasureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasureSpec::Coefficient(c) => write!(f, "coefficient:{}", c.name()),
            MeasureSpec::Kernel(k) => match k {
                Kernel::Linear => f.write_str("kernel:linear"),
                Kernel::Gaussian { sigma } => write!(f, "kernel:gaussian:sigma={sigma}"),
                Kernel::HistogramIntersection => f.write_str("kernel:histogram_intersection"),
                Kernel::Polynomial { p, theta } => {
                    write!(f, "kernel:polynomial:p={p},theta={theta}")
                }
                Kernel::Sigmoidal { theta } => write!(f, "kernel:sigmoidal:theta={theta}"),
            },
            MeasureSpec::Distance(d) => match d {
                Distance::Canberra => f.write_str("distance:canberra"),
                Distance::Chebyshev => f.write_str("distance:chebyshev"),
                Distance::Euclidean => f.write_str("distance:euclidean"),
                Distance::Geodesic => f.write_str("distance:geodesic"),
                Distance::HellingerSq => f.write_str("distance:hellinger_sq"),
                Distance::JensenShannon => f.write_str("distance:jensen_shannon"),
                Distance::Manhattan => f.write_str("distance:manhattan"),
                Distance::Minkowski { p } => write!(f, "distance:minkowski:p={p}"),
                Distance::ChiSq => f.write_str("distance:chi_sq"),
            },
        }
    }
}

/// Parses `family:kind[:param=value,...]`, e.g. `kernel:gaussian:sigma=0.5`.
impl FromStr for MeasureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |msg: String| Error::Parameter(format!("measure {s:?}: {msg}"));
        let mut parts = s.splitn(3, ':');
        let family = parts.next().unwrap_or_default().trim().to_ascii_lowercase();
        let kind = parts
            .next()
            .ok_or_else(|| bad("expected family:kind".into()))?
            .trim()
            .to_ascii_lowercase()
            .replace('-', "_");
        let mut params: HashMap<String, f64> = HashMap::new();
        if let Some(list) = parts.next() {
            for kv in list.split(',').filter(|kv| !kv.trim().is_empty()) {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| bad(format!("parameter {kv:?} is not key=value")))?;
                let v: f64 = v
                    .trim()
                    .parse()
                    .map_err(|_| bad(format!("parameter {k} is not a number")))?;
                params.insert(k.trim().to_ascii_lowercase(), v);
            }
        }
        let mut take = |key: &str, default: f64| params.remove(key).unwrap_or(default);
        let spec = match (family.as_str(), kind.as_str()) {
            ("coefficient", name) => MeasureSpec::Coefficient(
                Coefficient::ALL
                    .into_iter()
                    .find(|c| c.name() == name || c.name().replace('_', "") == name)
                    .ok_or_else(|| bad(format!("unknown coefficient {name}")))?,
            ),
            ("kernel", "linear") => MeasureSpec::Kernel(Kernel::Linear),
            ("kernel", "gaussian") => MeasureSpec::Kernel(Kernel::Gaussian {
                sigma: take("sigma", 1.0),
            }),
            ("kernel", "histogram_intersection" | "histogram") => {
                MeasureSpec::Kernel(Kernel::HistogramIntersection)
            }
            ("kernel", "polynomial") => MeasureSpec::Kernel(Kernel::Polynomial {
                p: take("p", 2.0),
                theta: take("theta", 1.0),
            }),
            ("kernel", "sigmoidal" | "sigmoid") => MeasureSpec::Kernel(Kernel::Sigmoidal {
                theta: take("theta", 1.0),
            }),
            ("distance", name) => MeasureSpec::Distance(match name {
                "canberra" => Distance::Canberra,
                "chebyshev" => Distance::Chebyshev,
                "euclidean" => Distance::Euclidean,
                "geodesic" => Distance::Geodesic,
                "hellinger_sq" | "hellinger" => Distance::HellingerSq,
                "jensen_shannon" => Distance::JensenShannon,
                "manhattan" => Distance::Manhattan,
                "minkowski" => Distance::Minkowski { p: take("p", 3.0) },
                "chi_sq" | "chi2" => Distance::ChiSq,
                other => return Err(bad(format!("unknown distance {other}"))),
            }),
            (fam, _) => return Err(bad(format!("unknown family {fam}"))),
        };
        if let Some(k) = params.keys().next() {
            return Err(bad(format!("unexpected parameter {k}")));
        }
        match spec {
            MeasureSpec::Kernel(Kernel::Gaussian { sigma }) if sigma.is_nan() || sigma <= 0.0 => {
                Err(bad("sigma must be > 0".into()))
            }
            MeasureSpec::Kernel(Kernel::Polynomial { p, .. })
            | MeasureSpec::Distance(Distance::Minkowski { p })
                if p.is_nan() || p < 1.0 =>
            {
                Err(bad("p must be >= 1".into()))
            }
            _ => Ok(spec),
        }
    }
}

impl Serialize for MeasureSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MeasureSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Feature vectors addressable by document id.
pub trait FeatureLookup: Sync {
    fn lookup(&self, doc_id: &str) -> Option<&FeatureVector>;
}

impl FeatureLookup for HashMap<String, FeatureVector> {
    fn lookup(&self, doc_id: &str) -> Option<&FeatureVector> {
        self.get(doc_id)
    }
}

impl FeatureLookup for FeatureMatrix {
    fn lookup(&self, doc_id: &str) -> Option<&FeatureVector> {
        self.get(doc_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub pair: LabeledPair,
    pub score: f64,
}

/// Score every pair of `pairs` with `spec`, preserving order.
pub fn score_pairs(
    pairs: &PairDataset,
    features: &impl FeatureLookup,
    spec: &MeasureSpec,
) -> Result<Vec<ScoredPair>> {
    let mut missing: Vec<String> = Vec::new();
    for p in &pairs.pairs {
        for id in [&p.target_id, &p.other_id] {
            if features.lookup(id).is_none() && !missing.contains(id) {
                missing.push(id.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFeatures(missing));
    }
    pairs
        .pairs
        .par_iter()
        .map(|p| {
            let (x, y) = (features.lookup(&p.target_id), features.lookup(&p.other_id));
            let score = spec.similarity(x.expect("checked"), y.expect("checked"))?;
            Ok(ScoredPair {
                pair: p.clone(),
                score,
            })
        })
        .collect()
}

const SCORED_HEADER: [&str; 5] = ["target_id", "other_id", "label", "relevance", "similarity"];

/// Write scored pairs as CSV. Similarities use the shortest representation
/// that parses back to the same `f64`.
pub fn write_scored_csv<W: std::io::Write>(w: W, scored: &[ScoredPair]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(SCORED_HEADER).map_err(csv_err)?;
    for sp in scored {
        let p = &sp.pair;
        let label = p.label.map(|l| l.as_str()).unwrap_or_default();
        let relevance = p.relevance.map(|r| r.to_string()).unwrap_or_default();
        let score = sp.score.to_string();
        w.write_record([
            p.target_id.as_str(),
            p.other_id.as_str(),
            label,
            &relevance,
            &score,
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("writing scored pairs", e))
}

/// Read a file written by [`write_scored_csv`] back into its dataset and
/// scores. Any relevance column value makes it a relevance dataset.
pub fn read_scored_csv(path: &Path, threshold: u8) -> Result<(PairDataset, Vec<ScoredPair>)> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(csv_err)?;
    if headers.iter().ne(SCORED_HEADER) {
        return Err(Error::Validation(format!(
            "{}: header must be {}",
            path.display(),
            SCORED_HEADER.join(",")
        )));
    }
    let mut scored = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let bad = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message,
        };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let label = match &rec[2] {
            "" => None,
            l => Some(l.parse::<PairLabel>().map_err(|e| bad(e.to_string()))?),
        };
        let relevance = match &rec[3] {
            "" => None,
            r => Some(
                r.parse::<u8>()
                    .map_err(|_| bad(format!("bad relevance {r:?}")))?,
            ),
        };
        let score: f64 = rec[4]
            .parse()
            .map_err(|_| bad(format!("bad similarity {:?}", &rec[4])))?;
        scored.push(ScoredPair {
            pair: LabeledPair {
                target_id: rec[0].to_owned(),
                other_id: rec[1].to_owned(),
                label,
                relevance,
            },
            score,
        });
    }
    let kind = if scored.iter().any(|s| s.pair.relevance.is_some()) {
        DatasetKind::RelevanceLabeled
    } else {
        DatasetKind::CitedRandom
    };
    let ds = PairDataset::new(
        kind,
        scored.iter().map(|s| s.pair.clone()).collect(),
        threshold,
    )?;
    Ok((ds, scored))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}
