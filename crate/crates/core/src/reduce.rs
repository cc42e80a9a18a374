//! Dimensionality reduction of BOW features.
//!
//! LSA keeps the top right-singular vectors of the document-term matrix X;
//! KPCA eigendecomposes the uncentered linear kernel K = XXᵀ. Small
//! problems (smallest side ≤ 200) use dense solvers, larger
//! ones a seeded randomized SVD.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen, QR, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::binio::{self, BinReader, BinWriter};
use crate::bow::{FeatureMatrix, FeatureVector};
use crate::error::{Error, Result};

pub const DENSE_SOLVER_LIMIT: usize = 200;
pub const OVERSAMPLING: usize = 10;
pub const POWER_ITERATIONS: usize = 4;

/// Eigenvalues this far below zero are treated as round-off.
const NEGATIVE_EIGVAL_TOL: f64 = 1e-10;

/// Operator access to a matrix A for the randomized solver.
trait LinearOp: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    /// A · m
    fn mul(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
    /// Aᵀ · m
    fn tr_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64>;
}

/// Row-sparse matrix with a cached column view for Aᵀ products.
struct SparseOp {
    ncols: usize,
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl SparseOp {
    fn new(x: &FeatureMatrix) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = x.rows().iter().map(|r| r.entries().collect()).collect();
        let mut cols = vec![Vec::new(); x.dim()];
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                cols[j].push((i, v));
            }
        }
        SparseOp {
            ncols: x.dim(),
            rows,
            cols,
        }
    }
}

/// Rows of `lines · m`, each line a sparse combination of rows of `m`.
fn sparse_combine(lines: &[Vec<(usize, f64)>], m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.ncols();
    let mt = m.transpose();
    let out: Vec<f64> = lines
        .par_iter()
        .flat_map_iter(|line| {
            let mut acc = vec![0.0; k];
            for &(j, v) in line {
                for (a, &b) in acc.iter_mut().zip(mt.column(j).iter()) {
                    *a += v * b;
                }
            }
            acc
        })
        .collect();
    DMatrix::from_row_slice(lines.len(), k, &out)
}

impl LinearOp for SparseOp {
    fn nrows(&self) -> usize {
        self.rows.len()
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        sparse_combine(&self.rows, m)
    }
    fn tr_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        sparse_combine(&self.cols, m)
    }
}

impl LinearOp for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }
    fn ncols(&self) -> usize {
        self.ncols()
    }
    fn mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self * m
    }
    fn tr_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        self.tr_mul(m)
    }
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    QR::new(y).q()
}

/// Top-`l` singular triplets of A: (left vectors n×l, values, right vectors m×l).
fn randomized_svd(a: &dyn LinearOp, l: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let k = (l + OVERSAMPLING).min(a.nrows()).min(a.ncols());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(a.ncols(), k, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_basis(a.mul(&omega));
    for _ in 0..POWER_ITERATIONS {
        let z = orthonormal_basis(a.tr_mul(&q));
        q = orthonormal_basis(a.mul(&z));
    }
    // Aᵀ Q = (QᵀA)ᵀ; its SVD U' Σ V'ᵀ gives A ≈ (Q V') Σ U'ᵀ.
    let bt = a.tr_mul(&q);
    let svd = SVD::new(bt, true, true);
    let (u, s, vt) = (
        svd.u.expect("u"),
        svd.singular_values,
        svd.v_t.expect("v_t"),
    );
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
    order.truncate(l);
    let right = DMatrix::from_fn(a.ncols(), l, |r, c| u[(r, order[c])]);
    let qv = q * vt.transpose();
    let left = DMatrix::from_fn(a.nrows(), l, |r, c| qv[(r, order[c])]);
    (left, order.iter().map(|&i| s[i]).collect(), right)
}

/// Flip each column so its largest-magnitude entry is positive.
fn fix_column_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let mut best = 0.0f64;
        for &v in col.iter() {
            if v.abs() > best.abs() {
                best = v;
            }
        }
        if best < 0.0 {
            col.neg_mut();
        }
    }
}

fn check_rank(l: usize, max: usize, what: &str) -> Result<()> {
    if l == 0 || l > max {
        return Err(Error::Parameter(format!(
            "{what} needs 1 <= l <= {max}, got l = {l}"
        )));
    }
    Ok(())
}

fn dense_rows(x: &FeatureMatrix) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(x.n_rows(), x.dim());
    for (i, row) in x.rows().iter().enumerate() {
        for (j, v) in row.entries() {
            m[(i, j)] = v;
        }
    }
    m
}

/// Top right-singular vectors of X, stored as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaModel {
    /// l × L, orthonormal rows.
    pub components: DMatrix<f64>,
    pub singular_values: Vec<f64>,
}

pub fn lsa_fit(x: &FeatureMatrix, l: usize, seed: u64) -> Result<LsaModel> {
    let (d, dim) = (x.n_rows(), x.dim());
    check_rank(l, d.min(dim), "LSA")?;
    let (mut right, singular_values) = if d.min(dim) <= DENSE_SOLVER_LIMIT {
        let svd = SVD::new(dense_rows(x), false, true);
        let vt = svd.v_t.expect("v_t");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&i, &j| s[j].total_cmp(&s[i]));
        order.truncate(l);
        let right = DMatrix::from_fn(dim, l, |r, c| vt[(order[c], r)]);
        (right, order.iter().map(|&i| s[i]).collect())
    } else {
        let (_, s, right) = randomized_svd(&SparseOp::new(x), l, seed);
        (right, s)
    };
    if singular_values.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric(
            "SVD produced non-finite singular values".into(),
        ));
    }
    fix_column_signs(&mut right);
    Ok(LsaModel {
        components: right.transpose(),
        singular_values,
    })
}

impl LsaModel {
    const MAGIC: &'static [u8; 8] = b"PALSA001";

    pub fn l(&self) -> usize {
        self.components.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.components.ncols()
    }

    fn project(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        if v.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: v.dim(),
            });
        }
        let mut out = vec![0.0; self.l()];
        for (j, x) in v.entries() {
            for (o, c) in out.iter_mut().zip(self.components.column(j).iter()) {
                *o += c * x;
            }
        }
        Ok(out)
    }

    /// Dense l-dimensional projection `components · v`.
    pub fn transform(&self, v: &FeatureVector) -> Result<FeatureVector> {
        Ok(FeatureVector::dense(v.doc_id.clone(), self.project(v)?))
    }

    /// Back-projection of the rank-l approximation of `v` into term space.
    pub fn reconstruct(&self, v: &FeatureVector) -> Result<Vec<f64>> {
        let z = DMatrix::from_row_slice(1, self.l(), &self.project(v)?);
        Ok((z * &self.components).iter().copied().collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, Self::MAGIC)?;
        w.usize(self.l())?;
        w.usize(self.input_dim())?;
        w.f64s(&self.singular_values)?;
        w.f64s(self.components.transpose().as_slice())?;
        w.finish()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, Self::MAGIC)?;
        let l = r.usize()?;
        let dim = r.usize()?;
        let singular_values = r.f64s(l)?;
        let comps = r.f64s(
            l.checked_mul(dim)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        Ok(LsaModel {
            components: DMatrix::from_row_slice(l, dim, &comps),
            singular_values,
        })
    }
}

/// Linear-kernel KPCA fitted on the rows of a training matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KpcaModel {
    pub train: FeatureMatrix,
    /// D × l, orthonormal columns.
    pub eigvecs: DMatrix<f64>,
    pub eigvals: Vec<f64>,
}

/// K = XXᵀ from sparse row dot products.
pub fn linear_kernel_matrix(x: &FeatureMatrix) -> Result<DMatrix<f64>> {
    let d = x.n_rows();
    let upper: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| (i..d).map(|j| x.row(i).dot(x.row(j))).collect())
        .collect();
    let mut k = DMatrix::zeros(d, d);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "kernel entry ({i}, {}) is {v}",
                    i + off
                )));
            }
            k[(i, i + off)] = v;
            k[(i + off, i)] = v;
        }
    }
    Ok(k)
}

pub fn kpca_fit(x: &FeatureMatrix, l: usize, seed: u64) -> Result<KpcaModel> {
    let d = x.n_rows();
    check_rank(l, d, "KPCA")?;
    let k = linear_kernel_matrix(x)?;
    let (mut eigvecs, raw) = if d <= DENSE_SOLVER_LIMIT {
        let eig = SymmetricEigen::new(k);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        order.truncate(l);
        let vecs = DMatrix::from_fn(d, l, |r, c| eig.eigenvectors[(r, order[c])]);
        (
            vecs,
            order
                .iter()
                .map(|&i| eig.eigenvalues[i])
                .collect::<Vec<_>>(),
        )
    } else {
        let (left, s, _) = randomized_svd(&k, l, seed);
        (left, s)
    };
    let scale = raw.first().map_or(1.0, |v: &f64| v.abs().max(1.0));
    let mut eigvals = Vec::with_capacity(l);
    for v in raw {
        if !v.is_finite() || v < -NEGATIVE_EIGVAL_TOL * scale {
            return Err(Error::Numeric(format!("kernel matrix has eigenvalue {v}")));
        }
        eigvals.push(v.max(0.0));
    }
    fix_column_signs(&mut eigvecs);
    Ok(KpcaModel {
        train: x.clone(),
        eigvecs,
        eigvals,
    })
}

impl KpcaModel {
    const MAGIC: &'static [u8; 8] = b"PAKPCA01";

    pub fn l(&self) -> usize {
        self.eigvecs.ncols()
    }

    /// Kernel row k(v, X) projected on the eigenvectors, each scaled by
    /// eigval^(-1/2). Components with a numerically zero eigenvalue are 0.
    pub fn transform(&self, v: &FeatureVector) -> Result<FeatureVector> {
        if v.dim() != self.train.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.train.dim(),
                actual: v.dim(),
            });
        }
        let kv: Vec<f64> = self.train.rows().iter().map(|r| r.dot(v)).collect();
        let floor = self.eigvals.first().copied().unwrap_or(0.0) * 1e-12;
        let out = self
            .eigvecs
            .column_iter()
            .zip(&self.eigvals)
            .map(|(e, &lambda)| {
                if lambda <= floor || lambda == 0.0 {
                    0.0
                } else {
                    e.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>() / lambda.sqrt()
                }
            })
            .collect();
        Ok(FeatureVector::dense(v.doc_id.clone(), out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BinWriter::new(binio::create(path)?, Self::MAGIC)?;
        self.write_body(&mut w)?;
        w.finish()?;
        Ok(())
    }

    fn write_body<W: Write>(&self, w: &mut BinWriter<W>) -> Result<()> {
        w.usize(self.eigvecs.nrows())?;
        w.usize(self.l())?;
        w.f64s(&self.eigvals)?;
        w.f64s(self.eigvecs.transpose().as_slice())?;
        self.train.write_body(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BinReader::new(binio::open(path)?, Self::MAGIC)?;
        Self::read_body(&mut r)
    }

    fn read_body<R: Read>(r: &mut BinReader<R>) -> Result<Self> {
        let d = r.usize()?;
        let l = r.usize()?;
        let eigvals = r.f64s(l)?;
        let vecs = r.f64s(
            d.checked_mul(l)
                .ok_or_else(|| Error::Format("size overflow".into()))?,
        )?;
        let train = FeatureMatrix::read_body(r)?;
        if train.n_rows() != d {
            return Err(Error::Format(format!(
                "{d} eigenvector rows but {} training rows",
                train.n_rows()
            )));
        }
        Ok(KpcaModel {
            train,
            eigvecs: DMatrix::from_row_slice(d, l, &vecs),
            eigvals,
        })
    }
}

/// Project every row of `x`, keeping ids and order.
pub fn transform_matrix(
    x: &FeatureMatrix,
    f: impl Fn(&FeatureVector) -> Result<FeatureVector> + Sync + Send,
) -> Result<FeatureMatrix> {
    let rows: Vec<FeatureVector> = x.rows().par_iter().map(f).collect::<Result<_>>()?;
    let dim = rows.first().map_or(0, FeatureVector::dim);
    FeatureMatrix::new(dim, rows)
}
