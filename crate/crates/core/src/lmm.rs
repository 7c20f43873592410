//! Grouped mixed-model data, covariance construction and Gaussian
//! log-likelihood evaluation.
//!
//! The model for group `i` is `y_i = X_i β + Z_i b_i + ε_i` with
//! `b_i ~ N(0, Ψ_θ)` and `ε_i ~ N(0, σ² I)`, so that
//! `Var(y_i) = σ² V_i` with `V_i = σ⁻² Z_i Ψ_θ Z_iᵀ + I`.
//! All `n×n` objects are kept block-per-group.

use crate::error::{Error, Result};
use crate::linalg::BlockDiag;
use crate::scalar::Scalar;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use std::collections::BTreeSet;
use std::path::Path;

/// Threshold below which a variance component is treated as exactly zero.
pub const THETA_FLOOR: f64 = 1e-12;

/// One group (cluster) of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Group<T: Scalar> {
    pub y: DVector<T>,
    pub x: DMatrix<T>,
    pub z: DMatrix<T>,
}

impl<T: Scalar> Group<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Grouped data `(y_i, X_i, Z_i)` for `i = 1..I`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset<T: Scalar> {
    groups: Vec<Group<T>>,
    n: usize,
    p: usize,
    q: usize,
}

impl<T: Scalar> GroupedDataset<T> {
    pub fn new(groups: Vec<Group<T>>) -> Result<Self> {
        let first = groups
            .first()
            .ok_or_else(|| Error::Dimension("dataset needs at least one group".into()))?;
        let p = first.x.ncols();
        let q = first.z.ncols();
        let mut n = 0;
        for (g, grp) in groups.iter().enumerate() {
            let ni = grp.y.len();
            if ni == 0 {
                return Err(Error::Dimension(format!("group {g} is empty")));
            }
            if grp.x.nrows() != ni || grp.z.nrows() != ni {
                return Err(Error::Dimension(format!(
                    "group {g}: y has {ni} rows but X has {} and Z has {}",
                    grp.x.nrows(),
                    grp.z.nrows()
                )));
            }
            if grp.x.ncols() != p || grp.z.ncols() != q {
                return Err(Error::Dimension(format!(
                    "group {g}: expected p={p}, q={q}, got p={}, q={}",
                    grp.x.ncols(),
                    grp.z.ncols()
                )));
            }
            n += ni;
        }
        Ok(Self { groups, n, p, q })
    }

    pub fn groups(&self) -> &[Group<T>] {
        &self.groups
    }

    pub fn groups_mut(&mut self) -> &mut [Group<T>] {
        &mut self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn group_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Group::len).collect()
    }

    pub fn stacked_y(&self) -> DVector<T> {
        let mut out = DVector::zeros(self.n);
        let mut at = 0;
        for g in &self.groups {
            out.rows_mut(at, g.len()).copy_from(&g.y);
            at += g.len();
        }
        out
    }

    pub fn stacked_x(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.p);
        let mut at = 0;
        for g in &self.groups {
            out.rows_mut(at, g.len()).copy_from(&g.x);
            at += g.len();
        }
        out
    }

    /// Block-diagonal `Z = Diag{Z_1, …, Z_I}` as a dense `n × qI` matrix.
    pub fn stacked_z(&self) -> DMatrix<T> {
        let mut out = DMatrix::zeros(self.n, self.q * self.groups.len());
        let mut at = 0;
        for (i, g) in self.groups.iter().enumerate() {
            out.view_mut((at, i * self.q), (g.len(), self.q)).copy_from(&g.z);
            at += g.len();
        }
        out
    }

    /// Residuals `y_i − X_i β` per group.
    pub fn residuals(&self, beta: &DVector<T>) -> Result<Vec<DVector<T>>> {
        self.check_beta(beta)?;
        Ok(self.groups.iter().map(|g| &g.y - &g.x * beta).collect())
    }

    pub(crate) fn check_beta(&self, beta: &DVector<T>) -> Result<()> {
        if beta.len() != self.p {
            return Err(Error::Dimension(format!(
                "beta has length {}, expected p = {}",
                beta.len(),
                self.p
            )));
        }
        Ok(())
    }

    /// Dataset restricted to the fixed-effect columns in `cols` (same order).
    pub fn select_columns(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.p) {
            return Err(Error::Dimension(format!("column {bad} out of range for p = {}", self.p)));
        }
        let groups = self
            .groups
            .iter()
            .map(|g| Group {
                y: g.y.clone(),
                x: g.x.select_columns(cols),
                z: g.z.clone(),
            })
            .collect();
        let mut out = Self::new(groups)?;
        out.p = cols.len();
        Ok(out)
    }

    /// Same groups with the responses replaced by `y_i − X_i β`.
    pub fn with_responses(&self, ys: Vec<DVector<T>>) -> Result<Self> {
        if ys.len() != self.groups.len() {
            return Err(Error::Dimension("one response vector per group required".into()));
        }
        let groups = self
            .groups
            .iter()
            .zip(ys)
            .map(|(g, y)| Group {
                y,
                x: g.x.clone(),
                z: g.z.clone(),
            })
            .collect();
        Self::new(groups)
    }

    /// Reads the CSV layout `group_id, y, x_1..x_p, z_1..z_q` (header
    /// required, groups in order of first appearance, rows of a group need
    /// not be contiguous).
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 3 || cols[0] != "group_id" || cols[1] != "y" {
            return Err(Error::Data {
                row: 1,
                message: "header must start with `group_id,y` followed by x_ and z_ columns".into(),
            });
        }
        let x_cols: Vec<usize> = (2..cols.len()).filter(|&c| cols[c].starts_with("x_")).collect();
        let z_cols: Vec<usize> = (2..cols.len()).filter(|&c| cols[c].starts_with("z_")).collect();
        if x_cols.len() + z_cols.len() != cols.len() - 2 || x_cols.is_empty() {
            return Err(Error::Data {
                row: 1,
                message: "every column after `y` must be named x_<k> or z_<k>, with at least one x_".into(),
            });
        }
        let mut order: Vec<String> = Vec::new();
        let mut rows: Vec<Vec<(T, Vec<T>, Vec<T>)>> = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            // header is line 1
            let line = i + 2;
            let rec = rec.map_err(|e| Error::Data {
                row: line,
                message: e.to_string(),
            })?;
            if rec.len() != cols.len() {
                return Err(Error::Data {
                    row: line,
                    message: format!("expected {} fields, found {}", cols.len(), rec.len()),
                });
            }
            let parse = |c: usize| -> Result<T> {
                let v: f64 = rec[c].parse().map_err(|_| Error::Data {
                    row: line,
                    message: format!("column `{}`: cannot parse `{}`", cols[c], &rec[c]),
                })?;
                if !v.is_finite() {
                    return Err(Error::Data {
                        row: line,
                        message: format!("column `{}`: non-finite value", cols[c]),
                    });
                }
                Ok(T::lit(v))
            };
            let gid = rec[0].to_string();
            let slot = match order.iter().position(|g| *g == gid) {
                Some(s) => s,
                None => {
                    order.push(gid);
                    rows.push(Vec::new());
                    order.len() - 1
                }
            };
            let y = parse(1)?;
            let x = x_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
            let z = z_cols.iter().map(|&c| parse(c)).collect::<Result<Vec<_>>>()?;
            rows[slot].push((y, x, z));
        }
        if rows.is_empty() {
            return Err(Error::Data {
                row: 2,
                message: "no data rows".into(),
            });
        }
        let (p, q) = (x_cols.len(), z_cols.len());
        let groups = rows
            .into_iter()
            .map(|rs| {
                let ni = rs.len();
                Group {
                    y: DVector::from_iterator(ni, rs.iter().map(|r| r.0)),
                    x: DMatrix::from_fn(ni, p, |i, j| rs[i].1[j]),
                    z: DMatrix::from_fn(ni, q, |i, j| rs[i].2[j]),
                }
            })
            .collect();
        Self::new(groups)
    }

    /// Writes the dataset in the same CSV layout `from_csv_reader` accepts.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["group_id".to_string(), "y".to_string()];
        header.extend((1..=self.p).map(|k| format!("x_{k}")));
        header.extend((1..=self.q).map(|k| format!("z_{k}")));
        w.write_record(&header)?;
        for (gi, g) in self.groups.iter().enumerate() {
            for r in 0..g.len() {
                let mut rec = vec![(gi + 1).to_string(), format!("{}", g.y[r])];
                rec.extend((0..self.p).map(|j| format!("{}", g.x[(r, j)])));
                rec.extend((0..self.q).map(|j| format!("{}", g.z[(r, j)])));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Random-effect covariance structure `Ψ_θ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum CovStructure {
    /// `Ψ_θ = Diag{θ_1, …, θ_q}`, `q* = q`.
    Diagonal,
    /// `Ψ_θ = θ_1 I_q`, `q* = 1`.
    Isotropic,
}

impl CovStructure {
    /// Number of variance parameters `q*` for `q` random effects.
    pub fn num_params(self, q: usize) -> usize {
        match self {
            CovStructure::Diagonal => q,
            CovStructure::Isotropic => usize::from(q > 0),
        }
    }

    /// Diagonal of `Ψ_θ` (both structures are diagonal).
    pub fn psi_diag<T: Scalar>(self, theta: &DVector<T>, q: usize) -> Result<DVector<T>> {
        if theta.len() != self.num_params(q) {
            return Err(Error::Dimension(format!(
                "theta has length {}, structure needs {}",
                theta.len(),
                self.num_params(q)
            )));
        }
        let floor = T::lit(THETA_FLOOR);
        let clip = |t: T| if t.abs() < floor { T::zero() } else { t };
        Ok(match self {
            CovStructure::Diagonal => theta.map(clip),
            CovStructure::Isotropic => DVector::from_element(q, clip(theta[0])),
        })
    }

    pub fn psi<T: Scalar>(self, theta: &DVector<T>, q: usize) -> Result<DMatrix<T>> {
        Ok(DMatrix::from_diagonal(&self.psi_diag(theta, q)?))
    }
}

/// Fixed effects and variance parameters `(β, θ, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Scalar> {
    pub beta: DVector<T>,
    pub theta: DVector<T>,
    pub sigma2: T,
    pub cov: CovStructure,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new(beta: DVector<T>, theta: DVector<T>, sigma2: T, cov: CovStructure) -> Result<Self> {
        let p = Self { beta, theta, sigma2, cov };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.sigma2.is_finite_value() || !(self.sigma2 > T::zero()) {
            return Err(Error::InvalidParameter(format!("sigma2 = {} must be positive", self.sigma2)));
        }
        if let Some(t) = self.theta.iter().find(|t| !t.is_finite_value()) {
            return Err(Error::InvalidParameter(format!("non-finite theta component {t}")));
        }
        if let Some(t) = self.theta.iter().find(|&&t| t < -T::lit(THETA_FLOOR)) {
            return Err(Error::InvalidParameter(format!("negative theta component {t}")));
        }
        Ok(())
    }
}

/// Sorted set of (0-based) fixed-effect indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, serde::Serialize, serde::Deserialize)]
pub struct ActiveSet {
    indices: Vec<usize>,
}

impl ActiveSet {
    pub fn new(indices: impl IntoIterator<Item = usize>, p: usize) -> Result<Self> {
        let set: BTreeSet<usize> = indices.into_iter().collect();
        if let Some(&bad) = set.iter().find(|&&j| j >= p) {
            return Err(Error::Dimension(format!("index {bad} outside 0..{p}")));
        }
        Ok(Self {
            indices: set.into_iter().collect(),
        })
    }

    /// `{j : |β_j| > zero_tol}`.
    pub fn from_beta<T: Scalar>(beta: &DVector<T>, zero_tol: T) -> Self {
        Self {
            indices: beta
                .iter()
                .enumerate()
                .filter(|(_, b)| b.abs() > zero_tol)
                .map(|(j, _)| j)
                .collect(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.binary_search(&j).is_ok()
    }

    pub fn intersection_size(&self, other: &ActiveSet) -> usize {
        self.indices.iter().filter(|&&j| other.contains(j)).count()
    }

    /// Signal strength `d_n = ½ min_{j∈S} |β_j|`.
    pub fn signal_strength<T: Scalar>(&self, beta: &DVector<T>) -> Option<T> {
        self.indices
            .iter()
            .map(|&j| beta[j].abs())
            .reduce(|a, b| a.min(b))
            .map(|m| m * T::lit(0.5))
    }
}

/// `σ² V_i = Z_i Ψ_θ Z_iᵀ + σ² I` for one group.
pub(crate) fn group_covariance<T: Scalar>(z: &DMatrix<T>, psi_diag: &DVector<T>, sigma2: T) -> DMatrix<T> {
    let n = z.nrows();
    let mut zs = z.clone();
    for (k, &d) in psi_diag.iter().enumerate() {
        zs.column_mut(k).scale_mut(d);
    }
    let mut out = zs * z.transpose();
    for i in 0..n {
        out[(i, i)] += sigma2;
    }
    out
}

pub(crate) fn cholesky_group<T: Scalar>(m: DMatrix<T>, group: usize) -> Result<Cholesky<T, Dyn>> {
    if m.iter().any(|v| !v.is_finite_value()) {
        return Err(Error::SingularGroup { group });
    }
    Cholesky::new(m).ok_or(Error::SingularGroup { group })
}

/// `V = Diag{V_1, …, V_I}` with `V_i = σ⁻² Z_i Ψ_θ Z_iᵀ + I`.
pub fn build_v<T: Scalar>(ds: &GroupedDataset<T>, params: &ModelParams<T>) -> Result<BlockDiag<T>> {
    params.validate()?;
    let psi = params.cov.psi_diag(&params.theta, ds.q())?;
    let scaled = psi / params.sigma2;
    let blocks = ds
        .groups()
        .iter()
        .map(|g| group_covariance(&g.z, &scaled, T::one()))
        .collect();
    BlockDiag::new(blocks)
}

/// Gaussian log-likelihood
/// `l_n = −½[n log 2π + log|σ²V| + σ⁻²(y − Xβ)ᵀV⁻¹(y − Xβ)]`,
/// accumulated group by group from Cholesky factors of `σ²V_i`.
pub fn log_likelihood<T: Scalar>(ds: &GroupedDataset<T>, params: &ModelParams<T>) -> Result<T> {
    params.validate()?;
    ds.check_beta(&params.beta)?;
    let psi = params.cov.psi_diag(&params.theta, ds.q())?;
    let two_pi = T::two_pi();
    let mut acc = T::from_count(ds.n()) * two_pi.ln();
    for (gi, g) in ds.groups().iter().enumerate() {
        let sigma = group_covariance(&g.z, &psi, params.sigma2);
        let chol = cholesky_group(sigma, gi)?;
        let r = &g.y - &g.x * &params.beta;
        let logdet = chol
            .l_dirty()
            .diagonal()
            .iter()
            .fold(T::zero(), |a, &d| a + d.ln())
            * T::lit(2.0);
        let sol = chol.solve(&r);
        acc += logdet + r.dot(&sol);
    }
    let ll = -acc * T::lit(0.5);
    if !ll.is_finite_value() {
        return Err(Error::InvalidParameter("log-likelihood is not finite".into()));
    }
    Ok(ll)
}

/// `(y − Xβ)ᵀ Ṽ⁻¹ (y − Xβ)` for a block-diagonal `Ṽ⁻¹`.
pub fn profile_quadratic<T: Scalar>(
    ds: &GroupedDataset<T>,
    beta: &DVector<T>,
    vtilde_inv: &BlockDiag<T>,
) -> Result<T> {
    ds.check_beta(beta)?;
    if vtilde_inv.num_blocks() != ds.num_groups() || vtilde_inv.dim() != ds.n() {
        return Err(Error::Dimension(
            "block structure of the weight matrix does not match the groups".into(),
        ));
    }
    let mut acc = T::zero();
    for (gi, g) in ds.groups().iter().enumerate() {
        let b = vtilde_inv.block(gi);
        if b.nrows() != g.len() {
            return Err(Error::Dimension(format!("block {gi} has the wrong size")));
        }
        let r = &g.y - &g.x * beta;
        acc += r.dot(&(b * &r));
    }
    Ok(acc)
}
