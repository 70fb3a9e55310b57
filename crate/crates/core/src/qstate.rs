//! Labeled multipartite states and operators.
//!
//! Every matrix carries an ordered list of [`SubsystemLabel`]s. The flat
//! index of a basis state is mixed-radix with the leftmost label most
//! significant, e.g. for labels `[X (dim 2), Y (dim 3)]` the basis state
//! `|x, y>` sits at `3 * x + y`. Every module in the crate relies on this
//! convention.

use std::collections::HashSet;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};

/// Refuse dense matrices larger than this unless a caller raises the cap.
pub const DEFAULT_DENSE_CAP: usize = 4096;
/// Tolerance for validity checks (Hermiticity, PSD, trace).
pub const VALIDITY_TOL: f64 = 1e-10;
/// Tolerance for assertions of exact algebraic identities.
pub const EXACT_TOL: f64 = 1e-12;
/// Imaginary parts of expectation values above this are an error.
pub const IMAG_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsystemKind {
    Quantum,
    ClassicalRegister,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SubsystemLabel {
    pub name: String,
    pub dim: usize,
    pub kind: SubsystemKind,
}

impl SubsystemLabel {
    pub fn quantum(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, kind: SubsystemKind::Quantum }
    }

    pub fn register(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, kind: SubsystemKind::ClassicalRegister }
    }

    pub fn is_register(&self) -> bool {
        self.kind == SubsystemKind::ClassicalRegister
    }

    pub fn renamed(&self, name: impl Into<String>) -> Self {
        Self { name: name.into(), ..self.clone() }
    }
}

/// Mixed-radix flattening of multi-indices, leftmost digit most significant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MixedRadix {
    dims: Vec<usize>,
    strides: Vec<usize>,
}

impl MixedRadix {
    pub fn new(dims: &[usize]) -> Self {
        let mut strides = vec![1; dims.len()];
        for k in (0..dims.len().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * dims[k + 1];
        }
        Self { dims: dims.to_vec(), strides }
    }

    pub fn size(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn flatten(&self, digits: &[usize]) -> usize {
        debug_assert_eq!(digits.len(), self.dims.len());
        digits.iter().zip(&self.strides).map(|(d, s)| d * s).sum()
    }

    pub fn unflatten(&self, mut flat: usize) -> Vec<usize> {
        let mut digits = vec![0; self.dims.len()];
        for (k, &s) in self.strides.iter().enumerate() {
            digits[k] = flat / s;
            flat %= s;
        }
        digits
    }

    /// Digit `k` of `flat`, without materializing the full multi-index.
    pub fn digit(&self, flat: usize, k: usize) -> usize {
        (flat / self.strides[k]) % self.dims[k]
    }
}

pub(crate) fn total_dim(labels: &[SubsystemLabel]) -> usize {
    labels.iter().map(|l| l.dim).product()
}

pub(crate) fn check_labels(labels: &[SubsystemLabel]) -> Result<()> {
    let mut seen = HashSet::new();
    for l in labels {
        if l.dim == 0 {
            return Err(Error::DimensionError(format!("label `{}` has dimension 0", l.name)));
        }
        if !seen.insert(l.name.as_str()) {
            return Err(Error::LabelCollision(l.name.clone()));
        }
    }
    Ok(())
}

fn position(labels: &[SubsystemLabel], name: &str) -> Result<usize> {
    labels
        .iter()
        .position(|l| l.name == name)
        .ok_or_else(|| Error::UnknownLabel(name.to_string()))
}

/// Reorder the tensor factors of `data` so that the labels appear in `order`.
fn permute_raw(
    labels: &[SubsystemLabel],
    data: &CMat,
    order: &[&str],
) -> Result<(Vec<SubsystemLabel>, CMat)> {
    if order.len() != labels.len() {
        return Err(Error::InvalidPermutation(format!(
            "expected {} labels, got {}",
            labels.len(),
            order.len()
        )));
    }
    let mut source = Vec::with_capacity(order.len());
    let mut used = vec![false; labels.len()];
    for name in order {
        let p = labels
            .iter()
            .position(|l| l.name == *name)
            .ok_or_else(|| Error::InvalidPermutation(format!("`{name}` is not a label")))?;
        if used[p] {
            return Err(Error::InvalidPermutation(format!("`{name}` repeated")));
        }
        used[p] = true;
        source.push(p);
    }
    if source.iter().enumerate().all(|(i, &p)| i == p) {
        return Ok((labels.to_vec(), data.clone()));
    }
    let new_labels: Vec<SubsystemLabel> = source.iter().map(|&p| labels[p].clone()).collect();
    let old = MixedRadix::new(&labels.iter().map(|l| l.dim).collect::<Vec<_>>());
    let new = MixedRadix::new(&new_labels.iter().map(|l| l.dim).collect::<Vec<_>>());
    let map: Vec<usize> = (0..new.size())
        .map(|flat| {
            new.unflatten(flat)
                .iter()
                .zip(&source)
                .map(|(&digit, &p)| digit * old.strides()[p])
                .sum()
        })
        .collect();
    let d = map.len();
    let out = CMat::from_fn(d, d, |i, j| data[(map[i], map[j])]);
    Ok((new_labels, out))
}

/// Trace out everything except `keep`, returning the factors in the order given by `keep`.
fn reduce_raw(
    labels: &[SubsystemLabel],
    data: &CMat,
    keep: &[&str],
) -> Result<(Vec<SubsystemLabel>, CMat)> {
    let mut seen = HashSet::new();
    for k in keep {
        position(labels, k)?;
        if !seen.insert(*k) {
            return Err(Error::LabelCollision(k.to_string()));
        }
    }
    let mut order: Vec<&str> = keep.to_vec();
    order.extend(labels.iter().map(|l| l.name.as_str()).filter(|n| !seen.contains(n)));
    let (perm_labels, perm) = permute_raw(labels, data, &order)?;
    let kept: Vec<SubsystemLabel> = perm_labels[..keep.len()].to_vec();
    let dk = total_dim(&kept);
    let dt = total_dim(&perm_labels[keep.len()..]);
    if dt == 1 {
        return Ok((kept, perm));
    }
    let out = CMat::from_fn(dk, dk, |i, j| {
        (0..dt).map(|t| perm[(i * dt + t, j * dt + t)]).sum::<Complex64>()
    });
    Ok((kept, out))
}

fn check_shape(labels: &[SubsystemLabel], data: &CMat) -> Result<()> {
    check_labels(labels)?;
    let d = total_dim(labels);
    if data.nrows() != d || data.ncols() != d {
        return Err(Error::ShapeError(format!(
            "labels imply a {d}x{d} matrix, data is {}x{}",
            data.nrows(),
            data.ncols()
        )));
    }
    Ok(())
}

/// Largest off-diagonal entry (with respect to register `k`) of `data`.
fn register_residue(labels: &[SubsystemLabel], data: &CMat, k: usize) -> f64 {
    let radix = MixedRadix::new(&labels.iter().map(|l| l.dim).collect::<Vec<_>>());
    let d = radix.size();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let ri = radix.digit(i, k);
        for j in 0..d {
            if radix.digit(j, k) != ri {
                worst = worst.max(data[(i, j)].norm());
            }
        }
    }
    worst
}

/// Outcome of [`DensityMatrix::validate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub hermiticity_residue: f64,
    pub min_eigenvalue: f64,
    pub trace_residue: f64,
    /// Largest register-off-diagonal magnitude, per classical register.
    pub register_residues: Vec<(String, f64)>,
    pub passed: bool,
}

impl ValidationReport {
    pub fn of(labels: &[SubsystemLabel], data: &CMat) -> Self {
        let hermiticity_residue = linalg::hermiticity_residue(data);
        let min_eigenvalue = linalg::min_eigenvalue(data);
        let trace_residue = (linalg::trace(data) - linalg::ONE).norm();
        let register_residues: Vec<(String, f64)> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_register())
            .map(|(k, l)| (l.name.clone(), register_residue(labels, data, k)))
            .collect();
        let passed = hermiticity_residue <= VALIDITY_TOL
            && min_eigenvalue >= -VALIDITY_TOL
            && trace_residue <= VALIDITY_TOL
            && register_residues.iter().all(|(_, r)| *r <= VALIDITY_TOL);
        Self { hermiticity_residue, min_eigenvalue, trace_residue, register_residues, passed }
    }

    pub fn describe(&self) -> String {
        format!(
            "hermiticity residue {:.3e}, min eigenvalue {:.3e}, trace residue {:.3e}, registers {:?}",
            self.hermiticity_residue, self.min_eigenvalue, self.trace_residue, self.register_residues
        )
    }
}

/// A Hermitian, positive semidefinite, unit-trace matrix over labeled subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    labels: Vec<SubsystemLabel>,
    data: CMat,
}

impl DensityMatrix {
    /// Checked constructor: shape, label uniqueness and [`validate`](Self::validate).
    pub fn new(labels: Vec<SubsystemLabel>, data: CMat) -> Result<Self> {
        check_shape(&labels, &data)?;
        let report = ValidationReport::of(&labels, &data);
        if !report.passed {
            return Err(Error::InvalidState(report.describe()));
        }
        Ok(Self { labels, data })
    }

    /// Skips the spectral validity check; shape and labels are still checked.
    pub fn new_unvalidated(labels: Vec<SubsystemLabel>, data: CMat) -> Result<Self> {
        check_shape(&labels, &data)?;
        Ok(Self { labels, data })
    }

    pub(crate) fn from_parts(labels: Vec<SubsystemLabel>, data: CMat) -> Self {
        debug_assert!(check_shape(&labels, &data).is_ok());
        Self { labels, data }
    }

    pub fn pure(labels: Vec<SubsystemLabel>, psi: &CVec) -> Result<Self> {
        let norm = psi.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero vector".into()));
        }
        let v = psi.unscale(norm);
        Self::new_unvalidated(labels, linalg::outer(&v))
    }

    /// Computational basis state `|k><k|` (flat index `k`).
    pub fn basis(labels: Vec<SubsystemLabel>, k: usize) -> Result<Self> {
        let d = total_dim(&labels);
        if k >= d {
            return Err(Error::DimensionError(format!("basis index {k} out of range {d}")));
        }
        Self::new_unvalidated(labels, linalg::basis_projector(d, k))
    }

    pub fn maximally_mixed(labels: Vec<SubsystemLabel>) -> Result<Self> {
        let d = total_dim(&labels);
        Self::new_unvalidated(labels, linalg::identity(d).unscale(d as f64))
    }

    pub fn labels(&self) -> &[SubsystemLabel] {
        &self.labels
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn label(&self, name: &str) -> Option<&SubsystemLabel> {
        self.labels.iter().find(|l| l.name == name)
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn into_data(self) -> CMat {
        self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn trace(&self) -> f64 {
        linalg::trace(&self.data).re
    }

    pub fn purity(&self) -> f64 {
        (&self.data * &self.data).trace().re
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        linalg::eigvalsh(&self.data)
    }

    pub fn validate(&self) -> ValidationReport {
        ValidationReport::of(&self.labels, &self.data)
    }

    /// `self ⊗ other` under the default dense cap.
    pub fn tensor(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        self.tensor_with_cap(other, DEFAULT_DENSE_CAP)
    }

    pub fn tensor_with_cap(&self, other: &DensityMatrix, cap: usize) -> Result<DensityMatrix> {
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        check_labels(&labels)?;
        let dim = self.dim() * other.dim();
        if dim > cap {
            return Err(Error::TooLargeToMaterialize { dim, cap });
        }
        Ok(Self { labels, data: linalg::kron(&self.data, &other.data) })
    }

    /// Reduced state on `keep`; the kept labels stay in their original order.
    pub fn partial_trace(&self, keep: &[&str]) -> Result<DensityMatrix> {
        for k in keep {
            position(&self.labels, k)?;
        }
        let ordered: Vec<&str> = self
            .labels
            .iter()
            .map(|l| l.name.as_str())
            .filter(|n| keep.contains(n))
            .collect();
        let (labels, data) = reduce_raw(&self.labels, &self.data, &ordered)?;
        Ok(Self { labels, data })
    }

    /// Reduced state on `keep`, with factors in exactly the given order.
    pub fn reduce_to(&self, keep: &[&str]) -> Result<DensityMatrix> {
        let (labels, data) = reduce_raw(&self.labels, &self.data, keep)?;
        Ok(Self { labels, data })
    }

    /// Reorder tensor factors; `order` lists every label name exactly once.
    pub fn swap_subsystems(&self, order: &[&str]) -> Result<DensityMatrix> {
        let (labels, data) = permute_raw(&self.labels, &self.data, order)?;
        Ok(Self { labels, data })
    }

    /// Rename labels; pairs are `(old, new)`.
    pub fn relabel(&self, renames: &[(&str, &str)]) -> Result<DensityMatrix> {
        let mut labels = self.labels.clone();
        for (old, new) in renames {
            let p = position(&self.labels, old)?;
            labels[p].name = new.to_string();
        }
        check_labels(&labels)?;
        Ok(Self { labels, data: self.data.clone() })
    }

    /// `tr[self · o]` with `o` padded by identities on labels it does not name.
    pub fn expectation(&self, o: &HermitianOperator) -> Result<f64> {
        for l in &o.labels {
            let p = position(&self.labels, &l.name)?;
            if self.labels[p].dim != l.dim {
                return Err(Error::DimensionError(format!(
                    "label `{}` has dim {} in the state but {} in the operator",
                    l.name, self.labels[p].dim, l.dim
                )));
            }
        }
        let names: Vec<&str> = o.labels.iter().map(|l| l.name.as_str()).collect();
        let (_, reduced) = reduce_raw(&self.labels, &self.data, &names)?;
        let value = (&reduced * &o.data).trace();
        if value.im.abs() > IMAG_TOL {
            return Err(Error::NumericalInconsistency(format!(
                "expectation has imaginary part {:.3e}",
                value.im
            )));
        }
        Ok(value.re)
    }

    /// Mixture `sum_k w_k rho_k`; all states must share the same labels.
    pub fn mixture(parts: &[(f64, &DensityMatrix)]) -> Result<DensityMatrix> {
        let (_, first) = parts
            .first()
            .ok_or_else(|| Error::InvalidState("empty mixture".into()))?;
        let mut data = linalg::zeros(first.dim(), first.dim());
        for (w, s) in parts {
            if s.labels != first.labels {
                return Err(Error::ShapeError("mixture components have different labels".into()));
            }
            data += s.data.scale(*w);
        }
        Ok(Self { labels: first.labels.clone(), data })
    }

    pub fn max_abs_diff(&self, other: &DensityMatrix) -> Result<f64> {
        if self.labels != other.labels {
            return Err(Error::ShapeError("comparing states with different labels".into()));
        }
        Ok(linalg::max_abs_diff(&self.data, &other.data))
    }
}

/// A Hermitian matrix over labeled subsystems (measurement or Bell operator).
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    labels: Vec<SubsystemLabel>,
    data: CMat,
}

impl HermitianOperator {
    pub fn new(labels: Vec<SubsystemLabel>, data: CMat) -> Result<Self> {
        check_shape(&labels, &data)?;
        let residue = linalg::hermiticity_residue(&data);
        if residue > VALIDITY_TOL {
            return Err(Error::NumericalInconsistency(format!(
                "operator is not Hermitian (residue {residue:.3e})"
            )));
        }
        Ok(Self { labels, data })
    }

    pub fn identity(labels: Vec<SubsystemLabel>) -> Self {
        let d = total_dim(&labels);
        Self { labels, data: linalg::identity(d) }
    }

    pub fn labels(&self) -> &[SubsystemLabel] {
        &self.labels
    }

    pub fn data(&self) -> &CMat {
        &self.data
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn tensor(&self, other: &HermitianOperator) -> Result<HermitianOperator> {
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        check_labels(&labels)?;
        Ok(Self { labels, data: linalg::kron(&self.data, &other.data) })
    }

    pub fn swap_subsystems(&self, order: &[&str]) -> Result<HermitianOperator> {
        let (labels, data) = permute_raw(&self.labels, &self.data, order)?;
        Ok(Self { labels, data })
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixJson {
    labels: Vec<SubsystemLabel>,
    data: Vec<[f64; 2]>,
}

fn to_json_parts(labels: &[SubsystemLabel], data: &CMat) -> MatrixJson {
    let d = data.nrows();
    let mut flat = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let z = data[(i, j)];
            flat.push([z.re, z.im]);
        }
    }
    MatrixJson { labels: labels.to_vec(), data: flat }
}

fn from_json_parts(raw: MatrixJson) -> Result<(Vec<SubsystemLabel>, CMat)> {
    check_labels(&raw.labels)?;
    let d = total_dim(&raw.labels);
    if raw.data.len() != d * d {
        return Err(Error::ShapeError(format!(
            "expected {} entries for dimension {d}, found {}",
            d * d,
            raw.data.len()
        )));
    }
    let data = CMat::from_fn(d, d, |i, j| {
        let [re, im] = raw.data[i * d + j];
        linalg::c(re, im)
    });
    Ok((raw.labels, data))
}

impl Serialize for DensityMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_json_parts(&self.labels, &self.data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        let (labels, data) = from_json_parts(raw).map_err(serde::de::Error::custom)?;
        DensityMatrix::new(labels, data).map_err(serde::de::Error::custom)
    }
}

impl Serialize for HermitianOperator {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_json_parts(&self.labels, &self.data).serialize(s)
    }
}

impl<'de> Deserialize<'de> for HermitianOperator {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = MatrixJson::deserialize(d)?;
        let (labels, data) = from_json_parts(raw).map_err(serde::de::Error::custom)?;
        HermitianOperator::new(labels, data).map_err(serde::de::Error::custom)
    }
}
