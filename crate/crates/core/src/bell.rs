//! Bell functionals, correlation tables and strategies.
//!
//! A functional `S = sum B[x][y][a][b] p(ab|xy)` is scored on correlation
//! tables produced by local measurements on a state. The local bound is the
//! exact maximum over deterministic strategies; since every local hidden
//! variable model is a mixture of deterministic strategies, that maximum is
//! the bound for all local models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::qstate::{DensityMatrix, SubsystemLabel, IMAG_TOL, VALIDITY_TOL};
use crate::rng::SeedStream;

/// Deterministic strategies beyond this count are not enumerated.
pub const ENUMERATION_LIMIT: u128 = 10_000_000;
/// Tolerance on normalization and no-signaling of correlation tables.
pub const CORRELATION_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct BellFunctional {
    n_x: usize,
    n_y: usize,
    n_a: usize,
    n_b: usize,
    coeffs: Vec<f64>,
}

impl BellFunctional {
    pub fn new(n_x: usize, n_y: usize, n_a: usize, n_b: usize, coeffs: Vec<f64>) -> Result<Self> {
        if [n_x, n_y, n_a, n_b].contains(&0) {
            return Err(Error::ShapeError("functional dimensions must be at least 1".into()));
        }
        if coeffs.len() != n_x * n_y * n_a * n_b {
            return Err(Error::ShapeError(format!(
                "expected {} coefficients, got {}",
                n_x * n_y * n_a * n_b,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::ShapeError("coefficients must be finite".into()));
        }
        Ok(Self { n_x, n_y, n_a, n_b, coeffs })
    }

    pub fn from_fn(
        n_x: usize,
        n_y: usize,
        n_a: usize,
        n_b: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(n_x * n_y * n_a * n_b);
        for x in 0..n_x {
            for y in 0..n_y {
                for a in 0..n_a {
                    for b in 0..n_b {
                        coeffs.push(f(x, y, a, b));
                    }
                }
            }
        }
        Self::new(n_x, n_y, n_a, n_b, coeffs)
    }

    /// CHSH in the correlator convention: `E00 + E01 + E10 - E11`, outcome 0 ↦ +1.
    pub fn chsh() -> Self {
        Self::from_fn(2, 2, 2, 2, |x, y, a, b| {
            let parity = if (a + b) % 2 == 0 { 1.0 } else { -1.0 };
            let sign = if x == 1 && y == 1 { -1.0 } else { 1.0 };
            parity * sign
        })
        .expect("chsh shape is valid")
    }

    pub fn named(name: &str) -> Result<Self> {
        match name {
            "chsh" => Ok(Self::chsh()),
            other => Err(Error::Parse(format!("unknown functional `{other}`"))),
        }
    }

    /// `(nX, nY, nA, nB)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_x, self.n_y, self.n_a, self.n_b)
    }

    pub fn coeff(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.coeffs[((x * self.n_y + y) * self.n_a + a) * self.n_b + b]
    }

    pub fn local_bound(&self) -> Result<(f64, DeterministicStrategy)> {
        local_bound(self)
    }
}

#[derive(Serialize, Deserialize)]
struct FunctionalJson {
    #[serde(rename = "nX")]
    n_x: usize,
    #[serde(rename = "nY")]
    n_y: usize,
    #[serde(rename = "nA")]
    n_a: usize,
    #[serde(rename = "nB")]
    n_b: usize,
    coeffs: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Serialize for BellFunctional {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let coeffs = (0..self.n_x)
            .map(|x| {
                (0..self.n_y)
                    .map(|y| {
                        (0..self.n_a)
                            .map(|a| (0..self.n_b).map(|b| self.coeff(x, y, a, b)).collect())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        FunctionalJson { n_x: self.n_x, n_y: self.n_y, n_a: self.n_a, n_b: self.n_b, coeffs }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BellFunctional {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = FunctionalJson::deserialize(d)?;
        let shape_ok = raw.coeffs.len() == raw.n_x
            && raw.coeffs.iter().all(|cx| {
                cx.len() == raw.n_y
                    && cx.iter().all(|cy| {
                        cy.len() == raw.n_a && cy.iter().all(|ca| ca.len() == raw.n_b)
                    })
            });
        if !shape_ok {
            return Err(serde::de::Error::custom("coeffs do not match nX, nY, nA, nB"));
        }
        let flat = raw.coeffs.into_iter().flatten().flatten().flatten().collect();
        BellFunctional::new(raw.n_x, raw.n_y, raw.n_a, raw.n_b, flat)
            .map_err(serde::de::Error::custom)
    }
}

/// Conditional probabilities `p(ab|xy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    n_x: usize,
    n_y: usize,
    n_a: usize,
    n_b: usize,
    p: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub min_entry: f64,
    pub max_entry: f64,
    pub normalization_residue: f64,
    pub signaling_residue: f64,
    pub passed: bool,
}

impl CorrelationTable {
    pub fn from_fn(
        (n_x, n_y, n_a, n_b): (usize, usize, usize, usize),
        f: impl Fn(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut p = Vec::with_capacity(n_x * n_y * n_a * n_b);
        for x in 0..n_x {
            for y in 0..n_y {
                for a in 0..n_a {
                    for b in 0..n_b {
                        p.push(f(x, y, a, b));
                    }
                }
            }
        }
        Self { n_x, n_y, n_a, n_b, p }
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n_x, self.n_y, self.n_a, self.n_b)
    }

    pub fn get(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.p[((x * self.n_y + y) * self.n_a + a) * self.n_b + b]
    }

    pub fn alice_marginal(&self, x: usize, y: usize, a: usize) -> f64 {
        (0..self.n_b).map(|b| self.get(x, y, a, b)).sum()
    }

    pub fn bob_marginal(&self, x: usize, y: usize, b: usize) -> f64 {
        (0..self.n_a).map(|a| self.get(x, y, a, b)).sum()
    }

    pub fn validate(&self) -> CorrelationReport {
        let min_entry = self.p.iter().copied().fold(f64::INFINITY, f64::min);
        let max_entry = self.p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut normalization_residue: f64 = 0.0;
        let mut signaling_residue: f64 = 0.0;
        for x in 0..self.n_x {
            for y in 0..self.n_y {
                let total: f64 = (0..self.n_a).map(|a| self.alice_marginal(x, y, a)).sum();
                normalization_residue = normalization_residue.max((total - 1.0).abs());
                for a in 0..self.n_a {
                    let d = self.alice_marginal(x, y, a) - self.alice_marginal(x, 0, a);
                    signaling_residue = signaling_residue.max(d.abs());
                }
                for b in 0..self.n_b {
                    let d = self.bob_marginal(x, y, b) - self.bob_marginal(0, y, b);
                    signaling_residue = signaling_residue.max(d.abs());
                }
            }
        }
        let passed = min_entry >= -VALIDITY_TOL
            && max_entry <= 1.0 + VALIDITY_TOL
            && normalization_residue <= CORRELATION_TOL
            && signaling_residue <= CORRELATION_TOL;
        CorrelationReport { min_entry, max_entry, normalization_residue, signaling_residue, passed }
    }
}

/// `S = sum B[x][y][a][b] p(ab|xy)`.
pub fn bell_score(f: &BellFunctional, p: &CorrelationTable) -> Result<f64> {
    if f.shape() != p.shape() {
        return Err(Error::ShapeError(format!(
            "functional shape {:?} vs table shape {:?}",
            f.shape(),
            p.shape()
        )));
    }
    Ok(f.coeffs.iter().zip(&p.p).map(|(b, q)| b * q).sum())
}

/// One local hidden variable value: Alice answers `alice[x]`, Bob `bob[y]`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DeterministicStrategy {
    pub alice: Vec<usize>,
    pub bob: Vec<usize>,
}

impl DeterministicStrategy {
    pub fn correlations(&self, n_a: usize, n_b: usize) -> CorrelationTable {
        CorrelationTable::from_fn((self.alice.len(), self.bob.len(), n_a, n_b), |x, y, a, b| {
            if self.alice[x] == a && self.bob[y] == b {
                1.0
            } else {
                0.0
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LhvModel {
    weights: Vec<f64>,
    strategies: Vec<DeterministicStrategy>,
}

impl LhvModel {
    pub fn new(weights: Vec<f64>, strategies: Vec<DeterministicStrategy>) -> Result<Self> {
        if weights.len() != strategies.len() || weights.is_empty() {
            return Err(Error::ShapeError("weights and strategies must pair up".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| *w < 0.0) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("LHV weights sum to {total}")));
        }
        Ok(Self { weights, strategies })
    }

    pub fn correlations(&self, n_a: usize, n_b: usize) -> CorrelationTable {
        let first = &self.strategies[0];
        let shape = (first.alice.len(), first.bob.len(), n_a, n_b);
        CorrelationTable::from_fn(shape, |x, y, a, b| {
            self.weights
                .iter()
                .zip(&self.strategies)
                .filter(|(_, s)| s.alice[x] == a && s.bob[y] == b)
                .map(|(w, _)| w)
                .sum()
        })
    }
}

/// Exact local bound by enumerating Alice's deterministic strategies and
/// taking Bob's best response, which decouples over his inputs. Ties go to
/// the lexicographically smallest `(alice, bob)`.
pub fn local_bound(f: &BellFunctional) -> Result<(f64, DeterministicStrategy)> {
    let (n_x, n_y, n_a, n_b) = f.shape();
    let count = (n_a as u128)
        .checked_pow(n_x as u32)
        .and_then(|a| (n_b as u128).checked_pow(n_y as u32).and_then(|b| a.checked_mul(b)))
        .unwrap_or(u128::MAX);
    if count > ENUMERATION_LIMIT {
        return Err(Error::TooLargeToEnumerate { count, limit: ENUMERATION_LIMIT });
    }
    let mut alice = vec![0usize; n_x];
    let mut best: Option<(f64, DeterministicStrategy)> = None;
    loop {
        let mut bob = Vec::with_capacity(n_y);
        let mut total = 0.0;
        for y in 0..n_y {
            let mut best_b = (0, f64::NEG_INFINITY);
            for b in 0..n_b {
                let v: f64 = (0..n_x).map(|x| f.coeff(x, y, alice[x], b)).sum();
                if v > best_b.1 {
                    best_b = (b, v);
                }
            }
            bob.push(best_b.0);
            total += best_b.1;
        }
        if best.as_ref().is_none_or(|(v, _)| total > *v) {
            best = Some((total, DeterministicStrategy { alice: alice.clone(), bob }));
        }
        // odometer, last input fastest
        let mut k = n_x;
        loop {
            if k == 0 {
                return Ok(best.expect("at least one strategy"));
            }
            k -= 1;
            alice[k] += 1;
            if alice[k] < n_a {
                break;
            }
            alice[k] = 0;
        }
    }
}

/// Per-input POVMs of one party over a set of subsystems.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementAssemblage {
    labels: Vec<SubsystemLabel>,
    povms: Vec<Vec<CMat>>,
}

impl MeasurementAssemblage {
    pub fn new(labels: Vec<SubsystemLabel>, povms: Vec<Vec<CMat>>) -> Result<Self> {
        crate::qstate::check_labels(&labels)?;
        let d = crate::qstate::total_dim(&labels);
        let n_out = povms.first().map(Vec::len).unwrap_or(0);
        if povms.is_empty() || n_out == 0 {
            return Err(Error::InvalidMeasurement("need at least one input and outcome".into()));
        }
        for (x, povm) in povms.iter().enumerate() {
            if povm.len() != n_out {
                return Err(Error::InvalidMeasurement(format!(
                    "input {x} has {} outcomes, expected {n_out}",
                    povm.len()
                )));
            }
            let mut sum = linalg::zeros(d, d);
            for (a, m) in povm.iter().enumerate() {
                if m.shape() != (d, d) {
                    return Err(Error::ShapeError(format!(
                        "operator {a}|{x} is {:?}, expected {d}x{d}",
                        m.shape()
                    )));
                }
                let herm = linalg::hermiticity_residue(m);
                let min = linalg::min_eigenvalue(m);
                if herm > VALIDITY_TOL || min < -VALIDITY_TOL {
                    return Err(Error::InvalidMeasurement(format!(
                        "operator {a}|{x} not PSD (hermiticity {herm:.2e}, min eigenvalue {min:.2e})"
                    )));
                }
                sum += m;
            }
            let residue = linalg::max_abs_diff(&sum, &linalg::identity(d));
            if residue > VALIDITY_TOL {
                return Err(Error::InvalidMeasurement(format!(
                    "input {x} sums to identity only within {residue:.2e}"
                )));
            }
        }
        Ok(Self { labels, povms })
    }

    /// Two-outcome projective measurements from `±1` observables: `M_0 = (I + O)/2`.
    pub fn from_observables(labels: Vec<SubsystemLabel>, observables: &[CMat]) -> Result<Self> {
        let d = crate::qstate::total_dim(&labels);
        let id = linalg::identity(d);
        let povms = observables
            .iter()
            .map(|o| vec![(&id + o).scale(0.5), (&id - o).scale(0.5)])
            .collect();
        Self::new(labels, povms)
    }

    /// Answer `responses[x]` with certainty, ignoring the system.
    pub fn deterministic(
        labels: Vec<SubsystemLabel>,
        responses: &[usize],
        n_outcomes: usize,
    ) -> Result<Self> {
        let d = crate::qstate::total_dim(&labels);
        let povms = responses
            .iter()
            .map(|&r| {
                (0..n_outcomes)
                    .map(|a| if a == r { linalg::identity(d) } else { linalg::zeros(d, d) })
                    .collect()
            })
            .collect();
        Self::new(labels, povms)
    }

    pub fn labels(&self) -> &[SubsystemLabel] {
        &self.labels
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn n_inputs(&self) -> usize {
        self.povms.len()
    }

    pub fn n_outcomes(&self) -> usize {
        self.povms[0].len()
    }

    pub fn operator(&self, x: usize, a: usize) -> &CMat {
        &self.povms[x][a]
    }

    pub fn povms(&self) -> &[Vec<CMat>] {
        &self.povms
    }

    /// Same operators with every factor padded by identity on `extra` (appended on the right).
    pub fn extend_with_identity(&self, extra: &[SubsystemLabel]) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend(extra.iter().cloned());
        let id = linalg::identity(crate::qstate::total_dim(extra));
        let povms = self
            .povms
            .iter()
            .map(|p| p.iter().map(|m| linalg::kron(m, &id)).collect())
            .collect();
        Self::new(labels, povms)
    }
}

#[derive(Serialize, Deserialize)]
struct AssemblageJson {
    labels: Vec<SubsystemLabel>,
    povms: Vec<Vec<Vec<Vec<[f64; 2]>>>>,
}

impl Serialize for MeasurementAssemblage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        AssemblageJson {
            labels: self.labels.clone(),
            povms: self
                .povms
                .iter()
                .map(|p| p.iter().map(linalg::to_rows).collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MeasurementAssemblage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = AssemblageJson::deserialize(d)?;
        let povms = raw
            .povms
            .iter()
            .map(|p| p.iter().map(|m| linalg::from_rows(m)).collect::<std::result::Result<Vec<_>, _>>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(serde::de::Error::custom)?;
        MeasurementAssemblage::new(raw.labels, povms).map_err(serde::de::Error::custom)
    }
}

/// `tr_A[(m ⊗ I) rho]` for `rho` ordered `[A, B]`.
fn condition_on_alice(rho: &CMat, d_a: usize, d_b: usize, m: &CMat) -> CMat {
    CMat::from_fn(d_b, d_b, |r, c| {
        let mut acc = linalg::ZERO;
        for i in 0..d_a {
            for j in 0..d_a {
                let w = m[(i, j)];
                if w != linalg::ZERO {
                    acc += w * rho[(j * d_b + r, i * d_b + c)];
                }
            }
        }
        acc
    })
}

/// `tr_B[(I ⊗ n) rho]` for `rho` ordered `[A, B]`.
fn condition_on_bob(rho: &CMat, d_a: usize, d_b: usize, n: &CMat) -> CMat {
    CMat::from_fn(d_a, d_a, |r, c| {
        let mut acc = linalg::ZERO;
        for k in 0..d_b {
            for l in 0..d_b {
                let w = n[(k, l)];
                if w != linalg::ZERO {
                    acc += w * rho[(r * d_b + l, c * d_b + k)];
                }
            }
        }
        acc
    })
}

fn real_trace_product(a: &CMat, b: &CMat) -> Result<f64> {
    let mut acc = linalg::ZERO;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    if acc.im.abs() > IMAG_TOL {
        return Err(Error::NumericalInconsistency(format!(
            "probability has imaginary part {:.3e}",
            acc.im
        )));
    }
    Ok(acc.re)
}

/// Reorder `state` as `[a_names, b_names]`, checking the two sets partition its labels.
fn bipartite_view(state: &DensityMatrix, a_names: &[&str], b_names: &[&str]) -> Result<CMat> {
    let mut all: Vec<&str> = a_names.to_vec();
    all.extend_from_slice(b_names);
    let mut sorted = all.clone();
    sorted.sort_unstable();
    let mut have = state.label_names();
    have.sort_unstable();
    if sorted != have {
        return Err(Error::PartitionError(format!(
            "parties act on {all:?} but the state has {:?}",
            state.label_names()
        )));
    }
    Ok(state.swap_subsystems(&all)?.into_data())
}

fn check_assemblage_dims(state: &DensityMatrix, m: &MeasurementAssemblage) -> Result<()> {
    for l in m.labels() {
        match state.label(&l.name) {
            Some(s) if s.dim == l.dim => {}
            Some(s) => {
                return Err(Error::DimensionError(format!(
                    "label `{}`: state dim {}, measurement dim {}",
                    l.name, s.dim, l.dim
                )))
            }
            None => return Err(Error::PartitionError(format!("`{}` not in state", l.name))),
        }
    }
    Ok(())
}

/// `p(ab|xy) = tr[(M_A^{a|x} ⊗ M_B^{b|y}) state]`.
pub fn correlations(
    state: &DensityMatrix,
    m_a: &MeasurementAssemblage,
    m_b: &MeasurementAssemblage,
) -> Result<CorrelationTable> {
    check_assemblage_dims(state, m_a)?;
    check_assemblage_dims(state, m_b)?;
    let rho = bipartite_view(state, &m_a.label_names(), &m_b.label_names())?;
    let d_a = crate::qstate::total_dim(m_a.labels());
    let d_b = crate::qstate::total_dim(m_b.labels());
    let shape = (m_a.n_inputs(), m_b.n_inputs(), m_a.n_outcomes(), m_b.n_outcomes());
    let mut p = Vec::with_capacity(shape.0 * shape.1 * shape.2 * shape.3);
    let conditioned: Vec<Vec<CMat>> = m_a
        .povms
        .iter()
        .map(|povm| povm.iter().map(|m| condition_on_alice(&rho, d_a, d_b, m)).collect())
        .collect();
    for cx in &conditioned {
        for y in 0..shape.1 {
            for r in cx {
                for n in &m_b.povms[y] {
                    p.push(real_trace_product(n, r)?);
                }
            }
        }
    }
    Ok(CorrelationTable { n_x: shape.0, n_y: shape.1, n_a: shape.2, n_b: shape.3, p })
}

/// Correlation matrix `T_ij = tr[state (σ_i ⊗ σ_j)]`, `i, j ∈ {x, y, z}`.
pub fn correlation_matrix(state: &DensityMatrix) -> Result<[[f64; 3]; 3]> {
    match state.labels() {
        [a, b] if a.dim == 2 && b.dim == 2 => {}
        _ => return Err(Error::DimensionError("expected a two-qubit state".into())),
    }
    let mut t = [[0.0; 3]; 3];
    for (i, row) in t.iter_mut().enumerate() {
        for (j, entry) in row.iter_mut().enumerate() {
            let op = linalg::kron(&linalg::pauli(i + 1), &linalg::pauli(j + 1));
            *entry = real_trace_product(state.data(), &op)?;
        }
    }
    Ok(t)
}

/// Maximal CHSH value over projective qubit measurements: `2 sqrt(t1 + t2)`
/// with `t1 ≥ t2` the top eigenvalues of `TᵀT`.
pub fn chsh_two_qubit_max(state: &DensityMatrix) -> Result<f64> {
    let t = nalgebra::Matrix3::from_fn({
        let t = correlation_matrix(state)?;
        move |i, j| t[i][j]
    });
    let mut ev: Vec<f64> = (t.transpose() * t).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    Ok(2.0 * (ev[0] + ev[1]).max(0.0).sqrt())
}

/// Textbook CHSH measurements for `|phi+>`: `A = Z, X` and `B = (Z ± X)/√2`.
pub fn chsh_phi_plus_measurements(
    alice: SubsystemLabel,
    bob: SubsystemLabel,
) -> Result<(MeasurementAssemblage, MeasurementAssemblage)> {
    let (z, x) = (linalg::pauli(3), linalg::pauli(1));
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let m_a = MeasurementAssemblage::from_observables(vec![alice], &[z.clone(), x.clone()])?;
    let m_b = MeasurementAssemblage::from_observables(
        vec![bob],
        &[(&z + &x).scale(s), (&z - &x).scale(s)],
    )?;
    Ok((m_a, m_b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeesawResult {
    pub score: f64,
    pub alice: MeasurementAssemblage,
    pub bob: MeasurementAssemblage,
    /// Improvement fell below the tolerance before the iteration cap.
    pub converged: bool,
    pub iterations: usize,
    /// Score after every full (Bob, then Alice) update of the winning restart.
    pub history: Vec<f64>,
    /// Never decreased by more than rounding across the winning run.
    pub monotone: bool,
    pub restart: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SeesawOptions {
    pub restarts: usize,
    pub seed: u64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SeesawOptions {
    fn default() -> Self {
        Self { restarts: 16, seed: 0, tol: 1e-9, max_iters: 500 }
    }
}

/// Random projective measurement per input from the eigenbasis of a Gaussian Hermitian matrix.
fn random_projective<R: rand::Rng + ?Sized>(
    d: usize,
    n_in: usize,
    n_out: usize,
    rng: &mut R,
) -> Vec<Vec<CMat>> {
    (0..n_in)
        .map(|_| {
            let (_, vecs) = linalg::eigh(&linalg::random_hermitian(d, rng));
            let mut povm = vec![linalg::zeros(d, d); n_out];
            for k in 0..d {
                let v = vecs.column(k);
                povm[k % n_out] += v * v.adjoint();
            }
            povm
        })
        .collect()
}

/// Projector onto the span of eigenvectors with eigenvalue `>= 0` (zero modes accepted).
fn nonnegative_projector(h: &CMat) -> CMat {
    let (values, vectors) = linalg::eigh(h);
    spectral_indicator(&values, &vectors)
}

fn spectral_indicator(values: &[f64], vectors: &CMat) -> CMat {
    const ZERO_MODE: f64 = 1e-12;
    linalg::spectral_map(values, vectors, |v| if v >= -ZERO_MODE { 1.0 } else { 0.0 })
}

/// Best projective response to effective operators `w[a]`: maximize
/// `sum_a tr[M_a w_a]`. Exact for two outcomes; for more outcomes, pairwise
/// splits inside the current projective measurement, each of which can only
/// raise the objective.
fn best_response(current: &[CMat], w: &[CMat]) -> Vec<CMat> {
    let n = w.len();
    let d = w[0].nrows();
    match n {
        1 => vec![linalg::identity(d)],
        2 => {
            let p = nonnegative_projector(&(&w[0] - &w[1]));
            let q = linalg::identity(d) - &p;
            vec![p, q]
        }
        _ => {
            let mut m = current.to_vec();
            for _ in 0..20 {
                let before: f64 = m.iter().zip(w).map(|(a, b)| (a * b).trace().re).sum();
                for a in 0..n {
                    for b in a + 1..n {
                        let span = &m[a] + &m[b];
                        let (vals, vecs) = linalg::eigh(&span);
                        let cols: Vec<usize> = (0..d).filter(|&k| vals[k] > 0.5).collect();
                        if cols.is_empty() {
                            continue;
                        }
                        let q = CMat::from_fn(d, cols.len(), |i, j| vecs[(i, cols[j])]);
                        let h = q.adjoint() * (&w[a] - &w[b]) * &q;
                        let p_sub = nonnegative_projector(&h);
                        m[a] = &q * p_sub * q.adjoint();
                        m[b] = &span - &m[a];
                    }
                }
                let after: f64 = m.iter().zip(w).map(|(a, b)| (a * b).trace().re).sum();
                if after - before < 1e-13 {
                    break;
                }
            }
            m
        }
    }
}

enum SeesawStart {
    Random(Box<rand_chacha::ChaCha8Rng>),
    Deterministic(DeterministicStrategy),
}

struct SeesawRun {
    score: f64,
    alice: Vec<Vec<CMat>>,
    bob: Vec<Vec<CMat>>,
    converged: bool,
    history: Vec<f64>,
    monotone: bool,
}

fn score_of(f: &BellFunctional, rho: &CMat, d_a: usize, d_b: usize, alice: &[Vec<CMat>], bob: &[Vec<CMat>]) -> f64 {
    let (n_x, n_y, n_a, n_b) = f.shape();
    let mut s = 0.0;
    for x in 0..n_x {
        for a in 0..n_a {
            let r = condition_on_alice(rho, d_a, d_b, &alice[x][a]);
            for y in 0..n_y {
                for b in 0..n_b {
                    let c = f.coeff(x, y, a, b);
                    if c != 0.0 {
                        s += c * (&bob[y][b] * &r).trace().re;
                    }
                }
            }
        }
    }
    s
}

fn seesaw_run(
    f: &BellFunctional,
    rho: &CMat,
    d_a: usize,
    d_b: usize,
    opts: &SeesawOptions,
    start: SeesawStart,
) -> SeesawRun {
    let (n_x, n_y, n_a, n_b) = f.shape();
    let (mut alice, mut bob) = match start {
        SeesawStart::Random(mut rng) => {
            let alice = random_projective(d_a, n_x, n_a, &mut rng);
            (alice, random_projective(d_b, n_y, n_b, &mut rng))
        }
        SeesawStart::Deterministic(s) => {
            let fixed = |d: usize, responses: &[usize], n_out: usize| -> Vec<Vec<CMat>> {
                responses
                    .iter()
                    .map(|&r| {
                        (0..n_out).map(|a| if a == r { linalg::identity(d) } else { linalg::zeros(d, d) }).collect()
                    })
                    .collect()
            };
            (fixed(d_a, &s.alice, n_a), fixed(d_b, &s.bob, n_b))
        }
    };
    let mut history = Vec::new();
    let mut converged = false;
    let mut monotone = true;
    let mut last_gain: Option<f64> = None;
    for _ in 0..opts.max_iters {
        // Bob responds to Alice.
        let cond_a: Vec<Vec<CMat>> = alice
            .iter()
            .map(|p| p.iter().map(|m| condition_on_alice(rho, d_a, d_b, m)).collect())
            .collect();
        for y in 0..n_y {
            let w: Vec<CMat> = (0..n_b)
                .map(|b| {
                    let mut acc = linalg::zeros(d_b, d_b);
                    for x in 0..n_x {
                        for a in 0..n_a {
                            let c = f.coeff(x, y, a, b);
                            if c != 0.0 {
                                acc += cond_a[x][a].scale(c);
                            }
                        }
                    }
                    acc
                })
                .collect();
            bob[y] = best_response(&bob[y], &w);
        }
        // Alice responds to Bob.
        let cond_b: Vec<Vec<CMat>> = bob
            .iter()
            .map(|p| p.iter().map(|n| condition_on_bob(rho, d_a, d_b, n)).collect())
            .collect();
        for x in 0..n_x {
            let w: Vec<CMat> = (0..n_a)
                .map(|a| {
                    let mut acc = linalg::zeros(d_a, d_a);
                    for y in 0..n_y {
                        for b in 0..n_b {
                            let c = f.coeff(x, y, a, b);
                            if c != 0.0 {
                                acc += cond_b[y][b].scale(c);
                            }
                        }
                    }
                    acc
                })
                .collect();
            alice[x] = best_response(&alice[x], &w);
        }
        let s = score_of(f, rho, d_a, d_b, &alice, &bob);
        if let Some(&prev) = history.last() {
            if s < prev - 1e-9 {
                monotone = false;
            }
            let gain = s - prev;
            let tail = match last_gain {
                Some(g) if g > 0.0 && gain > 0.0 && gain < g => gain * gain / (g - gain),
                _ => 0.0,
            };
            last_gain = Some(gain);
            history.push(s);
            if gain < opts.tol && tail < opts.tol {
                converged = true;
                break;
            }
        } else {
            history.push(s);
        }
    }
    debug_assert!(monotone, "see-saw score decreased: {history:?}");
    let score = *history.last().unwrap_or(&f64::NEG_INFINITY);
    SeesawRun { score, alice, bob, converged, history, monotone }
}

/// Alternating best-response optimization of `f` over local projective
/// measurements on `state`, best of `restarts` seeded random starts plus one
/// start from the local-bound-saturating deterministic strategy (reported as
/// restart index `restarts`), so the result never falls below the local
/// bound. The returned score is attained by the returned measurements.
pub fn seesaw_optimize(
    f: &BellFunctional,
    state: &DensityMatrix,
    partition: (&[&str], &[&str]),
    restarts: usize,
    seed: u64,
) -> Result<SeesawResult> {
    seesaw_with(f, state, partition, &SeesawOptions { restarts, seed, ..Default::default() })
}

pub fn seesaw_with(
    f: &BellFunctional,
    state: &DensityMatrix,
    (a_names, b_names): (&[&str], &[&str]),
    opts: &SeesawOptions,
) -> Result<SeesawResult> {
    let rho = bipartite_view(state, a_names, b_names)?;
    let lookup = |names: &[&str]| -> Vec<SubsystemLabel> {
        names.iter().map(|n| state.label(n).expect("checked by bipartite_view").clone()).collect()
    };
    let (labels_a, labels_b) = (lookup(a_names), lookup(b_names));
    let d_a = crate::qstate::total_dim(&labels_a);
    let d_b = crate::qstate::total_dim(&labels_b);
    let stream = SeedStream::new(opts.seed).fork("seesaw");
    let restarts = opts.restarts.max(1);
    let run = |r: usize| seesaw_run(f, &rho, d_a, d_b, opts, SeesawStart::Random(Box::new(stream.rng(r as u64))));

    #[cfg(feature = "parallel")]
    let mut runs: Vec<SeesawRun> = {
        use rayon::prelude::*;
        (0..restarts).into_par_iter().map(run).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let mut runs: Vec<SeesawRun> = (0..restarts).map(run).collect();
    if let Ok((_, argmax)) = local_bound(f) {
        runs.push(seesaw_run(f, &rho, d_a, d_b, opts, SeesawStart::Deterministic(argmax)));
    }

    let (restart, best) = runs
        .into_iter()
        .enumerate()
        .reduce(|acc, cand| if cand.1.score > acc.1.score { cand } else { acc })
        .expect("at least one restart");
    let iterations = best.history.len();
    let alice = MeasurementAssemblage::new(labels_a, best.alice)?;
    let bob = MeasurementAssemblage::new(labels_b, best.bob)?;
    Ok(SeesawResult {
        score: best.score,
        alice,
        bob,
        converged: best.converged,
        iterations,
        history: best.history,
        monotone: best.monotone,
        restart,
    })
}

/// Register-conditioned strategy: read the classical register; on value 0
/// measure the witness `xi` assemblage, on any other value answer with the
/// local-bound-saturating deterministic strategy.
pub fn register_conditioned_strategy(
    f: &BellFunctional,
    xi_a: &MeasurementAssemblage,
    xi_b: &MeasurementAssemblage,
    argmax_local: &DeterministicStrategy,
    (reg_a, reg_b): (&SubsystemLabel, &SubsystemLabel),
) -> Result<(MeasurementAssemblage, MeasurementAssemblage)> {
    let (n_x, n_y, n_a, n_b) = f.shape();
    if (xi_a.n_inputs(), xi_b.n_inputs(), xi_a.n_outcomes(), xi_b.n_outcomes()) != (n_x, n_y, n_a, n_b) {
        return Err(Error::ShapeError("witness measurements do not match the functional".into()));
    }
    if argmax_local.alice.len() != n_x || argmax_local.bob.len() != n_y {
        return Err(Error::ShapeError("deterministic strategy does not match the functional".into()));
    }
    let side = |xi: &MeasurementAssemblage, reg: &SubsystemLabel, responses: &[usize], n_out: usize| {
        if !reg.is_register() {
            return Err(Error::RegisterError(format!("`{}` is not a classical register", reg.name)));
        }
        if reg.dim < 2 {
            return Err(Error::RegisterError(format!("register `{}` has dim {}", reg.name, reg.dim)));
        }
        let d = crate::qstate::total_dim(xi.labels());
        let zero = linalg::basis_projector(reg.dim, 0);
        let rest = linalg::identity(reg.dim) - &zero;
        let id = linalg::identity(d);
        let povms = (0..xi.n_inputs())
            .map(|x| {
                (0..n_out)
                    .map(|a| {
                        let mut m = linalg::kron(xi.operator(x, a), &zero);
                        if responses[x] == a {
                            m += linalg::kron(&id, &rest);
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        let mut labels = xi.labels().to_vec();
        labels.push(reg.clone());
        MeasurementAssemblage::new(labels, povms)
    };
    Ok((
        side(xi_a, reg_a, &argmax_local.alice, n_a)?,
        side(xi_b, reg_b, &argmax_local.bob, n_b)?,
    ))
}
