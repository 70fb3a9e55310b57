//! Catalyst construction and the local catalytic transformation.
//!
//! States produced by the protocol are classical mixtures of product states,
//! so they are stored branch by branch ([`BranchedCqState`]) instead of as one
//! dense matrix. The protocol itself is data ([`LocalProtocol`]) executed by an
//! interpreter that rejects any operation touching the other party's labels.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::qstate::{
    check_labels, total_dim, DensityMatrix, MixedRadix, SubsystemKind, SubsystemLabel,
    DEFAULT_DENSE_CAP, EXACT_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Party {
    Alice,
    Bob,
}

impl Party {
    pub fn letter(self) -> &'static str {
        match self {
            Party::Alice => "A",
            Party::Bob => "B",
        }
    }

    /// Input system label.
    pub fn input(self) -> String {
        self.letter().to_string()
    }

    /// `k`-th output copy, 1-based.
    pub fn output(self, k: usize) -> String {
        format!("{}{k}", self.letter())
    }

    /// Output flag register.
    pub fn output_register(self) -> String {
        format!("R{}", self.letter())
    }

    /// `k`-th catalyst slot, 1-based.
    pub fn catalyst(self, k: usize) -> String {
        format!("C{}{k}", self.letter())
    }

    pub fn catalyst_register(self) -> String {
        format!("CR{}", self.letter())
    }
}

/// One branch of a classical-quantum state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub prob: f64,
    pub registers: BTreeMap<String, usize>,
    pub factors: Vec<DensityMatrix>,
}

/// `sum_k p_k [r_k] ⊗ (⊗_g rho_{k,g})` over an ordered label universe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchedCqState {
    labels: Vec<SubsystemLabel>,
    branches: Vec<Branch>,
}

#[derive(Deserialize)]
struct BranchedJson {
    labels: Vec<SubsystemLabel>,
    branches: Vec<Branch>,
}

impl<'de> Deserialize<'de> for BranchedCqState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = BranchedJson::deserialize(d)?;
        BranchedCqState::new(raw.labels, raw.branches).map_err(serde::de::Error::custom)
    }
}

/// Result of comparing two branched states in canonical form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CqComparison {
    /// Same universe, register assignments and factor groups.
    pub structure_match: bool,
    pub max_prob_diff: f64,
    pub max_factor_diff: f64,
    pub passed: bool,
}

impl BranchedCqState {
    pub fn new(labels: Vec<SubsystemLabel>, branches: Vec<Branch>) -> Result<Self> {
        check_labels(&labels)?;
        if branches.is_empty() {
            return Err(Error::InvalidState("no branches".into()));
        }
        let quantum: BTreeSet<&str> =
            labels.iter().filter(|l| !l.is_register()).map(|l| l.name.as_str()).collect();
        let classical: BTreeSet<&str> =
            labels.iter().filter(|l| l.is_register()).map(|l| l.name.as_str()).collect();
        let mut total = 0.0;
        for (k, b) in branches.iter().enumerate() {
            if !b.prob.is_finite() || b.prob < 0.0 {
                return Err(Error::InvalidState(format!("branch {k} has probability {}", b.prob)));
            }
            total += b.prob;
            let mut covered = BTreeSet::new();
            for f in &b.factors {
                for l in f.labels() {
                    let u = labels
                        .iter()
                        .find(|u| u.name == l.name)
                        .ok_or_else(|| Error::UnknownLabel(l.name.clone()))?;
                    if u.dim != l.dim || u.kind != SubsystemKind::Quantum || l.is_register() {
                        return Err(Error::PartitionError(format!(
                            "branch {k}: factor label `{}` does not match the universe",
                            l.name
                        )));
                    }
                    if !covered.insert(l.name.as_str()) {
                        return Err(Error::PartitionError(format!(
                            "branch {k}: `{}` appears in two factors",
                            l.name
                        )));
                    }
                }
            }
            if covered != quantum {
                return Err(Error::PartitionError(format!(
                    "branch {k}: factors cover {covered:?}, expected {quantum:?}"
                )));
            }
            let regs: BTreeSet<&str> = b.registers.keys().map(String::as_str).collect();
            if regs != classical {
                return Err(Error::RegisterError(format!(
                    "branch {k}: registers {regs:?}, expected {classical:?}"
                )));
            }
            for (name, value) in &b.registers {
                let dim = labels.iter().find(|l| &l.name == name).map(|l| l.dim).unwrap_or(0);
                if *value >= dim {
                    return Err(Error::RegisterError(format!(
                        "branch {k}: register `{name}` = {value} out of range {dim}"
                    )));
                }
            }
        }
        if (total - 1.0).abs() > EXACT_TOL {
            return Err(Error::InvalidState(format!("branch probabilities sum to {total}")));
        }
        Ok(Self { labels, branches })
    }

    /// A plain quantum state as a single branch with a single factor.
    pub fn from_state(state: DensityMatrix) -> Result<Self> {
        if state.labels().iter().any(SubsystemLabel::is_register) {
            return Err(Error::RegisterError("use explicit branches for register labels".into()));
        }
        let labels = state.labels().to_vec();
        Self::new(labels, vec![Branch { prob: 1.0, registers: BTreeMap::new(), factors: vec![state] }])
    }

    pub fn labels(&self) -> &[SubsystemLabel] {
        &self.labels
    }

    pub fn label_names(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.name.as_str()).collect()
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn dim(&self) -> usize {
        total_dim(&self.labels)
    }

    pub fn total_probability(&self) -> f64 {
        self.branches.iter().map(|b| b.prob).sum()
    }

    /// Product with an independent state; branches combine pairwise.
    pub fn tensor(&self, other: &BranchedCqState) -> Result<Self> {
        let mut labels = self.labels.clone();
        labels.extend(other.labels.iter().cloned());
        let mut branches = Vec::with_capacity(self.branches.len() * other.branches.len());
        for a in &self.branches {
            for b in &other.branches {
                let mut registers = a.registers.clone();
                registers.extend(b.registers.iter().map(|(k, v)| (k.clone(), *v)));
                let mut factors = a.factors.clone();
                factors.extend(b.factors.iter().cloned());
                branches.push(Branch { prob: a.prob * b.prob, registers, factors });
            }
        }
        Self::new(labels, branches)
    }

    fn position(&self, name: &str) -> usize {
        self.labels.iter().position(|l| l.name == name).unwrap_or(usize::MAX)
    }

    fn register_key(&self, b: &Branch) -> Vec<usize> {
        self.labels
            .iter()
            .filter(|l| l.is_register())
            .map(|l| b.registers[&l.name])
            .collect()
    }

    /// Factors relabeled into universe order and sorted by their first label.
    fn normalized_factors(&self, factors: &[DensityMatrix]) -> Result<Vec<DensityMatrix>> {
        let mut out = factors
            .iter()
            .map(|f| {
                let mut names = f.label_names();
                names.sort_by_key(|n| self.position(n));
                f.swap_subsystems(&names)
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by_key(|f| self.position(&f.labels()[0].name));
        Ok(out)
    }

    /// Merge branches with equal register assignments and order everything by
    /// the universe. Two merged branches keep their factor groups when they
    /// differ in at most one group; otherwise they fall back to one dense group.
    pub fn canonical(&self) -> Result<Self> {
        let mut groups: BTreeMap<Vec<usize>, Branch> = BTreeMap::new();
        for b in &self.branches {
            if b.prob == 0.0 {
                continue;
            }
            let normalized =
                Branch { prob: b.prob, registers: b.registers.clone(), factors: self.normalized_factors(&b.factors)? };
            let key = self.register_key(b);
            let merged = match groups.remove(&key) {
                None => normalized,
                Some(acc) => self.merge(acc, normalized)?,
            };
            groups.insert(key, merged);
        }
        let branches: Vec<Branch> = groups.into_values().collect();
        if branches.is_empty() {
            return Err(Error::InvalidState("all branches have zero probability".into()));
        }
        Ok(Self { labels: self.labels.clone(), branches })
    }

    fn merge(&self, a: Branch, b: Branch) -> Result<Branch> {
        let prob = a.prob + b.prob;
        let (wa, wb) = (a.prob / prob, b.prob / prob);
        let same_groups = a.factors.len() == b.factors.len()
            && a.factors.iter().zip(&b.factors).all(|(x, y)| x.labels() == y.labels());
        if same_groups {
            let differing = a
                .factors
                .iter()
                .zip(&b.factors)
                .filter(|(x, y)| linalg::max_abs_diff(x.data(), y.data()) > EXACT_TOL)
                .count();
            if differing <= 1 {
                let factors = a
                    .factors
                    .iter()
                    .zip(&b.factors)
                    .map(|(x, y)| DensityMatrix::mixture(&[(wa, x), (wb, y)]))
                    .collect::<Result<Vec<_>>>()?;
                return Ok(Branch { prob, registers: a.registers, factors });
            }
        }
        let da = self.dense_quantum_part(&a.factors)?;
        let db = self.dense_quantum_part(&b.factors)?;
        Ok(Branch { prob, registers: a.registers, factors: vec![DensityMatrix::mixture(&[(wa, &da), (wb, &db)])?] })
    }

    /// Tensor of all factors of a branch, in universe order.
    fn dense_quantum_part(&self, factors: &[DensityMatrix]) -> Result<DensityMatrix> {
        let mut iter = factors.iter();
        let mut acc = iter.next().cloned().ok_or_else(|| Error::InvalidState("branch without factors".into()))?;
        for f in iter {
            acc = acc.tensor_with_cap(f, DEFAULT_DENSE_CAP)?;
        }
        let mut names = acc.label_names();
        names.sort_by_key(|n| self.position(n));
        acc.swap_subsystems(&names)
    }

    /// Compare in canonical form; probabilities and factor entries within `tol`.
    pub fn compare(&self, other: &BranchedCqState, tol: f64) -> Result<CqComparison> {
        let a = self.canonical()?;
        let b = other.canonical()?;
        let mismatch = CqComparison {
            structure_match: false,
            max_prob_diff: f64::INFINITY,
            max_factor_diff: f64::INFINITY,
            passed: false,
        };
        if a.labels != b.labels || a.branches.len() != b.branches.len() {
            return Ok(mismatch);
        }
        let mut max_prob_diff: f64 = 0.0;
        let mut max_factor_diff: f64 = 0.0;
        for (x, y) in a.branches.iter().zip(&b.branches) {
            if x.registers != y.registers {
                return Ok(mismatch);
            }
            max_prob_diff = max_prob_diff.max((x.prob - y.prob).abs());
            let same_groups = x.factors.len() == y.factors.len()
                && x.factors.iter().zip(&y.factors).all(|(f, g)| f.labels() == g.labels());
            if same_groups {
                for (f, g) in x.factors.iter().zip(&y.factors) {
                    max_factor_diff = max_factor_diff.max(linalg::max_abs_diff(f.data(), g.data()));
                }
            } else {
                return Ok(CqComparison { max_prob_diff, ..mismatch });
            }
        }
        let passed = max_prob_diff <= tol && max_factor_diff <= tol;
        Ok(CqComparison { structure_match: true, max_prob_diff, max_factor_diff, passed })
    }

    /// Reduced state on `keep` (given in any order; the result follows the universe).
    pub fn marginal(&self, keep: &[&str]) -> Result<Self> {
        for k in keep {
            if self.position(k) == usize::MAX {
                return Err(Error::UnknownLabel(k.to_string()));
            }
        }
        let labels: Vec<SubsystemLabel> =
            self.labels.iter().filter(|l| keep.contains(&l.name.as_str())).cloned().collect();
        let branches = self
            .branches
            .iter()
            .map(|b| {
                let registers = b
                    .registers
                    .iter()
                    .filter(|(k, _)| keep.contains(&k.as_str()))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect();
                let mut factors = Vec::new();
                for f in &b.factors {
                    let kept: Vec<&str> =
                        f.label_names().into_iter().filter(|n| keep.contains(n)).collect();
                    if kept.len() == f.labels().len() {
                        factors.push(f.clone());
                    } else if !kept.is_empty() {
                        factors.push(f.partial_trace(&kept)?);
                    }
                }
                Ok(Branch { prob: b.prob, registers, factors })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(labels, branches)?.canonical()
    }

    /// Dense matrix over the universe, built from tensor products and reordering.
    pub fn to_dense(&self) -> Result<DensityMatrix> {
        self.to_dense_with_cap(DEFAULT_DENSE_CAP)
    }

    pub fn to_dense_with_cap(&self, cap: usize) -> Result<DensityMatrix> {
        let dim = self.dim();
        if dim > cap {
            return Err(Error::TooLargeToMaterialize { dim, cap });
        }
        let names = self.label_names();
        let mut acc = linalg::zeros(dim, dim);
        for b in &self.branches {
            let mut parts: Vec<DensityMatrix> = b.factors.clone();
            for l in self.labels.iter().filter(|l| l.is_register()) {
                parts.push(DensityMatrix::basis(vec![l.clone()], b.registers[&l.name])?);
            }
            let mut iter = parts.into_iter();
            let mut state = iter.next().expect("universe is non-empty");
            for p in iter {
                state = state.tensor_with_cap(&p, cap)?;
            }
            acc += state.swap_subsystems(&names)?.into_data().scale(b.prob);
        }
        DensityMatrix::new_unvalidated(self.labels.clone(), acc)
    }

    /// Entry `(row, col)` of the dense state, computed on demand.
    pub fn dense_entry(&self, row: usize, col: usize) -> Complex64 {
        LazyDense::new(self).entry(row, col)
    }

    /// Partial trace computed entry by entry without materializing the full
    /// state; only the reduced matrix must fit under `cap`.
    pub fn lazy_partial_trace(&self, keep: &[&str], cap: usize) -> Result<DensityMatrix> {
        for k in keep {
            if self.position(k) == usize::MAX {
                return Err(Error::UnknownLabel(k.to_string()));
            }
        }
        let kept: Vec<usize> =
            (0..self.labels.len()).filter(|&i| keep.contains(&self.labels[i].name.as_str())).collect();
        let traced: Vec<usize> = (0..self.labels.len()).filter(|i| !kept.contains(i)).collect();
        let kept_labels: Vec<SubsystemLabel> = kept.iter().map(|&i| self.labels[i].clone()).collect();
        let d_keep = total_dim(&kept_labels);
        if d_keep > cap {
            return Err(Error::TooLargeToMaterialize { dim: d_keep, cap });
        }
        let universe = MixedRadix::new(&self.labels.iter().map(|l| l.dim).collect::<Vec<_>>());
        let keep_radix = MixedRadix::new(&kept_labels.iter().map(|l| l.dim).collect::<Vec<_>>());
        let trace_radix = MixedRadix::new(&traced.iter().map(|&i| self.labels[i].dim).collect::<Vec<_>>());
        let lazy = LazyDense::new(self);
        let embed = |keep_flat: usize, trace_flat: usize| -> usize {
            let mut flat = 0;
            for (k, &i) in kept.iter().enumerate() {
                flat += keep_radix.digit(keep_flat, k) * universe.strides()[i];
            }
            for (k, &i) in traced.iter().enumerate() {
                flat += trace_radix.digit(trace_flat, k) * universe.strides()[i];
            }
            flat
        };
        let mut out = linalg::zeros(d_keep, d_keep);
        for r in 0..d_keep {
            for c in 0..d_keep {
                let mut acc = linalg::ZERO;
                for t in 0..trace_radix.size() {
                    acc += lazy.entry(embed(r, t), embed(c, t));
                }
                out[(r, c)] = acc;
            }
        }
        DensityMatrix::new_unvalidated(kept_labels, out)
    }
}

/// Precomputed index layout for on-demand dense entries.
struct LazyDense<'a> {
    strides: Vec<usize>,
    dims: Vec<usize>,
    branches: Vec<LazyBranch<'a>>,
}

struct LazyBranch<'a> {
    prob: f64,
    /// `(universe position, value)`
    registers: Vec<(usize, usize)>,
    /// Universe positions of each factor's labels, and its matrix.
    factors: Vec<(Vec<usize>, MixedRadix, &'a CMat)>,
}

impl<'a> LazyDense<'a> {
    fn new(state: &'a BranchedCqState) -> Self {
        let dims: Vec<usize> = state.labels.iter().map(|l| l.dim).collect();
        let strides = MixedRadix::new(&dims).strides().to_vec();
        let branches = state
            .branches
            .iter()
            .map(|b| LazyBranch {
                prob: b.prob,
                registers: b.registers.iter().map(|(k, v)| (state.position(k), *v)).collect(),
                factors: b
                    .factors
                    .iter()
                    .map(|f| {
                        let pos: Vec<usize> = f.label_names().iter().map(|n| state.position(n)).collect();
                        let radix = MixedRadix::new(&f.labels().iter().map(|l| l.dim).collect::<Vec<_>>());
                        (pos, radix, f.data())
                    })
                    .collect(),
            })
            .collect();
        Self { strides, dims, branches }
    }

    fn digit(&self, flat: usize, pos: usize) -> usize {
        (flat / self.strides[pos]) % self.dims[pos]
    }

    fn entry(&self, row: usize, col: usize) -> Complex64 {
        let mut acc = linalg::ZERO;
        'branch: for b in &self.branches {
            for &(pos, v) in &b.registers {
                if self.digit(row, pos) != v || self.digit(col, pos) != v {
                    continue 'branch;
                }
            }
            let mut term = linalg::c(b.prob, 0.0);
            for (pos, radix, m) in &b.factors {
                let (mut r, mut c) = (0, 0);
                for (k, &p) in pos.iter().enumerate() {
                    r += self.digit(row, p) * radix.strides()[k];
                    c += self.digit(col, p) * radix.strides()[k];
                }
                term *= m[(r, c)];
                if term == linalg::ZERO {
                    continue 'branch;
                }
            }
            acc += term;
        }
        acc
    }
}

/// Inputs of the catalytic construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalystSpec {
    rho: DensityMatrix,
    sigma_a: DensityMatrix,
    sigma_b: DensityMatrix,
    n: usize,
}

impl CatalystSpec {
    /// `rho` must be bipartite (Alice's factor first); the local states of the
    /// product `sigma_a ⊗ sigma_b` must be single-subsystem. Labels are
    /// normalized to `A`, `B`.
    pub fn new(
        rho: DensityMatrix,
        sigma_a: DensityMatrix,
        sigma_b: DensityMatrix,
        n: usize,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::DimensionError(format!("copy number {n} < 2")));
        }
        let (la, lb) = match rho.labels() {
            [a, b] if !a.is_register() && !b.is_register() => (a.clone(), b.clone()),
            other => {
                return Err(Error::DimensionError(format!(
                    "expected a bipartite quantum state, got {} subsystems",
                    other.len()
                )))
            }
        };
        let rho = rho
            .relabel(&[(la.name.as_str(), "\u{0}a"), (lb.name.as_str(), "\u{0}b")])?
            .relabel(&[("\u{0}a", "A"), ("\u{0}b", "B")])?;
        let local = |s: DensityMatrix, want: usize, name: &str| -> Result<DensityMatrix> {
            match s.labels() {
                [l] if l.dim == want && !l.is_register() => {
                    let old = l.name.clone();
                    s.relabel(&[(old.as_str(), name)])
                }
                _ => Err(Error::DimensionError(format!(
                    "local catalyst state for `{name}` must be one subsystem of dim {want}"
                ))),
            }
        };
        let sigma_a = local(sigma_a, la.dim, "A")?;
        let sigma_b = local(sigma_b, lb.dim, "B")?;
        Ok(Self { rho, sigma_a, sigma_b, n })
    }

    /// `sigma = |0><0| ⊗ |0><0|`.
    pub fn with_default_sigma(rho: DensityMatrix, n: usize) -> Result<Self> {
        let dims: Vec<usize> = rho.labels().iter().map(|l| l.dim).collect();
        if dims.len() != 2 {
            return Err(Error::DimensionError("expected a bipartite state".into()));
        }
        let sa = DensityMatrix::basis(vec![SubsystemLabel::quantum("A", dims[0])], 0)?;
        let sb = DensityMatrix::basis(vec![SubsystemLabel::quantum("B", dims[1])], 0)?;
        Self::new(rho, sa, sb, n)
    }

    pub fn rho(&self) -> &DensityMatrix {
        &self.rho
    }

    pub fn sigma(&self, party: Party) -> &DensityMatrix {
        match party {
            Party::Alice => &self.sigma_a,
            Party::Bob => &self.sigma_b,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn local_dim(&self, party: Party) -> usize {
        self.sigma(party).dim()
    }

    fn quantum(&self, party: Party, name: String) -> SubsystemLabel {
        SubsystemLabel::quantum(name, self.local_dim(party))
    }

    /// `[C{P}1 .. C{P}(n-1), CR{P}]`.
    pub fn catalyst_labels(&self, party: Party) -> Vec<SubsystemLabel> {
        let mut v: Vec<_> = (1..self.n).map(|k| self.quantum(party, party.catalyst(k))).collect();
        v.push(SubsystemLabel::register(party.catalyst_register(), self.n));
        v
    }

    /// `[{P}1 .. {P}n, R{P}]`.
    pub fn output_labels(&self, party: Party) -> Vec<SubsystemLabel> {
        let mut v: Vec<_> = (1..=self.n).map(|k| self.quantum(party, party.output(k))).collect();
        v.push(SubsystemLabel::register(party.output_register(), 2));
        v
    }

    pub fn system_universe(&self) -> Vec<SubsystemLabel> {
        let mut v = self.output_labels(Party::Alice);
        v.extend(self.output_labels(Party::Bob));
        v
    }

    pub fn catalyst_universe(&self) -> Vec<SubsystemLabel> {
        let mut v = self.catalyst_labels(Party::Alice);
        v.extend(self.catalyst_labels(Party::Bob));
        v
    }

    /// Outputs then catalyst, each Alice before Bob.
    pub fn global_universe(&self) -> Vec<SubsystemLabel> {
        let mut v = self.system_universe();
        v.extend(self.catalyst_universe());
        v
    }

    pub fn system_names(&self) -> Vec<String> {
        self.system_universe().into_iter().map(|l| l.name).collect()
    }

    pub fn catalyst_names(&self) -> Vec<String> {
        self.catalyst_universe().into_iter().map(|l| l.name).collect()
    }

    fn rho_on(&self, a: String, b: String) -> Result<DensityMatrix> {
        self.rho.relabel(&[("A", "\u{0}a"), ("B", "\u{0}b")])?.relabel(&[("\u{0}a", &a), ("\u{0}b", &b)])
    }

    fn sigma_on(&self, party: Party, name: &str) -> Result<DensityMatrix> {
        self.sigma(party).relabel(&[(party.letter(), name)])
    }

    /// Pairs `(slot_a(k), slot_b(k))` for `k in 1..=count` carry `rho` when
    /// `k <= with_rho`, the product `sigma` otherwise.
    fn pair_factors(
        &self,
        count: usize,
        with_rho: usize,
        slot: impl Fn(Party, usize) -> String,
    ) -> Result<Vec<DensityMatrix>> {
        let mut factors = Vec::new();
        for k in 1..=count {
            if k <= with_rho {
                factors.push(self.rho_on(slot(Party::Alice, k), slot(Party::Bob, k))?);
            } else {
                factors.push(self.sigma_on(Party::Alice, &slot(Party::Alice, k))?);
                factors.push(self.sigma_on(Party::Bob, &slot(Party::Bob, k))?);
            }
        }
        Ok(factors)
    }
}

fn registers(pairs: &[(String, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().cloned().collect()
}

/// `(1/n) sum_i rho^{⊗i} ⊗ sigma^{⊗(n-1-i)} ⊗ [ii]` on the catalyst labels.
pub fn build_catalyst(spec: &CatalystSpec) -> Result<BranchedCqState> {
    let n = spec.n;
    let branches = (0..n)
        .map(|i| {
            Ok(Branch {
                prob: 1.0 / n as f64,
                registers: registers(&[
                    (Party::Alice.catalyst_register(), i),
                    (Party::Bob.catalyst_register(), i),
                ]),
                factors: spec.pair_factors(n - 1, i, Party::catalyst)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    BranchedCqState::new(spec.catalyst_universe(), branches)
}

/// Closed form of the output marginal: `(1/n) rho^{⊗n} ⊗ [00] + ((n-1)/n) sigma^{⊗n} ⊗ [11]`.
pub fn expected_system_marginal(spec: &CatalystSpec) -> Result<BranchedCqState> {
    let n = spec.n;
    let flags = |v: usize| {
        registers(&[(Party::Alice.output_register(), v), (Party::Bob.output_register(), v)])
    };
    let branches = vec![
        Branch { prob: 1.0 / n as f64, registers: flags(0), factors: spec.pair_factors(n, n, Party::output)? },
        Branch {
            prob: (n - 1) as f64 / n as f64,
            registers: flags(1),
            factors: spec.pair_factors(n, 0, Party::output)?,
        },
    ];
    BranchedCqState::new(spec.system_universe(), branches)?.canonical()
}

/// A local step. Moves rebind a label (a relabeling swap); preparations
/// introduce fresh labels; registers are classical writes.
#[derive(Debug, Clone, PartialEq)]
pub enum LocalOp {
    Move { from: String, to: String },
    Discard { label: String },
    Prepare { state: DensityMatrix },
    SetRegister { label: SubsystemLabel, value: usize },
}

impl LocalOp {
    fn touched(&self) -> Vec<&str> {
        match self {
            LocalOp::Move { from, to } => vec![from, to],
            LocalOp::Discard { label } => vec![label],
            LocalOp::Prepare { state } => state.label_names(),
            LocalOp::SetRegister { label, .. } => vec![&label.name],
        }
    }
}

/// One party's program: read `control`, run `branches[value]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyProgram {
    pub party: Party,
    pub owned: BTreeSet<String>,
    pub control: String,
    pub branches: Vec<Vec<LocalOp>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalProtocol {
    pub alice: PartyProgram,
    pub bob: PartyProgram,
    pub output_universe: Vec<SubsystemLabel>,
}

/// What the interpreter observed while executing a protocol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LocalityAudit {
    pub branches: usize,
    pub operations: usize,
    /// Largest number of factors spanning both parties in any input branch.
    pub cross_party_factors_before: usize,
    pub cross_party_factors_after: usize,
}

/// The catalytic protocol for `spec` as per-party programs keyed by the catalyst register.
pub fn catalytic_protocol(spec: &CatalystSpec) -> Result<LocalProtocol> {
    let n = spec.n;
    let program = |party: Party| -> Result<PartyProgram> {
        let out_reg = SubsystemLabel::register(party.output_register(), 2);
        let cat_reg = SubsystemLabel::register(party.catalyst_register(), n);
        let mut owned: BTreeSet<String> = BTreeSet::new();
        owned.insert(party.input());
        owned.extend(spec.output_labels(party).into_iter().map(|l| l.name));
        owned.extend(spec.catalyst_labels(party).into_iter().map(|l| l.name));
        let mut branches = Vec::with_capacity(n);
        for i in 0..n {
            let mut ops = Vec::new();
            if i == n - 1 {
                ops.push(LocalOp::Move { from: party.input(), to: party.output(1) });
                for k in 1..n {
                    ops.push(LocalOp::Move { from: party.catalyst(k), to: party.output(k + 1) });
                }
                ops.push(LocalOp::SetRegister { label: out_reg.clone(), value: 0 });
                for k in 1..n {
                    ops.push(LocalOp::Prepare { state: spec.sigma_on(party, &party.catalyst(k))? });
                }
                ops.push(LocalOp::SetRegister { label: cat_reg.clone(), value: 0 });
            } else {
                ops.push(LocalOp::Discard { label: party.catalyst(i + 1) });
                ops.push(LocalOp::Move { from: party.input(), to: party.catalyst(i + 1) });
                ops.push(LocalOp::SetRegister { label: cat_reg.clone(), value: i + 1 });
                for k in 1..=n {
                    ops.push(LocalOp::Prepare { state: spec.sigma_on(party, &party.output(k))? });
                }
                ops.push(LocalOp::SetRegister { label: out_reg.clone(), value: 1 });
            }
            branches.push(ops);
        }
        Ok(PartyProgram { party, owned, control: party.catalyst_register(), branches })
    };
    Ok(LocalProtocol {
        alice: program(Party::Alice)?,
        bob: program(Party::Bob)?,
        output_universe: spec.global_universe(),
    })
}

struct WorkBranch {
    prob: f64,
    registers: BTreeMap<String, (SubsystemLabel, usize)>,
    factors: Vec<DensityMatrix>,
}

impl WorkBranch {
    fn holds(&self, name: &str) -> bool {
        self.registers.contains_key(name) || self.factors.iter().any(|f| f.label(name).is_some())
    }

    fn cross_party(&self, alice: &PartyProgram, bob: &PartyProgram) -> usize {
        self.factors
            .iter()
            .filter(|f| {
                let names = f.label_names();
                names.iter().any(|n| alice.owned.contains(*n)) && names.iter().any(|n| bob.owned.contains(*n))
            })
            .count()
    }

    fn apply(&mut self, op: &LocalOp) -> Result<()> {
        match op {
            LocalOp::Move { from, to } => {
                if self.holds(to) {
                    return Err(Error::LabelCollision(to.clone()));
                }
                let idx = self
                    .factors
                    .iter()
                    .position(|f| f.label(from).is_some())
                    .ok_or_else(|| Error::UnknownLabel(from.clone()))?;
                self.factors[idx] = self.factors[idx].relabel(&[(from.as_str(), to.as_str())])?;
            }
            LocalOp::Discard { label } => {
                let idx = self
                    .factors
                    .iter()
                    .position(|f| f.label(label).is_some())
                    .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
                let rest: Vec<&str> =
                    self.factors[idx].label_names().into_iter().filter(|n| n != label).collect();
                if rest.is_empty() {
                    self.factors.remove(idx);
                } else {
                    self.factors[idx] = self.factors[idx].partial_trace(&rest)?;
                }
            }
            LocalOp::Prepare { state } => {
                for n in state.label_names() {
                    if self.holds(n) {
                        return Err(Error::LabelCollision(n.to_string()));
                    }
                }
                self.factors.push(state.clone());
            }
            LocalOp::SetRegister { label, value } => {
                if *value >= label.dim || !label.is_register() {
                    return Err(Error::RegisterError(format!("cannot set `{}` to {value}", label.name)));
                }
                self.registers.insert(label.name.clone(), (label.clone(), *value));
            }
        }
        Ok(())
    }
}

/// Execute `protocol` on `input`. Each party reads only its own control
/// register and may only touch labels it owns; factors spanning both parties
/// can never be created.
pub fn run_protocol(
    input: &BranchedCqState,
    protocol: &LocalProtocol,
) -> Result<(BranchedCqState, LocalityAudit)> {
    for program in [&protocol.alice, &protocol.bob] {
        if !program.owned.contains(&program.control) {
            return Err(Error::PartitionError(format!(
                "{:?} reads `{}`, which it does not own",
                program.party, program.control
            )));
        }
        for ops in &program.branches {
            for op in ops {
                if let Some(l) = op.touched().into_iter().find(|l| !program.owned.contains(*l)) {
                    return Err(Error::PartitionError(format!(
                        "{:?} operation touches `{l}` outside its own subsystems",
                        program.party
                    )));
                }
            }
        }
    }
    if protocol.alice.owned.intersection(&protocol.bob.owned).next().is_some() {
        return Err(Error::PartitionError("parties own overlapping labels".into()));
    }
    let mut audit = LocalityAudit { branches: 0, operations: 0, cross_party_factors_before: 0, cross_party_factors_after: 0 };
    let mut out = Vec::with_capacity(input.branches.len());
    for b in &input.branches {
        let mut work = WorkBranch {
            prob: b.prob,
            registers: b
                .registers
                .iter()
                .map(|(k, v)| (k.clone(), (input.labels[input.position(k)].clone(), *v)))
                .collect(),
            factors: b.factors.clone(),
        };
        let before = work.cross_party(&protocol.alice, &protocol.bob);
        let read = |p: &PartyProgram| -> Result<usize> {
            b.registers
                .get(&p.control)
                .copied()
                .ok_or_else(|| Error::RegisterError(format!("missing control register `{}`", p.control)))
        };
        let (va, vb) = (read(&protocol.alice)?, read(&protocol.bob)?);
        let ops_a = protocol.alice.branches.get(va).ok_or_else(|| Error::RegisterError(format!("no branch for value {va}")))?;
        let ops_b = protocol.bob.branches.get(vb).ok_or_else(|| Error::RegisterError(format!("no branch for value {vb}")))?;
        for op in ops_a.iter().chain(ops_b) {
            work.apply(op)?;
            audit.operations += 1;
        }
        let after = work.cross_party(&protocol.alice, &protocol.bob);
        if after > before {
            return Err(Error::PartitionError(format!(
                "cross-party factors grew from {before} to {after}"
            )));
        }
        audit.branches += 1;
        audit.cross_party_factors_before = audit.cross_party_factors_before.max(before);
        audit.cross_party_factors_after = audit.cross_party_factors_after.max(after);
        out.push(Branch {
            prob: work.prob,
            registers: work.registers.into_iter().map(|(k, (_, v))| (k, v)).collect(),
            factors: work.factors,
        });
    }
    Ok((BranchedCqState::new(protocol.output_universe.clone(), out)?, audit))
}

/// Run the catalytic transformation on `rho ⊗ omega`.
pub fn catalytic_transform(spec: &CatalystSpec) -> Result<BranchedCqState> {
    Ok(catalytic_transform_audited(spec)?.0)
}

pub fn catalytic_transform_audited(spec: &CatalystSpec) -> Result<(BranchedCqState, LocalityAudit)> {
    let input = BranchedCqState::from_state(spec.rho.clone())?.tensor(&build_catalyst(spec)?)?;
    run_protocol(&input, &catalytic_protocol(spec)?)
}

pub fn system_marginal(global: &BranchedCqState, spec: &CatalystSpec) -> Result<BranchedCqState> {
    let names = spec.system_names();
    global.marginal(&names.iter().map(String::as_str).collect::<Vec<_>>())
}

pub fn catalyst_marginal(global: &BranchedCqState, spec: &CatalystSpec) -> Result<BranchedCqState> {
    let names = spec.catalyst_names();
    global.marginal(&names.iter().map(String::as_str).collect::<Vec<_>>())
}

/// A party's part of the protocol as an explicit channel from
/// `[P, CP1.., CRP]` to `[P1..Pn, RP, CP1.., CRP]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyChannel {
    pub party: Party,
    pub in_labels: Vec<SubsystemLabel>,
    pub out_labels: Vec<SubsystemLabel>,
    pub kraus: Vec<CMat>,
}

impl PartyChannel {
    /// `max |sum K†K - I|`.
    pub fn completeness_residue(&self) -> f64 {
        let d = total_dim(&self.in_labels);
        let mut sum = linalg::zeros(d, d);
        for k in &self.kraus {
            sum += k.adjoint() * k;
        }
        linalg::max_abs_diff(&sum, &linalg::identity(d))
    }
}

/// Explicit Kraus operators of `party`'s catalytic step, built directly from
/// basis maps: moves are permutations, discards are basis projections, and
/// preparations use the spectral decomposition of the local `sigma`.
pub fn party_channel(spec: &CatalystSpec, party: Party) -> Result<PartyChannel> {
    let n = spec.n;
    let d = spec.local_dim(party);
    let mut in_labels = vec![SubsystemLabel::quantum(party.input(), d)];
    in_labels.extend(spec.catalyst_labels(party));
    let mut out_labels = spec.output_labels(party);
    out_labels.extend(spec.catalyst_labels(party));
    let in_radix = MixedRadix::new(&in_labels.iter().map(|l| l.dim).collect::<Vec<_>>());
    let out_radix = MixedRadix::new(&out_labels.iter().map(|l| l.dim).collect::<Vec<_>>());
    let (values, vectors) = linalg::eigh(spec.sigma(party).data());
    let weights: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let tuples = |len: usize| MixedRadix::new(&vec![d; len]);
    let mut kraus = Vec::new();

    // Catalyst register reads n-1: hand every copy to the outputs, refill the catalyst.
    let eig = tuples(n - 1);
    for m_flat in 0..eig.size() {
        let m = eig.unflatten(m_flat);
        let w: f64 = m.iter().map(|&j| weights[j]).product();
        if w == 0.0 {
            continue;
        }
        let mut k = linalg::zeros(out_radix.size(), in_radix.size());
        let slots = tuples(n - 1);
        for a_flat in 0..in_radix.size() {
            let digits = in_radix.unflatten(a_flat);
            if digits[n] != n - 1 {
                continue;
            }
            for t_flat in 0..slots.size() {
                let t = slots.unflatten(t_flat);
                let mut amp = linalg::c(w.sqrt(), 0.0);
                for (slot, &tk) in t.iter().enumerate() {
                    amp *= vectors[(tk, m[slot])];
                }
                let mut out = Vec::with_capacity(2 * n + 1);
                out.extend_from_slice(&digits[..n]);
                out.push(0);
                out.extend_from_slice(&t);
                out.push(0);
                k[(out_radix.flatten(&out), a_flat)] += amp;
            }
        }
        kraus.push(k);
    }

    // Catalyst register reads i <= n-2: park the input in slot i+1, output sigma^{⊗n}.
    let eig = tuples(n);
    for i in 0..n - 1 {
        for j in 0..d {
            for m_flat in 0..eig.size() {
                let m = eig.unflatten(m_flat);
                let w: f64 = m.iter().map(|&q| weights[q]).product();
                if w == 0.0 {
                    continue;
                }
                let mut k = linalg::zeros(out_radix.size(), in_radix.size());
                for a_flat in 0..in_radix.size() {
                    let digits = in_radix.unflatten(a_flat);
                    if digits[n] != i || digits[1 + i] != j {
                        continue;
                    }
                    let mut cat: Vec<usize> = digits[1..n].to_vec();
                    cat[i] = digits[0];
                    for t_flat in 0..eig.size() {
                        let t = eig.unflatten(t_flat);
                        let mut amp = linalg::c(w.sqrt(), 0.0);
                        for (slot, &tk) in t.iter().enumerate() {
                            amp *= vectors[(tk, m[slot])];
                        }
                        let mut out = t.clone();
                        out.push(1);
                        out.extend_from_slice(&cat);
                        out.push(i + 1);
                        k[(out_radix.flatten(&out), a_flat)] += amp;
                    }
                }
                kraus.push(k);
            }
        }
    }
    Ok(PartyChannel { party, in_labels, out_labels, kraus })
}

/// Which part of the protocol output to reconstruct densely.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseOutput {
    System,
    Catalyst,
    Global,
}

/// Independent dense evaluation of the protocol: both party channels applied
/// to the dense `rho ⊗ omega` as superoperators, keeping the requested part.
pub fn dense_protocol_output(spec: &CatalystSpec, which: DenseOutput, cap: usize) -> Result<DensityMatrix> {
    let ca = party_channel(spec, Party::Alice)?;
    let cb = party_channel(spec, Party::Bob)?;
    let omega = build_catalyst(spec)?.to_dense_with_cap(cap)?;
    let joint = spec.rho.tensor_with_cap(&omega, cap)?;
    let in_order: Vec<String> =
        ca.in_labels.iter().chain(&cb.in_labels).map(|l| l.name.clone()).collect();
    let x = joint.swap_subsystems(&in_order.iter().map(String::as_str).collect::<Vec<_>>())?;
    let d_in_a = total_dim(&ca.in_labels);
    let d_in_b = total_dim(&cb.in_labels);
    let d_sys_a = total_dim(&spec.output_labels(Party::Alice));
    let d_sys_b = total_dim(&spec.output_labels(Party::Bob));
    let d_cat_a = total_dim(&spec.catalyst_labels(Party::Alice));
    let d_cat_b = total_dim(&spec.catalyst_labels(Party::Bob));
    let (sa, sb, keep_a, keep_b, labels_a, labels_b) = match which {
        DenseOutput::System => (
            linalg::superoperator(&ca.kraus, d_in_a, d_sys_a, d_cat_a, true),
            linalg::superoperator(&cb.kraus, d_in_b, d_sys_b, d_cat_b, true),
            d_sys_a,
            d_sys_b,
            spec.output_labels(Party::Alice),
            spec.output_labels(Party::Bob),
        ),
        DenseOutput::Catalyst => (
            linalg::superoperator(&ca.kraus, d_in_a, d_sys_a, d_cat_a, false),
            linalg::superoperator(&cb.kraus, d_in_b, d_sys_b, d_cat_b, false),
            d_cat_a,
            d_cat_b,
            spec.catalyst_labels(Party::Alice),
            spec.catalyst_labels(Party::Bob),
        ),
        DenseOutput::Global => (
            linalg::superoperator(&ca.kraus, d_in_a, d_sys_a * d_cat_a, 1, true),
            linalg::superoperator(&cb.kraus, d_in_b, d_sys_b * d_cat_b, 1, true),
            d_sys_a * d_cat_a,
            d_sys_b * d_cat_b,
            ca.out_labels.clone(),
            cb.out_labels.clone(),
        ),
    };
    let dim = keep_a * keep_b;
    if dim > cap {
        return Err(Error::TooLargeToMaterialize { dim, cap });
    }
    let out = linalg::apply_local_superoperators(x.data(), (d_in_a, d_in_b), (&sa, keep_a), (&sb, keep_b));
    let mut labels = labels_a;
    labels.extend(labels_b);
    let state = DensityMatrix::new_unvalidated(labels, out)?;
    match which {
        DenseOutput::Global => {
            let names: Vec<String> = spec.global_universe().into_iter().map(|l| l.name).collect();
            state.swap_subsystems(&names.iter().map(String::as_str).collect::<Vec<_>>())
        }
        _ => Ok(state),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::SubsystemLabel as L;
    use crate::rng::SeedStream;
    use crate::states;
    use proptest::prelude::*;

    fn random_spec(seed: u64, n: usize) -> CatalystSpec {
        let mut rng = SeedStream::new(seed).fork("catalysis-test").rng(0);
        let rho = states::random_state(vec![L::quantum("A", 2), L::quantum("B", 2)], &mut rng);
        let sa = states::random_state(vec![L::quantum("A", 2)], &mut rng);
        let sb = states::random_state(vec![L::quantum("B", 2)], &mut rng);
        CatalystSpec::new(rho, sa, sb, n).unwrap()
    }

    #[test]
    fn spec_validation() {
        let rho = states::max_entangled(2).unwrap();
        assert!(CatalystSpec::with_default_sigma(rho.clone(), 1).is_err());
        let wrong = DensityMatrix::basis(vec![L::quantum("X", 3)], 0).unwrap();
        let ok = DensityMatrix::basis(vec![L::quantum("Y", 2)], 0).unwrap();
        assert!(matches!(CatalystSpec::new(rho.clone(), wrong, ok.clone(), 2), Err(Error::DimensionError(_))));
        let relabeled = rho.relabel(&[("A", "left"), ("B", "right")]).unwrap();
        let spec = CatalystSpec::new(relabeled, ok.clone(), ok, 2).unwrap();
        assert_eq!(spec.rho().label_names(), vec!["A", "B"]);
    }

    #[test]
    fn two_copy_catalyst_matches_closed_form() {
        let spec = random_spec(1, 2);
        let omega = build_catalyst(&spec).unwrap();
        assert_eq!(omega.label_names(), vec!["CA1", "CRA", "CB1", "CRB"]);
        // (1/2) sigma ⊗ [00] + (1/2) rho ⊗ [11], assembled densely by hand.
        let reg = |v: usize| DensityMatrix::basis(vec![L::register("CRA", 2)], v).unwrap()
            .tensor(&DensityMatrix::basis(vec![L::register("CRB", 2)], v).unwrap()).unwrap();
        let sigma = spec.sigma(Party::Alice).relabel(&[("A", "CA1")]).unwrap()
            .tensor(&spec.sigma(Party::Bob).relabel(&[("B", "CB1")]).unwrap()).unwrap();
        let rho = spec.rho().relabel(&[("A", "CA1"), ("B", "CB1")]).unwrap();
        let order = ["CA1", "CRA", "CB1", "CRB"];
        let t0 = sigma.tensor(&reg(0)).unwrap().swap_subsystems(&order).unwrap();
        let t1 = rho.tensor(&reg(1)).unwrap().swap_subsystems(&order).unwrap();
        let expected = DensityMatrix::mixture(&[(0.5, &t0), (0.5, &t1)]).unwrap();
        let dense = omega.to_dense().unwrap();
        assert_eq!(dense.dim(), 16);
        assert!(dense.validate().passed);
        assert!(dense.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn catalyst_branches_are_uniform_and_count_rho_copies() {
        for n in 2..=6 {
            let spec = random_spec(2, n);
            let omega = build_catalyst(&spec).unwrap();
            assert_eq!(omega.branches().len(), n);
            for (i, b) in omega.branches().iter().enumerate() {
                assert_eq!(b.prob, 1.0 / n as f64);
                assert_eq!(b.registers["CRA"], i);
                assert_eq!(b.registers["CRB"], i);
                let pairs = b.factors.iter().filter(|f| f.labels().len() == 2).count();
                assert_eq!(pairs, i);
            }
            assert!((omega.total_probability() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_copy_transform_matches_closed_form() {
        let spec = random_spec(3, 2);
        let (global, audit) = catalytic_transform_audited(&spec).unwrap();
        assert_eq!(audit.branches, 2);
        assert!(audit.cross_party_factors_after <= audit.cross_party_factors_before);
        let names = global.label_names();
        assert_eq!(names, vec!["A1", "A2", "RA", "B1", "B2", "RB", "CA1", "CRA", "CB1", "CRB"]);
        // Branch with catalyst register 1 becomes rho⊗rho ⊗ [00] ⊗ sigma ⊗ [00].
        let ideal = BranchedCqState::new(
            spec.global_universe(),
            vec![
                Branch {
                    prob: 0.5,
                    registers: registers(&[("RA".into(), 0), ("RB".into(), 0), ("CRA".into(), 0), ("CRB".into(), 0)]),
                    factors: {
                        let mut f = spec.pair_factors(2, 2, Party::output).unwrap();
                        f.extend(spec.pair_factors(1, 0, Party::catalyst).unwrap());
                        f
                    },
                },
                Branch {
                    prob: 0.5,
                    registers: registers(&[("RA".into(), 1), ("RB".into(), 1), ("CRA".into(), 1), ("CRB".into(), 1)]),
                    factors: {
                        let mut f = spec.pair_factors(2, 0, Party::output).unwrap();
                        f.extend(spec.pair_factors(1, 1, Party::catalyst).unwrap());
                        f
                    },
                },
            ],
        )
        .unwrap();
        let cmp = global.compare(&ideal, 0.0).unwrap();
        assert!(cmp.passed, "{cmp:?}");
    }

    #[test]
    fn marginals_match_closed_forms() {
        for n in 2..=5 {
            let spec = random_spec(10 + n as u64, n);
            let global = catalytic_transform(&spec).unwrap();
            let cat = catalyst_marginal(&global, &spec).unwrap();
            let cmp = cat.compare(&build_catalyst(&spec).unwrap(), 1e-12).unwrap();
            assert!(cmp.passed, "n={n}: {cmp:?}");
            let sys = system_marginal(&global, &spec).unwrap();
            let cmp = sys.compare(&expected_system_marginal(&spec).unwrap(), 1e-12).unwrap();
            assert!(cmp.passed, "n={n}: {cmp:?}");
            assert_eq!(sys.branches().len(), 2);
            assert!((sys.branches()[0].prob - 1.0 / n as f64).abs() < 1e-15);
            assert!((sys.branches()[1].prob - (n - 1) as f64 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn perturbed_probability_breaks_comparison() {
        let spec = random_spec(4, 3);
        let omega = build_catalyst(&spec).unwrap();
        let mut branches = omega.branches().to_vec();
        branches[0].prob += 1e-3;
        branches[1].prob -= 1e-3;
        let perturbed = BranchedCqState::new(omega.labels().to_vec(), branches).unwrap();
        let cmp = perturbed.compare(&omega, 1e-12).unwrap();
        assert!(cmp.structure_match && !cmp.passed);
        assert!((cmp.max_prob_diff - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn degenerate_rho_equal_to_sigma() {
        let mut rng = SeedStream::new(5).rng(0);
        let sa = states::random_state(vec![L::quantum("A", 2)], &mut rng);
        let sb = states::random_state(vec![L::quantum("B", 2)], &mut rng);
        let rho = sa.tensor(&sb).unwrap();
        let spec = CatalystSpec::new(rho, sa, sb, 3).unwrap();
        let global = catalytic_transform(&spec).unwrap();
        let cat = catalyst_marginal(&global, &spec).unwrap();
        assert!(cat.compare(&build_catalyst(&spec).unwrap(), 1e-12).unwrap().passed);
        let sys = system_marginal(&global, &spec).unwrap();
        let quantum = |b: &Branch| sys.dense_quantum_part(&b.factors).unwrap();
        let (q0, q1) = (quantum(&sys.branches()[0]), quantum(&sys.branches()[1]));
        assert!(q0.max_abs_diff(&q1).unwrap() < 1e-12);
    }

    #[test]
    fn dense_representation_agrees_with_branches() {
        let spec = random_spec(6, 2);
        let global = catalytic_transform(&spec).unwrap();
        let dense = global.to_dense().unwrap();
        assert_eq!(dense.dim(), 1024);
        assert!(dense.validate().passed);
        let sys_names = spec.system_names();
        let keep: Vec<&str> = sys_names.iter().map(String::as_str).collect();
        let traced = dense.partial_trace(&keep).unwrap();
        let sys = system_marginal(&global, &spec).unwrap().to_dense().unwrap();
        assert!(traced.max_abs_diff(&sys).unwrap() < 1e-12);
        let lazy = global.lazy_partial_trace(&keep, 4096).unwrap();
        assert!(lazy.max_abs_diff(&sys).unwrap() < 1e-12);
        for (r, c) in [(0, 0), (3, 700), (1000, 12), (513, 513)] {
            assert!((global.dense_entry(r, c) - dense.data()[(r, c)]).norm() < 1e-15);
        }
    }

    #[test]
    fn kraus_channels_are_trace_preserving() {
        for n in 2..=3 {
            let spec = random_spec(7, n);
            for party in [Party::Alice, Party::Bob] {
                let ch = party_channel(&spec, party).unwrap();
                assert!(ch.completeness_residue() < 1e-12);
            }
        }
    }

    #[test]
    fn kraus_protocol_reproduces_global_state() {
        let spec = random_spec(8, 2);
        let global = catalytic_transform(&spec).unwrap().to_dense().unwrap();
        let dense = dense_protocol_output(&spec, DenseOutput::Global, 4096).unwrap();
        assert_eq!(dense.labels(), global.labels());
        assert!(dense.max_abs_diff(&global).unwrap() < 1e-12);
    }

    #[test]
    fn kraus_protocol_marginals_for_three_copies() {
        let spec = random_spec(9, 3);
        let sys = dense_protocol_output(&spec, DenseOutput::System, 4096).unwrap();
        let expected = expected_system_marginal(&spec).unwrap().to_dense().unwrap();
        assert!(sys.max_abs_diff(&expected).unwrap() < 1e-12);
        let cat = dense_protocol_output(&spec, DenseOutput::Catalyst, 4096).unwrap();
        let omega = build_catalyst(&spec).unwrap().to_dense().unwrap();
        assert!(cat.max_abs_diff(&omega).unwrap() < 1e-12);
    }

    #[test]
    fn catalyst_ends_up_correlated_with_the_system() {
        let mut rng = SeedStream::new(11).rng(0);
        let rho = states::max_entangled(2).unwrap();
        let sa = states::random_state(vec![L::quantum("A", 2)], &mut rng);
        let sb = states::random_state(vec![L::quantum("B", 2)], &mut rng);
        let spec = CatalystSpec::new(rho, sa, sb, 2).unwrap();
        let global = catalytic_transform(&spec).unwrap();
        let sys = system_marginal(&global, &spec).unwrap().to_dense().unwrap();
        let cat = catalyst_marginal(&global, &spec).unwrap().to_dense().unwrap();
        let names: Vec<String> = spec.global_universe().into_iter().map(|l| l.name).collect();
        let product = sys.tensor(&cat).unwrap().swap_subsystems(&names.iter().map(String::as_str).collect::<Vec<_>>()).unwrap();
        let diff = global.to_dense().unwrap().max_abs_diff(&product).unwrap();
        assert!(diff > 1e-6, "{diff}");
    }

    #[test]
    fn to_dense_respects_cap_and_single_factor() {
        let spec = random_spec(12, 4);
        let global = catalytic_transform(&spec).unwrap();
        assert!(matches!(global.to_dense(), Err(Error::TooLargeToMaterialize { .. })));
        let rho = states::max_entangled(2).unwrap();
        let single = BranchedCqState::from_state(rho.clone()).unwrap();
        assert_eq!(single.to_dense().unwrap(), rho);
    }

    #[test]
    fn non_local_protocols_are_rejected() {
        let spec = random_spec(13, 2);
        let mut protocol = catalytic_protocol(&spec).unwrap();
        protocol.alice.branches[0].push(LocalOp::Discard { label: "CB1".into() });
        let input = BranchedCqState::from_state(spec.rho().clone())
            .unwrap()
            .tensor(&build_catalyst(&spec).unwrap())
            .unwrap();
        assert!(matches!(run_protocol(&input, &protocol), Err(Error::PartitionError(_))));
        let mut protocol = catalytic_protocol(&spec).unwrap();
        protocol.bob.control = "CRA".into();
        assert!(matches!(run_protocol(&input, &protocol), Err(Error::PartitionError(_))));
    }

    #[test]
    fn json_round_trip_and_validation() {
        let spec = random_spec(14, 3);
        let omega = build_catalyst(&spec).unwrap();
        let text = serde_json::to_string(&omega).unwrap();
        let back: BranchedCqState = serde_json::from_str(&text).unwrap();
        let cmp = back.compare(&omega, 0.0).unwrap();
        assert!(cmp.passed, "{cmp:?}");
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(value["branches"][0]["registers"]["CRA"].is_u64());
        let mut broken = value.clone();
        broken["branches"][0]["registers"]["CRA"] = serde_json::json!(7);
        assert!(serde_json::from_value::<BranchedCqState>(broken).is_err());
        let mut broken = value;
        broken["branches"][0]["prob"] = serde_json::json!(0.9);
        assert!(serde_json::from_value::<BranchedCqState>(broken).is_err());
    }

    #[test]
    fn merging_differing_groups_falls_back_to_dense() {
        let mut rng = SeedStream::new(15).rng(0);
        let labels = vec![L::quantum("X", 2), L::quantum("Y", 2)];
        let part = |name: &str, rng: &mut rand_chacha::ChaCha8Rng| states::random_state(vec![L::quantum(name, 2)], rng);
        let b1 = Branch { prob: 0.4, registers: BTreeMap::new(), factors: vec![part("X", &mut rng), part("Y", &mut rng)] };
        let b2 = Branch { prob: 0.6, registers: BTreeMap::new(), factors: vec![part("Y", &mut rng), part("X", &mut rng)] };
        let state = BranchedCqState::new(labels, vec![b1, b2]).unwrap();
        let canon = state.canonical().unwrap();
        assert_eq!(canon.branches().len(), 1);
        assert_eq!(canon.branches()[0].factors.len(), 1);
        assert!(canon.to_dense().unwrap().max_abs_diff(&state.to_dense().unwrap()).unwrap() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn catalyticity_and_output_law(seed in any::<u64>(), n in 2usize..5) {
            let spec = random_spec(seed, n);
            let (global, audit) = catalytic_transform_audited(&spec).unwrap();
            prop_assert!((global.total_probability() - 1.0).abs() < 1e-12);
            prop_assert!(audit.cross_party_factors_after <= audit.cross_party_factors_before);
            let cat = catalyst_marginal(&global, &spec).unwrap();
            prop_assert!(cat.compare(&build_catalyst(&spec).unwrap(), 1e-12).unwrap().passed);
            let sys = system_marginal(&global, &spec).unwrap();
            prop_assert!(sys.compare(&expected_system_marginal(&spec).unwrap(), 1e-12).unwrap().passed);
        }
    }
}
