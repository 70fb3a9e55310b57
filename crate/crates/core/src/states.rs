//! State zoo and the singlet fraction.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVec};
use crate::qstate::{DensityMatrix, SubsystemLabel};
use crate::rng::SeedStream;

pub const DEFAULT_RESTARTS: usize = 16;
const ASCENT_TOL: f64 = 1e-10;
const ASCENT_MAX_ITERS: usize = 10_000;

fn bipartite_labels(d: usize) -> Vec<SubsystemLabel> {
    vec![SubsystemLabel::quantum("A", d), SubsystemLabel::quantum("B", d)]
}

/// `|phi+> = (1/sqrt d) sum_i |ii>` on labels `A`, `B`.
pub fn max_entangled(d: usize) -> Result<DensityMatrix> {
    if d < 2 {
        return Err(Error::DimensionError(format!("local dimension {d} < 2")));
    }
    let mut psi = CVec::zeros(d * d);
    let amp = 1.0 / (d as f64).sqrt();
    for i in 0..d {
        psi[i * d + i] = linalg::c(amp, 0.0);
    }
    DensityMatrix::pure(bipartite_labels(d), &psi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsotropicSpec {
    pub d: usize,
    pub visibility: f64,
}

impl IsotropicSpec {
    pub fn new(d: usize, visibility: f64) -> Result<Self> {
        if d < 2 {
            return Err(Error::DimensionError(format!("local dimension {d} < 2")));
        }
        if !(0.0..=1.0).contains(&visibility) {
            return Err(Error::InvalidState(format!("visibility {visibility} outside [0, 1]")));
        }
        Ok(Self { d, visibility })
    }

    /// Closed-form singlet fraction `V + (1 - V) / d^2`.
    pub fn singlet_fraction(&self) -> f64 {
        let d2 = (self.d * self.d) as f64;
        self.visibility + (1.0 - self.visibility) / d2
    }
}

/// `V |phi+><phi+| + (1 - V) I / d^2`.
pub fn isotropic(spec: IsotropicSpec) -> Result<DensityMatrix> {
    let phi = max_entangled(spec.d)?;
    let noise = DensityMatrix::maximally_mixed(bipartite_labels(spec.d))?;
    DensityMatrix::mixture(&[(spec.visibility, &phi), (1.0 - spec.visibility, &noise)])
}

/// Hilbert-Schmidt random mixed state: partial trace of a random pure state
/// on the doubled space. Full rank with probability one.
pub fn random_state<R: Rng + ?Sized>(labels: Vec<SubsystemLabel>, rng: &mut R) -> DensityMatrix {
    let d: usize = labels.iter().map(|l| l.dim).product();
    let g = linalg::random_ginibre(d, d, rng);
    let m = &g * g.adjoint();
    let tr = m.trace().re;
    DensityMatrix::from_parts(labels, m.unscale(tr))
}

pub fn random_pure_state<R: Rng + ?Sized>(labels: Vec<SubsystemLabel>, rng: &mut R) -> DensityMatrix {
    let d: usize = labels.iter().map(|l| l.dim).product();
    let psi = linalg::random_unit_vector(d, rng);
    DensityMatrix::from_parts(labels, linalg::outer(&psi))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingletFraction {
    pub value: f64,
    /// Overlap with `|phi+>` itself, a lower bound on `value`.
    pub phi_plus_overlap: f64,
    /// Best local unitary `U`; the optimal state is `(U ⊗ I)|phi+>`.
    #[serde(skip)]
    pub unitary: CMat,
    pub restarts: usize,
}

fn square_bipartite(rho: &DensityMatrix) -> Result<usize> {
    match rho.labels() {
        [a, b] if a.dim == b.dim => Ok(a.dim),
        [a, b] => Err(Error::DimensionError(format!(
            "singlet fraction needs a d⊗d state, got {}⊗{}",
            a.dim, b.dim
        ))),
        other => Err(Error::DimensionError(format!(
            "singlet fraction needs two subsystems, got {}",
            other.len()
        ))),
    }
}

/// `<phi_U| rho |phi_U>` with `|phi_U> = (U ⊗ I)|phi+>`.
fn overlap(rho: &CMat, u: &CMat, d: usize) -> (f64, CMat) {
    // (U ⊗ I)|phi+> has amplitude U[j, i] / sqrt(d) on |j, i>.
    let v = CVec::from_fn(d * d, |k, _| u[(k / d, k % d)]);
    let rv = rho * &v;
    let value = v.dotc(&rv).re / d as f64;
    let grad = CMat::from_fn(d, d, |j, i| rv[j * d + i]);
    (value, grad)
}

/// Variational singlet fraction with polar-decomposition ascent over `U`.
///
/// The overlap is a PSD quadratic form in `U`, so replacing `U` by the
/// unitary polar factor of the gradient never decreases it. Restart 0 starts
/// from `U = I`; the others from Haar-random unitaries.
pub fn singlet_fraction_detailed(
    rho: &DensityMatrix,
    restarts: usize,
    seed: u64,
) -> Result<SingletFraction> {
    let d = square_bipartite(rho)?;
    let stream = SeedStream::new(seed).fork("singlet-fraction");
    let data = rho.data();
    let (phi_plus_overlap, _) = overlap(data, &linalg::identity(d), d);
    let mut best: Option<(f64, CMat)> = None;
    for r in 0..restarts.max(1) {
        let mut u = if r == 0 {
            linalg::identity(d)
        } else {
            linalg::random_unitary(d, &mut stream.rng(r as u64))
        };
        let (mut value, mut grad) = overlap(data, &u, d);
        for _ in 0..ASCENT_MAX_ITERS {
            let next = linalg::polar_unitary(&grad);
            let (v_next, g_next) = overlap(data, &next, d);
            if v_next < value {
                break;
            }
            let gain = v_next - value;
            u = next;
            value = v_next;
            grad = g_next;
            if gain < ASCENT_TOL {
                break;
            }
        }
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, u));
        }
    }
    let (value, unitary) = best.expect("at least one restart");
    Ok(SingletFraction { value, phi_plus_overlap, unitary, restarts: restarts.max(1) })
}

pub fn singlet_fraction(rho: &DensityMatrix, restarts: usize, seed: u64) -> Result<f64> {
    Ok(singlet_fraction_detailed(rho, restarts, seed)?.value)
}

/// True iff the singlet fraction exceeds `1/d`, the many-copy (and therefore
/// catalytic) activation criterion for `d⊗d` states.
pub fn singlet_fraction_threshold(rho: &DensityMatrix) -> Result<bool> {
    let d = square_bipartite(rho)?;
    let f = singlet_fraction(rho, DEFAULT_RESTARTS, 0)?;
    Ok(f > 1.0 / d as f64 + 1e-9)
}

/// Parse a named state: `phi+:d`, `isotropic:d:V`, or `file:path.json`.
pub fn parse_state_spec(spec: &str) -> Result<DensityMatrix> {
    let bad = |msg: &str| Error::Parse(format!("state spec `{spec}`: {msg}"));
    let parse_d = |s: &str| s.parse::<usize>().map_err(|_| bad("dimension is not an integer"));
    let mut parts = spec.splitn(2, ':');
    let kind = parts.next().unwrap_or_default();
    let rest = parts.next().ok_or_else(|| bad("expected `kind:arguments`"))?;
    match kind {
        "phi+" => max_entangled(parse_d(rest)?),
        "isotropic" => {
            let (d, v) = rest.split_once(':').ok_or_else(|| bad("expected isotropic:d:V"))?;
            let v: f64 = v.parse().map_err(|_| bad("visibility is not a number"))?;
            isotropic(IsotropicSpec::new(parse_d(d)?, v)?)
        }
        "file" => read_state(Path::new(rest)),
        _ => Err(bad("unknown kind (expected phi+, isotropic or file)")),
    }
}

pub fn read_state(path: &Path) -> Result<DensityMatrix> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::EXACT_TOL;

    #[test]
    fn phi_plus_properties() {
        let phi = max_entangled(2).unwrap();
        assert!((phi.purity() - 1.0).abs() < EXACT_TOL);
        let m = phi.partial_trace(&["A"]).unwrap();
        assert!(linalg::max_abs_diff(m.data(), &linalg::identity(2).unscale(2.0)) < EXACT_TOL);
        assert!((singlet_fraction(&phi, 4, 0).unwrap() - 1.0).abs() < 1e-9);
        assert!(matches!(max_entangled(1), Err(Error::DimensionError(_))));
    }

    #[test]
    fn isotropic_endpoints_and_spectrum() {
        let zero = isotropic(IsotropicSpec::new(3, 0.0).unwrap()).unwrap();
        assert!(linalg::max_abs_diff(zero.data(), &linalg::identity(9).unscale(9.0)) < EXACT_TOL);
        let one = isotropic(IsotropicSpec::new(2, 1.0).unwrap()).unwrap();
        assert!(one.max_abs_diff(&max_entangled(2).unwrap()).unwrap() < EXACT_TOL);
        // d = 2, V = 1/2: eigenvalues V + (1-V)/4 = 5/8 and (1-V)/4 = 1/8 (x3).
        let half = isotropic(IsotropicSpec::new(2, 0.5).unwrap()).unwrap();
        let ev = half.eigenvalues();
        let expected = [0.125, 0.125, 0.125, 0.625];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < EXACT_TOL);
        }
        assert!(half.validate().passed);
    }

    #[test]
    fn isotropic_rejects_bad_visibility() {
        assert!(IsotropicSpec::new(2, 1.5).is_err());
        assert!(IsotropicSpec::new(1, 0.5).is_err());
    }

    #[test]
    fn singlet_fraction_corollary_values() {
        let f = |v: f64| {
            singlet_fraction(&isotropic(IsotropicSpec::new(2, v).unwrap()).unwrap(), 16, 0)
                .unwrap()
        };
        assert!((f(0.5) - 0.625).abs() < 1e-6);
        assert!((f(1.0 / 3.0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn singlet_fraction_finds_rotated_maximally_entangled_state() {
        // (U ⊗ I)|phi+> for a random U has fraction 1, but a small overlap with phi+.
        let mut rng = SeedStream::new(5).rng(0);
        let u = linalg::random_unitary(3, &mut rng);
        let phi = max_entangled(3).unwrap();
        let big_u = linalg::kron(&u, &linalg::identity(3));
        let rotated =
            DensityMatrix::new(phi.labels().to_vec(), &big_u * phi.data() * big_u.adjoint()).unwrap();
        let sf = singlet_fraction_detailed(&rotated, 16, 1).unwrap();
        assert!(sf.phi_plus_overlap < 0.9);
        assert!((sf.value - 1.0).abs() < 1e-6, "{}", sf.value);
    }

    #[test]
    fn singlet_fraction_bounds_phi_plus_overlap_and_symmetry() {
        for k in 0..5 {
            let mut rng = SeedStream::new(6).rng(k);
            let rho = random_state(bipartite_labels(2), &mut rng);
            let sf = singlet_fraction_detailed(&rho, 16, 0).unwrap();
            assert!(sf.value >= sf.phi_plus_overlap - 1e-12);
            // Exchanging the parties maps (U ⊗ I)|phi+> to (I ⊗ U)|phi+> = (U^T ⊗ I)|phi+>.
            let swapped = rho
                .swap_subsystems(&["B", "A"])
                .unwrap()
                .relabel(&[("B", "X"), ("A", "B")])
                .unwrap()
                .relabel(&[("X", "A")])
                .unwrap();
            let g = singlet_fraction(&swapped, 16, 0).unwrap();
            assert!((g - sf.value).abs() < 1e-6);
        }
    }

    #[test]
    fn singlet_fraction_needs_square_bipartition() {
        let labels = vec![SubsystemLabel::quantum("A", 2), SubsystemLabel::quantum("B", 3)];
        let rho = DensityMatrix::maximally_mixed(labels).unwrap();
        assert!(matches!(singlet_fraction(&rho, 1, 0), Err(Error::DimensionError(_))));
    }

    #[test]
    fn threshold_examples() {
        let mixed = DensityMatrix::maximally_mixed(bipartite_labels(2)).unwrap();
        assert!(!singlet_fraction_threshold(&mixed).unwrap());
        assert!(singlet_fraction_threshold(&max_entangled(2).unwrap()).unwrap());
        let iso = isotropic(IsotropicSpec::new(2, 0.4).unwrap()).unwrap();
        assert!(singlet_fraction_threshold(&iso).unwrap());
        let boundary = isotropic(IsotropicSpec::new(2, 1.0 / 3.0).unwrap()).unwrap();
        assert!(!singlet_fraction_threshold(&boundary).unwrap());
    }

    #[test]
    fn parse_named_states() {
        let phi = parse_state_spec("phi+:3").unwrap();
        assert_eq!(phi.dim(), 9);
        let iso = parse_state_spec("isotropic:2:0.8").unwrap();
        assert!((iso.purity() - (0.8f64.powi(2) * 0.75 + 0.25)).abs() < 1e-12);
        for bad in ["phi+", "phi+:x", "isotropic:2", "isotropic:2:abc", "werner:2", "file:/nonexistent.json"] {
            assert!(parse_state_spec(bad).is_err(), "{bad}");
        }
    }
}
