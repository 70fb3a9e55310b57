//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Every exported function returns a JSON string. The plain Rust versions
//! (`*_report`) return `serde_json::Value` and are what the tests call.

use bcl_core::bell::{self, BellFunctional};
use bcl_core::catalysis::{self, CatalystSpec};
use bcl_core::instruments::{self, scenarios, InputDistribution};
use bcl_core::states::{self, IsotropicSpec};
use bcl_core::{DensityMatrix, SubsystemLabel};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_COPIES: usize = 4;
const MAX_STEPS: usize = 200;

/// Singlet fraction (and for `d = 2` the optimal CHSH value) of the
/// isotropic family at `steps + 1` evenly spaced visibilities.
pub fn isotropic_profile_report(d: usize, steps: usize) -> bcl_core::Result<Value> {
    let steps = steps.clamp(1, MAX_STEPS);
    let rows = (0..=steps)
        .map(|k| {
            let v = k as f64 / steps as f64;
            let spec = IsotropicSpec::new(d, v)?;
            let rho = states::isotropic(spec)?;
            let chsh = if d == 2 { Some(bell::chsh_two_qubit_max(&rho)?) } else { None };
            Ok(json!({
                "visibility": v,
                "singletFraction": states::singlet_fraction(&rho, 4, 0)?,
                "closedForm": spec.singlet_fraction(),
                "chsh": chsh,
            }))
        })
        .collect::<bcl_core::Result<Vec<_>>>()?;
    Ok(json!({ "d": d, "localBound": 2.0, "rows": rows }))
}

/// Runs the catalytic transformation on `n` copies of the two-qubit
/// isotropic state and scores the output with the register-conditioned
/// CHSH strategy.
pub fn catalysis_report(visibility: f64, n: usize) -> bcl_core::Result<Value> {
    if !(2..=MAX_COPIES).contains(&n) {
        return Err(bcl_core::Error::DimensionError(format!("copy number {n} outside 2..={MAX_COPIES}")));
    }
    let rho = states::isotropic(IsotropicSpec::new(2, visibility)?)?;
    let spec = CatalystSpec::with_default_sigma(rho.clone(), n)?;
    let global = catalysis::catalytic_transform(&spec)?;
    let returned = catalysis::catalyst_marginal(&global, &spec)?.compare(&catalysis::build_catalyst(&spec)?, 1e-12)?;

    let f = BellFunctional::chsh();
    let (local_bound, argmax) = bell::local_bound(&f)?;
    let (wa, wb) = bell::chsh_phi_plus_measurements(SubsystemLabel::quantum("A", 2), SubsystemLabel::quantum("B", 2))?;
    let witness = bell::bell_score(&f, &bell::correlations(&rho, &wa, &wb)?)?;

    let (xa, xb) = bell::chsh_phi_plus_measurements(SubsystemLabel::quantum("A1", 2), SubsystemLabel::quantum("B1", 2))?;
    let registers = (SubsystemLabel::register("RA", 2), SubsystemLabel::register("RB", 2));
    let (ma, mb) = bell::register_conditioned_strategy(&f, &xa, &xb, &argmax, (&registers.0, &registers.1))?;
    let copy = catalysis::system_marginal(&global, &spec)?.marginal(&["A1", "RA", "B1", "RB"])?.to_dense()?;
    let score = bell::bell_score(&f, &bell::correlations(&copy, &ma, &mb)?)?;

    Ok(json!({
        "visibility": visibility,
        "n": n,
        "localBound": local_bound,
        "witness": witness,
        "delta": witness - local_bound,
        "score": score,
        "catalystReturned": returned.passed,
        "catalystResidue": returned.max_factor_diff.max(returned.max_prob_diff),
        "catalystDim": catalysis::build_catalyst(&spec)?.dim(),
    }))
}

/// Checks a named instrument scenario against the three catalyticity
/// conditions. `eps` is the catalyst tilt of the `cancellation` scenario.
pub fn instrument_report(kind: &str, eps: f64) -> bcl_core::Result<Value> {
    let phi = states::max_entangled(2)?;
    let zero = |name: &str| DensityMatrix::basis(vec![SubsystemLabel::quantum(name, 2)], 0);
    let omega = zero("CA")?.tensor(&zero("CB")?)?;
    let scenario = match kind {
        "identity" => scenarios::identity(phi, omega)?,
        "flip-on-outcome" => scenarios::flip_on_outcome(phi, omega)?,
        "cancellation" => scenarios::cancellation(phi, zero("CB")?, eps)?,
        "catalytic-chsh" => scenarios::catalytic_chsh(phi, 2)?,
        other => return Err(bcl_core::Error::Parse(format!("unknown scenario `{other}`"))),
    };
    let out = scenario.run()?;
    let uniform = InputDistribution::uniform(scenario.alice.n_inputs(), scenario.bob.n_inputs());
    let h = instruments::hierarchy(&out, &scenario.omega, &[uniform])?;
    let chsh = match out.shape() {
        (2, 2, 2, 2) => Some(bell::bell_score(&BellFunctional::chsh(), &out.correlations())?),
        _ => None,
    };
    let condition = |r: &instruments::ConditionReport| json!({ "passed": r.passed, "residue": r.worst_residue });
    Ok(json!({
        "scenario": kind,
        "c1": condition(&h.c1),
        "c2": condition(&h.c2),
        "c3": condition(&h.c3[0]),
        "consistent": h.consistent,
        "chsh": chsh,
    }))
}

fn to_js(result: bcl_core::Result<Value>) -> Result<String, JsError> {
    result.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = isotropicProfile)]
pub fn isotropic_profile(d: usize, steps: usize) -> Result<String, JsError> {
    to_js(isotropic_profile_report(d, steps))
}

#[wasm_bindgen(js_name = catalyze)]
pub fn catalyze(visibility: f64, n: usize) -> Result<String, JsError> {
    to_js(catalysis_report(visibility, n))
}

#[wasm_bindgen(js_name = checkInstruments)]
pub fn check_instruments(kind: &str, eps: f64) -> Result<String, JsError> {
    to_js(instrument_report(kind, eps))
}
