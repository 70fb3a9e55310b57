//! Acceptance suite: each criterion runs at its stated tolerance and time
//! budget and prints one PASS/FAIL line.

use std::collections::BTreeMap;
use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bcl_core::bell::{self, BellFunctional, DeterministicStrategy, LhvModel, SeesawOptions};
use bcl_core::catalysis::{self, Branch, BranchedCqState, CatalystSpec, Party};
use bcl_core::instruments::{self, scenarios, InputDistribution};
use bcl_core::rng::SeedStream;
use bcl_core::states::{self, IsotropicSpec};
use bcl_core::{DensityMatrix, SubsystemLabel as L};
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn qubits(a: &str, b: &str) -> Vec<L> {
    vec![L::quantum(a, 2), L::quantum(b, 2)]
}

fn random_spec(seed: u64, n: usize) -> CatalystSpec {
    let mut rng = SeedStream::new(seed).fork("acceptance").rng(n as u64);
    let rho = states::random_state(qubits("A", "B"), &mut rng);
    let sa = states::random_state(vec![L::quantum("A", 2)], &mut rng);
    let sb = states::random_state(vec![L::quantum("B", 2)], &mut rng);
    CatalystSpec::new(rho, sa, sb, n).unwrap()
}

fn on(state: &DensityMatrix, a: &str, b: &str) -> DensityMatrix {
    state.relabel(&[("A", "\u{0}a"), ("B", "\u{0}b")]).unwrap().relabel(&[("\u{0}a", a), ("\u{0}b", b)]).unwrap()
}

fn single(state: &DensityMatrix, name: &str) -> DensityMatrix {
    let old = state.labels()[0].name.clone();
    state.relabel(&[(old.as_str(), name)]).unwrap()
}

/// `(1/n) sum_i rho^{⊗i} ⊗ sigma^{⊗(n-1-i)} ⊗ [ii]`, written out branch by branch.
fn catalyst_by_hand(spec: &CatalystSpec) -> BranchedCqState {
    let n = spec.n();
    let mut labels = Vec::new();
    for p in ["A", "B"] {
        labels.extend((1..n).map(|k| L::quantum(format!("C{p}{k}"), 2)));
        labels.push(L::register(format!("CR{p}"), n));
    }
    let branches = (0..n)
        .map(|i| {
            let mut factors = Vec::new();
            for k in 1..n {
                if k <= i {
                    factors.push(on(spec.rho(), &format!("CA{k}"), &format!("CB{k}")));
                } else {
                    factors.push(single(spec.sigma(Party::Alice), &format!("CA{k}")));
                    factors.push(single(spec.sigma(Party::Bob), &format!("CB{k}")));
                }
            }
            let registers = BTreeMap::from([("CRA".to_string(), i), ("CRB".to_string(), i)]);
            Branch { prob: 1.0 / n as f64, registers, factors }
        })
        .collect();
    BranchedCqState::new(labels, branches).unwrap()
}

fn output_law_by_hand(spec: &CatalystSpec) -> BranchedCqState {
    let n = spec.n();
    let branch = |v: usize, prob: f64| {
        let factors = (1..=n)
            .flat_map(|k| {
                let (a, b) = (format!("A{k}"), format!("B{k}"));
                if v == 0 {
                    vec![on(spec.rho(), &a, &b)]
                } else {
                    vec![single(spec.sigma(Party::Alice), &a), single(spec.sigma(Party::Bob), &b)]
                }
            })
            .collect();
        let registers = BTreeMap::from([("RA".to_string(), v), ("RB".to_string(), v)]);
        Branch { prob, registers, factors }
    };
    let p = 1.0 / n as f64;
    BranchedCqState::new(spec.system_universe(), vec![branch(0, p), branch(1, 1.0 - p)]).unwrap()
}

/// `(1/n) rho^{⊗n} ⊗ [00] + ((n-1)/n) sigma^{⊗n} ⊗ [11]` as a dense matrix on
/// `[A1..An, RA, B1..Bn, RB]`.
fn output_law_dense(spec: &CatalystSpec) -> DensityMatrix {
    let n = spec.n();
    let flag = |v: usize| {
        DensityMatrix::basis(vec![L::register("RA", 2)], v)
            .unwrap()
            .tensor(&DensityMatrix::basis(vec![L::register("RB", 2)], v).unwrap())
            .unwrap()
    };
    let mut with_rho = flag(0);
    let mut with_sigma = flag(1);
    for k in 1..=n {
        let (a, b) = (format!("A{k}"), format!("B{k}"));
        with_rho = with_rho.tensor(&on(spec.rho(), &a, &b)).unwrap();
        let sigma = single(spec.sigma(Party::Alice), &a).tensor(&single(spec.sigma(Party::Bob), &b)).unwrap();
        with_sigma = with_sigma.tensor(&sigma).unwrap();
    }
    let mut order: Vec<String> = (1..=n).map(|k| format!("A{k}")).collect();
    order.push("RA".into());
    order.extend((1..=n).map(|k| format!("B{k}")));
    order.push("RB".into());
    let order: Vec<&str> = order.iter().map(String::as_str).collect();
    let p = 1.0 / n as f64;
    DensityMatrix::mixture(&[
        (p, &with_rho.swap_subsystems(&order).unwrap()),
        (1.0 - p, &with_sigma.swap_subsystems(&order).unwrap()),
    ])
    .unwrap()
}

fn criterion_1() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        for n in [2, 3, 4] {
            let spec = random_spec(seed, n);
            let global = catalysis::catalytic_transform(&spec).map_err(|e| e.to_string())?;
            let cat = catalysis::catalyst_marginal(&global, &spec).map_err(|e| e.to_string())?;
            let cmp = cat.compare(&catalyst_by_hand(&spec), 1e-12).map_err(|e| e.to_string())?;
            ensure(cmp.structure_match, || format!("seed {seed}, n={n}: branch structure differs"))?;
            worst = worst.max(cmp.max_factor_diff).max(cmp.max_prob_diff);
            ensure(cmp.passed, || format!("seed {seed}, n={n}: residue {worst:.2e}"))?;
        }
    }
    Ok(format!("150 cases, worst residue {worst:.1e}"))
}

fn criterion_2() -> Outcome {
    let mut worst_branch: f64 = 0.0;
    let mut worst_dense: f64 = 0.0;
    let mut dense_cases = 0;
    for seed in 0..50 {
        for n in [2, 3, 4] {
            let spec = random_spec(seed, n);
            let global = catalysis::catalytic_transform(&spec).map_err(|e| e.to_string())?;
            let sys = catalysis::system_marginal(&global, &spec).map_err(|e| e.to_string())?;
            if n == 4 {
                let cmp = sys
                    .compare(&output_law_by_hand(&spec), 1e-12)
                    .map_err(|e| e.to_string())?;
                worst_branch = worst_branch.max(cmp.max_factor_diff).max(cmp.max_prob_diff);
                continue;
            }
            let want = output_law_dense(&spec);
            let got = sys.to_dense().map_err(|e| e.to_string())?;
            worst_branch = worst_branch.max(got.max_abs_diff(&want).unwrap());
            let names = spec.system_names();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            if n == 2 || seed == 0 {
                let traced = global.lazy_partial_trace(&names, 4096).map_err(|e| e.to_string())?;
                worst_dense = worst_dense.max(traced.max_abs_diff(&want).unwrap());
                if n == 2 && seed < 5 {
                    let full = global.to_dense().map_err(|e| e.to_string())?;
                    let traced = full.partial_trace(&names).map_err(|e| e.to_string())?;
                    worst_dense = worst_dense.max(traced.max_abs_diff(&want).unwrap());
                }
                dense_cases += 1;
            }
        }
    }
    ensure(worst_branch <= 1e-12 && worst_dense <= 1e-12, || {
        format!("residues: branch {worst_branch:.2e}, dense {worst_dense:.2e}")
    })?;
    Ok(format!("150 cases, {dense_cases} dense partial traces, worst {:.1e}", worst_branch.max(worst_dense)))
}

fn criterion_3() -> Outcome {
    let f = BellFunctional::chsh();
    let (_, argmax) = bell::local_bound(&f).map_err(|e| e.to_string())?;
    let (xa, xb) = bell::chsh_phi_plus_measurements(L::quantum("A", 2), L::quantum("B", 2)).unwrap();
    let (ma, mb) = bell::register_conditioned_strategy(&f, &xa, &xb, &argmax, (&L::register("RA", 2), &L::register("RB", 2)))
        .map_err(|e| e.to_string())?;
    let phi = states::max_entangled(2).unwrap();
    let sigma = DensityMatrix::basis(qubits("A", "B"), 0).unwrap();
    let flags = |v: usize| {
        DensityMatrix::basis(vec![L::register("RA", 2)], v)
            .unwrap()
            .tensor(&DensityMatrix::basis(vec![L::register("RB", 2)], v).unwrap())
            .unwrap()
    };
    let order = ["A", "RA", "B", "RB"];
    let branch = |s: &DensityMatrix, v: usize| s.tensor(&flags(v)).unwrap().swap_subsystems(&order).unwrap();
    let mut worst: f64 = 0.0;
    let mut at_half = f64::NAN;
    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let state = DensityMatrix::mixture(&[(p, &branch(&phi, 0)), (1.0 - p, &branch(&sigma, 1))]).unwrap();
        let score = bell::bell_score(&f, &bell::correlations(&state, &ma, &mb).unwrap()).unwrap();
        let expected = 2.0 + p * (2.0 * SQRT_2 - 2.0);
        worst = worst.max((score - expected).abs());
        if p == 0.5 {
            at_half = score;
        }
    }
    ensure(worst <= 1e-9, || format!("worst deviation {worst:.2e}"))?;
    ensure((at_half - (1.0 + SQRT_2)).abs() <= 1e-9, || format!("p=1/2 gives {at_half}"))?;
    Ok(format!("worst deviation {worst:.1e}, S(1/2) = {at_half:.5}"))
}

fn criterion_4() -> Outcome {
    let f = BellFunctional::chsh();
    let (bound, _) = bell::local_bound(&f).map_err(|e| e.to_string())?;
    ensure(bound == 2.0, || format!("enumerated bound {bound}"))?;
    let mut by_hand = f64::NEG_INFINITY;
    for code in 0..16u32 {
        let out = |i: u32| if code >> i & 1 == 0 { 1.0 } else { -1.0 };
        let (a0, a1, b0, b1) = (out(0), out(1), out(2), out(3));
        by_hand = by_hand.max(a0 * b0 + a0 * b1 + a1 * b0 - a1 * b1);
    }
    ensure(by_hand == bound, || format!("hand enumeration gives {by_hand}"))?;
    let mut rng = SeedStream::new(4).fork("lhv").rng(0);
    let mut best = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let k = rng.random_range(1..=6);
        let strategies: Vec<DeterministicStrategy> = (0..k)
            .map(|_| DeterministicStrategy {
                alice: (0..2).map(|_| rng.random_range(0..2)).collect(),
                bob: (0..2).map(|_| rng.random_range(0..2)).collect(),
            })
            .collect();
        let mut weights: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let model = LhvModel::new(weights, strategies).map_err(|e| e.to_string())?;
        let s = bell::bell_score(&f, &model.correlations(2, 2)).unwrap();
        best = best.max(s);
        ensure(s <= bound + 1e-12, || format!("LHV model scores {s}"))?;
    }
    Ok(format!("S_l = {bound}, best of 1000 LHV models {best:.6}"))
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let rho = states::isotropic(IsotropicSpec::new(2, v).unwrap()).unwrap();
        let got = states::singlet_fraction(&rho, 16, 5).map_err(|e| e.to_string())?;
        worst = worst.max((got - (v + (1.0 - v) / 4.0)).abs());
    }
    ensure(worst <= 1e-6, || format!("worst deviation {worst:.2e}"))?;
    let at = |v: f64| states::singlet_fraction(&states::isotropic(IsotropicSpec::new(2, v).unwrap()).unwrap(), 16, 5).unwrap();
    let (half, third) = (at(0.5), at(1.0 / 3.0));
    ensure((half - 0.625).abs() <= 1e-6, || format!("F(1/2) = {half}"))?;
    ensure((third - 0.5).abs() <= 1e-6, || format!("F(1/3) = {third}"))?;
    Ok(format!("worst deviation {worst:.1e}, F(1/2) = {half:.6}, F(1/3) = {third:.6}"))
}

fn criterion_6() -> Outcome {
    let f = BellFunctional::chsh();
    let opts = SeesawOptions { restarts: 16, seed: 6, ..Default::default() };
    let mut worst: f64 = 0.0;
    let mut violating = 0;
    for seed in 0..20u64 {
        let mut rng = SeedStream::new(seed).fork("two-qubit").rng(0);
        let pure = states::random_pure_state(qubits("A", "B"), &mut rng);
        let mixed = states::random_state(qubits("A", "B"), &mut rng);
        let rho = if seed % 2 == 0 { DensityMatrix::mixture(&[(0.8, &pure), (0.2, &mixed)]).unwrap() } else { mixed };
        let h = bell::chsh_two_qubit_max(&rho).unwrap();
        let s = bell::seesaw_with(&f, &rho, (&["A"], &["B"]), &opts).map_err(|e| e.to_string())?.score;
        worst = worst.max((s - h.max(2.0)).abs());
        violating += (h > 2.0) as usize;
    }
    ensure(worst <= 1e-6, || format!("worst see-saw deviation {worst:.2e}"))?;
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let h = bell::chsh_two_qubit_max(&states::isotropic(IsotropicSpec::new(2, v).unwrap()).unwrap()).unwrap();
        ensure((h - 2.0 * SQRT_2 * v).abs() <= 1e-12, || format!("isotropic V={v}: {h}"))?;
    }
    Ok(format!("20 states ({violating} violating), worst deviation {worst:.1e}"))
}

fn criterion_7() -> Outcome {
    let mut rng = SeedStream::new(7).fork("scenarios").rng(0);
    let all = scenarios::generate(30, &mut rng).map_err(|e| e.to_string())?;
    let mut counts = [0usize; 3];
    for s in &all {
        let out = s.run().map_err(|e| e.to_string())?;
        let uniform = InputDistribution::uniform(s.alice.n_inputs(), s.bob.n_inputs());
        let h = instruments::hierarchy(&out, &s.omega, &[s.distribution(), uniform]).map_err(|e| e.to_string())?;
        ensure(h.consistent, || format!("counterexample in scenario `{}`: {h:?}", s.name))?;
        let v = out.correlations().validate();
        ensure(v.signaling_residue <= 1e-9, || format!("`{}` signals: {:.2e}", s.name, v.signaling_residue))?;
        counts[0] += h.c1.passed as usize;
        counts[1] += h.c2.passed as usize;
        counts[2] += h.c3[0].passed as usize;
    }
    ensure(counts[2] < all.len(), || "no negative control failed c3".into())?;
    let s = scenarios::catalytic_chsh(states::max_entangled(2).unwrap(), 2).map_err(|e| e.to_string())?;
    let out = s.run().map_err(|e| e.to_string())?;
    let c2 = instruments::check_c2(&out, &s.omega).map_err(|e| e.to_string())?;
    ensure(c2.passed && c2.worst_residue <= 1e-9, || format!("embedding fails c2: {c2:?}"))?;
    let score = bell::bell_score(&BellFunctional::chsh(), &out.correlations()).unwrap();
    ensure(score > 2.0, || format!("embedded score {score}"))?;
    Ok(format!(
        "30 scenarios, pass counts c1/c2/c3 = {}/{}/{}, embedding c2 residue {:.1e}, S = {score:.5}",
        counts[0], counts[1], counts[2], c2.worst_residue
    ))
}

fn criterion_8() -> Outcome {
    let report = bcl_cli::run(["bcl", "catalyze", "--state", "isotropic:2:0.9", "-n", "2", "--functional", "chsh"])
        .map_err(|e| e.to_string())?;
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    ensure(failed.is_empty(), || format!("failed checks {failed:?}"))?;
    let get = |k: &str| report.outputs[k].as_f64().unwrap_or(f64::NAN);
    let (s, s_l, delta) = (get("score"), get("local_bound"), get("delta"));
    ensure(delta > 0.0, || format!("delta = {delta}"))?;
    ensure((s - (s_l + delta / 2.0)).abs() <= 1e-9, || format!("S = {s}, S_l + delta/2 = {}", s_l + delta / 2.0))?;
    ensure(report.outputs["activation_certified"] == true, || "activation not certified".into())?;
    Ok(format!("S = {s:.6} = {s_l} + {delta:.6}/2, catalyst returned"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("catalyticity", 10, criterion_1),
        ("output law", 10, criterion_2),
        ("register-conditioned score", 5, criterion_3),
        ("local bound", 5, criterion_4),
        ("singlet fraction", 30, criterion_5),
        ("two-qubit CHSH", 60, criterion_6),
        ("instrument hierarchy", 30, criterion_7),
        ("end-to-end catalyze", 120, criterion_8),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (k, (name, limit, run)) in criteria.iter().enumerate() {
        let id = format!("criterion_{}", k + 1);
        if !filter.is_empty() && !filter.iter().any(|f| id.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > Duration::from_secs(*limit) => Err(format!("too slow; {detail}")),
            other => other,
        };
        let (mark, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(d) => ("FAIL", d.as_str()),
        };
        println!("{mark} {id} {name}: {:.2} s (limit {limit} s): {detail}", elapsed.as_secs_f64());
        failures += result.is_err() as usize;
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
