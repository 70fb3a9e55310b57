use serde::Serialize;
use serde_json::{Map, Value};

/// One verified quantity: the closed-form value where one exists, the
/// independently computed value, and their difference.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub claimed: Option<f64>,
    pub computed: f64,
    pub difference: Option<f64>,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// `|computed - claimed| <= tol`.
    pub fn close(name: &str, claimed: f64, computed: f64, tol: f64) -> Self {
        let difference = computed - claimed;
        Self {
            name: name.into(),
            claimed: Some(claimed),
            computed,
            difference: Some(difference),
            tolerance: tol,
            passed: difference.abs() <= tol,
        }
    }

    /// A residue that must not exceed `tol`.
    pub fn residue(name: &str, residue: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            claimed: Some(0.0),
            computed: residue,
            difference: Some(residue),
            tolerance: tol,
            passed: residue <= tol,
        }
    }

    /// `computed > bound + tol`.
    pub fn exceeds(name: &str, bound: f64, computed: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            claimed: Some(bound),
            computed,
            difference: Some(computed - bound),
            tolerance: tol,
            passed: computed > bound + tol,
        }
    }

    /// `computed <= bound + tol`.
    pub fn at_most(name: &str, bound: f64, computed: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            claimed: Some(bound),
            computed,
            difference: Some(computed - bound),
            tolerance: tol,
            passed: computed <= bound + tol,
        }
    }

    pub fn holds(name: &str, ok: bool) -> Self {
        Self {
            name: name.into(),
            claimed: None,
            computed: if ok { 1.0 } else { 0.0 },
            difference: None,
            tolerance: 0.0,
            passed: ok,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub seconds: f64,
}

/// Machine-readable result of one subcommand. `timing` is the only field
/// that varies between runs with the same command and seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub command: String,
    pub seed: u64,
    pub inputs: Map<String, Value>,
    pub outputs: Map<String, Value>,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub notes: Vec<String>,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(command: String, seed: u64) -> Self {
        Self {
            command,
            seed,
            inputs: Map::new(),
            outputs: Map::new(),
            checks: Vec::new(),
            passed: true,
            notes: Vec::new(),
            timing: Timing { seconds: 0.0 },
        }
    }

    pub fn input(&mut self, key: &str, value: impl Serialize) {
        self.inputs.insert(key.into(), serde_json::to_value(value).expect("serializable input"));
    }

    pub fn output(&mut self, key: &str, value: impl Serialize) {
        self.outputs.insert(key.into(), serde_json::to_value(value).expect("serializable output"));
    }

    pub fn check(&mut self, check: Check) -> bool {
        let ok = check.passed;
        self.passed &= ok;
        self.checks.push(check);
        ok
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Merge another report's checks, prefixing names with `scope`.
    pub fn absorb(&mut self, scope: &str, other: RunReport) {
        for mut c in other.checks {
            c.name = format!("{scope}.{}", c.name);
            self.check(c);
        }
        self.notes.extend(other.notes.into_iter().map(|n| format!("{scope}: {n}")));
        self.outputs.insert(scope.into(), Value::Object(other.outputs));
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// JSON with the timing field removed, for reproducibility comparisons.
    pub fn to_json_untimed(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("report is an object").remove("timing");
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let mut s = format!("{}\n", self.command);
        for c in &self.checks {
            let mark = if c.passed { "PASS" } else { "FAIL" };
            match c.claimed {
                Some(claimed) => s.push_str(&format!(
                    "  [{mark}] {}: computed {:.12} vs {:.12} (diff {:.2e}, tol {:.0e})\n",
                    c.name,
                    c.computed,
                    claimed,
                    c.difference.unwrap_or_default(),
                    c.tolerance
                )),
                None => s.push_str(&format!("  [{mark}] {}\n", c.name)),
            }
        }
        for n in &self.notes {
            s.push_str(&format!("  note: {n}\n"));
        }
        s.push_str(&format!(
            "  {} in {:.3} s\n",
            if self.passed { "all checks passed" } else { "some checks FAILED" },
            self.timing.seconds
        ));
        s
    }
}
