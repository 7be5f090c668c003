//! Report assembly: aligned Markdown for humans, `field,value` CSV pairs
//! and a fixed JSON schema for machines.
//!
//! Every command emits the same top-level JSON keys — `estimate`,
//! `se_analytic`, `se_bootstrap`, `ci`, `diagnostics`, `seed`, `version` —
//! with nulls where a field does not apply, so downstream tooling can parse
//! all three commands uniformly.

use std::io::Write as _;
use std::path::PathBuf;

use cfiv_core::{GridSpec, McRow};
use serde_json::{json, Value};

use crate::CliError;

/// Writes to `--out` when given, stdout otherwise.
pub fn write_output(out: &Option<PathBuf>, content: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|()| stdout.flush())
                .map_err(|e| CliError::Data(format!("cannot write to stdout: {e}")))
        }
    }
}

fn markdown_table(pairs: &[(&str, String)]) -> String {
    let key_width = pairs.iter().map(|(k, _)| k.len()).max().unwrap_or(5).max(5);
    let value_width = pairs.iter().map(|(_, v)| v.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    out.push_str(&format!(
        "| {:<key_width$} | {:<value_width$} |\n",
        "field", "value"
    ));
    out.push_str(&format!(
        "|:{:-<key_width$}-|:{:-<value_width$}-|\n",
        "", ""
    ));
    for (key, value) in pairs {
        out.push_str(&format!("| {key:<key_width$} | {value:<value_width$} |\n"));
    }
    out
}

fn csv_pairs(pairs: &[(&str, String)]) -> String {
    let mut out = String::from("field,value\n");
    for (key, value) in pairs {
        out.push_str(&format!("{key},{value}\n"));
    }
    out
}

/// Everything the `fit` command reports.
#[derive(Debug, Default)]
pub struct FitReport {
    pub estimate: f64,
    pub se_analytic: f64,
    pub se_naive: Option<f64>,
    pub se_bootstrap: Option<f64>,
    pub ci_analytic: (f64, f64),
    pub ci_bootstrap: Option<(f64, f64)>,
    pub estimator: String,
    pub cf_terms: Option<String>,
    pub skedastic: Option<String>,
    pub n: usize,
    pub rows_dropped: usize,
    pub first_stage_f: Option<f64>,
    pub weak_instrument: Option<bool>,
    pub condition_number: f64,
    pub floored_scales: Option<usize>,
    pub gn_converged: Option<bool>,
    pub b_effective: Option<usize>,
    pub bootstrap_failed: Option<usize>,
    pub seed: u64,
    pub version: &'static str,
}

impl FitReport {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut pairs = vec![
            ("estimate", format!("{:.6}", self.estimate)),
            ("se_analytic", format!("{:.6}", self.se_analytic)),
            (
                "ci95_analytic",
                format!("[{:.6}, {:.6}]", self.ci_analytic.0, self.ci_analytic.1),
            ),
        ];
        if let Some(se) = self.se_naive {
            pairs.push(("se_naive", format!("{se:.6}")));
        }
        if let Some(se) = self.se_bootstrap {
            pairs.push(("se_bootstrap", format!("{se:.6}")));
        }
        if let Some((lo, hi)) = self.ci_bootstrap {
            pairs.push(("ci95_bootstrap", format!("[{lo:.6}, {hi:.6}]")));
        }
        pairs.push(("estimator", self.estimator.clone()));
        if let Some(t) = &self.cf_terms {
            pairs.push(("cf_terms", t.clone()));
        }
        if let Some(s) = &self.skedastic {
            pairs.push(("skedastic", s.clone()));
        }
        pairs.push(("n", self.n.to_string()));
        pairs.push(("rows_dropped", self.rows_dropped.to_string()));
        if let Some(f) = self.first_stage_f {
            pairs.push(("first_stage_f", format!("{f:.2}")));
            pairs.push((
                "weak_instrument",
                self.weak_instrument.unwrap_or(false).to_string(),
            ));
        }
        pairs.push(("condition_number", format!("{:.3e}", self.condition_number)));
        if let Some(c) = self.floored_scales {
            pairs.push(("floored_scales", c.to_string()));
        }
        if let Some(c) = self.gn_converged {
            pairs.push(("variance_fit_converged", c.to_string()));
        }
        if let Some(b) = self.b_effective {
            pairs.push(("bootstrap_replicates", b.to_string()));
        }
        if let Some(f) = self.bootstrap_failed {
            pairs.push(("bootstrap_failed", f.to_string()));
        }
        pairs.push(("seed", self.seed.to_string()));
        pairs.push(("version", self.version.to_string()));
        pairs
    }

    pub fn to_markdown(&self) -> String {
        markdown_table(&self.pairs())
    }

    pub fn to_csv(&self) -> String {
        csv_pairs(&self.pairs())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "estimate": self.estimate,
            "se_analytic": self.se_analytic,
            "se_bootstrap": self.se_bootstrap,
            "ci": {
                "analytic": [self.ci_analytic.0, self.ci_analytic.1],
                "bootstrap_percentile": self
                    .ci_bootstrap
                    .map(|(lo, hi)| json!([lo, hi]))
                    .unwrap_or(Value::Null),
            },
            "diagnostics": {
                "estimator": self.estimator,
                "cf_terms": self.cf_terms,
                "skedastic": self.skedastic,
                "n": self.n,
                "rows_dropped": self.rows_dropped,
                "first_stage_f": self.first_stage_f,
                "weak_instrument": self.weak_instrument,
                "condition_number": self.condition_number,
                "floored_scales": self.floored_scales,
                "variance_fit_converged": self.gn_converged,
                "se_naive": self.se_naive,
                "bootstrap_replicates": self.b_effective,
                "bootstrap_failed": self.bootstrap_failed,
            },
            "seed": self.seed,
            "version": self.version,
        })
    }
}

/// Report for the `bias-oracle` command.
#[derive(Debug)]
pub struct OracleReport {
    pub bias: f64,
    pub mc_standard_error: f64,
    pub sigma_h: f64,
    pub cross_moment: f64,
    pub draws: usize,
    pub lambda: f64,
    pub gamma1: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub seed: u64,
    pub version: &'static str,
}

impl OracleReport {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("bias", format!("{:.6}", self.bias)),
            (
                "mc_standard_error",
                format!("{:.2e}", self.mc_standard_error),
            ),
            (
                "ci95",
                format!(
                    "[{:.6}, {:.6}]",
                    self.bias - 1.96 * self.mc_standard_error,
                    self.bias + 1.96 * self.mc_standard_error
                ),
            ),
            ("sigma_h", format!("{:.6}", self.sigma_h)),
            ("cross_moment", format!("{:.6}", self.cross_moment)),
            ("draws", self.draws.to_string()),
            ("lambda", format!("{}", self.lambda)),
            ("gamma1", format!("{}", self.gamma1)),
            ("delta1", format!("{}", self.delta1)),
            ("delta2", format!("{}", self.delta2)),
            ("seed", self.seed.to_string()),
            ("version", self.version.to_string()),
        ]
    }

    pub fn to_markdown(&self) -> String {
        markdown_table(&self.pairs())
    }

    pub fn to_csv(&self) -> String {
        csv_pairs(&self.pairs())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "estimate": self.bias,
            "se_analytic": self.mc_standard_error,
            "se_bootstrap": Value::Null,
            "ci": {
                "analytic": [
                    self.bias - 1.96 * self.mc_standard_error,
                    self.bias + 1.96 * self.mc_standard_error,
                ],
                "bootstrap_percentile": Value::Null,
            },
            "diagnostics": {
                "sigma_h": self.sigma_h,
                "cross_moment": self.cross_moment,
                "draws": self.draws,
                "lambda": self.lambda,
                "gamma1": self.gamma1,
                "delta1": self.delta1,
                "delta2": self.delta2,
            },
            "seed": self.seed,
            "version": self.version,
        })
    }
}

/// JSON for `simulate`: per-row results live under `diagnostics.rows`, the
/// scalar slots are null.
pub fn simulate_json(spec: &GridSpec, preset: Option<&str>, rows: &[McRow], seed: u64) -> Value {
    let row_values: Vec<Value> = rows
        .iter()
        .map(|r| {
            json!({
                "n": r.n,
                "delta1": r.delta1,
                "delta2": r.delta2,
                "estimator": r.estimator,
                "bias": r.bias,
                "var": r.var,
                "est_var": r.est_var,
                "cov95": r.cov95,
            })
        })
        .collect();
    json!({
        "estimate": Value::Null,
        "se_analytic": Value::Null,
        "se_bootstrap": Value::Null,
        "ci": Value::Null,
        "diagnostics": {
            "preset": preset,
            "lambda": spec.lambda,
            "gamma1": spec.gamma1,
            "replications": spec.replications,
            "rows": row_values,
        },
        "seed": seed,
        "version": env!("CARGO_PKG_VERSION"),
    })
}
