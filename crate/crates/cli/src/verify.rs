//! Named simulation presets checked against their limit laws.

use linetime_core::brownian::{line_law, truncated_law};
use linetime_core::montecarlo::{simulate_axis_time, simulate_line_occupancy, simulate_truncated};
use linetime_core::scale::limit_law;
use linetime_core::stats::{abs_normal_check, fit_against, DEFAULT_SE_MULTIPLIER};
use linetime_core::{DiffusionSpec, FitReport, LineTarget, OccupancyLaw, QuadPolicy, SimConfig};
use serde_json::{json, Value};

use crate::CliError;

pub const SUITES: &[(&str, &str)] = &[
    ("brownian-ray", "Brownian motion and the ray t, against Exp(1)"),
    ("mixture-atom", "Brownian motion from 0 and the line 1 + t, atom 1 - e^-2"),
    ("truncated-c1", "the ray t after time 1, atom 2 Phi(1) - 1"),
    ("drifted-line", "drift 1/2 and the ray -t, law from the scale integrals"),
    ("axis-time", "relative time near the axis on [0, 1], against |N(0,1)|"),
];

fn brownian_line(x0: f64, a: f64, b: f64, cfg: &SimConfig) -> Result<(FitReport, OccupancyLaw), CliError> {
    let law = line_law(x0, a, b).map_err(|e| CliError::usage(e.to_string()))?;
    let batch = simulate_line_occupancy(&DiffusionSpec::brownian(), x0, LineTarget { a, b }, cfg)?;
    Ok((fit_against(&batch, &law, DEFAULT_SE_MULTIPLIER), law))
}

/// Runs a suite; `None` if the name is unknown.
pub fn run_suite(name: &str, seed: u64, n_reps: Option<usize>) -> Result<Option<Value>, CliError> {
    let mut cfg = SimConfig {
        seed,
        ..SimConfig::default()
    };
    if let Some(n) = n_reps {
        cfg.n_reps = n;
    }
    let (report, law) = match name {
        "brownian-ray" => brownian_line(0.0, 0.0, 1.0, &cfg)?,
        "mixture-atom" => brownian_line(0.0, 1.0, 1.0, &cfg)?,
        "truncated-c1" => {
            let law = truncated_law(1.0, 1.0).map_err(|e| CliError::usage(e.to_string()))?;
            let batch = simulate_truncated(1.0, 1.0, &cfg)?;
            (fit_against(&batch, &law, DEFAULT_SE_MULTIPLIER), law)
        }
        "drifted-line" => {
            let spec = DiffusionSpec::drifted(0.5);
            let line = LineTarget { a: 0.0, b: -1.0 };
            let law = limit_law(&spec, line, 0.0, &QuadPolicy::default())?;
            let batch = simulate_line_occupancy(&spec, 0.0, line, &cfg)?;
            (fit_against(&batch, &law, DEFAULT_SE_MULTIPLIER), law)
        }
        "axis-time" => {
            cfg.epsilon = 0.02;
            let batch = simulate_axis_time(1.0, &cfg)?;
            let report = abs_normal_check(&batch, DEFAULT_SE_MULTIPLIER);
            return Ok(Some(json!({
                "suite": name,
                "seed": seed,
                "target": "abs_normal",
                "passed": report.passed,
                "report": report,
            })));
        }
        _ => return Ok(None),
    };
    Ok(Some(json!({
        "suite": name,
        "seed": seed,
        "target": law,
        "passed": report.passed,
        "report": report,
    })))
}
