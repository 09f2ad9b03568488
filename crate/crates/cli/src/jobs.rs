//! Randomised commands as self-contained, replayable jobs.

use std::fmt::Write as _;

use linetime_core::montecarlo::{
    simulate_axis_time, simulate_exceedance_time, simulate_joint_truncated, simulate_line_occupancy,
    simulate_truncated,
};
use linetime_core::partialsum::{delta_miss_count, partial_sum_occupancy, second_order_difference};
use linetime_core::{DiffusionSpec, IidSpec, JointBatch, LineTarget, PsConfig, SampleBatch, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Job {
    SimulateLine {
        mu: String,
        sigma: String,
        x0: f64,
        a: f64,
        b: f64,
        config: SimConfig,
    },
    SimulateJoint {
        slopes: Vec<f64>,
        c: f64,
        config: SimConfig,
    },
    SimulateTruncated {
        c: f64,
        b: f64,
        config: SimConfig,
    },
    SimulateAxis {
        horizon: f64,
        config: SimConfig,
    },
    SimulateExceedance {
        c: f64,
        inv_sigma: f64,
        config: SimConfig,
    },
    PartialsumOccupancy {
        dist: IidSpec,
        m: u64,
        epsilon: f64,
        c: f64,
        b: f64,
        config: PsConfig,
    },
    PartialsumDeltaMiss {
        dist: IidSpec,
        k: f64,
        delta: f64,
        c: f64,
        config: PsConfig,
    },
    PartialsumSecondOrder {
        dist: IidSpec,
        k: f64,
        delta: f64,
        c: f64,
        config: PsConfig,
    },
}

/// The files a job produces, byte for byte.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifacts {
    pub csv: String,
    pub summary: String,
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::SimulateLine { .. } => "simulate line",
            Job::SimulateJoint { .. } => "simulate joint",
            Job::SimulateTruncated { .. } => "simulate truncated",
            Job::SimulateAxis { .. } => "simulate axis",
            Job::SimulateExceedance { .. } => "simulate exceedance",
            Job::PartialsumOccupancy { .. } => "partialsum occupancy",
            Job::PartialsumDeltaMiss { .. } => "partialsum delta-miss",
            Job::PartialsumSecondOrder { .. } => "partialsum second-order",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            Job::SimulateLine { config, .. }
            | Job::SimulateJoint { config, .. }
            | Job::SimulateTruncated { config, .. }
            | Job::SimulateAxis { config, .. }
            | Job::SimulateExceedance { config, .. } => config.seed,
            Job::PartialsumOccupancy { config, .. }
            | Job::PartialsumDeltaMiss { config, .. }
            | Job::PartialsumSecondOrder { config, .. } => config.seed,
        }
    }

    pub fn run(&self) -> Result<Artifacts, CliError> {
        let batch = match self {
            Job::SimulateLine { mu, sigma, x0, a, b, config } => {
                let spec = DiffusionSpec::parse(mu, sigma).map_err(|e| CliError::usage(e.to_string()))?;
                simulate_line_occupancy(&spec, *x0, LineTarget { a: *a, b: *b }, config)?
            }
            Job::SimulateJoint { slopes, c, config } => {
                return Ok(joint_artifacts(self.name(), &simulate_joint_truncated(*c, slopes, config)?));
            }
            Job::SimulateTruncated { c, b, config } => simulate_truncated(*c, *b, config)?,
            Job::SimulateAxis { horizon, config } => simulate_axis_time(*horizon, config)?,
            Job::SimulateExceedance { c, inv_sigma, config } => simulate_exceedance_time(*c, *inv_sigma, config)?,
            Job::PartialsumOccupancy { dist, m, epsilon, c, b, config } => {
                partial_sum_occupancy(dist, *m, *epsilon, *c, *b, config)?
            }
            Job::PartialsumDeltaMiss { dist, k, delta, c, config } => delta_miss_count(dist, *k, *delta, *c, config)?,
            Job::PartialsumSecondOrder { dist, k, delta, c, config } => {
                second_order_difference(dist, *k, *delta, *c, config)?
            }
        };
        Ok(batch_artifacts(self.name(), &batch))
    }
}

/// Reals in CSV files: 17 significant digits, fixed exponent style.
pub fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn json_text(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("summary serialises");
    s.push('\n');
    s
}

pub fn batch_artifacts(name: &str, batch: &SampleBatch) -> Artifacts {
    let mut csv = format!("# linetime {name}\nrep,value,truncated\n");
    for (i, (v, t)) in batch.values.iter().zip(&batch.truncated).enumerate() {
        let _ = writeln!(csv, "{i},{},{}", real(*v), u8::from(*t));
    }
    let (mean, sd) = mean_sd(&batch.values);
    let positive: Vec<f64> = batch.values.iter().copied().filter(|v| *v > 0.0).collect();
    let conditional_mean = (!positive.is_empty()).then(|| mean_sd(&positive).0);
    let summary = json!({
        "command": name,
        "target": batch.target,
        "config": batch.config,
        "n": batch.len(),
        "mean": mean,
        "sd": sd,
        "zero_fraction": batch.zero_fraction(),
        "conditional_mean": conditional_mean,
        "truncated_fraction": batch.truncated_fraction(),
        "unreliable": batch.unreliable(),
    });
    Artifacts {
        csv,
        summary: json_text(&summary),
    }
}

pub fn joint_artifacts(name: &str, joint: &JointBatch) -> Artifacts {
    let d = joint.slopes.len();
    let slopes: Vec<String> = joint.slopes.iter().map(|b| real(*b)).collect();
    let mut csv = format!("# linetime {name}\n# slopes: {}\nrep", slopes.join(","));
    for i in 1..=d {
        let _ = write!(csv, ",v{i}");
    }
    csv.push_str(",truncated\n");
    for (r, (row, t)) in joint.rows.iter().zip(&joint.truncated).enumerate() {
        let _ = write!(csv, "{r}");
        for v in row {
            let _ = write!(csv, ",{}", real(*v));
        }
        let _ = writeln!(csv, ",{}", u8::from(*t));
    }
    let cols: Vec<Vec<f64>> = (0..d).map(|i| joint.column(i)).collect();
    let stats: Vec<(f64, f64)> = cols.iter().map(|c| mean_sd(c)).collect();
    let n = joint.rows.len() as f64;
    let corr: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let cov = cols[i]
                        .iter()
                        .zip(&cols[j])
                        .map(|(x, y)| (x - stats[i].0) * (y - stats[j].0))
                        .sum::<f64>()
                        / (n - 1.0);
                    cov / (stats[i].1 * stats[j].1)
                })
                .collect()
        })
        .collect();
    let columns: Vec<Value> = (0..d)
        .map(|i| {
            json!({
                "b": joint.slopes[i],
                "mean": stats[i].0,
                "sd": stats[i].1,
                "zero_fraction": cols[i].iter().filter(|v| **v == 0.0).count() as f64 / n,
            })
        })
        .collect();
    let truncated = joint.truncated.iter().filter(|t| **t).count() as f64 / n;
    let summary = json!({
        "command": name,
        "slopes": joint.slopes,
        "c": joint.c,
        "config": joint.config,
        "n": joint.rows.len(),
        "columns": columns,
        "correlation": corr,
        "truncated_fraction": truncated,
        "unreliable": truncated > 0.01,
    });
    Artifacts {
        csv,
        summary: json_text(&summary),
    }
}
