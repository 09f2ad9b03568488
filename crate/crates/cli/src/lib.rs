//! The `linetime` command line.
//!
//! Exit codes: 0 success, 1 failed verification or replay mismatch (or an
//! I/O failure), 2 bad input, 3 quadrature failure, 4 recurrent line.

pub mod args;
pub mod jobs;
pub mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use linetime_core::moments::{
    fourth_moment_difference, fourth_moment_difference_exact, joint_moment, joint_moment_exact, mgf,
};
use linetime_core::scale::analyze;
use linetime_core::{
    DiffusionSpec, ExtendedMass, IidSpec, LineTarget, MomentError, PsConfig, QuadPolicy, ScaleError,
    SimConfig, SimError, StripMode, TransienceClass,
};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use args::{AnalyzeArgs, Cli, Command, FamilyArg, MomentsArgs, OutOpts, PsOp, PsOpts, SimOpts, SimTarget, StripArg};
use jobs::{Artifacts, Job};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_QUADRATURE: i32 = 3;
pub const EXIT_RECURRENT: i32 = 4;

pub const CSV_FILE: &str = "samples.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            code: EXIT_FAILED,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<ScaleError> for CliError {
    fn from(e: ScaleError) -> Self {
        let code = match e {
            ScaleError::Quadrature(_) => EXIT_QUADRATURE,
            _ => EXIT_USAGE,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Scale(s) => s.into(),
            SimError::Recurrent => CliError {
                code: EXIT_RECURRENT,
                message: e.to_string(),
            },
            _ => CliError::usage(e.to_string()),
        }
    }
}

impl From<MomentError> for CliError {
    fn from(e: MomentError) -> Self {
        CliError::usage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub job: Job,
    /// Worker threads used; informational only.
    pub threads: Option<usize>,
    pub wall_time_secs: f64,
    pub outputs: Vec<OutputDigest>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn digests(art: &Artifacts) -> Vec<OutputDigest> {
    [(CSV_FILE, &art.csv), (SUMMARY_FILE, &art.summary)]
        .iter()
        .map(|(f, s)| OutputDigest {
            file: f.to_string(),
            sha256: sha256_hex(s.as_bytes()),
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_outputs(dir: &Path, art: &Artifacts, manifest: &RunManifest) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_file(&dir.join(CSV_FILE), &art.csv)?;
    write_file(&dir.join(SUMMARY_FILE), &art.summary)?;
    let mut m = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    m.push('\n');
    write_file(&dir.join(MANIFEST_FILE), &m)
}

fn sim_config(o: &SimOpts) -> SimConfig {
    SimConfig {
        epsilon: o.epsilon,
        dt: o.dt,
        t_max: o.t_max,
        escape_margin: o.escape_margin,
        escape_return_tol: o.escape_tol,
        n_reps: o.n_reps,
        seed: o.seed,
        strip_mode: match o.strip {
            StripArg::Centered => StripMode::Centered,
            StripArg::Lower => StripMode::Lower,
        },
    }
}

fn iid_spec(o: &PsOpts) -> IidSpec {
    match o.family {
        FamilyArg::Normal => IidSpec::Normal { xi: o.xi, sigma: o.sd },
        FamilyArg::Exponential => IidSpec::Exponential {
            rate: 1.0 / o.sd,
            xi: o.xi,
        },
        FamilyArg::Uniform => IidSpec::Uniform {
            xi: o.xi,
            half_width: o.sd * 3f64.sqrt(),
        },
    }
}

fn ps_config(o: &PsOpts) -> PsConfig {
    PsConfig {
        n_reps: o.n_reps,
        seed: o.seed,
        escape_margin: o.escape_margin,
        escape_return_tol: o.escape_tol,
        cap_time: o.cap_time,
    }
}

fn sim_job(t: SimTarget) -> (Job, OutOpts) {
    match t {
        SimTarget::Line { mu, sigma, x0, a, b, sim, out } => (
            Job::SimulateLine {
                mu,
                sigma,
                x0,
                a,
                b,
                config: sim_config(&sim),
            },
            out,
        ),
        SimTarget::Joint { b, c, sim, out } => (
            Job::SimulateJoint {
                slopes: b,
                c,
                config: sim_config(&sim),
            },
            out,
        ),
        SimTarget::Truncated { c, b, sim, out } => (Job::SimulateTruncated { c, b, config: sim_config(&sim) }, out),
        SimTarget::Axis { horizon, sim, out } => (Job::SimulateAxis { horizon, config: sim_config(&sim) }, out),
        SimTarget::Exceedance { c, inv_sigma, sim, out } => (
            Job::SimulateExceedance {
                c,
                inv_sigma,
                config: sim_config(&sim),
            },
            out,
        ),
    }
}

fn ps_job(op: PsOp) -> (Job, OutOpts) {
    match op {
        PsOp::Occupancy { m, epsilon, c, b, data, out } => (
            Job::PartialsumOccupancy {
                dist: iid_spec(&data),
                m,
                epsilon,
                c,
                b,
                config: ps_config(&data),
            },
            out,
        ),
        PsOp::DeltaMiss { k, delta, c, data, out } => (
            Job::PartialsumDeltaMiss {
                dist: iid_spec(&data),
                k,
                delta,
                c,
                config: ps_config(&data),
            },
            out,
        ),
        PsOp::SecondOrder { k, delta, c, data, out } => (
            Job::PartialsumSecondOrder {
                dist: iid_spec(&data),
                k,
                delta,
                c,
                config: ps_config(&data),
            },
            out,
        ),
    }
}

fn run_job(
    job: Job,
    out: Option<PathBuf>,
    threads: Option<usize>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let started = Instant::now();
    let art = job.run()?;
    let manifest = RunManifest {
        tool: "linetime".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: job.name().into(),
        seed: job.seed(),
        threads,
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs: digests(&art),
        job,
    };
    match out {
        Some(dir) => {
            write_outputs(&dir, &art, &manifest)?;
            let _ = stdout.write_all(art.summary.as_bytes());
        }
        None => {
            let _ = stdout.write_all(art.csv.as_bytes());
            let _ = stderr.write_all(art.summary.as_bytes());
        }
    }
    Ok(EXIT_OK)
}

fn replay(path: &Path, out: Option<PathBuf>, threads: Option<usize>, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let started = Instant::now();
    let art = manifest.job.run()?;
    let fresh = digests(&art);
    let mut all = true;
    let files: Vec<Value> = manifest
        .outputs
        .iter()
        .map(|want| {
            let got = fresh.iter().find(|d| d.file == want.file).map(|d| d.sha256.clone());
            let ok = got.as_deref() == Some(want.sha256.as_str());
            all &= ok;
            json!({ "file": want.file, "expected": want.sha256, "actual": got, "matches": ok })
        })
        .collect();
    if let Some(dir) = out {
        let m = RunManifest {
            threads,
            wall_time_secs: started.elapsed().as_secs_f64(),
            outputs: fresh,
            ..manifest.clone()
        };
        write_outputs(&dir, &art, &m)?;
    }
    let report = json!({ "command": manifest.command, "matches": all, "outputs": files });
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    Ok(if all { EXIT_OK } else { EXIT_FAILED })
}

fn mass_json(m: ExtendedMass) -> Value {
    match m {
        ExtendedMass::Finite(v) => json!(v),
        ExtendedMass::Infinite => json!("infinite"),
    }
}

fn run_analyze(a: &AnalyzeArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let spec = DiffusionSpec::parse(&a.mu, &a.sigma).map_err(|e| CliError::usage(e.to_string()))?;
    let line = LineTarget::new(a.a, a.b)?;
    let mut policy = QuadPolicy::default();
    if let Some(tol) = a.tol {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(CliError::usage("--tol must lie in (0, 1)"));
        }
        policy.exponent_rel_tol = tol;
        policy.tail_rel_tol = tol;
    }
    let r = analyze(&spec, line, a.x0, &policy)?;
    let out = json!({
        "mu": spec.mu.to_string(),
        "sigma": spec.sigma.to_string(),
        "a": line.a,
        "b": line.b,
        "x0": a.x0,
        "class": r.class,
        "law": r.law,
        "k_plus": mass_json(r.masses.k_plus),
        "k_minus": mass_json(r.masses.k_minus),
        "divergence_plus": r.masses.plus.divergence,
        "divergence_minus": r.masses.minus.divergence,
        "heuristic_infinite": r.masses.heuristic(),
        "sigma_at_intercept": r.sigma_at_intercept,
        "hit_probability": r.hit_probability,
        "atom_weight": r.law.atom_weight(),
        "rate": r.law.rate(),
    });
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&out).expect("analysis serialises"));
    Ok(if r.class == TransienceClass::RecurrentLine {
        EXIT_RECURRENT
    } else {
        EXIT_OK
    })
}

/// Exact value of a decimal (`-1.25`, `3e-2`) or fraction (`2/3`).
pub fn parse_rational(s: &str) -> Result<BigRational, CliError> {
    let bad = || CliError::usage(format!("cannot read {s:?} as an exact number"));
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d == BigInt::from(0) {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (mant, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mant.strip_prefix('+').unwrap_or(mant)),
    };
    let (int, frac) = mant.split_once('.').unwrap_or((mant, ""));
    if int.is_empty() && frac.is_empty() || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits: BigInt = format!("{int}{frac}").parse().map_err(|_| bad())?;
    let scale = exp - frac.len() as i32;
    let ten = BigInt::from(10);
    let value = if scale >= 0 {
        BigRational::from_integer(digits * ten.pow(scale as u32))
    } else {
        BigRational::new(digits, ten.pow((-scale) as u32))
    };
    Ok(if neg { -value } else { value })
}

fn parse_real(s: &str) -> Result<f64, CliError> {
    if s.contains('/') {
        let r = parse_rational(s)?;
        let (n, d) = (r.numer().to_string(), r.denom().to_string());
        let n: f64 = n.parse().map_err(|_| CliError::usage(format!("bad number {s:?}")))?;
        let d: f64 = d.parse().map_err(|_| CliError::usage(format!("bad number {s:?}")))?;
        return Ok(n / d);
    }
    s.trim()
        .parse()
        .map_err(|_| CliError::usage(format!("bad number {s:?}")))
}

fn run_moments(a: &MomentsArgs, stdout: &mut dyn Write) -> Result<i32, CliError> {
    let out = if let Some(m4) = &a.m4 {
        let (b, h) = (parse_real(&m4[0])?, parse_real(&m4[1])?);
        let value = fourth_moment_difference(b, h)?;
        let exact = if a.exact {
            Some(fourth_moment_difference_exact(&parse_rational(&m4[0])?, &parse_rational(&m4[1])?)?.to_string())
        } else {
            None
        };
        json!({ "mode": "m4", "b": b, "h": h, "value": value, "per_h2": value / (h * h), "exact": exact })
    } else {
        let (Some(bs), Some(cs)) = (&a.b, &a.c) else {
            return Err(CliError::usage("--b and --c are required"));
        };
        let (b, c) = (parse_real(bs)?, parse_real(cs)?);
        if let Some(st) = &a.mgf {
            let v = mgf(b, c, st[0], st[1], a.mgf_tol)?;
            json!({ "mode": "mgf", "b": b, "c": c, "s": st[0], "t": st[1], "value": v.value, "shells": v.shells })
        } else {
            let (Some(p), Some(q)) = (a.p, a.q) else {
                return Err(CliError::usage("give --p and --q, --mgf S T, or --m4 B H"));
            };
            let value = joint_moment(b, c, p, q)?;
            let exact = if a.exact {
                Some(joint_moment_exact(&parse_rational(bs)?, &parse_rational(cs)?, p, q)?.to_string())
            } else {
                None
            };
            json!({ "mode": "joint", "b": b, "c": c, "p": p, "q": q, "value": value, "exact": exact })
        }
    };
    let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&out).expect("moments serialise"));
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let threads = cli.threads;
    match cli.command {
        Command::Analyze(a) => run_analyze(&a, stdout),
        Command::Moments(m) => run_moments(&m, stdout),
        Command::Simulate { target } => {
            let (job, out) = sim_job(target);
            run_job(job, out.out, threads, stdout, stderr)
        }
        Command::Partialsum { op } => {
            let (job, out) = ps_job(op);
            run_job(job, out.out, threads, stdout, stderr)
        }
        Command::Verify(v) => match verify::run_suite(&v.suite, v.seed, v.n_reps)? {
            Some(report) => {
                let _ = writeln!(stdout, "{}", serde_json::to_string_pretty(&report).expect("report serialises"));
                Ok(if report["passed"] == json!(true) { EXIT_OK } else { EXIT_FAILED })
            }
            None => {
                let names: Vec<&str> = verify::SUITES.iter().map(|s| s.0).collect();
                Err(CliError::usage(format!(
                    "unknown suite {:?}; known suites: {}",
                    v.suite,
                    names.join(", ")
                )))
            }
        },
        Command::Replay(r) => replay(&r.manifest, r.out, threads, stdout),
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let threads = cli.threads;
    let go = move || {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = match dispatch(cli, &mut out, &mut err) {
            Ok(code) => code,
            Err(e) => {
                let _ = writeln!(err, "error: {}", e.message);
                e.code
            }
        };
        (code, out, err)
    };
    let (code, out, err) = match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(go),
            Err(e) => (EXIT_FAILED, Vec::new(), format!("error: cannot start {n} threads: {e}\n").into_bytes()),
        },
        _ => go(),
    };
    let _ = stdout.write_all(&out);
    let _ = stderr.write_all(&err);
    code
}
