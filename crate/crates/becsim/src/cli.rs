//! Command-line interface: configuration parsing, dotted-path overrides, and
//! deterministic artifact output for every experiment mode.

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::analysis::{
    experiment_estimates, scaling_sweep, sweep_csv, PhysicalParams, SweepPlan,
};
use crate::dynamics::{evolve, evolve_to, initial_state, IntegratorConfig};
use crate::entanglement::{partial_trace_ground, GroundDensityMatrix};
use crate::error::{Error, Result};
use crate::fockspace::{build_basis, TruncationSpec};
use crate::model::{effective_params, ModelParams};
use crate::oracle::{crevasse_curve, ideal_evolve};
use crate::qdist::q_grid;

pub const OUT_DIR_ENV: &str = "BECSIM_OUT_DIR";

#[derive(Parser)]
#[command(name = "becsim", version, about = "Two-BEC cavity entanglement simulator")]
pub struct Cli {
    /// Path to the JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config field by dotted path, e.g. --set model.delta_l=40.
    #[arg(long = "set", global = true, value_name = "PATH=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (defaults to $BECSIM_OUT_DIR, then the config's
    /// output_dir, then the current directory).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Mode,
}

#[derive(Subcommand, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Evolve the master equation and emit the trajectory CSV.
    Simulate,
    /// Emit the ideal interaction's entanglement curve.
    Oracle,
    /// Run a scaling study over atom number.
    Sweep,
    /// Emit partial Q-distributions of condensate 1.
    Qdist,
    /// Physical-unit estimates for an experimental parameter set.
    Estimate,
}

impl Mode {
    fn name(&self) -> &'static str {
        match self {
            Mode::Simulate => "simulate",
            Mode::Oracle => "oracle",
            Mode::Sweep => "sweep",
            Mode::Qdist => "qdist",
            Mode::Estimate => "estimate",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Final time in units of 1/g. Exactly one of t_final / omega_t_final.
    #[serde(default)]
    pub t_final: Option<f64>,
    /// Final time as Omega t (converted through the effective rate).
    #[serde(default)]
    pub omega_t_final: Option<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

fn default_record_every() -> usize {
    100
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(alias = "N")]
    pub atoms: usize,
    #[serde(default = "default_omega_t_max")]
    pub omega_t_max: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub include_squeezing: bool,
}

fn default_omega_t_max() -> f64 {
    std::f64::consts::PI
}

fn default_samples() -> usize {
    400
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QdistSource {
    /// The ideal interaction's state at the given Omega t.
    Oracle,
    /// A master-equation run to the given Omega t (needs model + truncation).
    Simulate,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdistSection {
    #[serde(alias = "N")]
    pub atoms: usize,
    pub source: QdistSource,
    #[serde(default)]
    pub omega_t: f64,
    #[serde(default)]
    pub include_squeezing: bool,
    #[serde(default = "default_res_theta")]
    pub resolution_theta: usize,
    #[serde(default = "default_res_phi")]
    pub resolution_phi: usize,
}

fn default_res_theta() -> usize {
    64
}

fn default_res_phi() -> usize {
    128
}

/// The full run configuration; sections are optional and checked per mode.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelParams>,
    #[serde(default)]
    pub truncation: Option<TruncationSpec>,
    #[serde(default)]
    pub integrator: Option<IntegratorConfig>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub oracle: Option<OracleSection>,
    #[serde(default)]
    pub sweep: Option<SweepPlan>,
    #[serde(default)]
    pub qdist: Option<QdistSection>,
    #[serde(default)]
    pub estimate: Option<PhysicalParams>,
}

fn section<'a, T>(opt: &'a Option<T>, name: &str) -> Result<&'a T> {
    opt.as_ref()
        .ok_or_else(|| Error::Config(format!("missing required `{name}` section for this mode")))
}

impl RunConfig {
    /// Checks that the sections a mode needs are present and valid.
    pub fn validate_for(&self, mode: Mode) -> Result<()> {
        match mode {
            Mode::Simulate => {
                section(&self.model, "model")?.validate()?;
                let trunc = section(&self.truncation, "truncation")?;
                trunc.validate()?;
                let sim = section(&self.simulate, "simulate")?;
                match (sim.t_final, sim.omega_t_final) {
                    (Some(t), None) | (None, Some(t)) if t > 0.0 => {}
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(
                            "simulate: set exactly one of t_final / omega_t_final".into(),
                        ))
                    }
                    _ => {
                        return Err(Error::Config(
                            "simulate: t_final or omega_t_final must be positive".into(),
                        ))
                    }
                }
            }
            Mode::Oracle => {
                let o = section(&self.oracle, "oracle")?;
                if o.atoms == 0 || o.samples < 2 {
                    return Err(Error::Config("oracle: N must be >= 1 and samples >= 2".into()));
                }
            }
            Mode::Sweep => section(&self.sweep, "sweep")?.validate()?,
            Mode::Qdist => {
                let q = section(&self.qdist, "qdist")?;
                if q.atoms == 0 {
                    return Err(Error::Config("qdist: N must be >= 1".into()));
                }
                if q.resolution_theta < 2 || q.resolution_phi < 2 {
                    return Err(Error::Config("qdist: grid resolutions must be >= 2".into()));
                }
                if q.source == QdistSource::Simulate {
                    section(&self.model, "model")?.validate()?;
                    section(&self.truncation, "truncation")?.validate()?;
                }
            }
            Mode::Estimate => section(&self.estimate, "estimate")?.validate()?,
        }
        Ok(())
    }
}

/// Reads and deserializes a config file; JSON errors carry line/column.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    parse_config_with_overrides(path, &[])
}

/// Same, with `path.to.field=value` overrides applied before deserializing.
pub fn parse_config_with_overrides(path: &Path, overrides: &[String]) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    for item in overrides {
        apply_override(&mut value, item)?;
    }
    serde_json::from_value(value).map_err(|e| {
        // re-parse the original text where possible so the error carries
        // line/column information
        match serde_json::from_str::<RunConfig>(&text) {
            Err(located) => Error::Config(format!("{}: {located}", path.display())),
            Ok(_) => Error::Config(format!("{}: {e}", path.display())),
        }
    })
}

fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (dotted, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not PATH=VALUE")))?;
    // bare words become strings; anything that parses as JSON is taken as-is
    let new: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node.as_object_mut().ok_or_else(|| {
            Error::Config(format!("override `{dotted}`: `{part}` is not an object"))
        })?;
        if i + 1 == parts.len() {
            map.insert((*part).to_string(), new);
            return Ok(());
        }
        node = map
            .entry((*part).to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("override paths are non-empty")
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    wall_time_seconds: f64,
    outputs: &'a [String],
    config: &'a RunConfig,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), contents)?;
    Ok(())
}

fn run_simulate(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let params = config.model.as_ref().expect("validated");
    let trunc = config.truncation.expect("validated");
    let sim = config.simulate.as_ref().expect("validated");
    let integrator = config.integrator.unwrap_or_default();
    let eff = effective_params(params, trunc.atoms)?;
    let t_final = match (sim.t_final, sim.omega_t_final) {
        (Some(t), _) => t,
        (None, Some(ot)) => ot / eff.omega_big,
        _ => unreachable!("validated"),
    };
    let table = build_basis(trunc)?;
    let rho0 = initial_state(&table);
    let record = evolve(&rho0, t_final, &integrator, params, &table, sim.record_every)?;
    write_file(dir, "trajectory.csv", &record.to_csv(eff.omega_big, trunc.atoms))?;
    Ok(vec!["trajectory.csv".into()])
}

fn run_oracle(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let o = config.oracle.as_ref().expect("validated");
    let times: Vec<f64> = (0..o.samples)
        .map(|i| o.omega_t_max * i as f64 / (o.samples - 1) as f64)
        .collect();
    let es = crevasse_curve(o.atoms, &times, o.include_squeezing)?;
    let emax = ((o.atoms + 1) as f64).log2();
    let mut csv = String::from("omega_t,E,E_norm\n");
    for (t, e) in times.iter().zip(&es) {
        writeln!(csv, "{:.11e},{:.11e},{:.11e}", t, e, e / emax).expect("string write");
    }
    write_file(dir, "oracle.csv", &csv)?;
    Ok(vec!["oracle.csv".into()])
}

fn run_sweep(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let rows = scaling_sweep(config.sweep.as_ref().expect("validated"))?;
    write_file(dir, "sweep.csv", &sweep_csv(&rows))?;
    Ok(vec!["sweep.csv".into()])
}

fn qdist_state(config: &RunConfig) -> Result<GroundDensityMatrix> {
    let q = config.qdist.as_ref().expect("validated");
    match q.source {
        QdistSource::Oracle => {
            let s = ideal_evolve(q.atoms, q.omega_t, q.include_squeezing);
            Ok(GroundDensityMatrix::from_pure(q.atoms, &s.amplitudes))
        }
        QdistSource::Simulate => {
            let params = config.model.as_ref().expect("validated");
            let trunc = config.truncation.expect("validated");
            if trunc.atoms != q.atoms {
                return Err(Error::Config("qdist.N must match truncation.atoms".into()));
            }
            let integrator = config.integrator.unwrap_or_default();
            let eff = effective_params(params, trunc.atoms)?;
            let table = build_basis(trunc)?;
            let rho0 = initial_state(&table);
            let t_final = q.omega_t / eff.omega_big;
            let rho = evolve_to(&rho0, t_final, &integrator, params, &table)?;
            partial_trace_ground(&rho, &table)
        }
    }
}

fn run_qdist(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let q = config.qdist.as_ref().expect("validated");
    let ground = qdist_state(config)?;
    let grid = q_grid(&ground, q.resolution_theta, q.resolution_phi)?;
    let mut outputs = Vec::new();
    for k2 in 0..=q.atoms {
        let mut csv = String::from("theta,phi,Q\n");
        for (i, &theta) in grid.thetas.iter().enumerate() {
            for (j, &phi) in grid.phis.iter().enumerate() {
                writeln!(csv, "{:.11e},{:.11e},{:.11e}", theta, phi, grid.values[k2][i][j])
                    .expect("string write");
            }
        }
        let name = format!("qdist_k2_{k2}.csv");
        write_file(dir, &name, &csv)?;
        outputs.push(name);
    }
    let weights: Vec<f64> = (0..=q.atoms).map(|k2| grid.integral(k2)).collect();
    let manifest = serde_json::json!({
        "atoms": q.atoms,
        "omega_t": q.omega_t,
        "k2_weights": weights,
        "trace": ground.trace(),
    });
    write_file(dir, "qdist_weights.json", &format!("{manifest:#}\n"))?;
    outputs.push("qdist_weights.json".into());
    Ok(outputs)
}

fn run_estimate(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let est = experiment_estimates(config.estimate.as_ref().expect("validated"))?;
    let json = serde_json::to_string_pretty(&est).expect("serializable");
    write_file(dir, "estimates.json", &format!("{json}\n"))?;
    Ok(vec!["estimates.json".into()])
}

/// Executes a validated config, writing the mode's artifacts plus a
/// reproducibility manifest into `dir`.
pub fn run(mode: Mode, config: &RunConfig, dir: &Path) -> Result<()> {
    config.validate_for(mode)?;
    let start = std::time::Instant::now();
    let outputs = match mode {
        Mode::Simulate => run_simulate(config, dir)?,
        Mode::Oracle => run_oracle(config, dir)?,
        Mode::Sweep => run_sweep(config, dir)?,
        Mode::Qdist => run_qdist(config, dir)?,
        Mode::Estimate => run_estimate(config, dir)?,
    };
    let manifest = Manifest {
        command: mode.name(),
        version: env!("CARGO_PKG_VERSION"),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: &outputs,
        config,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("serializable");
    write_file(dir, "manifest.json", &format!("{json}\n"))?;
    Ok(())
}

/// Exit code policy: 0 success, 2 configuration errors, 3 numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::InvalidTruncation(_)
        | Error::UnknownLabel(_)
        | Error::UnknownStrategy(_)
        | Error::ZeroDetuning(_)
        | Error::Io(_) => 2,
        Error::DimensionMismatch { .. }
        | Error::NotHermitian(_)
        | Error::SolverDiverged { .. }
        | Error::TraceBreakdown(_)
        | Error::InvalidState(_) => 3,
    }
}

/// Binary entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints its own help/version output
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let Some(config_path) = cli.config.as_deref() else {
        eprintln!("error: --config <FILE> is required");
        return 2;
    };
    let config = match parse_config_with_overrides(config_path, &cli.overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    let out_dir = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    match run(cli.command, &config, &out_dir) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(name: &str, contents: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("becsim-test-{}-{name}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("config.json");
        std::fs::write(&path, contents).unwrap();
        path
    }

    const MINIMAL_SIMULATE: &str = r#"{
        "model": {"g": 1.0, "big_g": 1.0, "delta_c": 10.0, "delta_l": 20.0},
        "truncation": {"N": 1},
        "simulate": {"omega_t_final": 0.1}
    }"#;

    #[test]
    fn minimal_simulate_config_is_valid() {
        let path = write_temp("minimal", MINIMAL_SIMULATE);
        let config = parse_config(&path).unwrap();
        config.validate_for(Mode::Simulate).unwrap();
        assert_eq!(config.truncation.unwrap().atoms, 1);
    }

    #[test]
    fn negative_atom_count_is_rejected() {
        let path = write_temp(
            "negative",
            r#"{"truncation": {"N": -3}, "oracle": {"N": 2}}"#,
        );
        let err = parse_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("N") || msg.contains("atoms") || msg.contains("invalid"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let path = write_temp("unknown", r#"{"modle": {"g": 1.0}}"#);
        let err = parse_config(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("modle"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn missing_section_names_the_mode() {
        let path = write_temp("nosweep", MINIMAL_SIMULATE);
        let config = parse_config(&path).unwrap();
        let err = config.validate_for(Mode::Sweep).unwrap_err();
        assert!(err.to_string().contains("sweep"), "{err}");
    }

    #[test]
    fn dotted_overrides_apply() {
        let path = write_temp("override", MINIMAL_SIMULATE);
        let config = parse_config_with_overrides(
            &path,
            &["model.delta_l=40".into(), "simulate.record_every=7".into()],
        )
        .unwrap();
        assert_eq!(config.model.unwrap().delta_l, 40.0);
        assert_eq!(config.simulate.unwrap().record_every, 7);
    }

    #[test]
    fn ambiguous_final_time_is_rejected() {
        let path = write_temp("ambig", MINIMAL_SIMULATE);
        let config = parse_config_with_overrides(&path, &["simulate.t_final=5.0".into()]).unwrap();
        let err = config.validate_for(Mode::Simulate).unwrap_err();
        assert!(err.to_string().contains("exactly one"), "{err}");
    }

    #[test]
    fn estimate_mode_end_to_end() {
        let config_json = r#"{
            "estimate": {
                "big_g": 1.3509e9, "g": 1.3509e9,
                "gamma_s": 1.8850e7, "gamma_c": 3.3301e8,
                "atoms": 1000, "delta_c_over_g": 2.0, "delta_l_over_g": 474.34
            }
        }"#;
        let path = write_temp("estimate", config_json);
        let config = parse_config(&path).unwrap();
        let dir = path.parent().unwrap().join("out");
        run(Mode::Estimate, &config, &dir).unwrap();
        let json = std::fs::read_to_string(dir.join("estimates.json")).unwrap();
        let est: serde_json::Value = serde_json::from_str(&json).unwrap();
        let t_cnot = est["t_cnot"].as_f64().unwrap();
        assert!((t_cnot - 5.2e-7).abs() / 5.2e-7 < 0.02, "t_cnot = {t_cnot}");
        let manifest = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        assert!(manifest.contains("\"command\": \"estimate\""));
    }

    #[test]
    fn oracle_mode_writes_curve_with_zero_at_half_period() {
        let config_json = r#"{"oracle": {"N": 8, "omega_t_max": 3.14159265358979, "samples": 5}}"#;
        let path = write_temp("oracle", config_json);
        let config = parse_config(&path).unwrap();
        let dir = path.parent().unwrap().join("out");
        run(Mode::Oracle, &config, &dir).unwrap();
        let csv = std::fs::read_to_string(dir.join("oracle.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "omega_t,E,E_norm");
        assert_eq!(lines.len(), 6);
        // third sample is Omega t = pi/2: E vanishes there
        let mid: Vec<&str> = lines[3].split(',').collect();
        let e: f64 = mid[1].parse().unwrap();
        assert!(e.abs() < 1e-9, "E(pi/2) = {e}");
    }

    #[test]
    fn determinism_of_outputs() {
        let config_json = r#"{"oracle": {"N": 3, "samples": 50}}"#;
        let path = write_temp("determinism", config_json);
        let config = parse_config(&path).unwrap();
        let dir1 = path.parent().unwrap().join("out1");
        let dir2 = path.parent().unwrap().join("out2");
        run(Mode::Oracle, &config, &dir1).unwrap();
        run(Mode::Oracle, &config, &dir2).unwrap();
        let a = std::fs::read(dir1.join("oracle.csv")).unwrap();
        let b = std::fs::read(dir2.join("oracle.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::TraceBreakdown(0.01)), 3);
        assert_eq!(
            exit_code(&Error::SolverDiverged { residual: 1.0, iterations: 3 }),
            3
        );
    }
}
