//! Experiment runner: JSON configs, subcommands and reports.
//!
//! Every subcommand writes `report.json` plus CSV series into the output
//! directory. Exit codes: 0 all checks pass, 2 a check failed, 3 bad input,
//! 4 a numerical contract was violated.

mod commands;
mod verify;

use crate::error::{Error, Result};
use crate::models::{ModelSpec, PathSpec};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub use commands::{run_evolve, run_hannay, run_phase, run_revival, run_sweep, run_wigner};
pub use verify::{default_verify_config, run_verify};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Phase,
    Hannay,
    Evolve,
    Wigner,
    Verify,
    Sweep,
    Revival,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Phase => "phase",
            Command::Hannay => "hannay",
            Command::Evolve => "evolve",
            Command::Wigner => "wigner",
            Command::Verify => "verify",
            Command::Sweep => "sweep",
            Command::Revival => "revival",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub closed_loop: f64,
    pub identity: f64,
    pub gauge: f64,
    pub route_direct: f64,
    pub route_sos: f64,
    pub route_projector: f64,
    pub evolve: f64,
    pub hannay_rel: f64,
    pub semiclassical_rel: f64,
    pub classical_rel: f64,
    /// Smallest observed order accepted by the quadrature ladder.
    pub quadrature_order: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            closed_loop: 1e-4,
            identity: 1e-4,
            gauge: 1e-8,
            route_direct: 1e-8,
            route_sos: 1e-5,
            route_projector: 1e-5,
            evolve: 1e-2,
            hannay_rel: 0.02,
            semiclassical_rel: 0.05,
            classical_rel: 0.1,
            quadrature_order: 1.8,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        let all = [
            ("closed_loop", self.closed_loop),
            ("identity", self.identity),
            ("gauge", self.gauge),
            ("route_direct", self.route_direct),
            ("route_sos", self.route_sos),
            ("route_projector", self.route_projector),
            ("evolve", self.evolve),
            ("hannay_rel", self.hannay_rel),
            ("semiclassical_rel", self.semiclassical_rel),
            ("classical_rel", self.classical_rel),
            ("quadrature_order", self.quadrature_order),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("tolerances.{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HannayConfig {
    /// Coherent amplitude; sqrt(n) when absent.
    pub alpha: Option<f64>,
    pub coherent_t: f64,
    /// Classical action; (n + 1/2) hbar when absent.
    pub action: Option<f64>,
    pub ladder: Vec<f64>,
    pub members: usize,
    pub semiclassical: bool,
    pub revival: bool,
    pub revival_t: f64,
}

impl Default for HannayConfig {
    fn default() -> Self {
        HannayConfig {
            alpha: None,
            coherent_t: 100.0,
            action: None,
            ladder: vec![800.0, 1600.0],
            members: 16,
            semiclassical: false,
            revival: false,
            revival_t: 400.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WignerConfig {
    pub levels: Vec<usize>,
    /// Path sample of the Moyal comparison; K/4 when absent.
    pub segment: Option<usize>,
    pub holonomy: bool,
    /// Write the Wigner grid of the first level at R(0).
    pub dump: bool,
}

impl Default for WignerConfig {
    fn default() -> Self {
        WignerConfig { levels: vec![5, 10, 20], segment: None, holonomy: false, dump: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Theta0,
    N,
    T,
    K,
    Hbar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

fn default_levels() -> Vec<usize> {
    vec![0]
}

fn default_k() -> usize {
    400
}

fn default_t_ladder() -> Vec<f64> {
    vec![50.0, 100.0, 200.0, 400.0, 800.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathSpec>,
    #[serde(default = "default_levels")]
    pub levels: Vec<usize>,
    #[serde(default = "default_k", rename = "K")]
    pub k: usize,
    #[serde(default = "default_t_ladder", rename = "T")]
    pub t_ladder: Vec<f64>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hannay: HannayConfig,
    #[serde(default)]
    pub wigner: WignerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    /// Output directory; overridden by --out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(model: ModelSpec, path: Option<PathSpec>) -> Self {
        ExperimentConfig {
            model,
            path,
            levels: default_levels(),
            k: default_k(),
            t_ladder: default_t_ladder(),
            tolerances: Tolerances::default(),
            seed: 0,
            hannay: HannayConfig::default(),
            wigner: WignerConfig::default(),
            sweep: None,
            out: None,
        }
    }

    /// Parses a config, reporting the field path of schema errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::InvalidInput(format!("config field `{}`: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.tolerances.validate()?;
        if self.k < 2 {
            return Err(Error::InvalidInput(format!("K must be at least 2, got {}", self.k)));
        }
        if self.levels.is_empty() {
            return Err(Error::InvalidInput("levels must not be empty".into()));
        }
        if self.t_ladder.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput("T ladder entries must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn path_spec(&self) -> Result<&PathSpec> {
        self.path.as_ref().ok_or_else(|| Error::InvalidInput("config field `path` is required".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Failed with a tolerance below what double precision can deliver.
    Infeasible,
}

/// Tolerances below this are flagged infeasible when they fail.
pub const FEASIBILITY_FLOOR: f64 = 1e-13;

/// One reported number with the method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub quantity: String,
    pub method: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_method: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Row {
    pub fn new(quantity: &str, method: &str, value: f64) -> Self {
        Row {
            quantity: quantity.into(),
            method: method.into(),
            value,
            level: None,
            k: None,
            t: None,
            reference: None,
            reference_method: None,
            delta: None,
            tolerance: None,
            verdict: None,
            note: None,
        }
    }

    pub fn level(mut self, n: usize) -> Self {
        self.level = Some(n);
        self
    }

    pub fn k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn t(mut self, t: f64) -> Self {
        self.t = Some(t);
        self
    }

    pub fn note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// Compares against a reference with the given delta and tolerance.
    pub fn check(mut self, reference: f64, method: &str, delta: f64, tol: f64) -> Self {
        self.reference = Some(reference);
        self.reference_method = Some(method.into());
        self.delta = Some(delta);
        self.tolerance = Some(tol);
        self.verdict = Some(verdict(delta <= tol, tol));
        self
    }

    /// Pass/fail on a condition with no single reference number.
    pub fn flag(mut self, ok: bool) -> Self {
        self.verdict = Some(if ok { Verdict::Pass } else { Verdict::Fail });
        self
    }
}

fn verdict(ok: bool, tol: f64) -> Verdict {
    match (ok, tol < FEASIBILITY_FLOOR) {
        (true, _) => Verdict::Pass,
        (false, true) => Verdict::Infeasible,
        (false, false) => Verdict::Fail,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub checks: usize,
    pub passed: usize,
    pub failed: usize,
    pub infeasible: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    /// CSV files written next to the report.
    pub series: Vec<String>,
    pub notes: Vec<String>,
    pub summary: Summary,
}

impl RunReport {
    pub fn new(command: Command, config: &ExperimentConfig) -> Self {
        RunReport {
            command,
            seed: config.seed,
            config: config.clone(),
            rows: Vec::new(),
            series: Vec::new(),
            notes: Vec::new(),
            summary: Summary::default(),
        }
    }

    pub fn push(&mut self, row: Row) {
        self.rows.push(row);
    }

    pub fn finish(mut self) -> Self {
        let mut s = Summary::default();
        for v in self.rows.iter().filter_map(|r| r.verdict) {
            s.checks += 1;
            match v {
                Verdict::Pass => s.passed += 1,
                Verdict::Fail => s.failed += 1,
                Verdict::Infeasible => s.infeasible += 1,
            }
        }
        self.summary = s;
        self
    }

    pub fn exit_code(&self) -> i32 {
        if self.summary.failed + self.summary.infeasible > 0 {
            2
        } else {
            0
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write_rows_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "quantity", "method", "value", "level", "K", "T", "reference", "reference_method", "delta", "tolerance", "verdict",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        for r in &self.rows {
            out.write_record(&[
                r.quantity.clone(),
                r.method.clone(),
                format!("{:.12e}", r.value),
                r.level.map(|v| v.to_string()).unwrap_or_default(),
                r.k.map(|v| v.to_string()).unwrap_or_default(),
                opt(r.t),
                opt(r.reference),
                r.reference_method.clone().unwrap_or_default(),
                opt(r.delta),
                opt(r.tolerance),
                r.verdict.map(|v| format!("{v:?}").to_lowercase()).unwrap_or_default(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Output directory that records every series file it writes.
pub struct Output {
    dir: Option<PathBuf>,
    files: Vec<String>,
}

impl Output {
    pub fn new(dir: Option<&Path>) -> Result<Self> {
        if let Some(d) = dir {
            fs::create_dir_all(d)?;
        }
        Ok(Output { dir: dir.map(Path::to_path_buf), files: Vec::new() })
    }

    /// Runs `write` against `name` in the output directory (skipped when
    /// there is none) and lists the file in the report.
    pub fn csv(&mut self, name: &str, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        if let Some(d) = &self.dir {
            let mut f = BufWriter::new(fs::File::create(d.join(name))?);
            write(&mut f)?;
            f.flush()?;
        }
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn files(&self) -> Vec<String> {
        self.files.clone()
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }
}

/// Dispatches `command` and writes report.json into `out`.
pub fn run(command: Command, config: &ExperimentConfig, out: Option<&Path>) -> Result<RunReport> {
    config.validate()?;
    let mut output = Output::new(out)?;
    let mut report = match command {
        Command::Phase => run_phase(config, &mut output)?,
        Command::Hannay => run_hannay(config, &mut output)?,
        Command::Evolve => run_evolve(config, &mut output)?,
        Command::Wigner => run_wigner(config, &mut output)?,
        Command::Verify => run_verify(config, &mut output)?,
        Command::Sweep => run_sweep(config, &mut output)?,
        Command::Revival => run_revival(config, &mut output)?,
    };
    report.series = output.files();
    let report = report.finish();
    if let Some(d) = output.dir() {
        fs::write(d.join("report.json"), report.to_json()?)?;
    }
    Ok(report)
}

/// Exit code for an error: 4 for numerical contracts, 3 otherwise.
pub fn error_exit_code(e: &Error) -> i32 {
    if e.is_numerical_contract() {
        4
    } else {
        3
    }
}
