//! Subcommands behind the `n2n` binary. Every command writes deterministic files into an output
//! directory together with a `manifest.json`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::Error;
use crate::jensen::{curve_emit, verify_row, PhiFunction, RowReport, RowStatus, SearchGrid, Tolerance};
use crate::loss::{LossKind, LossSpec, Placement, DEFAULT_EPSILON};
use crate::noise_models::{bhatia_davis_bound, Family, NoiseModel, NoiseSpec};
use crate::oracle::{finite_data_check, run_battery, OracleCell, OracleSearch, BATTERY_Y};
use crate::search::log_grid;
use crate::tonemap::ToneMap;
use crate::trainer::{median_smooth, train, FieldConfig, RunStatus, SyntheticField, TrainConfig, TrainRun};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum CommandError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl CommandError {
    /// 2 for bad usage, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Usage(_) => 2,
            _ => 1,
        }
    }
}

impl From<Error> for CommandError {
    fn from(e: Error) -> Self {
        match e {
            Error::UnknownName { .. } | Error::Domain { .. } => CommandError::Usage(e.to_string()),
            _ => CommandError::Failed(e.to_string()),
        }
    }
}

pub type CommandResult<T> = std::result::Result<T, CommandError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Curves,
    VerifyTable,
    Oracle,
    Train,
    FiniteData,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Curves => "curves",
            Command::VerifyTable => "verify-table",
            Command::Oracle => "oracle",
            Command::Train => "train",
            Command::FiniteData => "finite-data",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesConfig {
    /// Tone-map and J curves are sampled on `y_points` evenly spaced values in `[0, y_max]`.
    pub y_max: f64,
    pub y_points: usize,
    /// Support bound `M` of the variance-bound parabola.
    pub support_max: f64,
    pub parabola_points: usize,
    /// Extra φ identifiers (`shape:map`) appended to the table rows.
    pub extra_phis: Vec<String>,
}

impl Default for CurvesConfig {
    fn default() -> Self {
        CurvesConfig { y_max: 10.0, y_points: 201, support_max: 2.0, parabola_points: 201, extra_phis: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Row identifiers to check; all 14 rows when empty.
    pub rows: Vec<String>,
    pub y_min: f64,
    pub y_max: f64,
    pub y_points: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        let t = Tolerance::default();
        TableConfig { rows: Vec::new(), y_min: 1e-2, y_max: 1e2, y_points: 50, abs_tol: t.abs, rel_tol: t.rel }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub samples: usize,
    pub ys: Vec<f64>,
    pub grid_points: usize,
    pub span: f64,
    pub rel_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        let s = OracleSearch::default();
        OracleConfig {
            samples: 1_000_000,
            ys: BATTERY_Y.to_vec(),
            grid_points: s.grid_points,
            span: s.span,
            rel_tol: s.rel_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub field: FieldConfig,
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub clip: f64,
    /// Train all 22 configurations instead of the one selected by loss/placement/tonemap.
    pub sweep: bool,
    /// Number of consecutive seeds starting at the global seed.
    pub seeds: usize,
    /// Also write median-filtered curves.
    pub smooth: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            field: FieldConfig::default(),
            steps: t.steps,
            lr: t.lr,
            batch: t.batch,
            clip: t.clip,
            sweep: false,
            seeds: 1,
            smooth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FiniteDataConfig {
    pub pixels: Vec<usize>,
    pub trials: usize,
    pub model: NoiseSpec,
    pub error_mean: f64,
    pub error_var: f64,
}

impl Default for FiniteDataConfig {
    fn default() -> Self {
        FiniteDataConfig {
            pixels: vec![1, 10, 100],
            trials: 20_000,
            model: NoiseSpec { family: Family::TwoPoint, mean: 1.0, param: Some(1.0), support_max: None },
            error_mean: 0.0,
            error_var: 0.0,
        }
    }
}

/// Every semantic parameter of a run. Loaded from JSON, then overridden by command-line flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epsilon: f64,
    pub loss: Option<LossKind>,
    pub placement: Option<Placement>,
    pub tonemap: Option<ToneMap>,
    pub curves: CurvesConfig,
    pub table: TableConfig,
    pub oracle: OracleConfig,
    pub train: TrainSection,
    pub finite_data: FiniteDataConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            epsilon: DEFAULT_EPSILON,
            loss: None,
            placement: None,
            tonemap: None,
            curves: CurvesConfig::default(),
            table: TableConfig::default(),
            oracle: OracleConfig::default(),
            train: TrainSection::default(),
            finite_data: FiniteDataConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CommandResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CommandError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CommandError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Configurations matching the loss/placement/tonemap filters among the 22-configuration sweep.
    pub fn selected_specs(&self) -> CommandResult<Vec<LossSpec>> {
        let specs: Vec<LossSpec> = LossSpec::sweep(self.epsilon)?
            .into_iter()
            .filter(|s| self.loss.is_none_or(|k| s.kind() == k))
            .filter(|s| self.placement.is_none_or(|p| s.placement() == p))
            .filter(|s| self.tonemap.is_none_or(|t| s.tonemap() == t))
            .collect();
        if specs.is_empty() {
            return Err(CommandError::Usage("no loss configuration matches the given filters".into()));
        }
        Ok(specs)
    }

    /// The single configuration trained without `--sweep`; unset parts default to HDR/both/reinhard_gamma.
    pub fn single_spec(&self) -> CommandResult<LossSpec> {
        let placement = self.placement.unwrap_or(Placement::Both);
        let tonemap = match placement {
            Placement::None => ToneMap::Identity,
            _ => self.tonemap.unwrap_or(ToneMap::ReinhardGamma),
        };
        Ok(LossSpec::new(self.loss.unwrap_or(LossKind::Hdr), placement, tonemap, self.epsilon)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub command: Command,
    pub version: &'static str,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub artifacts: Vec<String>,
}

/// What a command produced. `failures` lists contract violations; a non-empty list means exit 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub manifest: Manifest,
    pub summary: Vec<String>,
    pub failures: Vec<String>,
}

/// `{:.16e}`: 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

struct Artifacts<'a> {
    dir: &'a Path,
    names: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(dir: &'a Path) -> CommandResult<Self> {
        fs::create_dir_all(dir).map_err(|source| CommandError::Io { path: dir.to_path_buf(), source })?;
        Ok(Artifacts { dir, names: Vec::new() })
    }

    fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CommandResult<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| CommandError::Io { path: parent.to_path_buf(), source })?;
        }
        let io_err = |e: csv::Error, path: &Path| CommandError::Io {
            path: path.to_path_buf(),
            source: io::Error::other(e.to_string()),
        };
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_path(&path)
            .map_err(|e| io_err(e, &path))?;
        w.write_record(header).map_err(|e| io_err(e, &path))?;
        for row in rows {
            w.write_record(&row).map_err(|e| io_err(e, &path))?;
        }
        w.flush().map_err(|source| CommandError::Io { path: path.clone(), source })?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CommandResult<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).expect("serializable");
        text.push('\n');
        fs::write(&path, text).map_err(|source| CommandError::Io { path, source })?;
        self.names.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: Command, config: &ExperimentConfig) -> CommandResult<Manifest> {
        let manifest = Manifest {
            command,
            version: VERSION,
            seed: config.seed,
            config_hash: config.hash(),
            config: config.clone(),
            artifacts: self.names.clone(),
        };
        self.json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

pub fn run(command: Command, config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    match command {
        Command::Curves => cmd_curves(config, out),
        Command::VerifyTable => cmd_verify_table(config, out),
        Command::Oracle => cmd_oracle(config, out),
        Command::Train => cmd_train(config, out),
        Command::FiniteData => cmd_finite_data(config, out),
    }
}

fn linear_grid(hi: f64, n: usize) -> CommandResult<Vec<f64>> {
    if n < 2 || !(hi > 0.0) {
        return Err(CommandError::Usage(format!("grid needs >= 2 points and a positive end, got {n} and {hi}")));
    }
    Ok((0..n).map(|i| hi * i as f64 / (n - 1) as f64).collect())
}

pub fn cmd_curves(config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    let c = &config.curves;
    let ys = linear_grid(c.y_max, c.y_points)?;
    let mut art = Artifacts::new(out)?;

    let mut header = vec!["y"];
    header.extend(ToneMap::ALL.iter().map(|m| m.name()));
    art.csv(
        "tonemaps.csv",
        &header,
        ys.iter().map(|&y| {
            std::iter::once(fmt_f64(y)).chain(ToneMap::ALL.iter().map(|m| fmt_f64(m.value(y)))).collect()
        }),
    )?;

    let mut phis = PhiFunction::table(config.epsilon)?;
    for id in &c.extra_phis {
        phis.push(PhiFunction::parse(id, config.epsilon)?);
    }
    let rows = curve_emit(&phis, &ys)?;
    art.csv(
        "jensen_curves.csv",
        &["phi", "y", "j_abs_max", "method"],
        rows.iter().map(|r| vec![r.phi.clone(), fmt_f64(r.y), fmt_f64(r.j_abs_max), r.method.name().to_string()]),
    )?;

    let m = c.support_max;
    let parabola = linear_grid(m, c.parabola_points)?
        .into_iter()
        .map(|y| Ok(vec![fmt_f64(y), fmt_f64(bhatia_davis_bound(y, m)?)]))
        .collect::<CommandResult<Vec<_>>>()?;
    art.csv("variance_bound.csv", &["y", "variance_bound"], parabola)?;

    let manifest = art.finish(Command::Curves, config)?;
    let summary = vec![format!("{} φ × {} y values", phis.len(), ys.len())];
    Ok(Outcome { manifest, summary, failures: Vec::new() })
}

pub fn cmd_verify_table(config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    let t = &config.table;
    let table = PhiFunction::table(config.epsilon)?;
    let selected: Vec<PhiFunction> = if t.rows.is_empty() {
        table
    } else {
        t.rows
            .iter()
            .map(|id| {
                let phi = PhiFunction::parse(id, config.epsilon)?;
                if phi.is_table_row() {
                    Ok(phi)
                } else {
                    Err(CommandError::Usage(format!("`{id}` is not a table row")))
                }
            })
            .collect::<CommandResult<_>>()?
    };
    if !(t.y_min > 0.0 && t.y_max > t.y_min) || t.y_points < 2 {
        return Err(CommandError::Usage("table y range must satisfy 0 < y_min < y_max with >= 2 points".into()));
    }
    let ys = log_grid(t.y_min, t.y_max, t.y_points);
    let tol = Tolerance { abs: t.abs_tol, rel: t.rel_tol };
    let reports: Vec<RowReport> = selected
        .iter()
        .map(|phi| verify_row(phi, &ys, &tol, &SearchGrid::default()))
        .collect::<Result<_, _>>()?;

    let mut art = Artifacts::new(out)?;
    art.csv(
        "table_report.csv",
        &["phi", "status", "points", "failures", "worst_ratio", "worst_y", "worst_side"],
        reports.iter().map(|r| {
            vec![
                r.phi.clone(),
                r.status.name().into(),
                r.points.to_string(),
                r.failures.to_string(),
                fmt_f64(r.worst_ratio),
                fmt_f64(r.worst_y),
                r.worst_side.into(),
            ]
        }),
    )?;
    let manifest = art.finish(Command::VerifyTable, config)?;
    let summary = reports
        .iter()
        .map(|r| format!("{:<36} {:<16} worst {:.3e} of tolerance at y = {:.4e} ({})", r.phi, r.status.name(), r.worst_ratio, r.worst_y, r.worst_side))
        .collect();
    let failures = reports
        .iter()
        .filter(|r| r.status == RowStatus::Fail)
        .map(|r| format!("{}: {} of {} points outside tolerance", r.phi, r.failures, r.points))
        .collect();
    Ok(Outcome { manifest, summary, failures })
}

pub const ORACLE_HEADER: [&str; 15] = [
    "spec",
    "placement",
    "tonemap",
    "family",
    "y",
    "var",
    "empirical_argmin",
    "closed_form",
    "lower",
    "upper",
    "mc_se",
    "pass",
    "closed_form_exact",
    "lower_eps0",
    "upper_eps0",
];

pub fn oracle_row(c: &OracleCell) -> Vec<String> {
    let r = &c.result;
    vec![
        c.spec.kind().name().into(),
        c.spec.placement().name().into(),
        c.spec.tonemap().name().into(),
        c.family.name().into(),
        fmt_f64(c.y),
        fmt_f64(c.variance),
        fmt_f64(r.empirical_argmin),
        fmt_f64(r.closed_form),
        fmt_f64(r.interval.lower),
        fmt_f64(r.interval.upper),
        fmt_f64(r.mc_standard_error),
        c.pass().to_string(),
        fmt_f64(r.closed_form_exact),
        fmt_f64(r.interval_vanishing.lower),
        fmt_f64(r.interval_vanishing.upper),
    ]
}

pub fn cmd_oracle(config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    let o = &config.oracle;
    let specs = config.selected_specs()?;
    let search = OracleSearch { grid_points: o.grid_points, span: o.span, rel_tol: o.rel_tol };
    if o.samples < 10_000 {
        return Err(CommandError::Usage(format!("oracle samples must be >= 10^4, got {}", o.samples)));
    }
    let cells = run_battery(&specs, &o.ys, config.seed, o.samples, &search)?;
    let mut art = Artifacts::new(out)?;
    art.csv("oracle.csv", &ORACLE_HEADER, cells.iter().map(oracle_row))?;
    let manifest = art.finish(Command::Oracle, config)?;
    let failures: Vec<String> = cells
        .iter()
        .filter(|c| !c.pass())
        .map(|c| {
            format!(
                "{} {} y={}: agreement {}, containment {}, unimodal {} (argmin {:.6e}, closed form {:.6e}, se {:.3e}, interval [{:.6e}, {:.6e}])",
                c.spec.label(),
                c.family,
                c.y,
                c.agrees(),
                c.contained(),
                c.unimodal(),
                c.result.empirical_argmin,
                c.result.closed_form,
                c.result.mc_standard_error,
                c.result.interval.lower,
                c.result.interval.upper
            )
        })
        .collect();
    let summary = vec![format!("{} cells, {} pass", cells.len(), cells.len() - failures.len())];
    Ok(Outcome { manifest, summary, failures })
}

pub const TRAIN_HEADER: [&str; 4] = ["step", "train_loss", "grad_norm_preclip", "val_rmse"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub spec: LossSpec,
    pub seed: u64,
    pub status: RunStatus,
    pub skipped_steps: usize,
    pub final_val_rmse: f64,
    pub grad_norm_max: f64,
    pub input_rmse: f64,
    pub curves: String,
}

fn run_file_stem(spec: &LossSpec, seed: u64) -> String {
    format!("{}_{}_{}_seed{seed}", spec.kind().name(), spec.placement().name(), spec.tonemap().name())
}

pub fn curve_rows(run: &TrainRun, smooth: bool) -> Vec<Vec<String>> {
    let col = |f: fn(&crate::trainer::Checkpoint) -> f64| -> Vec<f64> {
        let v: Vec<f64> = run.curves.iter().map(f).collect();
        if smooth {
            median_smooth(&v, (run.config.steps / 100 / (run.config.steps / 200).max(1)).max(1))
        } else {
            v
        }
    };
    let (loss, norm, val) = (col(|c| c.train_loss), col(|c| c.grad_norm_preclip), col(|c| c.val_rmse));
    run.curves
        .iter()
        .enumerate()
        .map(|(i, c)| vec![c.step.to_string(), fmt_f64(loss[i]), fmt_f64(norm[i]), fmt_f64(val[i])])
        .collect()
}

/// Trains the selected configurations (or the sweep) on one field per seed.
pub fn train_runs(config: &ExperimentConfig) -> CommandResult<Vec<(TrainRun, f64)>> {
    let t = &config.train;
    if t.steps == 0 {
        return Err(CommandError::Usage("steps ≥ 1 required (got steps = 0)".into()));
    }
    if t.seeds == 0 {
        return Err(CommandError::Usage("seeds must be >= 1".into()));
    }
    let specs = if t.sweep { LossSpec::sweep(config.epsilon)? } else { vec![config.single_spec()?] };
    let mut runs = Vec::new();
    for k in 0..t.seeds as u64 {
        let seed = config.seed + k;
        let field = SyntheticField::generate(&t.field, seed)?;
        let base = field.input_rmse()?;
        let run_cfg = TrainConfig { steps: t.steps, lr: t.lr, batch: t.batch, clip: t.clip, seed };
        for spec in &specs {
            runs.push((train(&field, spec, &run_cfg)?, base));
        }
    }
    Ok(runs)
}

pub fn cmd_train(config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    let runs = train_runs(config)?;
    let mut art = Artifacts::new(out)?;
    let mut summaries = Vec::new();
    for (run, base) in &runs {
        let stem = run_file_stem(&run.spec, run.config.seed);
        let file = format!("curves/{stem}.csv");
        art.csv(&file, &TRAIN_HEADER, curve_rows(run, false))?;
        if config.train.smooth {
            art.csv(&format!("curves/{stem}_smoothed.csv"), &TRAIN_HEADER, curve_rows(run, true))?;
        }
        summaries.push(RunSummary {
            spec: run.spec,
            seed: run.config.seed,
            status: run.status,
            skipped_steps: run.skipped_steps,
            final_val_rmse: run.final_rmse(),
            grad_norm_max: run.grad_norm_max,
            input_rmse: *base,
            curves: file,
        });
    }
    art.csv(
        "train_summary.csv",
        &["spec", "placement", "tonemap", "seed", "status", "skipped_steps", "final_val_rmse", "grad_norm_max", "input_rmse"],
        summaries.iter().map(|s| {
            vec![
                s.spec.kind().name().into(),
                s.spec.placement().name().into(),
                s.spec.tonemap().name().into(),
                s.seed.to_string(),
                match s.status {
                    RunStatus::Converged => "CONVERGED".into(),
                    RunStatus::Diverged => "DIVERGED".into(),
                },
                s.skipped_steps.to_string(),
                fmt_f64(s.final_val_rmse),
                fmt_f64(s.grad_norm_max),
                fmt_f64(s.input_rmse),
            ]
        }),
    )?;
    art.json("runs.json", &summaries)?;
    let manifest = art.finish(Command::Train, config)?;
    let summary = summaries
        .iter()
        .map(|s| format!("{:<28} seed {} {:?} val rMSE {:.5} (input {:.5})", s.spec.label(), s.seed, s.status, s.final_val_rmse, s.input_rmse))
        .collect();
    Ok(Outcome { manifest, summary, failures: Vec::new() })
}

pub fn cmd_finite_data(config: &ExperimentConfig, out: &Path) -> CommandResult<Outcome> {
    let f = &config.finite_data;
    let model = NoiseModel::try_from(f.model)?;
    let mut reports = Vec::new();
    for (k, &n) in f.pixels.iter().enumerate() {
        let models = vec![model; n];
        let r = finite_data_check(&models, &vec![f.error_mean; n], &vec![f.error_var; n], f.trials, config.seed + k as u64)?;
        reports.push(r);
    }
    let mut art = Artifacts::new(out)?;
    art.csv(
        "finite_data.csv",
        &["pixels", "trials", "empirical", "empirical_se", "closed_form", "pass"],
        reports.iter().map(|r| {
            vec![
                r.pixels.to_string(),
                r.trials.to_string(),
                fmt_f64(r.empirical),
                fmt_f64(r.empirical_se),
                fmt_f64(r.closed_form),
                r.agrees().to_string(),
            ]
        }),
    )?;
    let manifest = art.finish(Command::FiniteData, config)?;
    let summary = reports
        .iter()
        .map(|r| format!("N = {:<5} empirical {:.6e} ± {:.2e}, closed form {:.6e}", r.pixels, r.empirical, r.empirical_se, r.closed_form))
        .collect();
    let failures = reports
        .iter()
        .filter(|r| !r.agrees())
        .map(|r| format!("N = {}: empirical {} vs closed form {} (se {})", r.pixels, r.empirical, r.closed_form, r.empirical_se))
        .collect();
    Ok(Outcome { manifest, summary, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_semantic_fields() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.train.lr = 0.051;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.seed = 1;
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn config_round_trips_and_rejects_unknown_keys() {
        let a = ExperimentConfig { loss: Some(LossKind::Rmse), ..Default::default() };
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), a);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"seed": 4, "train": {"steps": 10}}"#).unwrap();
        assert_eq!(partial.seed, 4);
        assert_eq!(partial.train.steps, 10);
        assert_eq!(partial.train.lr, 0.05);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 4}"#).is_err());
    }

    #[test]
    fn float_formatting() {
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        let v = 0.1 + 0.2;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn spec_selection() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.selected_specs().unwrap().len(), 22);
        c.placement = Some(Placement::Both);
        assert_eq!(c.selected_specs().unwrap().len(), 9);
        c.loss = Some(LossKind::HdrStar);
        assert!(matches!(c.selected_specs(), Err(CommandError::Usage(_))));
        let d = ExperimentConfig::default();
        assert_eq!(d.single_spec().unwrap().label(), "HDR/both/reinhard_gamma");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CommandError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CommandError::Failed("x".into()).exit_code(), 1);
        let e: CommandError = Error::Contract("c".into()).into();
        assert_eq!(e.exit_code(), 1);
    }
}
