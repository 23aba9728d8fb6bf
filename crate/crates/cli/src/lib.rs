//! Config-driven pipeline behind the `deconv` binary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use copula_deconv::evaluate::{
    energy_adjusted_posterior, ise_estimate, residual_diagnostics, write_residual_csv, EvaluateError, IseReport,
};
use copula_deconv::latent::{LatentError, RecallDataset};
use copula_deconv::sampler::{
    estimate_densities, run_chain, DrawFormat, GridSpec, Hyperparameters, PosteriorDensity, PosteriorDraws,
    SamplerError,
};
use copula_deconv::simulate::{simulate, ScenarioSpec, SimulateError, TruthModel, TruthSidecar};

/// Environment variable that overrides the output directory of the config.
pub const OUTPUT_ENV: &str = "DECONV_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Numerical(_) => 4,
            Self::Io { .. } => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config(_) | SamplerError::GridOutOfRange { .. } => Self::Config(e.to_string()),
            SamplerError::Numerical { .. } => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<SimulateError> for CliError {
    fn from(e: SimulateError) -> Self {
        match e {
            SimulateError::Spec(_) | SimulateError::Copula(_) => Self::Config(e.to_string()),
            SimulateError::Density(_) => Self::Numerical(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<EvaluateError> for CliError {
    fn from(e: EvaluateError) -> Self {
        match e {
            EvaluateError::Quadrature(_) => Self::Numerical(e.to_string()),
            EvaluateError::Sampler(s) => s.into(),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<LatentError> for CliError {
    fn from(e: LatentError) -> Self {
        Self::Data(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub data: PathBuf,
    /// Components allowed zeros; `None` infers them from the data.
    pub episodic: Option<Vec<String>>,
    #[serde(default)]
    pub format: DrawFormat,
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    pub truth: PathBuf,
    /// Draws to score; `None` scores the truth against itself.
    pub draws: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_method() -> String {
    "copula-deconvolution".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportSection {
    pub draws: PathBuf,
    #[serde(default)]
    pub grid: GridSpec,
    /// Back-transform grids to the units of the data.
    #[serde(default = "yes")]
    pub raw: bool,
    /// Component that divides the others in energy-adjusted densities.
    pub energy: Option<String>,
    #[serde(default = "default_z_points")]
    pub z_points: usize,
}

fn yes() -> bool {
    true
}
fn default_z_points() -> usize {
    1601
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseSection {
    pub draws: PathBuf,
    pub data: PathBuf,
    pub episodic: Option<Vec<String>>,
}

/// One run's configuration; each subcommand reads its own section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub threads: Option<usize>,
    pub simulate: Option<ScenarioSpec>,
    pub fit: Option<FitSection>,
    pub evaluate: Option<EvaluateSection>,
    pub export: Option<ExportSection>,
    pub diagnose: Option<DiagnoseSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Fit,
    Evaluate,
    ExportDensity,
    Diagnose,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Fit => "fit",
            Self::Evaluate => "evaluate",
            Self::ExportDensity => "export-density",
            Self::Diagnose => "diagnose",
        }
    }
}

/// A loaded config with paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
    pub base: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base)
    }

    pub fn from_str(text: &str, base: PathBuf) -> Result<Self, CliError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Ok(Self {
            config,
            text: text.to_string(),
            base,
        })
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn input(&self, p: &Path) -> Result<PathBuf, CliError> {
        let full = self.resolve(p);
        if !full.exists() {
            return Err(CliError::Data(format!("missing input {}", full.display())));
        }
        Ok(full)
    }

    fn seed(&self) -> Result<u64, CliError> {
        self.config
            .seed
            .ok_or_else(|| CliError::Config("`seed` is required for this command".into()))
    }

    /// Output directory: flag, then environment, then config, then `.`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(f) = flag {
            return f.to_path_buf();
        }
        if let Ok(env) = std::env::var(OUTPUT_ENV) {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        match &self.config.output {
            Some(o) => self.resolve(o),
            None => self.base.clone(),
        }
    }
}

fn missing(section: &str) -> CliError {
    CliError::Config(format!("missing [{section}] section"))
}

/// Collects output files and commits them atomically.
pub struct OutputSet {
    dir: PathBuf,
    staged: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub config: String,
    pub seed: Option<u64>,
    pub version: String,
    pub files: Vec<ManifestEntry>,
}

fn sha_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputSet {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            staged: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.staged.push((name.into(), bytes));
    }

    /// Writes every file to a temporary name, then renames them into place
    /// together with `manifest.json`. On failure nothing new is left behind.
    pub fn commit(mut self, command: Command, cfg: &LoadedConfig) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let files = self
            .staged
            .iter()
            .map(|(n, b)| ManifestEntry {
                path: n.clone(),
                sha256: sha_hex(b),
            })
            .collect();
        let manifest = Manifest {
            command: command.name().into(),
            config_sha256: sha_hex(cfg.text.as_bytes()),
            config: cfg.text.clone(),
            seed: cfg.config.seed,
            version: env!("CARGO_PKG_VERSION").into(),
            files,
        };
        let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        json.push(b'\n');
        self.staged.push(("manifest.json".into(), json));

        let mut temps: Vec<(PathBuf, PathBuf)> = Vec::new();
        let cleanup = |temps: &[(PathBuf, PathBuf)]| {
            for (t, _) in temps {
                let _ = fs::remove_file(t);
            }
        };
        for (name, bytes) in &self.staged {
            let target = self.dir.join(name);
            let tmp = self.dir.join(format!(".{name}.tmp"));
            let res = File::create(&tmp).and_then(|mut f| {
                f.write_all(bytes)?;
                f.sync_all()
            });
            if let Err(e) = res {
                let _ = fs::remove_file(&tmp);
                cleanup(&temps);
                return Err(CliError::Io { path: tmp, source: e });
            }
            temps.push((tmp, target));
        }
        let mut done = Vec::new();
        for (tmp, target) in &temps {
            if let Err(e) = fs::rename(tmp, target) {
                cleanup(&temps);
                for d in &done {
                    let _ = fs::remove_file(d);
                }
                return Err(CliError::Io {
                    path: target.clone(),
                    source: e,
                });
            }
            done.push(target.clone());
        }
        Ok(done)
    }
}

fn read_data(path: &Path, episodic: Option<&[String]>) -> Result<RecallDataset, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(RecallDataset::read_csv(BufReader::new(f), episodic)?)
}

fn read_draws(path: &Path) -> Result<PosteriorDraws, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(PosteriorDraws::read(BufReader::new(f))?)
}

fn read_sidecar(path: &Path) -> Result<TruthSidecar, CliError> {
    let f = File::open(path).map_err(io_err(path))?;
    Ok(TruthSidecar::read(BufReader::new(f))?)
}

/// Runs one subcommand and returns the files it wrote.
pub fn run(command: Command, cfg: &LoadedConfig, output: Option<&Path>) -> Result<Vec<PathBuf>, CliError> {
    let dir = cfg.output_dir(output);
    let mut out = OutputSet::new(dir);
    match command {
        Command::Simulate => simulate_cmd(cfg, &mut out)?,
        Command::Fit => fit_cmd(cfg, &mut out)?,
        Command::Evaluate => evaluate_cmd(cfg, &mut out)?,
        Command::ExportDensity => export_cmd(cfg, &mut out)?,
        Command::Diagnose => diagnose_cmd(cfg, &mut out)?,
    }
    out.commit(command, cfg)
}

fn simulate_cmd(cfg: &LoadedConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let spec = cfg.config.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let seed = cfg.seed()?;
    let truth = simulate(spec, seed)?;
    let mut csv = Vec::new();
    truth.data.write_csv(&mut csv)?;
    out.add("data.csv", csv);
    let mut json = Vec::new();
    truth.sidecar().write(&mut json)?;
    json.push(b'\n');
    out.add("truth.json", json);
    Ok(())
}

fn fit_cmd(cfg: &LoadedConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let fit = cfg.config.fit.as_ref().ok_or_else(|| missing("fit"))?;
    let seed = cfg.seed()?;
    fit.hyperparameters.validate()?;
    if fit.chains == 0 {
        return Err(CliError::Config("`chains` must be positive".into()));
    }
    let data = read_data(&cfg.input(&fit.data)?, fit.episodic.as_deref())?.scaled();
    let chains = (0..fit.chains)
        .into_par_iter()
        .map(|c| run_chain(&data, &fit.hyperparameters, seed.wrapping_add(c as u64)))
        .collect::<Result<Vec<_>, _>>()?;
    let ext = match fit.format {
        DrawFormat::Csv => "csv",
        DrawFormat::Binary => "bin",
    };
    let mut log = String::from("chain,block,rate\n");
    for (c, draws) in chains.iter().enumerate() {
        let mut buf = Vec::new();
        draws.write(&mut buf, fit.format)?;
        let name = if fit.chains == 1 {
            format!("draws.{ext}")
        } else {
            format!("draws_{}.{ext}", c + 1)
        };
        out.add(name, buf);
        for (block, rate) in &draws.layout().acceptance.rates {
            log.push_str(&format!("{},{block},{rate}\n", c + 1));
        }
    }
    out.add("acceptance.csv", log.into_bytes());
    Ok(())
}

/// Evaluation points and truth/estimate pairs for the joint and each marginal.
pub fn ise_report(
    sidecar: &TruthSidecar,
    estimate: Option<&PosteriorDensity>,
    method: &str,
) -> Result<IseReport, CliError> {
    let truth = TruthModel::new(&sidecar.spec)?;
    let d = sidecar.names.len();
    let mut targets = Vec::with_capacity(d + 1);
    let joint_truth: Vec<f64> = sidecar.x.par_iter().map(|x| truth.joint(x).value).collect();
    let joint_est: Vec<f64> = match estimate {
        Some(e) => sidecar.x.par_iter().map(|x| e.joint_raw(x)).collect(),
        None => joint_truth.clone(),
    };
    let idx: Vec<Vec<f64>> = (0..sidecar.x.len()).map(|i| vec![i as f64]).collect();
    let ise = ise_estimate(|p| joint_truth[p[0] as usize], |p| joint_est[p[0] as usize], &idx)?;
    targets.push(("joint".to_string(), ise));
    for l in 0..d {
        let pts: Vec<Vec<f64>> = sidecar.x.iter().map(|x| vec![x[l]]).collect();
        let tv: Vec<f64> = pts.par_iter().map(|x| truth.marginal(l, x[0]).value).collect();
        let ev: Vec<f64> = match estimate {
            Some(e) => pts.par_iter().map(|x| e.marginal_raw(l, x[0])).collect(),
            None => tv.clone(),
        };
        let ise = ise_estimate(|p| tv[p[0] as usize], |p| ev[p[0] as usize], &idx)?;
        targets.push((sidecar.names[l].clone(), ise));
    }
    Ok(IseReport {
        scenario: sidecar.spec.label().into(),
        method: method.into(),
        points: sidecar.x.len(),
        targets,
    })
}

fn evaluate_cmd(cfg: &LoadedConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let ev = cfg.config.evaluate.as_ref().ok_or_else(|| missing("evaluate"))?;
    let sidecar = read_sidecar(&cfg.input(&ev.truth)?)?;
    let post = match &ev.draws {
        Some(p) => {
            let draws = read_draws(&cfg.input(p)?)?;
            if draws.layout().names != sidecar.names {
                return Err(CliError::Data("draws and truth name different components".into()));
            }
            Some(PosteriorDensity::from_draws(&draws)?)
        }
        None => None,
    };
    let method = if post.is_some() { ev.method.as_str() } else { "truth" };
    let report = ise_report(&sidecar, post.as_ref(), method)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    out.add("ise.csv", buf);
    Ok(())
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn export_cmd(cfg: &LoadedConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let ex = cfg.config.export.as_ref().ok_or_else(|| missing("export"))?;
    let draws = read_draws(&cfg.input(&ex.draws)?)?;
    let grids = estimate_densities(&draws, &ex.grid)?;
    for g in grids {
        let g = if ex.raw { g.to_raw() } else { g };
        let kind = format!("{:?}", g.kind).to_lowercase();
        let name = format!(
            "{kind}_{}.csv",
            g.components.iter().map(|c| sanitize(c)).collect::<Vec<_>>().join("_")
        );
        let mut buf = Vec::new();
        g.write_csv(&mut buf)?;
        out.add(name, buf);
    }
    if let Some(energy) = &ex.energy {
        let layout = draws.layout();
        let j = layout
            .names
            .iter()
            .position(|n| n == energy)
            .ok_or_else(|| CliError::Config(format!("unknown energy component `{energy}`")))?;
        let post = PosteriorDensity::from_draws(&draws)?;
        for l in (0..layout.names.len()).filter(|&l| l != j) {
            let (g, _) = energy_adjusted_posterior(&post, l, j, ex.z_points)?;
            let g = if ex.raw { g.to_raw() } else { g };
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            out.add(format!("energy-adjusted_{}.csv", sanitize(&layout.names[l])), buf);
        }
    }
    Ok(())
}

fn diagnose_cmd(cfg: &LoadedConfig, out: &mut OutputSet) -> Result<(), CliError> {
    let dg = cfg.config.diagnose.as_ref().ok_or_else(|| missing("diagnose"))?;
    let draws = read_draws(&cfg.input(&dg.draws)?)?;
    let raw = read_data(&cfg.input(&dg.data)?, dg.episodic.as_deref())?;
    let factors = &draws.layout().scale_factors;
    // reapply the fitted scaling
    let recalls = (0..raw.num_subjects())
        .map(|i| {
            raw.subject(i)
                .iter()
                .map(|y| y.iter().zip(factors).map(|(v, c)| v * c).collect())
                .collect()
        })
        .collect();
    let data = RecallDataset::new(
        raw.names().to_vec(),
        raw.num_episodic(),
        raw.subject_ids().to_vec(),
        recalls,
    )?;
    let rows = residual_diagnostics(&draws, &data)?;
    let mut buf = Vec::new();
    write_residual_csv(&rows, &mut buf)?;
    out.add("residuals.csv", buf);
    Ok(())
}

/// Sizes the global worker pool; `None` keeps rayon's default.
pub fn configure_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("`threads` must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

/// Writes `bytes` through a temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
    w.write_all(bytes).map_err(io_err(&tmp))?;
    w.flush().map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))
}
