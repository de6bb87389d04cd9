//! Run configuration: a flat TOML file overlaid with command-line flags.
//!
//! ```toml
//! K = 5
//! xi = 0.08
//! epsilon = 1e-12
//! lambda_mode = "adaptive"   # or "image_only", "fixed(0.3)", "fixed" + lambda
//! lambda = 0.3
//! tau = 1.0
//! upsilon = 3
//! bundles = ["a.iceb", "b.iceb"]
//! methods = ["image_only", "caption_only", "ice"]
//! report_json = "report.json"
//! report_csv = "report.csv"
//! top_ks = [1, 5]
//! seed = 0
//! workers = 4
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use ice_core::{IceConfig, LambdaMode, Method};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Keys accepted in the config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    #[serde(rename = "K")]
    k: Option<usize>,
    xi: Option<f64>,
    epsilon: Option<f64>,
    lambda_mode: Option<String>,
    lambda: Option<f64>,
    tau: Option<f64>,
    upsilon: Option<usize>,
    bundles: Option<Vec<PathBuf>>,
    methods: Option<Vec<String>>,
    report_json: Option<PathBuf>,
    report_csv: Option<PathBuf>,
    top_ks: Option<Vec<usize>>,
    seed: Option<u64>,
    workers: Option<usize>,
}

/// Flags shared by every subcommand that runs the fusion engine. Each one
/// overrides the matching config-file key.
#[derive(Debug, Default, Clone, Args)]
pub struct ConfigArgs {
    /// Flat TOML run config.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Top-K anchor size.
    #[arg(short = 'K', long = "K", visible_alias = "k")]
    pub k: Option<usize>,
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// adaptive, image_only, fixed(VALUE) or fixed (with --lambda).
    #[arg(long = "lambda-mode")]
    pub lambda_mode: Option<String>,
    /// Fixed caption weight; implies fixed mode when no mode is given.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Softmax temperature on cosine similarities.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Captions per image to average (at most the stored count).
    #[arg(long)]
    pub upsilon: Option<usize>,
    /// Evaluation threads; defaults to all cores.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// The fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub ice: IceConfig,
    pub bundles: Vec<PathBuf>,
    pub methods: Vec<Method>,
    pub report_json: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
    pub top_ks: Vec<usize>,
    pub seed: u64,
    pub workers: Option<usize>,
}

fn resolve_mode(mode: Option<&str>, lambda: Option<f64>) -> Result<LambdaMode, Failure> {
    match (mode.map(str::trim), lambda) {
        (Some("fixed"), Some(l)) | (None, Some(l)) => Ok(LambdaMode::Fixed(l)),
        (Some("fixed"), None) => Err(Failure::Config("lambda_mode: fixed needs a lambda value".into())),
        (Some(s), _) => s.parse().map_err(|e: ice_core::IceError| Failure::Config(e.to_string())),
        (None, None) => Ok(LambdaMode::Adaptive),
    }
}

fn read_file(path: &Path) -> Result<FileConfig, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("config {}: {}", path.display(), e.message())))
}

impl ConfigArgs {
    /// Merges file and flags (flags win) and validates the result.
    pub fn resolve(&self, bundles: &[PathBuf], methods: Option<&str>) -> Result<RunConfig, Failure> {
        let file = match &self.config {
            Some(p) => read_file(p)?,
            None => FileConfig::default(),
        };
        let defaults = IceConfig::default();
        let mode = self.lambda_mode.as_deref().or(file.lambda_mode.as_deref());
        let ice = IceConfig {
            k: self.k.or(file.k).unwrap_or(defaults.k),
            xi: self.xi.or(file.xi).unwrap_or(defaults.xi),
            epsilon: self.epsilon.or(file.epsilon).unwrap_or(defaults.epsilon),
            lambda_mode: resolve_mode(mode, self.lambda.or(file.lambda))?,
            tau: self.tau.or(file.tau).unwrap_or(defaults.tau),
            upsilon: self.upsilon.or(file.upsilon),
        };
        ice.validate().map_err(|e| Failure::Config(e.to_string()))?;

        let methods = match methods {
            Some(list) => list.split(',').map(str::to_owned).collect(),
            None => file
                .methods
                .unwrap_or_else(|| Method::default_set().iter().map(Method::to_string).collect()),
        };
        let methods = methods
            .iter()
            .map(|m| m.trim().parse::<Method>().map_err(|e| Failure::Config(format!("methods: {e}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if methods.is_empty() {
            return Err(Failure::Config("methods: empty list".into()));
        }
        let top_ks = file.top_ks.unwrap_or_else(|| vec![1, 5]);
        if top_ks.contains(&0) {
            return Err(Failure::Config("top_ks: K must be >= 1".into()));
        }
        let workers = self.workers.or(file.workers);
        if workers == Some(0) {
            return Err(Failure::Config("workers must be >= 1".into()));
        }
        Ok(RunConfig {
            ice,
            bundles: if bundles.is_empty() { file.bundles.unwrap_or_default() } else { bundles.to_vec() },
            methods,
            report_json: file.report_json,
            report_csv: file.report_csv,
            top_ks,
            seed: self.seed.or(file.seed).unwrap_or(0),
            workers,
        })
    }
}
