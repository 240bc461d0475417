//! Command-line front end: `synth`, `build-map`, `localize` and `evaluate`.
//!
//! Exit codes: 0 on success, 1 on I/O failure while writing outputs, 2 when
//! input data fails validation, 3 on a bad configuration or spec.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eval::{evaluate, load_poses, write_poses, RunReport, RunRow, ThresholdBuckets};
use crate::ingest::{Dataset, DatasetPaths};
use crate::localizer::{Localizer, LocalizerConfig};
use crate::retrieval::RetrievalConfig;
use crate::semantic_map::{build_dataset_map, model_fingerprint, SemanticMap};
use crate::synth::{synthesize, SynthError, SynthSpec};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "semloc", version, about = "Semantic-consistency weighted visual localization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the semantic map and cache it as `semantic_map.bin` in the dataset.
    BuildMap {
        #[arg(long)]
        data: PathBuf,
    },
    /// Localize every query of a dataset.
    Localize(LocalizeArgs),
    /// Bucket the pose errors of a localization run.
    Evaluate {
        /// Run directory holding `poses.txt` and optionally `report.json`.
        #[arg(long)]
        run: PathBuf,
        /// Ground-truth pose file.
        #[arg(long)]
        gt: PathBuf,
        /// Output path, `<run>/eval.json` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub k_day: Option<usize>,
    #[arg(long)]
    pub k_night: Option<usize>,
    #[arg(long)]
    pub uniform_weights: bool,
    #[arg(long)]
    pub theta_min_deg: Option<f64>,
    #[arg(long)]
    pub inlier_px: Option<f64>,
}

/// Contents of a `--config` file. Command-line flags take precedence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub retrieval: RetrievalConfig,
    pub localizer: LocalizerConfig,
}

#[derive(Debug)]
pub enum CliError {
    Io(String),
    Validation(String),
    Config(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Config(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Validation(m) | CliError::Config(m) => m,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

impl RunConfig {
    /// Merges a config file (if any) with command-line overrides.
    pub fn resolve(args: &LocalizeArgs) -> Result<Self, CliError> {
        let mut cfg = match &args.config {
            Some(p) => read_json::<RunConfig>(p)?,
            None => RunConfig::default(),
        };
        if args.data.is_some() {
            cfg.data.clone_from(&args.data);
        }
        if args.out.is_some() {
            cfg.out.clone_from(&args.out);
        }
        if let Some(s) = args.seed {
            cfg.localizer.rng_seed = s;
        }
        if let Some(k) = args.k_day {
            cfg.retrieval.k_day = k;
        }
        if let Some(k) = args.k_night {
            cfg.retrieval.k_night = k;
        }
        if args.uniform_weights {
            cfg.localizer.uniform_weights = true;
        }
        if let Some(t) = args.theta_min_deg {
            cfg.localizer.theta_min_deg = t;
        }
        if let Some(px) = args.inlier_px {
            cfg.localizer.inlier_px = px;
        }
        cfg.localizer.validate().map_err(CliError::Config)?;
        if cfg.retrieval.k_day == 0 || cfg.retrieval.k_night == 0 {
            return Err(CliError::Config("retrieval k must be positive".into()));
        }
        if cfg.data.is_none() {
            return Err(CliError::Config("no dataset given (--data or `data` in config)".into()));
        }
        if cfg.out.is_none() {
            return Err(CliError::Config("no output directory given (--out or `out` in config)".into()));
        }
        Ok(cfg)
    }
}

fn load_dataset(root: &Path) -> Result<Dataset, CliError> {
    Dataset::load(root).map_err(|e| CliError::Validation(e.to_string()))
}

/// Uses the cached map when it was built from the same model, otherwise
/// builds a fresh one.
fn dataset_map(ds: &Dataset, root: &Path) -> Result<SemanticMap, CliError> {
    let cache = DatasetPaths::new(root).map_cache();
    if cache.exists() {
        match SemanticMap::load(&cache) {
            Ok(m) if m.source_fingerprint == model_fingerprint(&ds.model) => return Ok(m),
            Ok(_) => log::warn!("{} is stale, rebuilding", cache.display()),
            Err(e) => log::warn!("{e}, rebuilding"),
        }
    }
    build_dataset_map(ds).map_err(|e| CliError::Validation(e.to_string()))
}

fn cmd_synth(spec: &Path, out: &Path) -> Result<(), CliError> {
    let spec: SynthSpec = read_json(spec)?;
    let scene = synthesize(&spec, out).map_err(|e| match e {
        SynthError::InfeasibleSpec(_) => CliError::Config(e.to_string()),
        SynthError::Io(_) => io_err(out, e),
    })?;
    eprintln!(
        "wrote {} db images, {} queries, {} points to {}",
        scene.dataset.model.images.len(),
        scene.dataset.queries.len(),
        scene.dataset.model.points.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_map(data: &Path) -> Result<(), CliError> {
    let ds = load_dataset(data)?;
    let map = build_dataset_map(&ds).map_err(|e| CliError::Validation(e.to_string()))?;
    let path = DatasetPaths::new(data).map_cache();
    map.save(&path).map_err(|e| CliError::Io(e.to_string()))?;
    eprintln!(
        "{} points kept ({} dynamic, {} void, {} degenerate removed) -> {}",
        map.len(),
        map.removed.dynamic,
        map.removed.all_void,
        map.removed.degenerate,
        path.display()
    );
    Ok(())
}

/// Runs localization with a resolved config and writes `poses.txt` and
/// `report.json` into the output directory.
pub fn run_localization(cfg: &RunConfig) -> Result<RunReport, CliError> {
    let data = cfg.data.as_deref().expect("resolved config has data");
    let out = cfg.out.as_deref().expect("resolved config has out");
    let ds = load_dataset(data)?;
    let map = dataset_map(&ds, data)?;
    let results = Localizer::new(&ds, &map, cfg.retrieval, cfg.localizer).localize_all(&ds.queries);

    let mut poses = BTreeMap::new();
    let mut rows: Vec<RunRow> = ds
        .queries
        .iter()
        .zip(&results)
        .map(|(q, r)| {
            if let Some(p) = r.pose {
                poses.insert(q.name.clone(), p);
            }
            RunRow {
                name: q.name.clone(),
                condition: q.condition,
                localized: r.pose.is_some(),
                inliers: r.inliers,
                used_fallback: r.used_fallback,
                pooled_matches: r.pooled_matches,
                candidates: r.candidates.len(),
                candidate_scores: r.candidates.iter().map(|c| c.score).collect(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.name.cmp(&b.name));
    let report = RunReport {
        schema: REPORT_SCHEMA,
        rng_seed: cfg.localizer.rng_seed,
        uniform_weights: cfg.localizer.uniform_weights,
        queries: rows.len(),
        localized: poses.len(),
        rows,
    };

    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let pose_path = out.join("poses.txt");
    write_poses(&pose_path, &poses).map_err(|e| io_err(&pose_path, e))?;
    write_file(&out.join("report.json"), &to_json(&report))?;
    eprintln!("localized {}/{} queries -> {}", report.localized, report.queries, out.display());
    Ok(report)
}

fn cmd_evaluate(run: &Path, gt: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let estimates = load_poses(&run.join("poses.txt")).map_err(|e| CliError::Validation(e.to_string()))?;
    let truth = load_poses(gt).map_err(|e| CliError::Validation(e.to_string()))?;
    let report_path = run.join("report.json");
    let run_report: Option<RunReport> = if report_path.exists() {
        let text = fs::read_to_string(&report_path).map_err(|e| io_err(&report_path, e))?;
        Some(
            serde_json::from_str(&text)
                .map_err(|e| CliError::Validation(format!("{}: {e}", report_path.display())))?,
        )
    } else {
        None
    };
    if estimates.is_empty() {
        log::warn!("{}: no poses", run.join("poses.txt").display());
    }
    if truth.is_empty() {
        log::warn!("{}: no ground-truth poses", gt.display());
    }
    let report = evaluate(&estimates, &truth, run_report.as_ref(), &ThresholdBuckets::default());
    for s in &report.summary {
        println!(
            "{:>6} ({} queries): {:.1} / {:.1} / {:.1}",
            s.condition, s.queries, s.fine, s.medium, s.coarse
        );
    }
    let out = out.map_or_else(|| run.join("eval.json"), Path::to_path_buf);
    write_file(&out, &to_json(&report))
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { spec, out } => cmd_synth(&spec, &out),
        Command::BuildMap { data } => cmd_build_map(&data),
        Command::Localize(args) => run_localization(&RunConfig::resolve(&args)?).map(|_| ()),
        Command::Evaluate { run, gt, out } => cmd_evaluate(&run, &gt, out.as_deref()),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 3 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(extra: &[&str]) -> LocalizeArgs {
        let mut v = vec!["semloc", "localize"];
        v.extend_from_slice(extra);
        match Cli::try_parse_from(v).unwrap().command {
            Command::Localize(a) => a,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(
            &p,
            r#"{"data": "ds", "out": "run", "retrieval": {"k_day": 5}, "localizer": {"rng_seed": 4, "inlier_px": 8}}"#,
        )
        .unwrap();
        let cfg = RunConfig::resolve(&args(&["--config", p.to_str().unwrap(), "--seed", "9", "--k-night", "7"])).unwrap();
        assert_eq!(cfg.data, Some(PathBuf::from("ds")));
        assert_eq!((cfg.retrieval.k_day, cfg.retrieval.k_night), (5, 7));
        assert_eq!((cfg.localizer.rng_seed, cfg.localizer.inlier_px), (9, 8.0));
        assert_eq!(cfg.localizer.theta_min_deg, 5.0);
    }

    #[test]
    fn config_errors_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"localizer": {"no_such_field": 1}}"#).unwrap();
        let bad = [
            vec!["--config", p.to_str().unwrap()],
            vec!["--data", "d", "--out", "o", "--inlier-px=-1"],
            vec!["--data", "d", "--out", "o", "--k-day", "0"],
            vec!["--data", "d"],
        ];
        for extra in bad {
            assert_eq!(RunConfig::resolve(&args(&extra)).unwrap_err().exit_code(), 3);
        }
        assert_eq!(run(["semloc", "localize", "--bogus"]), 3);
    }
}
