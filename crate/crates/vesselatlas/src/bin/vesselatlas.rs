use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use vesselatlas::exec::PoolExecutor;
use vesselatlas::harness::{self, ExperimentSpec, Protocol};
use vesselatlas::io::{self, AtlasDoc, AtlasReportDoc, IoError, RegistrationResultDoc};
use vesselatlas::synthgen::{self, GeneratorConfig, ManifestEntry};
use vesselatlas_core::atlas::build_atlas;
use vesselatlas_core::labeling::DEFAULT_RESAMPLE_COUNT;
use vesselatlas_core::pipeline::{run_method, Assignment, Method, PipelineConfig};
use vesselatlas_core::registration::{register, RegistrationConfig};
use vesselatlas_core::Error;

#[derive(Parser)]
#[command(name = "vesselatlas", version, about = "Atlas-based labeling of vascular trees")]
struct Cli {
    /// Worker threads for independent jobs. Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = synthgen::DEFAULT_MOMENTA_SCALE)]
        momenta_scale: f64,
        #[arg(long, default_value_t = synthgen::DEFAULT_SWAP_PROB)]
        swap_prob: f64,
        #[arg(long, default_value_t = synthgen::DEFAULT_JITTER)]
        jitter: f64,
        /// Template tree; the bundled 17-branch template by default.
        #[arg(long)]
        template: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Register a source tree onto a target tree.
    Register {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an iteration-k atlas from a reference and a directory of targets.
    Atlas {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-iteration registration diagnostics.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Label a target tree from an atlas (or a labeled tree).
    Label {
        #[arg(long)]
        atlas: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// ot, lddmm or lddmm+ot.
        #[arg(long, default_value = "lddmm+ot")]
        method: Method,
        /// direct or bottom-up.
        #[arg(long = "assign", default_value = "bottom-up")]
        assignment: Assignment,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_RESAMPLE_COUNT)]
        resample_count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an evaluation protocol on a dataset directory.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the seed of the experiment file.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV report; the manifest goes next to it as `<out>.manifest.json`.
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        match &e {
            IoError::Invalid { source, .. } if is_numerical(source) => Failure::Numerical(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if is_numerical(&e) {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn is_numerical(e: &Error) -> bool {
    matches!(e, Error::NonFinite { .. } | Error::ZeroLengthSegment { .. })
}

fn registration_config(path: Option<&Path>) -> Result<RegistrationConfig, Failure> {
    match path {
        Some(p) => Ok(io::read_registration_config(p)?),
        None => Ok(RegistrationConfig::default()),
    }
}

#[derive(Serialize)]
struct SynthManifest {
    n: usize,
    seed: u64,
    momenta_scale: f64,
    swap_prob: f64,
    jitter: f64,
    template: String,
    trees: Vec<ManifestEntry>,
}

#[derive(Serialize)]
struct EvalManifest<'a> {
    dataset: String,
    files: Vec<String>,
    spec: &'a ExperimentSpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    cross_validation: Option<&'a harness::ExperimentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<&'a harness::IterationStudy>,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let exec = PoolExecutor::new(cli.workers).map_err(|e| Failure::Usage(e.to_string()))?;
    match cli.command {
        Command::Synth { n, seed, momenta_scale, swap_prob, jitter, template, out_dir } => {
            let (tree, template_name) = match &template {
                Some(p) => (io::read_tree(p)?, p.display().to_string()),
                None => (synthgen::bundled_template(), "bundled".to_string()),
            };
            let cfg = GeneratorConfig {
                template: tree,
                momenta_scale,
                topology_swap_prob: swap_prob,
                branch_point_jitter: jitter,
                seed,
            };
            let data = synthgen::generate_dataset(&cfg, n, &exec)?;
            let width = n.saturating_sub(1).to_string().len().max(3);
            let mut trees = Vec::with_capacity(n);
            for (i, g) in data.iter().enumerate() {
                let file = format!("tree_{i:0width$}.json");
                io::write_tree(&out_dir.join(&file), &g.tree)?;
                trees.push(ManifestEntry { file, swapped: g.swapped, labels: g.tree.labels().iter().map(|l| l.0).collect() });
            }
            let manifest =
                SynthManifest { n, seed, momenta_scale, swap_prob, jitter, template: template_name, trees };
            io::write_json(&out_dir.join("manifest.json"), &manifest)?;
        }
        Command::Register { source, target, config, out } => {
            let cfg = registration_config(config.as_deref())?;
            let result = register(&io::read_tree(&source)?, &io::read_tree(&target)?, &cfg)?;
            if result.line_search_failed {
                log::warn!("a line search failed; the result is the best iterate found");
            }
            io::write_json(&out, &RegistrationResultDoc::from_result(&result))?;
        }
        Command::Atlas { reference, targets, k, config, out, report } => {
            let cfg = registration_config(config.as_deref())?;
            let reference = io::read_tree(&reference)?;
            let targets: Vec<_> = io::read_tree_dir(&targets)?.into_iter().map(|(_, t)| t).collect();
            let (atlas, build) = build_atlas(&reference, &targets, k, &cfg, &exec).map_err(|f| {
                if let Some(p) = &report {
                    let _ = io::write_json(p, &AtlasReportDoc::from_report(&f.partial));
                }
                Failure::from(f.error)
            })?;
            io::write_json(&out, &AtlasDoc::from_atlas(&atlas))?;
            if let Some(p) = &report {
                io::write_json(p, &AtlasReportDoc::from_report(&build))?;
            }
        }
        Command::Label { atlas, target, method, assignment, config, resample_count, out } => {
            let cfg = PipelineConfig { registration: registration_config(config.as_deref())?, resample_count };
            let atlas = io::read_atlas(&atlas)?;
            let target = io::read_tree(&target)?;
            let outcome = run_method(&atlas.mean_tree, &target, method, assignment, &cfg)?;
            if outcome.degraded {
                log::warn!("registration failed; labels come from the undeformed atlas");
            }
            io::write_json(&out, &io::labeling_doc(&outcome.labeling))?;
        }
        Command::Eval { dataset, spec, seed, out } => {
            let mut spec: ExperimentSpec = io::read_json(&spec)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            spec.validate()?;
            let named = io::read_tree_dir(&dataset)?;
            let files: Vec<String> = named.iter().map(|(n, _)| n.clone()).collect();
            let trees: Vec<_> = named.into_iter().map(|(_, t)| t).collect();
            let manifest_path = PathBuf::from(format!("{}.manifest.json", out.display()));
            let write = |path: &Path, text: String| -> Result<(), Failure> {
                std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
            };
            let dataset_name = dataset.display().to_string();
            match spec.protocol {
                Protocol::CrossValidation => {
                    let report = harness::cross_validate(&trees, &spec, &exec)?;
                    let violations = report.total_violations();
                    write(&out, report.to_csv())?;
                    let m = EvalManifest {
                        dataset: dataset_name,
                        files,
                        spec: &spec,
                        cross_validation: Some(&report),
                        iterations: None,
                    };
                    io::write_json(&manifest_path, &m)?;
                    if violations > 0 {
                        return Err(Failure::Numerical(format!("{violations} bottom-up rule violations")));
                    }
                }
                Protocol::Iterations => {
                    let cfg = spec.pipeline()?;
                    let study = harness::iteration_study(&trees, spec.reference_index, spec.k_max, &cfg, &exec)?;
                    let series = harness::iteration_series(&study, spec.method.method, spec.assignment.0);
                    write(&out, harness::iteration_csv(&study, &series))?;
                    let m = EvalManifest {
                        dataset: dataset_name,
                        files,
                        spec: &spec,
                        cross_validation: None,
                        iterations: Some(&study),
                    };
                    io::write_json(&manifest_path, &m)?;
                    let violations =
                        study.ot.violations + study.iterations.iter().map(|v| v.violations).sum::<usize>();
                    if violations > 0 {
                        return Err(Failure::Numerical(format!("{violations} bottom-up rule violations")));
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("numerical failure: {m}");
            ExitCode::from(2)
        }
    }
}
