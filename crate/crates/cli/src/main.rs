use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use reba_core::config::{ExperimentConfig, OUTPUT_ROOT_ENV};
use reba_core::io;
use reba_core::metrics::{BandwidthRule, MetricsReport, METRICS_JSON};
use reba_core::pipeline::{self, Layout, Outcome, Pipeline, PipelineError, RunOptions, ABLATION_ROWS};
use reba_core::student::LabelMode;

#[derive(Parser)]
#[command(name = "reba", version, about = "Regional brain age estimation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic cohort.
    GenData(Common),
    /// Train and freeze the whole-brain teacher.
    TrainTeacher(Common),
    /// Compute the occlusion correction and soft regional labels.
    BuildSoftLabels(Common),
    /// Train the prompt/FiLM student on the soft labels.
    TrainStudent(Common),
    /// Bias-correct predictions and write HCS/NDC metrics.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Run the ablation grid instead of a single evaluation.
        #[arg(long)]
        ablation: bool,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
    },
    /// Run every stage in order.
    Run(Common),
    /// Print a summary of an evaluated run.
    Report(Common),
    /// Run the ablation grid over several seeds.
    Ablation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Restrict to these row ids (1-6).
        #[arg(long, value_delimiter = ',')]
        rows: Vec<u8>,
    },
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Clone, Default)]
struct Common {
    /// TOML experiment config.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Run directory (relative paths resolve against the output root).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    /// Regional targets: soft or chron.
    #[arg(long)]
    labels: Option<LabelMode>,
    #[arg(long)]
    no_film: bool,
    /// Evaluate the teacher's soft labels directly.
    #[arg(long)]
    no_student: bool,
    #[arg(long)]
    detach_mean: bool,
    #[arg(long)]
    dilate_occlusion: bool,
    /// Also report metrics on uncorrected predictions.
    #[arg(long)]
    raw: bool,
    /// median-heuristic, literal-median or fixed:<m>.
    #[arg(long)]
    bandwidth: Option<BandwidthRule>,
    /// Skip stages whose inputs and config are unchanged.
    #[arg(long)]
    cached: bool,
    /// Replace an existing dataset.
    #[arg(long)]
    force: bool,
    #[arg(long, short)]
    quiet: bool,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.out {
            c.paths.out = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = self.eta {
            c.eta = v;
        }
        if let Some(v) = self.zeta {
            c.zeta = v;
        }
        if let Some(v) = self.labels {
            c.labels = v;
        }
        if let Some(v) = self.bandwidth {
            c.metric.bandwidth = v;
        }
        c.no_film |= self.no_film;
        c.no_student |= self.no_student;
        c.detach_mean |= self.detach_mean;
        c.dilate_occlusion |= self.dilate_occlusion;
        c.metric.raw |= self.raw;
        c.validate()?;
        Ok(c)
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            cached: self.cached,
            force: self.force,
            verbose: !self.quiet,
        }
    }

    fn pipeline(&self) -> Result<Pipeline, PipelineError> {
        let c = self.config()?;
        let layout = Layout::new(&c.run_dir());
        Pipeline::new(c, layout, self.options())
    }
}

fn announce(stage: &str, outcome: Outcome) {
    match outcome {
        Outcome::Ran => println!("{stage}: done"),
        Outcome::Cached => println!("{stage}: up to date"),
    }
}

fn summarize(report: &MetricsReport) -> String {
    let c = &report.corrected;
    let mut s = format!("overall HCS            {:.4}\n", c.hcs_overall);
    for h in &c.hcs_per_region {
        s += &format!("  region {:>3} HCS      {:.4}\n", h.region, h.hcs);
    }
    for (k, v) in &c.ndc_differences {
        s += &format!("NDC {k:<18} {v:+.4}\n");
    }
    for (k, v) in &c.ndc_cross_elevation {
        s += &format!("NDC {k:<18} {v:+.4}\n");
    }
    for (k, v) in &c.oracle_spearman {
        s += &format!("oracle spearman {k:<8} {v:.4}\n");
    }
    if let Some(raw) = &report.raw {
        s += &format!("raw overall HCS        {:.4}\n", raw.hcs_overall);
        for (k, v) in &raw.ndc_differences {
            s += &format!("raw NDC {k:<14} {v:+.4}\n");
        }
    }
    s += &format!("config {}\n", report.config_hash);
    s
}

fn ablation(common: &Common, seeds: &[u64], rows: &[u8]) -> Result<(), PipelineError> {
    let base = common.config()?;
    let chosen: Vec<_> = if rows.is_empty() {
        ABLATION_ROWS.to_vec()
    } else {
        let mut out = Vec::new();
        for id in rows {
            out.push(
                *ABLATION_ROWS
                    .iter()
                    .find(|r| r.id == *id)
                    .ok_or_else(|| PipelineError::Invalid(format!("unknown ablation row {id} (expected 1-6)")))?,
            );
        }
        out
    };
    if seeds.is_empty() {
        return Err(PipelineError::Invalid("--seeds must name at least one seed".into()));
    }
    let root = base.run_dir().join("ablation");
    let table = pipeline::run_ablation(&base, seeds, &chosen, &root, common.options())?;
    print!("{}", table.render());
    println!("written to {}", root.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::GenData(c) => announce("gen-data", c.pipeline()?.gen_data()?),
        Command::TrainTeacher(c) => announce("train-teacher", c.pipeline()?.train_teacher()?),
        Command::BuildSoftLabels(c) => announce("build-soft-labels", c.pipeline()?.build_soft_labels()?),
        Command::TrainStudent(c) => announce("train-student", c.pipeline()?.train_student()?),
        Command::Evaluate {
            common,
            ablation: true,
            seeds,
        } => ablation(&common, &seeds, &[])?,
        Command::Evaluate { common, .. } => {
            let (outcome, report) = common.pipeline()?.evaluate()?;
            announce("evaluate", outcome);
            print!("{}", summarize(&report));
        }
        Command::Run(c) => {
            let report = c.pipeline()?.run_all()?;
            print!("{}", summarize(&report));
        }
        Command::Report(c) => {
            let p = c.pipeline()?;
            let report: MetricsReport = io::read_json(&p.layout.eval.join(METRICS_JSON)).map_err(|e| {
                if e.is_not_found() {
                    PipelineError::Missing {
                        stage: pipeline::Stage::Eval,
                        path: p.layout.eval.join(METRICS_JSON).display().to_string(),
                    }
                } else {
                    e.into()
                }
            })?;
            print!("{}", summarize(&report));
            let summary = p.config.run_dir().join("ablation").join("ablation_summary.csv");
            if let Ok(text) = std::fs::read_to_string(&summary) {
                println!("\nablation ({})", summary.display());
                print!("{text}");
            }
        }
        Command::Ablation { common, seeds, rows } => ablation(&common, &seeds, &rows)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, PipelineError::Missing { .. }) && std::env::var_os(OUTPUT_ROOT_ENV).is_none() {
                eprintln!("(output root defaults to ./runs; set {OUTPUT_ROOT_ENV} to change it)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
