//! Stage orchestration with on-disk artifacts and provenance records.
//!
//! A run directory holds one subdirectory per stage:
//!
//! ```text
//! data/      synthetic cohort
//! teacher/   teacher.ckpt, history.csv, summary.json
//! labels/    rho.json, soft_labels.csv, teacher_all.csv
//! student/   student.ckpt, predictions_raw.csv, history.csv
//! eval/      metrics.json, hcs_per_region.csv, ndc_per_subject.csv, histograms.csv
//! ```
//!
//! Every stage finishes by writing `stage.json`, which lists the SHA-256 of
//! each output and of each upstream file it consumed.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::checkpoint::{self, CheckpointError};
use crate::backbone::{LossHistory, RegressorModel, TrainError};
use crate::config::{ConfigError, ExperimentConfig};
use crate::datagen::{self, Dataset, DatagenError, Split, Subject};
use crate::io::{self, ArtifactError};
use crate::metrics::{self, MetricsError, MetricsReport};
use crate::parcellate::{one_hot, NoiseSpec};
use crate::seed::{self, tag};
use crate::student::{self, PredictionRow, PredictionTable, StudentError, StudentModel};
use crate::teacher::{self, RhoFile, SoftLabelTable, TeacherError};

pub const STAGE_FILE: &str = "stage.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Data,
    Teacher,
    Labels,
    Student,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Data => "data",
            Stage::Teacher => "teacher",
            Stage::Labels => "labels",
            Stage::Student => "student",
            Stage::Eval => "eval",
        }
    }

    /// CLI subcommand that produces this stage.
    pub fn command(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Teacher => "train-teacher",
            Stage::Labels => "build-soft-labels",
            Stage::Student => "train-student",
            Stage::Eval => "evaluate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{stage} artifacts missing ({path}): run `reba {}` first", stage.command())]
    Missing { stage: Stage, path: String },
    #[error("{stage} artifacts are stale ({path} changed since they were built): rerun `reba {}`", stage.command())]
    Stale { stage: Stage, path: String },
    #[error("hash mismatch on {path}: the file was modified after the {stage} stage wrote it")]
    Tampered { stage: Stage, path: String },
    #[error("output directory {0} is not empty; pass --force to overwrite")]
    NotEmpty(String),
    #[error(transparent)]
    Datagen(#[from] DatagenError),
    #[error(transparent)]
    Teacher(#[from] TeacherError),
    #[error(transparent)]
    Student(#[from] StudentError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

impl PipelineError {
    /// 2 validation, 3 missing artifact, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        let nonfinite = |t: &TrainError| matches!(t, TrainError::NonFinite { .. });
        match self {
            PipelineError::Missing { .. } | PipelineError::Stale { .. } => 3,
            PipelineError::Teacher(TeacherError::Train(t)) | PipelineError::Student(StudentError::Train(t))
                if nonfinite(t) =>
            {
                4
            }
            PipelineError::Metrics(MetricsError::NonFinite(_)) => 4,
            _ => 2,
        }
    }
}

/// Where each stage lives.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub data: PathBuf,
    pub teacher: PathBuf,
    pub labels: PathBuf,
    pub student: PathBuf,
    pub eval: PathBuf,
}

impl Layout {
    pub fn new(run: &Path) -> Self {
        Layout {
            data: run.join("data"),
            teacher: run.join("teacher"),
            labels: run.join("labels"),
            student: run.join("student"),
            eval: run.join("eval"),
        }
    }

    pub fn dir(&self, stage: Stage) -> &Path {
        match stage {
            Stage::Data => &self.data,
            Stage::Teacher => &self.teacher,
            Stage::Labels => &self.labels,
            Stage::Student => &self.student,
            Stage::Eval => &self.eval,
        }
    }
}

/// Contents of `stage.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub config_hash: String,
    /// Hash of the stage-relevant config subset and all input hashes.
    pub key: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ran,
    Cached,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Skip a stage whose record matches the current config and inputs.
    pub cached: bool,
    /// Allow `gen-data` to replace an existing dataset.
    pub force: bool,
    pub verbose: bool,
}

/// Teacher summary written next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherSummary {
    pub n_params: usize,
    pub train_mae: f64,
    pub test_mae: f64,
    pub final_loss: f64,
}

pub const TEACHER_CKPT: &str = "teacher.ckpt";
pub const STUDENT_CKPT: &str = "student.ckpt";
pub const HISTORY_CSV: &str = "history.csv";
pub const TEACHER_SUMMARY: &str = "summary.json";
pub const RHO_JSON: &str = "rho.json";
pub const SOFT_LABELS_CSV: &str = "soft_labels.csv";
pub const TEACHER_ALL_CSV: &str = "teacher_all.csv";
pub const PREDICTIONS_CSV: &str = "predictions_raw.csv";

fn list_files(dir: &Path) -> Result<Vec<String>, ArtifactError> {
    fn walk(base: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), ArtifactError> {
        for entry in fs::read_dir(dir).map_err(|e| ArtifactError::io(dir, e))? {
            let path = entry.map_err(|e| ArtifactError::io(dir, e))?.path();
            if path.is_dir() {
                walk(base, &path, out)?;
            } else {
                let rel = path.strip_prefix(base).expect("walk stays under base");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                if rel != STAGE_FILE {
                    out.push(rel);
                }
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.sort();
    Ok(out)
}

fn write_history(path: &Path, history: &LossHistory) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
    let mut header = vec!["epoch".to_string()];
    header.extend(history.terms.iter().cloned());
    w.write_record(&header).map_err(|e| ArtifactError::csv(path, e))?;
    for (i, row) in history.epochs.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(|e| ArtifactError::csv(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))
}

/// Runs the stages of one experiment against one layout.
pub struct Pipeline {
    pub config: ExperimentConfig,
    pub layout: Layout,
    pub options: RunOptions,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, layout: Layout, options: RunOptions) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Pipeline { config, layout, options })
    }

    fn log(&self, msg: impl AsRef<str>) {
        if self.options.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn seed(&self, t: u64) -> u64 {
        seed::derive(self.config.seed, &[t])
    }

    fn noise(&self) -> NoiseSpec {
        NoiseSpec::new(self.config.eta, self.seed(tag::NOISE))
    }

    /// Config fields each stage depends on, cumulatively.
    fn stage_config(&self, stage: Stage) -> serde_json::Value {
        let c = &self.config;
        let mut v = serde_json::json!({ "seed": c.seed, "dataset": c.dataset });
        let m = v.as_object_mut().expect("object");
        if stage >= Stage::Teacher {
            m.insert("embed_dim".into(), c.model.embed_dim.into());
            m.insert("teacher".into(), serde_json::to_value(c.teacher).expect("serializes"));
        }
        if stage >= Stage::Labels {
            m.insert("alpha".into(), c.alpha.into());
            m.insert("eta".into(), c.eta.into());
            m.insert("dilate_occlusion".into(), c.dilate_occlusion.into());
        }
        if stage >= Stage::Student {
            m.insert("student_model".into(), serde_json::to_value(c.student_config()).expect("serializes"));
            m.insert("student".into(), serde_json::to_value(c.student).expect("serializes"));
        }
        if stage >= Stage::Eval {
            m.insert("metric".into(), serde_json::to_value(c.metric).expect("serializes"));
            m.insert("no_student".into(), c.no_student.into());
        }
        v
    }

    /// Upstream stages read by `stage`.
    fn upstream(&self, stage: Stage) -> Vec<Stage> {
        match stage {
            Stage::Data => vec![],
            Stage::Teacher => vec![Stage::Data],
            Stage::Labels => vec![Stage::Data, Stage::Teacher],
            Stage::Student => vec![Stage::Data, Stage::Teacher, Stage::Labels],
            Stage::Eval if self.config.no_student => vec![Stage::Data, Stage::Labels],
            Stage::Eval => vec![Stage::Data, Stage::Student],
        }
    }

    fn record_path(&self, stage: Stage) -> PathBuf {
        self.layout.dir(stage).join(STAGE_FILE)
    }

    pub fn read_record(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let path = self.record_path(stage);
        io::read_json(&path).map_err(|e| {
            if e.is_not_found() {
                PipelineError::Missing {
                    stage,
                    path: path.display().to_string(),
                }
            } else {
                e.into()
            }
        })
    }

    /// Checks that a finished stage's outputs are intact and its inputs are
    /// still what it was built from.
    pub fn verify(&self, stage: Stage) -> Result<StageRecord, PipelineError> {
        let rec = self.read_record(stage)?;
        let dir = self.layout.dir(stage);
        for (name, hash) in &rec.outputs {
            let path = dir.join(name);
            match io::sha256_file(&path) {
                Ok(h) if &h == hash => {}
                Ok(_) => {
                    return Err(PipelineError::Tampered {
                        stage,
                        path: path.display().to_string(),
                    })
                }
                Err(e) if e.is_not_found() => {
                    return Err(PipelineError::Missing {
                        stage,
                        path: path.display().to_string(),
                    })
                }
                Err(e) => return Err(e.into()),
            }
        }
        for (name, hash) in &rec.inputs {
            let path = self.input_path(name)?;
            let current = io::sha256_file(&path).ok();
            if current.as_deref() != Some(hash.as_str()) {
                return Err(PipelineError::Stale {
                    stage,
                    path: path.display().to_string(),
                });
            }
        }
        Ok(rec)
    }

    fn input_path(&self, key: &str) -> Result<PathBuf, PipelineError> {
        let (stage, file) = key
            .split_once(':')
            .ok_or_else(|| PipelineError::Invalid(format!("malformed input key {key:?}")))?;
        let stage = [Stage::Data, Stage::Teacher, Stage::Labels, Stage::Student, Stage::Eval]
            .into_iter()
            .find(|s| s.name() == stage)
            .ok_or_else(|| PipelineError::Invalid(format!("unknown stage in input key {key:?}")))?;
        Ok(self.layout.dir(stage).join(file))
    }

    /// Verifies upstream stages and returns the input hash map.
    fn inputs(&self, stage: Stage) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut inputs = BTreeMap::new();
        for up in self.upstream(stage) {
            let rec = self.verify(up)?;
            for (name, hash) in rec.outputs {
                inputs.insert(format!("{}:{name}", up.name()), hash);
            }
        }
        Ok(inputs)
    }

    fn key(&self, stage: Stage, inputs: &BTreeMap<String, String>) -> String {
        let v = serde_json::json!({
            "stage": stage.name(),
            "config": self.stage_config(stage),
            "inputs": inputs,
        });
        io::sha256_hex(v.to_string().as_bytes())
    }

    /// `Some(key)` if the stage must run; `None` if the cached record is current.
    fn begin(&self, stage: Stage) -> Result<(Option<String>, BTreeMap<String, String>), PipelineError> {
        let inputs = self.inputs(stage)?;
        let key = self.key(stage, &inputs);
        if self.options.cached {
            if let Ok(rec) = self.verify(stage) {
                if rec.key == key {
                    self.log(format!("{stage}: cached"));
                    return Ok((None, inputs));
                }
            }
        }
        let dir = self.layout.dir(stage);
        io::create_dir_all(dir)?;
        match fs::remove_file(self.record_path(stage)) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(ArtifactError::io(dir, e).into()),
            _ => {}
        }
        self.log(format!("{stage}: running"));
        Ok((Some(key), inputs))
    }

    fn finish(&self, stage: Stage, key: String, inputs: BTreeMap<String, String>) -> Result<(), PipelineError> {
        let dir = self.layout.dir(stage);
        let mut outputs = BTreeMap::new();
        for name in list_files(dir)? {
            outputs.insert(name.clone(), io::sha256_file(&dir.join(&name))?);
        }
        let rec = StageRecord {
            stage: stage.name().to_string(),
            config_hash: self.config.hash(),
            key,
            inputs,
            outputs,
        };
        io::write_json(&self.record_path(stage), &rec)?;
        Ok(())
    }

    fn dataset(&self) -> Result<Dataset, PipelineError> {
        Ok(Dataset::load(&self.layout.data)?)
    }

    pub fn gen_data(&self) -> Result<Outcome, PipelineError> {
        let dir = &self.layout.data;
        let inputs = BTreeMap::new();
        let key = self.key(Stage::Data, &inputs);
        if self.options.cached {
            if let Ok(rec) = self.verify(Stage::Data) {
                if rec.key == key {
                    self.log("data: cached");
                    return Ok(Outcome::Cached);
                }
            }
        }
        let non_empty = fs::read_dir(dir).map(|mut d| d.next().is_some()).unwrap_or(false);
        if non_empty {
            if !self.options.force {
                return Err(PipelineError::NotEmpty(dir.display().to_string()));
            }
            fs::remove_dir_all(dir).map_err(|e| ArtifactError::io(dir, e))?;
        }
        self.log("data: generating");
        datagen::generate_cohort(&self.config.dataset, self.config.seed, dir)?;
        self.finish(Stage::Data, key, inputs)?;
        Ok(Outcome::Ran)
    }

    pub fn train_teacher(&self) -> Result<Outcome, PipelineError> {
        let (Some(key), inputs) = self.begin(Stage::Teacher)? else {
            return Ok(Outcome::Cached);
        };
        let ds = self.dataset()?;
        let train = ds.subjects(|r| r.cohort.is_hc() && r.split == Split::Train)?;
        let test = ds.subjects(|r| r.cohort.is_hc() && r.split == Split::Test)?;
        let factory = teacher::reference_factory(self.config.model.embed_dim, self.seed(tag::MODEL_INIT));
        let (model, history) =
            teacher::train_teacher(&train, factory, &self.config.teacher, self.seed(tag::TEACHER_TRAIN))?;
        let mae_of = |s: &[Subject]| {
            let p: Vec<f64> = s.iter().map(|s| model.predict_age(&s.volume)).collect();
            let y: Vec<f64> = s.iter().map(|s| s.record.chronological_age).collect();
            teacher::mae(&p, &y)
        };
        let summary = TeacherSummary {
            n_params: model.n_params(),
            train_mae: mae_of(&train),
            test_mae: mae_of(&test),
            final_loss: history.totals().last().copied().unwrap_or(f64::NAN),
        };
        self.log(format!(
            "teacher: train MAE {:.2}, test MAE {:.2}",
            summary.train_mae, summary.test_mae
        ));
        let dir = &self.layout.teacher;
        checkpoint::save_regressor(&dir.join(TEACHER_CKPT), &model)?;
        write_history(&dir.join(HISTORY_CSV), &history)?;
        io::write_json(&dir.join(TEACHER_SUMMARY), &summary)?;
        self.finish(Stage::Teacher, key, inputs)?;
        Ok(Outcome::Ran)
    }

    pub fn build_soft_labels(&self) -> Result<Outcome, PipelineError> {
        let (Some(key), inputs) = self.begin(Stage::Labels)? else {
            return Ok(Outcome::Cached);
        };
        let ds = self.dataset()?;
        let model = checkpoint::load_regressor(&self.layout.teacher.join(TEACHER_CKPT))?;
        let masks = one_hot(&ds.atlas);
        let noise = self.noise();
        let train = ds.subjects(|r| r.cohort.is_hc() && r.split == Split::Train)?;
        let rest = ds.subjects(|r| !(r.cohort.is_hc() && r.split == Split::Train))?;
        let (rho, whole) =
            teacher::correction_vector(&model, &train, &masks, &noise, self.config.dilate_occlusion)?;
        let alpha = self.config.alpha;
        let train_labels = teacher::soft_labels(&model, &train, &masks, &noise, &rho, alpha, Some(&whole))?;
        let rest_labels = teacher::soft_labels(&model, &rest, &masks, &noise, &rho, alpha, None)?;

        let mut by_id: BTreeMap<String, teacher::SoftLabelRow> = BTreeMap::new();
        for row in train_labels.rows.iter().chain(&rest_labels.rows) {
            by_id.insert(row.id.clone(), row.clone());
        }
        let all = SoftLabelTable {
            alpha,
            n_regions: masks.len(),
            rows: ds
                .manifest
                .subjects
                .iter()
                .map(|r| by_id.remove(&r.id).expect("every subject labelled"))
                .collect(),
        };
        let dir = &self.layout.labels;
        io::write_json(
            &dir.join(RHO_JSON),
            &RhoFile {
                alpha,
                eta: self.config.eta,
                rho: rho.rho.clone(),
                n_subjects_used: rho.n_subjects_used,
            },
        )?;
        train_labels.write_csv(&dir.join(SOFT_LABELS_CSV))?;
        all.write_csv(&dir.join(TEACHER_ALL_CSV))?;
        self.finish(Stage::Labels, key, inputs)?;
        Ok(Outcome::Ran)
    }

    pub fn train_student(&self) -> Result<Outcome, PipelineError> {
        let (Some(key), inputs) = self.begin(Stage::Student)? else {
            return Ok(Outcome::Cached);
        };
        let ds = self.dataset()?;
        let backbone = checkpoint::load_regressor(&self.layout.teacher.join(TEACHER_CKPT))?;
        let labels = SoftLabelTable::read_csv(&self.layout.labels.join(SOFT_LABELS_CSV), self.config.alpha)?;
        let masks = one_hot(&ds.atlas);
        let noise = self.noise();
        let all = ds.subjects(|_| true)?;
        let embeddings = student::embed_regions(&backbone, &all, &masks, &noise)?;
        let train_idx: Vec<usize> = (0..all.len())
            .filter(|&i| all[i].record.cohort.is_hc() && all[i].record.split == Split::Train)
            .collect();
        let train: Vec<Subject> = train_idx.iter().map(|&i| all[i].clone()).collect();
        let train_emb: Vec<Vec<Vec<f64>>> = train_idx.iter().map(|&i| embeddings[i].clone()).collect();
        let cfg = self.config.student_config();
        let targets = student::training_targets(&train, &labels, cfg.labels)?;
        let mut model = StudentModel::new(&backbone, masks.len(), cfg, self.seed(tag::STUDENT_INIT))?;
        let history = student::train_student(
            &mut model,
            &train_emb,
            targets,
            &ds.networks,
            &self.config.student,
            self.seed(tag::STUDENT_TRAIN),
        )?;
        model.check_backbone(&backbone)?;
        let predictions = student::predict_embedded(&model, &all, &embeddings);
        let dir = &self.layout.student;
        model.save(&dir.join(STUDENT_CKPT))?;
        predictions.write_csv(&dir.join(PREDICTIONS_CSV))?;
        write_history(&dir.join(HISTORY_CSV), &history)?;
        self.finish(Stage::Student, key, inputs)?;
        Ok(Outcome::Ran)
    }

    /// Raw predictions fed to evaluation: the student's, or the teacher's
    /// soft labels under `no_student`.
    pub fn raw_predictions(&self, ds: &Dataset) -> Result<PredictionTable, PipelineError> {
        if !self.config.no_student {
            return Ok(PredictionTable::read_csv(&self.layout.student.join(PREDICTIONS_CSV))?);
        }
        let table = SoftLabelTable::read_csv(&self.layout.labels.join(TEACHER_ALL_CSV), self.config.alpha)?;
        let rows = ds
            .manifest
            .subjects
            .iter()
            .map(|r| {
                let row = table
                    .row(&r.id)
                    .ok_or_else(|| PipelineError::Invalid(format!("{TEACHER_ALL_CSV} lacks subject {}", r.id)))?;
                Ok(PredictionRow {
                    id: r.id.clone(),
                    age: r.chronological_age,
                    cohort: r.cohort.clone(),
                    split: r.split,
                    reba: row.y_soft.clone(),
                })
            })
            .collect::<Result<_, PipelineError>>()?;
        Ok(PredictionTable {
            n_regions: table.n_regions,
            rows,
        })
    }

    pub fn evaluate(&self) -> Result<(Outcome, MetricsReport), PipelineError> {
        let (key, inputs) = self.begin(Stage::Eval)?;
        let path = self.layout.eval.join(metrics::METRICS_JSON);
        let Some(key) = key else {
            return Ok((Outcome::Cached, io::read_json(&path)?));
        };
        let ds = self.dataset()?;
        let predictions = self.raw_predictions(&ds)?;
        let report = metrics::cohort_report(
            &predictions,
            &ds.manifest.subjects,
            &ds.priors,
            &self.config.metric,
            &self.config.hash(),
        )?;
        report.write(&self.layout.eval)?;
        self.finish(Stage::Eval, key, inputs)?;
        Ok((Outcome::Ran, report))
    }

    /// Every stage in order; the student stage is skipped under `no_student`.
    pub fn run_all(&self) -> Result<MetricsReport, PipelineError> {
        self.gen_data()?;
        self.train_teacher()?;
        self.build_soft_labels()?;
        if !self.config.no_student {
            self.train_student()?;
        }
        Ok(self.evaluate()?.1)
    }
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationRow {
    pub id: u8,
    pub name: &'static str,
}

pub const ABLATION_ROWS: [AblationRow; 6] = [
    AblationRow { id: 1, name: "chron-labels" },
    AblationRow { id: 2, name: "initial-reba" },
    AblationRow { id: 3, name: "no-student" },
    AblationRow { id: 4, name: "no-film" },
    AblationRow { id: 5, name: "no-func" },
    AblationRow { id: 6, name: "full" },
];

impl AblationRow {
    /// The row's variant of `base`.
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        match self.id {
            1 => c.labels = crate::student::LabelMode::Chron,
            2 => c.alpha = 0.0,
            3 => c.no_student = true,
            4 => c.no_film = true,
            5 => c.zeta = 0.0,
            _ => {}
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub seed: u64,
    pub row: u8,
    pub name: String,
    pub hcs: f64,
    pub oracle_spearman: f64,
    pub ndc_differences: BTreeMap<String, f64>,
}

impl AblationEntry {
    fn of(seed: u64, row: AblationRow, report: &MetricsReport) -> Self {
        let c = &report.corrected;
        AblationEntry {
            seed,
            row: row.id,
            name: row.name.to_string(),
            hcs: c.hcs_overall,
            oracle_spearman: c.oracle_spearman.get("hc-test").copied().unwrap_or(f64::NAN),
            ndc_differences: c.ndc_differences.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub seeds: Vec<u64>,
    pub entries: Vec<AblationEntry>,
}

impl AblationTable {
    /// Per-row means over seeds, in row order.
    pub fn means(&self) -> Vec<AblationEntry> {
        ABLATION_ROWS
            .iter()
            .filter_map(|row| {
                let of_row: Vec<&AblationEntry> = self.entries.iter().filter(|e| e.row == row.id).collect();
                let n = of_row.len() as f64;
                if of_row.is_empty() {
                    return None;
                }
                let mut ndc: BTreeMap<String, f64> = BTreeMap::new();
                for e in &of_row {
                    for (k, v) in &e.ndc_differences {
                        *ndc.entry(k.clone()).or_default() += v / n;
                    }
                }
                Some(AblationEntry {
                    seed: 0,
                    row: row.id,
                    name: row.name.to_string(),
                    hcs: of_row.iter().map(|e| e.hcs).sum::<f64>() / n,
                    oracle_spearman: of_row.iter().map(|e| e.oracle_spearman).sum::<f64>() / n,
                    ndc_differences: ndc,
                })
            })
            .collect()
    }

    pub fn mean_of(&self, row: u8) -> Option<AblationEntry> {
        self.means().into_iter().find(|e| e.row == row)
    }

    fn ndc_keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.entries.iter().flat_map(|e| e.ndc_differences.keys().cloned()).collect();
        keys.sort();
        keys.dedup();
        keys
    }

    fn write_rows(&self, path: &Path, rows: &[AblationEntry], with_seed: bool) -> Result<(), ArtifactError> {
        let keys = self.ndc_keys();
        let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let mut header: Vec<String> = Vec::new();
        if with_seed {
            header.push("seed".into());
        }
        header.extend(["row", "name", "hcs", "oracle_spearman"].map(String::from));
        header.extend(keys.iter().map(|k| format!("ndc_{k}")));
        w.write_record(&header).map_err(|e| ArtifactError::csv(path, e))?;
        for e in rows {
            let mut rec = Vec::new();
            if with_seed {
                rec.push(e.seed.to_string());
            }
            rec.extend([e.row.to_string(), e.name.clone(), e.hcs.to_string(), e.oracle_spearman.to_string()]);
            rec.extend(keys.iter().map(|k| e.ndc_differences.get(k).map_or(String::new(), f64::to_string)));
            w.write_record(&rec).map_err(|e| ArtifactError::csv(path, e))?;
        }
        w.flush().map_err(|e| ArtifactError::io(path, e))
    }

    /// Writes `ablation.csv` (one line per seed and row) and
    /// `ablation_summary.csv` (means over seeds).
    pub fn write(&self, dir: &Path) -> Result<(), ArtifactError> {
        io::create_dir_all(dir)?;
        self.write_rows(&dir.join("ablation.csv"), &self.entries, true)?;
        self.write_rows(&dir.join("ablation_summary.csv"), &self.means(), false)
    }

    /// Fixed-width table of the per-row means.
    pub fn render(&self) -> String {
        let keys = self.ndc_keys();
        let mut s = format!("{:<4} {:<14} {:>8} {:>10}", "row", "variant", "HCS", "spearman");
        for k in &keys {
            s += &format!(" {:>10}", format!("NDC {k}"));
        }
        s.push('\n');
        for e in self.means() {
            s += &format!("{:<4} {:<14} {:>8.4} {:>10.4}", e.row, e.name, e.hcs, e.oracle_spearman);
            for k in &keys {
                s += &format!(" {:>10.4}", e.ndc_differences.get(k).copied().unwrap_or(f64::NAN));
            }
            s.push('\n');
        }
        s
    }
}

/// Runs the ablation grid. Each seed gets its own dataset and teacher under
/// `<root>/seed-<s>/`, shared by all rows; each row then builds its own labels,
/// student and evaluation under `<root>/seed-<s>/row-<id>-<name>/`.
pub fn run_ablation(
    base: &ExperimentConfig,
    seeds: &[u64],
    rows: &[AblationRow],
    root: &Path,
    options: RunOptions,
) -> Result<AblationTable, PipelineError> {
    let mut entries = Vec::new();
    for &s in seeds {
        let seed_dir = root.join(format!("seed-{s}"));
        for row in rows {
            let mut cfg = row.apply(base);
            cfg.seed = s;
            let row_dir = seed_dir.join(format!("row-{}-{}", row.id, row.name));
            let layout = Layout {
                data: seed_dir.join("data"),
                teacher: seed_dir.join("teacher"),
                labels: row_dir.join("labels"),
                student: row_dir.join("student"),
                eval: row_dir.join("eval"),
            };
            let p = Pipeline::new(
                cfg,
                layout,
                RunOptions {
                    cached: true,
                    ..options
                },
            )?;
            if p.options.verbose {
                eprintln!("ablation: seed {s}, row {} ({})", row.id, row.name);
            }
            let report = p.run_all()?;
            entries.push(AblationEntry::of(s, *row, &report));
        }
    }
    let table = AblationTable {
        seeds: seeds.to_vec(),
        entries,
    };
    table.write(root)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelSection;
    use crate::datagen::{DatasetConfig, DiseaseSpec};
    use crate::volume::Shape;

    fn tiny_config() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            dataset: DatasetConfig {
                shape: Shape::cube(16),
                n_regions: 4,
                n_networks: 2,
                n_hc_train: 12,
                n_hc_test: 6,
                diseases: vec![DiseaseSpec {
                    name: "pd".into(),
                    n_subjects: 4,
                    offset_years: 8.0,
                    regions: vec![1, 2],
                }],
                ..DatasetConfig::default()
            },
            ..ExperimentConfig::default()
        };
        c.model = ModelSection {
            embed_dim: 8,
            prompt_dim: 4,
            film_hidden: 6,
        };
        c.teacher.epochs = 2;
        c.student.epochs = 3;
        c
    }

    fn pipeline(dir: &Path, cfg: ExperimentConfig, cached: bool) -> Pipeline {
        Pipeline::new(
            cfg,
            Layout::new(dir),
            RunOptions {
                cached,
                ..RunOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn stages_chain_and_cache() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), tiny_config(), true);
        let first = p.run_all().unwrap();
        assert_eq!(p.train_teacher().unwrap(), Outcome::Cached);
        assert_eq!(p.train_student().unwrap(), Outcome::Cached);
        let (o, again) = p.evaluate().unwrap();
        assert_eq!(o, Outcome::Cached);
        assert_eq!(first.corrected.hcs_overall, again.corrected.hcs_overall);

        let mut changed = tiny_config();
        changed.zeta = 0.0;
        let q = pipeline(dir.path(), changed, true);
        assert_eq!(q.train_teacher().unwrap(), Outcome::Cached);
        assert_eq!(q.build_soft_labels().unwrap(), Outcome::Cached);
        assert_eq!(q.train_student().unwrap(), Outcome::Ran);
    }

    #[test]
    fn missing_predecessor_names_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), tiny_config(), false);
        let err = p.train_teacher().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("reba gen-data"), "{err}");
        p.gen_data().unwrap();
        let err = p.train_student().unwrap_err();
        assert!(err.to_string().contains("reba train-teacher"), "{err}");
    }

    #[test]
    fn tampering_and_staleness_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), tiny_config(), false);
        p.gen_data().unwrap();
        p.train_teacher().unwrap();
        p.build_soft_labels().unwrap();
        let labels = dir.path().join("labels").join(SOFT_LABELS_CSV);
        let mut text = fs::read_to_string(&labels).unwrap();
        text.push('\n');
        fs::write(&labels, text).unwrap();
        let err = p.train_student().unwrap_err();
        assert!(matches!(err, PipelineError::Tampered { .. }), "{err}");
        assert!(err.to_string().contains("hash mismatch"));

        p.build_soft_labels().unwrap();
        let mut other = tiny_config();
        other.teacher.epochs = 1;
        pipeline(dir.path(), other, false).train_teacher().unwrap();
        let err = p.train_student().unwrap_err();
        assert!(matches!(err, PipelineError::Stale { stage: Stage::Labels, .. }), "{err}");
    }

    #[test]
    fn gen_data_refuses_to_overwrite_without_force() {
        let dir = tempfile::tempdir().unwrap();
        let p = pipeline(dir.path(), tiny_config(), false);
        p.gen_data().unwrap();
        let manifest = fs::read(dir.path().join("data/manifest.csv")).unwrap();
        assert!(matches!(p.gen_data().unwrap_err(), PipelineError::NotEmpty(_)));
        let forced = Pipeline {
            options: RunOptions {
                force: true,
                ..RunOptions::default()
            },
            ..p
        };
        assert_eq!(forced.gen_data().unwrap(), Outcome::Ran);
        assert_eq!(fs::read(dir.path().join("data/manifest.csv")).unwrap(), manifest);
    }

    #[test]
    fn no_student_reads_teacher_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config();
        cfg.no_student = true;
        let p = pipeline(dir.path(), cfg, false);
        let report = p.run_all().unwrap();
        assert!(!dir.path().join("student").exists());
        assert!(report.corrected.ndc_differences.contains_key("pd-hc"));
    }

    #[test]
    fn ablation_rows_differ_from_base_in_one_switch() {
        let base = ExperimentConfig::default();
        let changed: Vec<ExperimentConfig> = ABLATION_ROWS.iter().map(|r| r.apply(&base)).collect();
        assert_eq!(changed[5], base);
        assert_eq!(changed[1].alpha, 0.0);
        assert_eq!(changed[4].zeta, 0.0);
        assert!(changed[2].no_student && changed[3].no_film);
        for c in &changed[..5] {
            assert_ne!(c.hash(), base.hash());
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Invalid("x".into()).exit_code(), 2);
        let nf = PipelineError::Student(StudentError::Train(TrainError::NonFinite { epoch: 0, batch: 0 }));
        assert_eq!(nf.exit_code(), 4);
    }
}
