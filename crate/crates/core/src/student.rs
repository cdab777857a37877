//! Prompt-conditioned regional readout on top of the frozen teacher backbone.
//!
//! For region `r` of subject `n` the student computes
//! `e = embed(extract(X_n, M_dil^r))`, `(γ, β) = FiLM(p_r)` and
//! `ŷ = adapter(γ ⊙ e + β)`. Only prompts, FiLM and adapter are trained.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::checkpoint::{self, CheckpointError};
use crate::backbone::optim::{self, to_f32_grid};
use crate::backbone::{params_sha256, sign, LossHistory, OptimizerConfig, RegressorModel, TrainError, Trainable};
use crate::datagen::{Cohort, NetworkMap, Split, Subject};
use crate::io::{self, ArtifactError};
use crate::parcellate::{self, NoiseKey, NoiseSpec, RegionMask};
use crate::seed;
use crate::teacher::SoftLabelTable;

#[derive(Debug, Error)]
pub enum StudentError {
    #[error("soft label table is missing subject {0}")]
    MissingLabels(String),
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("network map: {0}")]
    Networks(String),
    #[error("backbone hash mismatch: student expects {expected}, found {found}")]
    BackboneMismatch { expected: String, found: String },
    #[error("backbone parameters changed during student training")]
    BackboneMutated,
    #[error("backbone must be frozen")]
    NotFrozen,
    #[error("invalid student config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Parcel(#[from] parcellate::ParcelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Regional training targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    Soft,
    /// Every region is supervised with the chronological age.
    Chron,
}

impl FromStr for LabelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "soft" => Ok(LabelMode::Soft),
            "chron" => Ok(LabelMode::Chron),
            _ => Err(format!("unknown label mode {s:?} (expected soft or chron)")),
        }
    }
}

impl fmt::Display for LabelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LabelMode::Soft => "soft",
            LabelMode::Chron => "chron",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub prompt_dim: usize,
    pub film_hidden: usize,
    /// Replace the FiLM output with γ = 1, β = 0.
    pub no_film: bool,
    /// Stop the gradient through the network mean in the consistency loss.
    pub detach_mean: bool,
    pub zeta: f64,
    pub labels: LabelMode,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            prompt_dim: 16,
            film_hidden: 32,
            no_film: false,
            detach_mean: false,
            zeta: 1.0,
            labels: LabelMode::Soft,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), StudentError> {
        if self.prompt_dim == 0 || self.film_hidden == 0 {
            return Err(StudentError::InvalidConfig("prompt_dim and film_hidden must be positive".into()));
        }
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return Err(StudentError::InvalidConfig("zeta must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    dm: usize,
    dp: usize,
    h: usize,
    prompts: usize,
    film_w1: usize,
    film_b1: usize,
    film_w2: usize,
    film_b2: usize,
    ad_w1: usize,
    ad_b1: usize,
    ad_w2: usize,
    ad_b2: usize,
    total: usize,
}

impl Layout {
    fn new(r: usize, dm: usize, dp: usize, h: usize) -> Self {
        let prompts = 0;
        let film_w1 = prompts + r * dp;
        let film_b1 = film_w1 + h * dp;
        let film_w2 = film_b1 + h;
        let film_b2 = film_w2 + 2 * dm * h;
        let ad_w1 = film_b2 + 2 * dm;
        let ad_b1 = ad_w1 + 2 * dm * dm;
        let ad_w2 = ad_b1 + 2 * dm;
        let ad_b2 = ad_w2 + 2 * dm;
        Layout {
            dm,
            dp,
            h,
            prompts,
            film_w1,
            film_b1,
            film_w2,
            film_b2,
            ad_w1,
            ad_b1,
            ad_w2,
            ad_b2,
            total: ad_b2 + 1,
        }
    }

    fn prompt(&self, region: usize) -> std::ops::Range<usize> {
        self.prompts + region * self.dp..self.prompts + (region + 1) * self.dp
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudentDescriptor {
    kind: String,
    n_regions: usize,
    embed_dim: usize,
    config: StudentConfig,
    backbone_sha256: String,
}

const STUDENT_KIND: &str = "reba-student";

/// Trainable part of the student: prompt bank, FiLM block and shared adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentModel {
    config: StudentConfig,
    n_regions: usize,
    embed_dim: usize,
    backbone_sha256: String,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for backprop.
struct Forward {
    hidden: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    film: Vec<f64>,
    act: Vec<f64>,
    pred: f64,
}

impl StudentModel {
    /// New student on top of `backbone`; the adapter starts as an exact copy
    /// of the backbone's linear head.
    pub fn new<M: RegressorModel + ?Sized>(
        backbone: &M,
        n_regions: usize,
        config: StudentConfig,
        seed: u64,
    ) -> Result<Self, StudentError> {
        config.validate()?;
        if !backbone.is_frozen() {
            return Err(StudentError::NotFrozen);
        }
        let dm = backbone.embed_dim();
        let l = Layout::new(n_regions, dm, config.prompt_dim, config.film_hidden);
        let mut p = vec![0.0; l.total];
        let mut rng = seed::rng(seed);
        let mut normal = |std: f64| to_f32_grid(std * rng.sample::<f64, _>(StandardNormal));
        for v in &mut p[l.prompts..l.film_w1] {
            *v = normal(0.02);
        }
        for v in &mut p[l.film_w1..l.film_b1] {
            *v = normal((2.0 / l.dp as f64).sqrt());
        }
        for v in &mut p[l.film_w2..l.film_b2] {
            *v = normal((1.0 / l.h as f64).sqrt());
        }
        p[l.film_b2..l.film_b2 + dm].fill(1.0);
        for i in 0..dm {
            p[l.ad_w1 + i * dm + i] = 1.0;
            p[l.ad_w1 + (dm + i) * dm + i] = -1.0;
        }
        let head = backbone.head();
        for i in 0..dm {
            let w = to_f32_grid(head.weights[i]);
            p[l.ad_w2 + i] = w;
            p[l.ad_w2 + dm + i] = -w;
        }
        p[l.ad_b2] = to_f32_grid(head.bias);
        Ok(StudentModel {
            config,
            n_regions,
            embed_dim: dm,
            backbone_sha256: params_sha256(backbone.params()),
            params: p,
        })
    }

    fn layout(&self) -> Layout {
        Layout::new(self.n_regions, self.embed_dim, self.config.prompt_dim, self.config.film_hidden)
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn backbone_sha256(&self) -> &str {
        &self.backbone_sha256
    }

    pub fn check_backbone<M: RegressorModel + ?Sized>(&self, backbone: &M) -> Result<(), StudentError> {
        let found = params_sha256(backbone.params());
        if found != self.backbone_sha256 {
            return Err(StudentError::BackboneMismatch {
                expected: self.backbone_sha256.clone(),
                found,
            });
        }
        Ok(())
    }

    /// FiLM coefficients `(γ, β)` for a zero-based region index.
    pub fn film(&self, region: usize) -> (Vec<f64>, Vec<f64>) {
        let f = self.forward(region, &vec![0.0; self.embed_dim]);
        (f.gamma, f.beta)
    }

    fn forward(&self, region: usize, e: &[f64]) -> Forward {
        let l = self.layout();
        let p = &self.params;
        let dm = l.dm;
        let (hidden, gamma, beta) = if self.config.no_film {
            (Vec::new(), vec![1.0; dm], vec![0.0; dm])
        } else {
            let prompt = &p[l.prompt(region)];
            let hidden: Vec<f64> = (0..l.h)
                .map(|j| {
                    let row = &p[l.film_w1 + j * l.dp..l.film_w1 + (j + 1) * l.dp];
                    (p[l.film_b1 + j] + dot(row, prompt)).max(0.0)
                })
                .collect();
            let out: Vec<f64> = (0..2 * dm)
                .map(|o| {
                    let row = &p[l.film_w2 + o * l.h..l.film_w2 + (o + 1) * l.h];
                    p[l.film_b2 + o] + dot(row, &hidden)
                })
                .collect();
            let (g, b) = out.split_at(dm);
            (hidden, g.to_vec(), b.to_vec())
        };
        let film: Vec<f64> = (0..dm).map(|i| gamma[i] * e[i] + beta[i]).collect();
        let act: Vec<f64> = (0..2 * dm)
            .map(|o| {
                let row = &p[l.ad_w1 + o * dm..l.ad_w1 + (o + 1) * dm];
                (p[l.ad_b1 + o] + dot(row, &film)).max(0.0)
            })
            .collect();
        let pred = p[l.ad_b2] + dot(&p[l.ad_w2..l.ad_w2 + 2 * dm], &act);
        Forward {
            hidden,
            gamma,
            beta,
            film,
            act,
            pred,
        }
    }

    /// Regional prediction from a cached backbone embedding.
    pub fn predict_embedding(&self, region: usize, e: &[f64]) -> f64 {
        self.forward(region, e).pred
    }

    /// Adds `g · dŷ/dθ` into `grad`.
    fn backward(&self, region: usize, e: &[f64], f: &Forward, g: f64, grad: &mut [f64]) {
        if g == 0.0 {
            return;
        }
        let l = self.layout();
        let p = &self.params;
        let dm = l.dm;
        grad[l.ad_b2] += g;
        let mut dfilm = vec![0.0; dm];
        for o in 0..2 * dm {
            grad[l.ad_w2 + o] += g * f.act[o];
            if f.act[o] <= 0.0 {
                continue;
            }
            let dz = g * p[l.ad_w2 + o];
            grad[l.ad_b1 + o] += dz;
            let row = l.ad_w1 + o * dm;
            for i in 0..dm {
                grad[row + i] += dz * f.film[i];
                dfilm[i] += dz * p[row + i];
            }
        }
        if self.config.no_film {
            return;
        }
        // out = [γ; β], dγ = dfilm ⊙ e, dβ = dfilm
        let dout: Vec<f64> = (0..2 * dm)
            .map(|o| if o < dm { dfilm[o] * e[o] } else { dfilm[o - dm] })
            .collect();
        let mut dhidden = vec![0.0; l.h];
        for (o, &d) in dout.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad[l.film_b2 + o] += d;
            let row = l.film_w2 + o * l.h;
            for j in 0..l.h {
                grad[row + j] += d * f.hidden[j];
                dhidden[j] += d * p[row + j];
            }
        }
        let prompt = l.prompt(region);
        for j in 0..l.h {
            if f.hidden[j] <= 0.0 || dhidden[j] == 0.0 {
                continue;
            }
            let d = dhidden[j];
            grad[l.film_b1 + j] += d;
            let row = l.film_w1 + j * l.dp;
            for k in 0..l.dp {
                grad[row + k] += d * p[prompt.start + k];
                grad[prompt.start + k] += d * p[row + k];
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), StudentError> {
        let desc = StudentDescriptor {
            kind: STUDENT_KIND.into(),
            n_regions: self.n_regions,
            embed_dim: self.embed_dim,
            config: self.config,
            backbone_sha256: self.backbone_sha256.clone(),
        };
        let value = serde_json::to_value(&desc).expect("descriptor serializes");
        checkpoint::write(path, &value, &self.params)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StudentError> {
        let (value, params) = checkpoint::read(path)?;
        let corrupt = |reason: String| CheckpointError::Corrupt {
            path: path.display().to_string(),
            reason,
        };
        let desc: StudentDescriptor =
            serde_json::from_value(value).map_err(|e| corrupt(format!("descriptor: {e}")))?;
        if desc.kind != STUDENT_KIND {
            return Err(corrupt(format!("not a student checkpoint ({:?})", desc.kind)).into());
        }
        let l = Layout::new(desc.n_regions, desc.embed_dim, desc.config.prompt_dim, desc.config.film_hidden);
        if params.len() != l.total {
            return Err(corrupt(format!("expected {} parameters, found {}", l.total, params.len())).into());
        }
        Ok(StudentModel {
            config: desc.config,
            n_regions: desc.n_regions,
            embed_dim: desc.embed_dim,
            backbone_sha256: desc.backbone_sha256,
            params,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Backbone embeddings of every region of every subject, `[subject][region]`.
pub fn embed_regions<M: RegressorModel + ?Sized>(
    backbone: &M,
    subjects: &[Subject],
    masks: &[RegionMask],
    noise: &NoiseSpec,
) -> Result<Vec<Vec<Vec<f64>>>, StudentError> {
    subjects
        .iter()
        .map(|s| {
            masks
                .iter()
                .map(|m| {
                    let x = parcellate::extract_region(
                        &s.volume,
                        &m.dilated,
                        noise,
                        NoiseKey::new(&s.record.id, m.region),
                    )?;
                    Ok(backbone.embed(&x))
                })
                .collect()
        })
        .collect()
}

/// Mean absolute deviation between predictions and targets over the whole
/// subject × region grid.
pub fn distill_loss(pred: &[Vec<f64>], soft: &[Vec<f64>]) -> Result<f64, StudentError> {
    check_grid(pred, soft)?;
    let cells = pred.len() * pred.first().map_or(0, Vec::len);
    if cells == 0 {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(soft)
        .flat_map(|(p, s)| p.iter().zip(s).map(|(a, b)| (a - b).abs()))
        .sum();
    Ok(total / cells as f64)
}

fn check_grid(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<(), StudentError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.len() != y.len()) {
        return Err(StudentError::Grid(format!(
            "{} vs {} subjects or ragged regions",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Per-subject consistency penalty summed over networks; `groups` holds
/// zero-based region indices.
pub fn func_consistency_subject(pred: &[f64], groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let mu = g.iter().map(|&r| pred[r]).sum::<f64>() / g.len() as f64;
            g.iter().map(|&r| (pred[r] - mu).abs()).sum::<f64>() / g.len() as f64
        })
        .sum()
}

/// Gradient of [`func_consistency_subject`] w.r.t. each regional prediction.
pub fn func_consistency_grad(pred: &[f64], groups: &[Vec<usize>], detach_mean: bool) -> Vec<f64> {
    let mut out = vec![0.0; pred.len()];
    for g in groups {
        let n = g.len() as f64;
        let mu = g.iter().map(|&r| pred[r]).sum::<f64>() / n;
        let signs: Vec<f64> = g.iter().map(|&r| sign(pred[r] - mu)).collect();
        let mean_sign = if detach_mean { 0.0 } else { signs.iter().sum::<f64>() / n };
        for (&r, s) in g.iter().zip(&signs) {
            out[r] += (s - mean_sign) / n;
        }
    }
    out
}

/// Functional consistency loss averaged over subjects.
pub fn func_consistency_loss(pred: &[Vec<f64>], networks: &NetworkMap) -> Result<f64, StudentError> {
    let groups = checked_groups(networks, pred.first().map_or(0, Vec::len))?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    Ok(pred.iter().map(|p| func_consistency_subject(p, &groups)).sum::<f64>() / pred.len() as f64)
}

fn checked_groups(networks: &NetworkMap, n_regions: usize) -> Result<Vec<Vec<usize>>, StudentError> {
    networks
        .validate(n_regions)
        .map_err(|e| StudentError::Networks(e.to_string()))?;
    let groups = networks.groups();
    if groups.iter().any(Vec::is_empty) {
        return Err(StudentError::Networks("empty network".into()));
    }
    Ok(groups)
}

/// Student objective over cached embeddings, one sample per subject.
struct Objective<'a> {
    model: &'a mut StudentModel,
    embeddings: &'a [Vec<Vec<f64>>],
    targets: Vec<Vec<f64>>,
    groups: Vec<Vec<usize>>,
}

impl Trainable for Objective<'_> {
    fn params(&self) -> &[f64] {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.model.params
    }

    fn n_samples(&self) -> usize {
        self.embeddings.len()
    }

    fn term_names(&self) -> Vec<&'static str> {
        vec!["dist", "func", "total"]
    }

    fn sample(&self, idx: usize, weight: f64, grad: &mut [f64]) -> Vec<f64> {
        let m = &*self.model;
        let r = m.n_regions;
        let fw: Vec<Forward> = (0..r).map(|k| m.forward(k, &self.embeddings[idx][k])).collect();
        let pred: Vec<f64> = fw.iter().map(|f| f.pred).collect();
        let target = &self.targets[idx];
        let dist = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / r as f64;
        let func = func_consistency_subject(&pred, &self.groups);
        let zeta = m.config.zeta;
        let total = dist + zeta * func;
        let dfunc = if zeta > 0.0 {
            func_consistency_grad(&pred, &self.groups, m.config.detach_mean)
        } else {
            vec![0.0; r]
        };
        for k in 0..r {
            let g = sign(pred[k] - target[k]) / r as f64 + zeta * dfunc[k];
            m.backward(k, &self.embeddings[idx][k], &fw[k], weight * g, grad);
        }
        vec![dist, func, total]
    }
}

/// Loss terms `[dist, func, total]` of one subject and their gradient with
/// respect to the student parameters.
pub fn subject_objective(
    student: &StudentModel,
    embeddings: &[Vec<f64>],
    target: &[f64],
    networks: &NetworkMap,
) -> Result<(Vec<f64>, Vec<f64>), StudentError> {
    if embeddings.len() != student.n_regions || target.len() != student.n_regions {
        return Err(StudentError::Grid("subject does not cover every region".into()));
    }
    let groups = checked_groups(networks, student.n_regions)?;
    let mut model = student.clone();
    let emb = [embeddings.to_vec()];
    let objective = Objective {
        model: &mut model,
        embeddings: &emb,
        targets: vec![target.to_vec()],
        groups,
    };
    let mut grad = vec![0.0; student.params.len()];
    let terms = objective.sample(0, 1.0, &mut grad);
    Ok((terms, grad))
}

/// Regional targets for training subjects according to the label mode.
pub fn training_targets(
    subjects: &[Subject],
    labels: &SoftLabelTable,
    mode: LabelMode,
) -> Result<Vec<Vec<f64>>, StudentError> {
    subjects
        .iter()
        .map(|s| match mode {
            LabelMode::Chron => Ok(vec![s.record.chronological_age; labels.n_regions]),
            LabelMode::Soft => labels
                .row(&s.record.id)
                .map(|row| row.y_soft.clone())
                .ok_or_else(|| StudentError::MissingLabels(s.record.id.clone())),
        })
        .collect()
}

/// Trains the student on cached embeddings. `targets[n][r]` is the label of
/// region `r` of training subject `n`.
pub fn train_student(
    student: &mut StudentModel,
    embeddings: &[Vec<Vec<f64>>],
    targets: Vec<Vec<f64>>,
    networks: &NetworkMap,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<LossHistory, StudentError> {
    check_grid(
        &embeddings.iter().map(|e| vec![0.0; e.len()]).collect::<Vec<_>>(),
        &targets,
    )?;
    if targets.iter().any(|t| t.len() != student.n_regions) {
        return Err(StudentError::Grid("targets do not cover every region".into()));
    }
    let groups = checked_groups(networks, student.n_regions)?;
    let mut objective = Objective {
        model: student,
        embeddings,
        targets,
        groups,
    };
    Ok(optim::train(&mut objective, cfg, seed)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub id: String,
    pub age: f64,
    pub cohort: Cohort,
    pub split: Split,
    pub reba: Vec<f64>,
}

/// Raw regional predictions, one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub n_regions: usize,
    pub rows: Vec<PredictionRow>,
}

impl PredictionTable {
    pub fn write_csv(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let mut header: Vec<String> = ["id", "age", "cohort", "split"].map(String::from).to_vec();
        header.extend((1..=self.n_regions).map(|r| format!("reba_r{r}")));
        w.write_record(&header).map_err(|e| ArtifactError::csv(path, e))?;
        for row in &self.rows {
            let mut rec = vec![
                row.id.clone(),
                row.age.to_string(),
                row.cohort.to_string(),
                row.split.to_string(),
            ];
            rec.extend(row.reba.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| ArtifactError::csv(path, e))?;
        }
        w.flush().map_err(|e| ArtifactError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self, ArtifactError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let header = r.headers().map_err(|e| ArtifactError::csv(path, e))?.clone();
        let fixed = ["id", "age", "cohort", "split"];
        if header.len() <= fixed.len() || fixed.iter().zip(&header).any(|(a, b)| *a != b) {
            return Err(ArtifactError::format(path, "unexpected prediction header"));
        }
        let n_regions = header.len() - fixed.len();
        for k in 0..n_regions {
            if header[4 + k] != format!("reba_r{}", k + 1) {
                return Err(ArtifactError::format(path, "unexpected prediction header"));
            }
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| ArtifactError::csv(path, e))?;
            rows.push(PredictionRow {
                id: rec[0].to_string(),
                age: io::parse_f64(path, "age", &rec[1])?,
                cohort: rec[2].parse().map_err(|e: String| ArtifactError::format(path, e))?,
                split: rec[3].parse().map_err(|e: String| ArtifactError::format(path, e))?,
                reba: (0..n_regions)
                    .map(|k| io::parse_f64(path, &header[4 + k], &rec[4 + k]))
                    .collect::<Result<_, _>>()?,
            });
        }
        Ok(PredictionTable { n_regions, rows })
    }
}

/// Predictions for already-embedded subjects.
pub fn predict_embedded(student: &StudentModel, subjects: &[Subject], embeddings: &[Vec<Vec<f64>>]) -> PredictionTable {
    let rows = subjects
        .iter()
        .zip(embeddings)
        .map(|(s, e)| PredictionRow {
            id: s.record.id.clone(),
            age: s.record.chronological_age,
            cohort: s.record.cohort.clone(),
            split: s.record.split,
            reba: (0..student.n_regions).map(|k| student.predict_embedding(k, &e[k])).collect(),
        })
        .collect();
    PredictionTable {
        n_regions: student.n_regions,
        rows,
    }
}

/// Regional predictions for every subject in `subjects`.
pub fn predict_cohort<M: RegressorModel + ?Sized>(
    student: &StudentModel,
    backbone: &M,
    subjects: &[Subject],
    masks: &[RegionMask],
    noise: &NoiseSpec,
) -> Result<PredictionTable, StudentError> {
    student.check_backbone(backbone)?;
    let emb = embed_regions(backbone, subjects, masks, noise)?;
    Ok(predict_embedded(student, subjects, &emb))
}
