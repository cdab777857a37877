//! Whole-brain teacher training and soft regional label construction.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{
    self, ArchDescriptor, ConvRegressor, LossHistory, Mae, ModelError, OptimizerConfig, RegressorModel,
    TrainError,
};
use crate::datagen::Subject;
use crate::io::{self, ArtifactError};
use crate::parcellate::{self, NoiseKey, NoiseSpec, RegionMask};
use crate::volume::{Shape, Volume};

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("subject {id} ({cohort}) is not a healthy control; teacher training is HC-only")]
    NonHealthyTraining { id: String, cohort: String },
    #[error("empty training split")]
    EmptySplit,
    #[error("teacher must be frozen before building labels")]
    NotFrozen,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Parcel(#[from] parcellate::ParcelError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Summary statistics of the training split handed to a backbone factory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub shape: Shape,
    pub mean_age: f64,
    pub std_age: f64,
    /// Mean intensity over nonzero voxels.
    pub foreground_mean: f64,
}

impl TrainStats {
    pub fn of(subjects: &[Subject]) -> Result<Self, TeacherError> {
        let first = subjects.first().ok_or(TeacherError::EmptySplit)?;
        let n = subjects.len() as f64;
        let mean_age = subjects.iter().map(|s| s.record.chronological_age).sum::<f64>() / n;
        let var = subjects
            .iter()
            .map(|s| (s.record.chronological_age - mean_age).powi(2))
            .sum::<f64>()
            / n;
        let (mut sum, mut count) = (0.0, 0usize);
        for s in subjects {
            for &v in s.volume.data() {
                if v != 0.0 {
                    sum += v as f64;
                    count += 1;
                }
            }
        }
        Ok(TrainStats {
            shape: first.volume.shape(),
            mean_age,
            std_age: if var > 0.0 { var.sqrt() } else { 1.0 },
            foreground_mean: if count > 0 && sum > 0.0 { sum / count as f64 } else { 1.0 },
        })
    }
}

/// Factory for the reference backbone: inputs divided by the foreground mean,
/// head scaled by the age spread and started at the mean age.
pub fn reference_factory(
    embed_dim: usize,
    seed: u64,
) -> impl FnOnce(&TrainStats) -> Result<ConvRegressor, ModelError> {
    move |stats| {
        let arch = ArchDescriptor {
            input_scale: backbone::optim::to_f32_grid(stats.foreground_mean),
            age_scale: backbone::optim::to_f32_grid(stats.std_age),
            ..ArchDescriptor::reference(stats.shape, embed_dim)
        };
        let mut model = ConvRegressor::new(arch, seed)?;
        model.set_head_bias(stats.mean_age)?;
        Ok(model)
    }
}

/// Trains a whole-brain regressor on HC subjects with MAE and freezes it.
pub fn train_teacher<M: RegressorModel>(
    train: &[Subject],
    factory: impl FnOnce(&TrainStats) -> Result<M, ModelError>,
    cfg: &OptimizerConfig,
    seed: u64,
) -> Result<(M, LossHistory), TeacherError> {
    if let Some(s) = train.iter().find(|s| !s.record.cohort.is_hc()) {
        return Err(TeacherError::NonHealthyTraining {
            id: s.record.id.clone(),
            cohort: s.record.cohort.to_string(),
        });
    }
    let stats = TrainStats::of(train)?;
    let mut model = factory(&stats)?;
    let data: Vec<(&Volume, f64)> = train
        .iter()
        .map(|s| (&s.volume, s.record.chronological_age))
        .collect();
    let history = backbone::train_regressor(&mut model, &data, &Mae, cfg, seed)?;
    model.freeze();
    Ok((model, history))
}

/// Mean absolute error between predictions and targets.
pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64
}

/// Teacher prediction on each dilated region in isolation.
pub fn initial_reba<M: RegressorModel + ?Sized>(
    teacher: &M,
    subject_id: &str,
    volume: &Volume,
    masks: &[RegionMask],
    noise: &NoiseSpec,
) -> Result<Vec<f64>, TeacherError> {
    if !teacher.is_frozen() {
        return Err(TeacherError::NotFrozen);
    }
    masks
        .iter()
        .map(|m| {
            let x = parcellate::extract_region(volume, &m.dilated, noise, NoiseKey::new(subject_id, m.region))?;
            Ok(teacher.predict_age(&x))
        })
        .collect()
}

/// Mean drop in the whole-brain prediction when each region is occluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionVector {
    pub rho: Vec<f64>,
    pub n_subjects_used: usize,
}

/// Computes the correction vector on the training split and returns the
/// whole-brain predictions alongside, keyed by subject order.
pub fn correction_vector<M: RegressorModel + ?Sized>(
    teacher: &M,
    train: &[Subject],
    masks: &[RegionMask],
    noise: &NoiseSpec,
    dilate_occlusion: bool,
) -> Result<(CorrectionVector, Vec<f64>), TeacherError> {
    if !teacher.is_frozen() {
        return Err(TeacherError::NotFrozen);
    }
    if train.is_empty() {
        return Err(TeacherError::EmptySplit);
    }
    let mut sums = vec![0.0; masks.len()];
    let mut whole = Vec::with_capacity(train.len());
    for s in train {
        let y = teacher.predict_age(&s.volume);
        whole.push(y);
        for (acc, m) in sums.iter_mut().zip(masks) {
            let mask = if dilate_occlusion { &m.dilated } else { &m.mask };
            let x = parcellate::occlude_region(&s.volume, mask, noise, NoiseKey::new(&s.record.id, m.region))?;
            *acc += y - teacher.predict_age(&x);
        }
    }
    let n = train.len() as f64;
    Ok((
        CorrectionVector {
            rho: sums.into_iter().map(|s| s / n).collect(),
            n_subjects_used: train.len(),
        },
        whole,
    ))
}

/// Corrects `y_init` by `alpha * rho` iff `(y_whole - y_init) * rho > 0`.
pub fn soft_label(y_whole: f64, y_init: f64, rho: f64, alpha: f64) -> f64 {
    if (y_whole - y_init) * rho > 0.0 {
        y_init + alpha * rho
    } else {
        y_init
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelRow {
    pub id: String,
    pub y_whole: f64,
    pub y_init: Vec<f64>,
    pub y_soft: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelTable {
    pub alpha: f64,
    pub n_regions: usize,
    pub rows: Vec<SoftLabelRow>,
}

impl SoftLabelTable {
    pub fn row(&self, id: &str) -> Option<&SoftLabelRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let mut header = vec!["id".to_string(), "y_whole".to_string()];
        header.extend((1..=self.n_regions).map(|r| format!("y_init_r{r}")));
        header.extend((1..=self.n_regions).map(|r| format!("y_soft_r{r}")));
        w.write_record(&header).map_err(|e| ArtifactError::csv(path, e))?;
        for row in &self.rows {
            let mut rec = vec![row.id.clone(), row.y_whole.to_string()];
            rec.extend(row.y_init.iter().map(f64::to_string));
            rec.extend(row.y_soft.iter().map(f64::to_string));
            w.write_record(&rec).map_err(|e| ArtifactError::csv(path, e))?;
        }
        w.flush().map_err(|e| ArtifactError::io(path, e))
    }

    /// Reads a table written by [`write_csv`](Self::write_csv); `alpha` comes
    /// from the accompanying `rho.json`.
    pub fn read_csv(path: &Path, alpha: f64) -> Result<Self, ArtifactError> {
        let mut r = csv::Reader::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let header = r.headers().map_err(|e| ArtifactError::csv(path, e))?.clone();
        if header.len() < 4 || header.len() % 2 != 0 || &header[0] != "id" || &header[1] != "y_whole" {
            return Err(ArtifactError::format(path, "unexpected soft label header"));
        }
        let n_regions = (header.len() - 2) / 2;
        for r in 1..=n_regions {
            if header[1 + r] != format!("y_init_r{r}") || header[1 + n_regions + r] != format!("y_soft_r{r}") {
                return Err(ArtifactError::format(path, "unexpected soft label header"));
            }
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| ArtifactError::csv(path, e))?;
            let cell = |i: usize| io::parse_f64(path, &header[i], &rec[i]);
            rows.push(SoftLabelRow {
                id: rec[0].to_string(),
                y_whole: cell(1)?,
                y_init: (2..2 + n_regions).map(cell).collect::<Result<_, _>>()?,
                y_soft: (2 + n_regions..2 + 2 * n_regions).map(cell).collect::<Result<_, _>>()?,
            });
        }
        Ok(SoftLabelTable { alpha, n_regions, rows })
    }
}

/// Soft labels for `subjects`. `y_whole` may be supplied from an earlier
/// [`correction_vector`] call to skip the whole-volume forward pass.
pub fn soft_labels<M: RegressorModel + ?Sized>(
    teacher: &M,
    subjects: &[Subject],
    masks: &[RegionMask],
    noise: &NoiseSpec,
    rho: &CorrectionVector,
    alpha: f64,
    y_whole: Option<&[f64]>,
) -> Result<SoftLabelTable, TeacherError> {
    assert!(alpha >= 0.0, "alpha must be >= 0");
    assert_eq!(rho.rho.len(), masks.len());
    let mut rows = Vec::with_capacity(subjects.len());
    for (i, s) in subjects.iter().enumerate() {
        let whole = match y_whole {
            Some(w) => w[i],
            None => teacher.predict_age(&s.volume),
        };
        let init = initial_reba(teacher, &s.record.id, &s.volume, masks, noise)?;
        let soft = init
            .iter()
            .zip(&rho.rho)
            .map(|(&yi, &r)| soft_label(whole, yi, r, alpha))
            .collect();
        rows.push(SoftLabelRow {
            id: s.record.id.clone(),
            y_whole: whole,
            y_init: init,
            y_soft: soft,
        });
    }
    Ok(SoftLabelTable {
        alpha,
        n_regions: masks.len(),
        rows,
    })
}

/// Contents of `rho.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoFile {
    pub alpha: f64,
    pub eta: f64,
    pub rho: Vec<f64>,
    pub n_subjects_used: usize,
}
