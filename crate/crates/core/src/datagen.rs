//! Synthetic phantom cohorts with a known atlas and planted regional ages.
//!
//! The atlas is a seeded Voronoi (Lloyd-relaxed) partition of an axis-aligned
//! ellipsoid spanning 80% of each dimension. Region ids are assigned in
//! lexicographic order of the final centroids, and functional networks are
//! consecutive id blocks, so neighbouring ids (and networks) are spatially
//! adjacent.
//!
//! Voxel intensity follows a linear law in the planted regional age,
//!
//! ```text
//! intensity = base - decay_rate * planted_age[r] + noise_sigma * z,   z ~ N(0, 1)
//! ```
//!
//! with background fixed at exactly 0. The law is inverted by
//! [`IntensityLaw::age_for_intensity`].
//!
//! # Draw order
//!
//! * atlas: one stream `derive(seed, [ATLAS])`: `R` distinct foreground voxels
//!   (centroid seeds), nothing else.
//! * records: one stream `derive(seed, [RECORDS])`, subjects visited in
//!   manifest order (HC train, HC test, then each disease in config order).
//!   Per subject: one uniform for the age, one shuffle of the `K` network
//!   levels, then `R` uniforms for the region jitter.
//! * volumes: subject `i` uses `derive(seed, [VOLUME]) ^ i`; one standard
//!   normal per foreground voxel in D-major order (none when `noise_sigma`
//!   is 0).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{self, ArtifactError};
use crate::seed::{self, tag};
use crate::volume::{Atlas, Shape, Volume, VolumeError};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid dataset config: {0}")]
    InvalidConfig(String),
    #[error("disease {name:?}: {reason}")]
    Disease { name: String, reason: String },
    #[error("subject {id}: {reason}")]
    Subject { id: String, reason: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Region id to functional network id (both 1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkMap {
    pub n_networks: usize,
    /// Keyed by region id.
    pub regions: BTreeMap<u32, u32>,
}

impl NetworkMap {
    pub fn new(n_networks: usize, regions: BTreeMap<u32, u32>) -> Result<Self, DatagenError> {
        let map = NetworkMap {
            n_networks,
            regions,
        };
        map.validate(map.regions.len())?;
        Ok(map)
    }

    /// Total over `1..=n_regions`, and every network has a member.
    pub fn validate(&self, n_regions: usize) -> Result<(), DatagenError> {
        for r in 1..=n_regions as u32 {
            match self.regions.get(&r) {
                None => {
                    return Err(DatagenError::InvalidConfig(format!(
                        "network map misses region {r}"
                    )))
                }
                Some(&k) if k == 0 || k as usize > self.n_networks => {
                    return Err(DatagenError::InvalidConfig(format!(
                        "region {r} maps to network {k} outside 1..={}",
                        self.n_networks
                    )))
                }
                _ => {}
            }
        }
        if self.regions.len() != n_regions {
            return Err(DatagenError::InvalidConfig(format!(
                "network map covers {} regions, atlas has {n_regions}",
                self.regions.len()
            )));
        }
        if let Some(k) = (1..=self.n_networks).find(|&k| self.members(k as u32).is_empty()) {
            return Err(DatagenError::InvalidConfig(format!("network {k} has no member")));
        }
        Ok(())
    }

    pub fn network_of(&self, region: u32) -> u32 {
        self.regions[&region]
    }

    pub fn members(&self, network: u32) -> Vec<u32> {
        self.regions
            .iter()
            .filter(|(_, &k)| k == network)
            .map(|(&r, _)| r)
            .collect()
    }

    /// Member lists for networks `1..=K`, as zero-based region indices.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        (1..=self.n_networks as u32)
            .map(|k| self.members(k).into_iter().map(|r| r as usize - 1).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Strong,
    Potential,
    None,
}

/// Disease-associated region set, plus a relevance level per region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiseasePrior {
    pub name: String,
    /// Regions averaged by the disease correlation score.
    pub regions: BTreeSet<u32>,
    pub relevance: BTreeMap<u32, Relevance>,
}

impl DiseasePrior {
    /// Prior whose region set is exactly `regions` (all marked strong).
    pub fn from_regions(name: &str, regions: &[u32], n_regions: usize) -> Self {
        let set: BTreeSet<u32> = regions.iter().copied().collect();
        let relevance = (1..=n_regions as u32)
            .map(|r| {
                let level = if set.contains(&r) {
                    Relevance::Strong
                } else {
                    Relevance::None
                };
                (r, level)
            })
            .collect();
        DiseasePrior {
            name: name.to_string(),
            regions: set,
            relevance,
        }
    }

    pub fn validate(&self, n_regions: usize) -> Result<(), DatagenError> {
        if self.regions.is_empty() {
            return Err(DatagenError::Disease {
                name: self.name.clone(),
                reason: "empty region set".into(),
            });
        }
        if let Some(&r) = self.regions.iter().find(|&&r| r == 0 || r as usize > n_regions) {
            return Err(DatagenError::Disease {
                name: self.name.clone(),
                reason: format!("region {r} outside 1..={n_regions}"),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Cohort {
    Hc,
    Disease(String),
}

impl Cohort {
    pub fn is_hc(&self) -> bool {
        matches!(self, Cohort::Hc)
    }

    pub fn disease(&self) -> Option<&str> {
        match self {
            Cohort::Hc => None,
            Cohort::Disease(d) => Some(d),
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cohort::Hc => f.write_str("HC"),
            Cohort::Disease(d) => write!(f, "disease:{d}"),
        }
    }
}

impl FromStr for Cohort {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "HC" {
            Ok(Cohort::Hc)
        } else if let Some(d) = s.strip_prefix("disease:") {
            if d.is_empty() {
                Err("empty disease name".into())
            } else {
                Ok(Cohort::Disease(d.to_string()))
            }
        } else {
            Err(format!("unknown cohort {s:?}"))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub id: String,
    pub chronological_age: f64,
    pub cohort: Cohort,
    pub split: Split,
    /// Ground-truth age per region (index `r - 1`). Never used for training.
    pub planted_regional_age: Vec<f64>,
}

/// Age-to-intensity law of the phantoms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntensityLaw {
    pub base: f64,
    pub decay_rate: f64,
    pub noise_sigma: f64,
}

impl Default for IntensityLaw {
    fn default() -> Self {
        IntensityLaw {
            base: 2.0,
            decay_rate: 0.015,
            noise_sigma: 0.05,
        }
    }
}

impl IntensityLaw {
    pub fn intensity(&self, age: f64) -> f64 {
        self.base - self.decay_rate * age
    }

    pub fn age_for_intensity(&self, intensity: f64) -> f64 {
        (self.base - intensity) / self.decay_rate
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiseaseSpec {
    pub name: String,
    pub n_subjects: usize,
    /// Years added to the planted age of every prior region.
    pub offset_years: f64,
    pub regions: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelAssignment {
    #[default]
    Rotate,
    Shuffle,
}

/// Generation parameters for one synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub shape: Shape,
    pub n_regions: usize,
    pub n_networks: usize,
    pub n_hc_train: usize,
    pub n_hc_test: usize,
    pub age_min: f64,
    pub age_max: f64,
    /// Bound on |planted - chronological| for HC subjects.
    pub hc_jitter: f64,
    /// Distance between the lowest and highest network age level.
    pub network_spread: f64,
    /// Half-width of the uniform per-region jitter added on top of the level.
    pub region_jitter: f64,
    /// How network levels are dealt to subjects: `rotate` cycles through the
    /// rotations of the level list from a random start per cohort, so every
    /// network sees every level equally often; `shuffle` permutes per subject.
    #[serde(default)]
    pub level_assignment: LevelAssignment,
    pub intensity: IntensityLaw,
    pub diseases: Vec<DiseaseSpec>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            shape: Shape::cube(32),
            n_regions: 8,
            n_networks: 3,
            n_hc_train: 100,
            n_hc_test: 50,
            age_min: 20.0,
            age_max: 80.0,
            hc_jitter: 11.0,
            network_spread: 20.0,
            region_jitter: 1.0,
            level_assignment: LevelAssignment::Rotate,
            intensity: IntensityLaw::default(),
            diseases: vec![
                DiseaseSpec {
                    name: "pd".into(),
                    n_subjects: 30,
                    offset_years: 8.0,
                    regions: vec![2, 3],
                },
                DiseaseSpec {
                    name: "ad".into(),
                    n_subjects: 30,
                    offset_years: 8.0,
                    regions: vec![5, 6],
                },
            ],
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidConfig(m));
        let s = self.shape;
        if s.d < 8 || s.h < 8 || s.w < 8 {
            return bad(format!("every dimension must be >= 8, got {:?}", <[usize; 3]>::from(s)));
        }
        if self.n_regions == 0 || self.n_networks == 0 || self.n_networks > self.n_regions {
            return bad(format!(
                "need 1 <= n_networks <= n_regions, got K={} R={}",
                self.n_networks, self.n_regions
            ));
        }
        if self.n_hc_train == 0 {
            return bad("n_hc_train must be positive".into());
        }
        if !(self.age_min.is_finite() && self.age_max.is_finite() && self.age_min < self.age_max) {
            return bad(format!("age range [{}, {}] is empty", self.age_min, self.age_max));
        }
        for (name, v) in [
            ("hc_jitter", self.hc_jitter),
            ("network_spread", self.network_spread),
            ("region_jitter", self.region_jitter),
            ("intensity.noise_sigma", self.intensity.noise_sigma),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.intensity.decay_rate.is_finite() && self.intensity.decay_rate > 0.0) {
            return bad("intensity.decay_rate must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for d in &self.diseases {
            let err = |reason: String| {
                Err(DatagenError::Disease {
                    name: d.name.clone(),
                    reason,
                })
            };
            if d.name.is_empty() || d.name == "HC" || d.name.contains([',', ':', '/']) {
                return err("invalid disease name".into());
            }
            if !seen.insert(d.name.clone()) {
                return err("duplicate disease name".into());
            }
            if d.regions.is_empty() {
                return err("empty region offset set".into());
            }
            if let Some(&r) = d.regions.iter().find(|&&r| r == 0 || r as usize > self.n_regions) {
                return err(format!(
                    "offset references region {r}, atlas has regions 1..={}",
                    self.n_regions
                ));
            }
            if !d.offset_years.is_finite() {
                return err("offset_years must be finite".into());
            }
        }
        Ok(())
    }

    /// Disease priors implied by the configured offsets.
    pub fn priors(&self) -> BTreeMap<String, DiseasePrior> {
        self.diseases
            .iter()
            .map(|d| {
                (
                    d.name.clone(),
                    DiseasePrior::from_regions(&d.name, &d.regions, self.n_regions),
                )
            })
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.n_hc_train + self.n_hc_test + self.diseases.iter().map(|d| d.n_subjects).sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortManifest {
    pub subjects: Vec<SubjectRecord>,
    pub n_regions: usize,
    pub seed: u64,
    pub params: DatasetConfig,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let mut ids = BTreeSet::new();
        for s in &self.subjects {
            if !ids.insert(s.id.as_str()) {
                return Err(DatagenError::Subject {
                    id: s.id.clone(),
                    reason: "duplicate id".into(),
                });
            }
            if s.planted_regional_age.len() != self.n_regions {
                return Err(DatagenError::Subject {
                    id: s.id.clone(),
                    reason: format!(
                        "{} planted ages for {} regions",
                        s.planted_regional_age.len(),
                        self.n_regions
                    ),
                });
            }
            if !s.cohort.is_hc() && s.split == Split::Train {
                return Err(DatagenError::Subject {
                    id: s.id.clone(),
                    reason: "disease subject in training split".into(),
                });
            }
        }
        Ok(())
    }

    pub fn select<'a>(
        &'a self,
        pred: impl Fn(&SubjectRecord) -> bool + 'a,
    ) -> impl Iterator<Item = &'a SubjectRecord> + 'a {
        self.subjects.iter().filter(move |s| pred(s))
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ArtifactError> {
        let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let mut header = vec!["id".to_string(), "age".into(), "cohort".into(), "split".into()];
        header.extend((1..=self.n_regions).map(|r| format!("planted_age_r{r}")));
        w.write_record(&header).map_err(|e| ArtifactError::csv(path, e))?;
        for s in &self.subjects {
            let mut row = vec![
                s.id.clone(),
                s.chronological_age.to_string(),
                s.cohort.to_string(),
                s.split.to_string(),
            ];
            row.extend(s.planted_regional_age.iter().map(|a| a.to_string()));
            w.write_record(&row).map_err(|e| ArtifactError::csv(path, e))?;
        }
        w.flush().map_err(|e| ArtifactError::io(path, e))
    }

    /// Subject records from `manifest.csv`; the region count is inferred
    /// from the `planted_age_r*` columns.
    pub fn read_records(path: &Path) -> Result<Vec<SubjectRecord>, ArtifactError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
        let header = rdr.headers().map_err(|e| ArtifactError::csv(path, e))?.clone();
        let fixed = ["id", "age", "cohort", "split"];
        if header.len() < 4 || header.iter().take(4).ne(fixed.iter().copied()) {
            return Err(ArtifactError::format(path, "expected columns id,age,cohort,split,..."));
        }
        for (i, h) in header.iter().skip(4).enumerate() {
            if h != format!("planted_age_r{}", i + 1) {
                return Err(ArtifactError::format(path, format!("unexpected column {h:?}")));
            }
        }
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| ArtifactError::csv(path, e))?;
            let cohort = rec[2]
                .parse()
                .map_err(|e: String| ArtifactError::format(path, e))?;
            let split = rec[3]
                .parse()
                .map_err(|e: String| ArtifactError::format(path, e))?;
            let planted = rec
                .iter()
                .skip(4)
                .zip(header.iter().skip(4))
                .map(|(cell, col)| io::parse_f64(path, col, cell))
                .collect::<Result<Vec<_>, _>>()?;
            out.push(SubjectRecord {
                id: rec[0].to_string(),
                chronological_age: io::parse_f64(path, "age", &rec[1])?,
                cohort,
                split,
                planted_regional_age: planted,
            });
        }
        Ok(out)
    }
}

fn ellipsoid_foreground(shape: Shape) -> Vec<usize> {
    let axis = |n: usize| ((n as f64 - 1.0) / 2.0, 0.4 * n as f64);
    let (cd, ad) = axis(shape.d);
    let (ch, ah) = axis(shape.h);
    let (cw, aw) = axis(shape.w);
    (0..shape.len())
        .filter(|&idx| {
            let (i, j, k) = shape.coords(idx);
            let q = ((i as f64 - cd) / ad).powi(2)
                + ((j as f64 - ch) / ah).powi(2)
                + ((k as f64 - cw) / aw).powi(2);
            q <= 1.0
        })
        .collect()
}

fn nearest(point: [f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, cen) in centroids.iter().enumerate() {
        let d = (point[0] - cen[0]).powi(2) + (point[1] - cen[1]).powi(2) + (point[2] - cen[2]).powi(2);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

const LLOYD_ITERATIONS: usize = 10;

/// Seeded atlas over an ellipsoidal brain mask plus a contiguous network
/// grouping.
pub fn make_synthetic_atlas(
    shape: Shape,
    n_regions: usize,
    n_networks: usize,
    seed: u64,
) -> Result<(Atlas, NetworkMap), DatagenError> {
    if shape.d < 8 || shape.h < 8 || shape.w < 8 {
        return Err(DatagenError::InvalidConfig(format!(
            "every dimension must be >= 8, got {:?}",
            <[usize; 3]>::from(shape)
        )));
    }
    if n_regions == 0 || n_networks == 0 || n_networks > n_regions {
        return Err(DatagenError::InvalidConfig(format!(
            "need 1 <= K <= R, got K={n_networks} R={n_regions}"
        )));
    }
    let fg = ellipsoid_foreground(shape);
    if n_regions > fg.len() {
        return Err(DatagenError::InvalidConfig(format!(
            "{n_regions} regions exceed {} foreground voxels",
            fg.len()
        )));
    }
    let point = |idx: usize| {
        let (i, j, k) = shape.coords(idx);
        [i as f64, j as f64, k as f64]
    };

    let mut rng = seed::rng(seed::derive(seed, &[tag::ATLAS]));
    let picks = rand::seq::index::sample(&mut rng, fg.len(), n_regions);
    let mut centroids: Vec<[f64; 3]> = picks.iter().map(|p| point(fg[p])).collect();
    let mut assign = vec![0usize; fg.len()];

    for _ in 0..LLOYD_ITERATIONS {
        let mut sums = vec![[0.0f64; 3]; n_regions];
        let mut counts = vec![0usize; n_regions];
        for (a, &idx) in assign.iter_mut().zip(&fg) {
            let p = point(idx);
            *a = nearest(p, &centroids);
            counts[*a] += 1;
            for t in 0..3 {
                sums[*a][t] += p[t];
            }
        }
        for c in 0..n_regions {
            if counts[c] > 0 {
                for t in 0..3 {
                    centroids[c][t] = sums[c][t] / counts[c] as f64;
                }
            }
        }
    }
    for (a, &idx) in assign.iter_mut().zip(&fg) {
        *a = nearest(point(idx), &centroids);
    }

    // Relaxation can starve a cluster; give it the closest voxel that its
    // current owner can spare.
    let mut counts = vec![0usize; n_regions];
    for &a in &assign {
        counts[a] += 1;
    }
    for c in 0..n_regions {
        if counts[c] > 0 {
            continue;
        }
        let (slot, _) = fg
            .iter()
            .enumerate()
            .filter(|(s, _)| counts[assign[*s]] > 1)
            .map(|(s, &idx)| {
                let p = point(idx);
                let cen = centroids[c];
                (s, (p[0] - cen[0]).powi(2) + (p[1] - cen[1]).powi(2) + (p[2] - cen[2]).powi(2))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("R <= foreground voxels leaves a spare voxel");
        counts[assign[slot]] -= 1;
        assign[slot] = c;
        counts[c] = 1;
    }

    // Final centroids, then ids in lexicographic centroid order.
    let mut sums = vec![[0.0f64; 3]; n_regions];
    for (&a, &idx) in assign.iter().zip(&fg) {
        let p = point(idx);
        for t in 0..3 {
            sums[a][t] += p[t];
        }
    }
    let mut order: Vec<usize> = (0..n_regions).collect();
    let mean = |c: usize| sums[c].map(|s| s / counts[c] as f64);
    order.sort_by(|&a, &b| {
        let (ma, mb) = (mean(a), mean(b));
        ma[0].total_cmp(&mb[0])
            .then(ma[1].total_cmp(&mb[1]))
            .then(ma[2].total_cmp(&mb[2]))
    });
    let mut id_of = vec![0i32; n_regions];
    for (rank, &c) in order.iter().enumerate() {
        id_of[c] = rank as i32 + 1;
    }

    let mut labels = vec![0i32; shape.len()];
    for (&a, &idx) in assign.iter().zip(&fg) {
        labels[idx] = id_of[a];
    }
    let atlas = Atlas::new(shape, labels, n_regions)?;

    let regions = (1..=n_regions as u32)
        .map(|r| (r, ((r as usize - 1) * n_networks / n_regions) as u32 + 1))
        .collect();
    let networks = NetworkMap::new(n_networks, regions)?;
    Ok((atlas, networks))
}

/// Phantom volume for one subject under `law`.
pub fn generate_subject_volume(
    atlas: &Atlas,
    record: &SubjectRecord,
    law: &IntensityLaw,
    seed: u64,
) -> Result<Volume, DatagenError> {
    if record.planted_regional_age.len() != atlas.n_regions() {
        return Err(DatagenError::Subject {
            id: record.id.clone(),
            reason: format!(
                "{} planted ages for an atlas with {} regions",
                record.planted_regional_age.len(),
                atlas.n_regions()
            ),
        });
    }
    let means: Vec<f64> = record
        .planted_regional_age
        .iter()
        .map(|&a| law.intensity(a))
        .collect();
    let mut rng = seed::rng(seed);
    let data = atlas
        .labels()
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0.0f32;
            }
            let mut v = means[l as usize - 1];
            if law.noise_sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += law.noise_sigma * z;
            }
            v as f32
        })
        .collect();
    Ok(Volume::new(atlas.shape(), data)?)
}

fn network_levels(n_networks: usize, spread: f64) -> Vec<f64> {
    if n_networks == 1 {
        return vec![0.0];
    }
    (0..n_networks)
        .map(|k| -spread / 2.0 + spread * k as f64 / (n_networks - 1) as f64)
        .collect()
}

/// Subject records for every cohort, without touching the filesystem.
pub fn generate_records(
    config: &DatasetConfig,
    networks: &NetworkMap,
    seed: u64,
) -> Result<Vec<SubjectRecord>, DatagenError> {
    config.validate()?;
    let r_count = config.n_regions;
    let mut rng = seed::rng(seed::derive(seed, &[tag::RECORDS]));
    let base_levels = network_levels(config.n_networks, config.network_spread);
    let mut groups: Vec<(String, Cohort, Split, usize, Option<&DiseaseSpec>)> = vec![
        ("hc-train".into(), Cohort::Hc, Split::Train, config.n_hc_train, None),
        ("hc-test".into(), Cohort::Hc, Split::Test, config.n_hc_test, None),
    ];
    for d in &config.diseases {
        groups.push((d.name.clone(), Cohort::Disease(d.name.clone()), Split::Test, d.n_subjects, Some(d)));
    }

    let mut out = Vec::with_capacity(config.n_subjects());
    for (prefix, cohort, split, n, disease) in groups {
        let start = rng.random_range(0..base_levels.len());
        for i in 0..n {
            let u: f64 = rng.random();
            let age = config.age_min + u * (config.age_max - config.age_min);
            let mut levels = base_levels.clone();
            match config.level_assignment {
                LevelAssignment::Rotate => levels.rotate_left((start + i) % base_levels.len()),
                LevelAssignment::Shuffle => levels.shuffle(&mut rng),
            }
            let planted = (1..=r_count as u32)
                .map(|r| {
                    let e: f64 = rng.random();
                    let jitter = config.region_jitter * (2.0 * e - 1.0);
                    let level = levels[networks.network_of(r) as usize - 1];
                    let mut offset = (level + jitter).clamp(-config.hc_jitter, config.hc_jitter);
                    if let Some(d) = disease {
                        if d.regions.contains(&r) {
                            offset += d.offset_years;
                        }
                    }
                    age + offset
                })
                .collect();
            out.push(SubjectRecord {
                id: format!("{prefix}-{i:04}"),
                chronological_age: age,
                cohort: cohort.clone(),
                split,
                planted_regional_age: planted,
            });
        }
    }
    Ok(out)
}

/// Seed for the volume of the subject at manifest position `index`.
pub fn volume_seed(seed: u64, index: usize) -> u64 {
    seed::derive(seed, &[tag::VOLUME]) ^ index as u64
}

/// Paths inside a dataset directory.
#[derive(Debug, Clone)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetLayout { root: root.into() }
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }
    pub fn cohort(&self) -> PathBuf {
        self.root.join("cohort.json")
    }
    pub fn atlas(&self) -> PathBuf {
        self.root.join("atlas.vol")
    }
    pub fn atlas_meta(&self) -> PathBuf {
        self.root.join("atlas.json")
    }
    pub fn networks(&self) -> PathBuf {
        self.root.join("networks.json")
    }
    pub fn priors(&self) -> PathBuf {
        self.root.join("priors.json")
    }
    pub fn volume(&self, id: &str) -> PathBuf {
        self.root.join("volumes").join(format!("{id}.vol"))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct AtlasMeta {
    shape: Shape,
    n_regions: usize,
    /// Voxel count per region id.
    region_voxels: BTreeMap<u32, usize>,
    background_voxels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct CohortMeta {
    seed: u64,
    n_regions: usize,
    n_networks: usize,
    shape: Shape,
    params: DatasetConfig,
}

/// A dataset loaded back from disk (volumes are read lazily).
#[derive(Debug, Clone)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub manifest: CohortManifest,
    pub atlas: Atlas,
    pub networks: NetworkMap,
    pub priors: BTreeMap<String, DiseasePrior>,
}

impl Dataset {
    pub fn load(root: impl Into<PathBuf>) -> Result<Self, DatagenError> {
        let layout = DatasetLayout::new(root);
        let meta: CohortMeta = io::read_json(&layout.cohort())?;
        let subjects = CohortManifest::read_records(&layout.manifest())?;
        let manifest = CohortManifest {
            subjects,
            n_regions: meta.n_regions,
            seed: meta.seed,
            params: meta.params,
        };
        manifest.validate()?;
        let atlas = Atlas::read(&layout.atlas(), meta.n_regions)?;
        if atlas.shape() != meta.shape {
            return Err(VolumeError::ShapeMismatch {
                expected: meta.shape,
                found: atlas.shape(),
            }
            .into());
        }
        let networks: NetworkMap = io::read_json(&layout.networks())?;
        networks.validate(meta.n_regions)?;
        let priors: BTreeMap<String, DiseasePrior> = io::read_json(&layout.priors())?;
        for p in priors.values() {
            p.validate(meta.n_regions)?;
        }
        Ok(Dataset {
            layout,
            manifest,
            atlas,
            networks,
            priors,
        })
    }

    pub fn volume(&self, id: &str) -> Result<Volume, DatagenError> {
        let v = Volume::read(&self.layout.volume(id))?;
        if v.shape() != self.atlas.shape() {
            return Err(VolumeError::ShapeMismatch {
                expected: self.atlas.shape(),
                found: v.shape(),
            }
            .into());
        }
        Ok(v)
    }
}

/// A subject record paired with its volume.
#[derive(Debug, Clone)]
pub struct Subject {
    pub record: SubjectRecord,
    pub volume: Volume,
}

impl Dataset {
    /// Loads every subject accepted by `keep`, in manifest order.
    pub fn subjects(&self, keep: impl Fn(&SubjectRecord) -> bool) -> Result<Vec<Subject>, DatagenError> {
        self.manifest
            .subjects
            .iter()
            .filter(|r| keep(r))
            .map(|r| {
                Ok(Subject {
                    record: r.clone(),
                    volume: self.volume(&r.id)?,
                })
            })
            .collect()
    }
}

/// Generate the full dataset into `out_dir` (created if missing).
pub fn generate_cohort(
    config: &DatasetConfig,
    seed: u64,
    out_dir: &Path,
) -> Result<CohortManifest, DatagenError> {
    config.validate()?;
    let (atlas, networks) =
        make_synthetic_atlas(config.shape, config.n_regions, config.n_networks, seed)?;
    let subjects = generate_records(config, &networks, seed)?;
    let manifest = CohortManifest {
        subjects,
        n_regions: config.n_regions,
        seed,
        params: config.clone(),
    };
    manifest.validate()?;

    let layout = DatasetLayout::new(out_dir);
    io::create_dir_all(&out_dir.join("volumes"))?;
    manifest.write_csv(&layout.manifest())?;
    io::write_json(
        &layout.cohort(),
        &CohortMeta {
            seed,
            n_regions: config.n_regions,
            n_networks: config.n_networks,
            shape: config.shape,
            params: config.clone(),
        },
    )?;
    atlas.write(&layout.atlas())?;
    let hist = atlas.histogram();
    io::write_json(
        &layout.atlas_meta(),
        &AtlasMeta {
            shape: config.shape,
            n_regions: config.n_regions,
            region_voxels: (1..=config.n_regions).map(|r| (r as u32, hist[r])).collect(),
            background_voxels: hist[0],
        },
    )?;
    io::write_json(&layout.networks(), &networks)?;
    io::write_json(&layout.priors(), &config.priors())?;
    for (i, rec) in manifest.subjects.iter().enumerate() {
        let v = generate_subject_volume(&atlas, rec, &config.intensity, volume_seed(seed, i))?;
        v.write(&layout.volume(&rec.id))?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> DatasetConfig {
        DatasetConfig {
            shape: Shape::cube(16),
            n_regions: 4,
            n_networks: 2,
            n_hc_train: 10,
            n_hc_test: 5,
            diseases: vec![DiseaseSpec {
                name: "pd".into(),
                n_subjects: 200,
                offset_years: 8.0,
                regions: vec![2, 3],
            }],
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn atlas_labels_cover_every_region() {
        let (atlas, nets) = make_synthetic_atlas(Shape::cube(16), 4, 2, 7).unwrap();
        let hist = atlas.histogram();
        assert_eq!(hist.len(), 5);
        assert!(hist[1..].iter().all(|&c| c > 0), "{hist:?}");
        assert!(hist[0] > 0, "ellipsoid leaves background");
        assert_eq!(hist.iter().sum::<usize>(), 16 * 16 * 16);
        assert_eq!(nets.groups(), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn single_region_covers_foreground() {
        let (atlas, nets) = make_synthetic_atlas(Shape::cube(8), 1, 1, 3).unwrap();
        let fg = ellipsoid_foreground(Shape::cube(8));
        assert_eq!(atlas.histogram()[1], fg.len());
        assert_eq!(nets.members(1), vec![1]);
    }

    #[test]
    fn atlas_is_deterministic() {
        let a = make_synthetic_atlas(Shape::new(12, 10, 9), 5, 2, 11).unwrap();
        let b = make_synthetic_atlas(Shape::new(12, 10, 9), 5, 2, 11).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_atlas(Shape::new(12, 10, 9), 5, 2, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn default_regions_are_large() {
        let (atlas, _) = make_synthetic_atlas(Shape::cube(32), 8, 3, 0).unwrap();
        let hist = atlas.histogram();
        assert!(hist[1..].iter().all(|&c| c >= 100), "{hist:?}");
    }

    #[test]
    fn atlas_rejects_bad_inputs() {
        assert!(make_synthetic_atlas(Shape::new(7, 8, 8), 2, 1, 0).is_err());
        assert!(make_synthetic_atlas(Shape::cube(8), 2, 3, 0).is_err());
        assert!(make_synthetic_atlas(Shape::cube(8), 100_000, 1, 0).is_err());
    }

    fn record(planted: Vec<f64>) -> SubjectRecord {
        SubjectRecord {
            id: "s".into(),
            chronological_age: 50.0,
            cohort: Cohort::Hc,
            split: Split::Train,
            planted_regional_age: planted,
        }
    }

    fn region_means(atlas: &Atlas, v: &Volume) -> Vec<f64> {
        let mut sums = vec![0.0; atlas.n_regions() + 1];
        for (&l, &x) in atlas.labels().iter().zip(v.data()) {
            sums[l as usize] += x as f64;
        }
        let hist = atlas.histogram();
        (0..=atlas.n_regions()).map(|r| sums[r] / hist[r] as f64).collect()
    }

    #[test]
    fn noise_free_volume_follows_the_law() {
        let (atlas, _) = make_synthetic_atlas(Shape::cube(16), 4, 2, 7).unwrap();
        let law = IntensityLaw {
            noise_sigma: 0.0,
            ..IntensityLaw::default()
        };
        let planted = vec![30.0, 50.0, 50.0, 70.0];
        let v = generate_subject_volume(&atlas, &record(planted.clone()), &law, 1).unwrap();
        let means = region_means(&atlas, &v);
        assert_eq!(means[0], 0.0);
        for r in 1..=4 {
            assert!((means[r] - law.intensity(planted[r - 1])).abs() < 1e-6);
            assert!((law.age_for_intensity(means[r]) - planted[r - 1]).abs() < 1e-3);
        }
        // 20 years older => lower by 20 * decay
        assert!(((means[3] - means[4]) - 20.0 * law.decay_rate).abs() < 1e-6);
        let same = generate_subject_volume(&atlas, &record(vec![40.0; 4]), &law, 1).unwrap();
        let m = region_means(&atlas, &same);
        assert!(m[1..].iter().all(|&x| (x - m[1]).abs() < 1e-7));
    }

    #[test]
    fn volume_is_deterministic_by_seed() {
        let (atlas, _) = make_synthetic_atlas(Shape::cube(16), 4, 2, 7).unwrap();
        let law = IntensityLaw::default();
        let rec = record(vec![40.0; 4]);
        let a = generate_subject_volume(&atlas, &rec, &law, 5).unwrap();
        let b = generate_subject_volume(&atlas, &rec, &law, 5).unwrap();
        let c = generate_subject_volume(&atlas, &rec, &law, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(generate_subject_volume(&atlas, &record(vec![40.0; 3]), &law, 5).is_err());
    }

    #[test]
    fn records_respect_jitter_and_offsets() {
        let cfg = small_config();
        let (_, nets) = make_synthetic_atlas(cfg.shape, cfg.n_regions, cfg.n_networks, 1).unwrap();
        let recs = generate_records(&cfg, &nets, 1).unwrap();
        assert_eq!(recs.len(), 215);
        for s in recs.iter().filter(|s| s.cohort.is_hc()) {
            assert!(s.chronological_age >= cfg.age_min && s.chronological_age <= cfg.age_max);
            for &p in &s.planted_regional_age {
                assert!((p - s.chronological_age).abs() <= cfg.hc_jitter + 1e-12);
            }
        }
        let dis: Vec<_> = recs.iter().filter(|s| !s.cohort.is_hc()).collect();
        for r in 0..4 {
            let mean = dis
                .iter()
                .map(|s| s.planted_regional_age[r] - s.chronological_age)
                .sum::<f64>()
                / dis.len() as f64;
            let expected = if r == 1 || r == 2 { 8.0 } else { 0.0 };
            assert!((mean - expected).abs() < 1.5, "region {}: {mean}", r + 1);
        }
    }

    #[test]
    fn zero_jitter_plants_chronological_age() {
        let cfg = DatasetConfig {
            hc_jitter: 0.0,
            ..small_config()
        };
        let (_, nets) = make_synthetic_atlas(cfg.shape, 4, 2, 1).unwrap();
        for s in generate_records(&cfg, &nets, 3).unwrap().iter().filter(|s| s.cohort.is_hc()) {
            assert!(s.planted_regional_age.iter().all(|&p| p == s.chronological_age));
        }
    }

    #[test]
    fn default_hc_spread_is_at_least_ten_years() {
        let cfg = DatasetConfig::default();
        let (_, nets) = make_synthetic_atlas(cfg.shape, 8, 3, 0).unwrap();
        for s in generate_records(&cfg, &nets, 0).unwrap().iter().filter(|s| s.cohort.is_hc()) {
            let max = s.planted_regional_age.iter().cloned().fold(f64::MIN, f64::max);
            let min = s.planted_regional_age.iter().cloned().fold(f64::MAX, f64::min);
            assert!(max - min >= 10.0, "{}: {}", s.id, max - min);
        }
    }

    #[test]
    fn offset_outside_atlas_names_the_disease() {
        let mut cfg = small_config();
        cfg.diseases[0].regions = vec![2, 9];
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("pd") && err.contains('9'), "{err}");
    }

    #[test]
    fn cohort_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DatasetConfig {
            diseases: vec![DiseaseSpec {
                name: "pd".into(),
                n_subjects: 3,
                offset_years: 8.0,
                regions: vec![2],
            }],
            ..small_config()
        };
        let m = generate_cohort(&cfg, 9, dir.path()).unwrap();
        assert_eq!(m.subjects.len(), 18);
        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.manifest, m);
        assert_eq!(ds.priors["pd"].regions, BTreeSet::from([2]));
        let v = ds.volume("hc-train-0000").unwrap();
        assert_eq!(v.shape(), cfg.shape);
        let train: BTreeSet<_> = m.select(|s| s.split == Split::Train).map(|s| &s.id).collect();
        let test: BTreeSet<_> = m.select(|s| s.split == Split::Test).map(|s| &s.id).collect();
        assert!(train.is_disjoint(&test));
    }

    #[test]
    fn cohort_strings_roundtrip() {
        for c in [Cohort::Hc, Cohort::Disease("pd".into())] {
            assert_eq!(c.to_string().parse::<Cohort>().unwrap(), c);
        }
        assert!("disease:".parse::<Cohort>().is_err());
        assert!("XX".parse::<Split>().is_err());
    }
}
