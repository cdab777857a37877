//! Bias correction, regional age gaps, healthy-control similarity (HCS) and
//! neuro disease correlation (NDC).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{Cohort, DiseasePrior, SubjectRecord, Split};
use crate::io::{self, ArtifactError};
use crate::student::{PredictionRow, PredictionTable};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("bias fit for region {region} needs at least 3 distinct ages, got {distinct}")]
    TooFewAges { region: u32, distinct: usize },
    #[error("mmd needs at least 2 samples on each side, got {a} and {b}")]
    SampleTooSmall { a: usize, b: usize },
    #[error("non-positive kernel bandwidth {0}")]
    Bandwidth(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty disease region set")]
    EmptyPrior,
    #[error("missing cohort: {0}")]
    MissingCohort(String),
    #[error("prediction table has {found} regions, expected {expected}")]
    RegionCount { expected: usize, found: usize },
    #[error("subject {0} has no manifest record")]
    UnknownSubject(String),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Per-region OLS coefficients of raw prediction on chronological age.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasModel {
    pub lambda0: Vec<f64>,
    pub lambda1: Vec<f64>,
}

/// Ordinary least squares `y ≈ λ0 + λ1 x`.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (my - slope * mx, slope)
}

/// Fits one line per region; `raw[n][r]` is the prediction of region `r`
/// for subject `n` with chronological age `ages[n]`.
pub fn fit_bias(raw: &[Vec<f64>], ages: &[f64]) -> Result<BiasModel, MetricsError> {
    assert_eq!(raw.len(), ages.len());
    let n_regions = raw.first().map_or(0, Vec::len);
    let distinct: BTreeSet<u64> = ages.iter().map(|a| a.to_bits()).collect();
    if distinct.len() < 3 {
        return Err(MetricsError::TooFewAges {
            region: 1,
            distinct: distinct.len(),
        });
    }
    if raw.iter().flatten().chain(ages).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("bias fit input"));
    }
    let (mut lambda0, mut lambda1) = (Vec::new(), Vec::new());
    for r in 0..n_regions {
        let y: Vec<f64> = raw.iter().map(|row| row[r]).collect();
        let (a, b) = ols(ages, &y);
        lambda0.push(a);
        lambda1.push(b);
    }
    Ok(BiasModel { lambda0, lambda1 })
}

/// `raw − ((λ0 + λ1·age) − age)` for a zero-based region index.
pub fn apply_bias(raw: f64, age: f64, model: &BiasModel, region: usize) -> f64 {
    raw - ((model.lambda0[region] + model.lambda1[region] * age) - age)
}

/// Regional brain age gap.
pub fn delta_reba(prediction: f64, age: f64) -> f64 {
    prediction - age
}

/// How the RBF kernel width is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum BandwidthRule {
    /// Median of pairwise absolute differences over the pooled sample.
    #[default]
    MedianHeuristic,
    /// Median of the pooled values themselves.
    LiteralMedian,
    Fixed(f64),
}

impl fmt::Display for BandwidthRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BandwidthRule::MedianHeuristic => f.write_str("median-heuristic"),
            BandwidthRule::LiteralMedian => f.write_str("literal-median"),
            BandwidthRule::Fixed(m) => write!(f, "fixed:{m}"),
        }
    }
}

impl FromStr for BandwidthRule {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "median-heuristic" => Ok(BandwidthRule::MedianHeuristic),
            "literal-median" => Ok(BandwidthRule::LiteralMedian),
            _ => match s.strip_prefix("fixed:").map(str::parse::<f64>) {
                Some(Ok(m)) if m > 0.0 && m.is_finite() => Ok(BandwidthRule::Fixed(m)),
                _ => Err(format!(
                    "unknown bandwidth rule {s:?} (expected median-heuristic, literal-median or fixed:<m>)"
                )),
            },
        }
    }
}

impl Serialize for BandwidthRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for BandwidthRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Kernel width for two samples under `rule`; a zero median falls back to 1.
pub fn bandwidth(a: &[f64], b: &[f64], rule: BandwidthRule) -> Result<f64, MetricsError> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let m = match rule {
        BandwidthRule::Fixed(m) => m,
        BandwidthRule::LiteralMedian => median(pooled),
        BandwidthRule::MedianHeuristic => {
            let mut diffs = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
            for i in 0..pooled.len() {
                for j in i + 1..pooled.len() {
                    diffs.push((pooled[i] - pooled[j]).abs());
                }
            }
            median(diffs)
        }
    };
    let m = if m == 0.0 { 1.0 } else { m };
    if !(m > 0.0 && m.is_finite()) {
        return Err(MetricsError::Bandwidth(m));
    }
    Ok(m)
}

fn rbf(x: f64, y: f64, m: f64) -> f64 {
    (-(x - y) * (x - y) / (2.0 * m * m)).exp()
}

fn canonical<'a>(a: &'a [f64], b: &'a [f64]) -> (&'a [f64], &'a [f64]) {
    let key = |v: &[f64]| -> (usize, Vec<u64>) { (v.len(), v.iter().map(|x| x.to_bits()).collect()) };
    if key(a) <= key(b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Unbiased squared MMD with an RBF kernel. The two samples are put in a
/// canonical order first, so `mmd(a, b) == mmd(b, a)` bit for bit.
pub fn mmd(a: &[f64], b: &[f64], rule: BandwidthRule) -> Result<f64, MetricsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(MetricsError::SampleTooSmall { a: a.len(), b: b.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("mmd sample"));
    }
    let (a, b) = canonical(a, b);
    let m = bandwidth(a, b, rule)?;
    let within = |s: &[f64]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if i != j {
                    acc += rbf(s[i], s[j], m);
                }
            }
        }
        acc / (s.len() * (s.len() - 1)) as f64
    };
    let mut cross = 0.0;
    for &x in a {
        for &y in b {
            cross += rbf(x, y, m);
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (a.len() * b.len()) as f64)
}

/// Healthy-control similarity of one region: `1 − clamp(mmd, 0, 1)`.
pub fn hcs_region(train_gaps: &[f64], test_gaps: &[f64], rule: BandwidthRule) -> Result<f64, MetricsError> {
    Ok(1.0 - mmd(train_gaps, test_gaps, rule)?.clamp(0.0, 1.0))
}

/// Logistic function without overflow for large |x|.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean sigmoid of the gaps over the disease region set. `corrected` is
/// indexed by zero-based region.
pub fn ndc_subject(corrected: &[f64], age: f64, regions: &BTreeSet<u32>) -> Result<f64, MetricsError> {
    if regions.is_empty() {
        return Err(MetricsError::EmptyPrior);
    }
    let total: f64 = regions
        .iter()
        .map(|&r| sigmoid(delta_reba(corrected[r as usize - 1], age)))
        .sum();
    Ok(total / regions.len() as f64)
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub const HIST_MIN: f64 = -25.0;
pub const HIST_MAX: f64 = 25.0;

/// Counts per 1-year bin over [−25, 25); values outside land in the edge bins.
pub fn histogram(values: &[f64]) -> Vec<usize> {
    let n_bins = (HIST_MAX - HIST_MIN) as usize;
    let mut counts = vec![0; n_bins];
    for &v in values {
        let bin = ((v - HIST_MIN).floor() as i64).clamp(0, n_bins as i64 - 1) as usize;
        counts[bin] += 1;
    }
    counts
}

/// Options for [`cohort_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub bandwidth: BandwidthRule,
    /// Also report metrics on uncorrected predictions.
    pub raw: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bandwidth: BandwidthRule::MedianHeuristic,
            raw: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionHcs {
    pub region: u32,
    pub hcs: f64,
    pub mmd: f64,
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectNdc {
    pub id: String,
    pub cohort: String,
    pub prior: String,
    pub ndc: f64,
}

/// Metrics computed from one set of (corrected or raw) predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub hcs_per_region: Vec<RegionHcs>,
    pub hcs_overall: f64,
    /// Mean NDC per prior, then per cohort (`hc` is the HC test split).
    pub ndc_mean: BTreeMap<String, BTreeMap<String, f64>>,
    /// `<disease>-hc`: the disease cohort's mean NDC over its own prior minus
    /// the HC cohort's mean NDC over the same prior.
    pub ndc_differences: BTreeMap<String, f64>,
    /// `<other>-hc@<disease>`: elevation of another disease cohort over HC on
    /// the prior regions of `<disease>`.
    pub ndc_cross_elevation: BTreeMap<String, f64>,
    /// Mean per-subject Spearman correlation between regional predictions and
    /// planted regional ages, per cohort label.
    pub oracle_spearman: BTreeMap<String, f64>,
    /// Mean over subjects of the standard deviation across regions.
    pub mean_region_std: BTreeMap<String, f64>,
    #[serde(skip)]
    pub ndc_subjects: Vec<SubjectNdc>,
    #[serde(skip)]
    pub gaps: BTreeMap<String, Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config_hash: String,
    pub bandwidth: BandwidthRule,
    pub bias: BiasModel,
    pub corrected: MetricsBlock,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub raw: Option<MetricsBlock>,
}

/// Cohort label used in reports: `hc-train`, `hc-test` or the disease name.
pub fn cohort_label(cohort: &Cohort, split: Split) -> String {
    match cohort {
        Cohort::Hc => format!("hc-{split}"),
        Cohort::Disease(d) => d.clone(),
    }
}

fn block(
    rows: &[(&PredictionRow, &SubjectRecord)],
    values: &[Vec<f64>],
    priors: &BTreeMap<String, DiseasePrior>,
    rule: BandwidthRule,
) -> Result<MetricsBlock, MetricsError> {
    let n_regions = values.first().map_or(0, Vec::len);
    let mut gaps: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    let mut labelled: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, (row, _)) in rows.iter().enumerate() {
        let label = cohort_label(&row.cohort, row.split);
        gaps.entry(label.clone())
            .or_default()
            .push(values[i].iter().map(|v| delta_reba(*v, row.age)).collect());
        labelled.entry(label).or_default().push(i);
    }
    let need = |l: &str| gaps.get(l).ok_or_else(|| MetricsError::MissingCohort(l.to_string()));
    let (train, test) = (need("hc-train")?, need("hc-test")?);

    let mut hcs_per_region = Vec::with_capacity(n_regions);
    for r in 0..n_regions {
        let a: Vec<f64> = train.iter().map(|g| g[r]).collect();
        let b: Vec<f64> = test.iter().map(|g| g[r]).collect();
        let m = mmd(&a, &b, rule)?;
        hcs_per_region.push(RegionHcs {
            region: r as u32 + 1,
            hcs: 1.0 - m.clamp(0.0, 1.0),
            mmd: m,
            bandwidth: bandwidth(canonical(&a, &b).0, canonical(&a, &b).1, rule)?,
        });
    }
    let hcs_overall = hcs_per_region.iter().map(|h| h.hcs).sum::<f64>() / n_regions.max(1) as f64;

    let mut ndc_mean: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    let mut ndc_subjects = Vec::new();
    for (name, prior) in priors {
        for (label, idx) in &labelled {
            if label == "hc-train" {
                continue;
            }
            let mut sum = 0.0;
            for &i in idx {
                let ndc = ndc_subject(&values[i], rows[i].0.age, &prior.regions)?;
                sum += ndc;
                ndc_subjects.push(SubjectNdc {
                    id: rows[i].0.id.clone(),
                    cohort: label.clone(),
                    prior: name.clone(),
                    ndc,
                });
            }
            let key = if label == "hc-test" { "hc".to_string() } else { label.clone() };
            ndc_mean.entry(name.clone()).or_default().insert(key, sum / idx.len() as f64);
        }
    }
    let mut ndc_differences = BTreeMap::new();
    let mut ndc_cross_elevation = BTreeMap::new();
    for (name, per) in &ndc_mean {
        let Some(h) = per.get("hc") else { continue };
        for (cohort, v) in per {
            if cohort == name {
                ndc_differences.insert(format!("{name}-hc"), v - h);
            } else if cohort != "hc" {
                ndc_cross_elevation.insert(format!("{cohort}-hc@{name}"), v - h);
            }
        }
    }

    let mut oracle_spearman = BTreeMap::new();
    let mut mean_region_std = BTreeMap::new();
    for (label, idx) in &labelled {
        let n = idx.len() as f64;
        let sp: f64 = idx
            .iter()
            .map(|&i| spearman(&values[i], &rows[i].1.planted_regional_age))
            .sum();
        oracle_spearman.insert(label.clone(), sp / n);
        let sd: f64 = idx.iter().map(|&i| std_dev(&values[i])).sum();
        mean_region_std.insert(label.clone(), sd / n);
    }

    Ok(MetricsBlock {
        hcs_per_region,
        hcs_overall,
        ndc_mean,
        ndc_differences,
        ndc_cross_elevation,
        oracle_spearman,
        mean_region_std,
        ndc_subjects,
        gaps,
    })
}

/// Fits the bias model on HC train rows, corrects every row and computes
/// HCS (HC train vs HC test), NDC per prior and cohort, and oracle recovery.
pub fn cohort_report(
    predictions: &PredictionTable,
    records: &[SubjectRecord],
    priors: &BTreeMap<String, DiseasePrior>,
    config: &MetricsConfig,
    config_hash: &str,
) -> Result<MetricsReport, MetricsError> {
    let by_id: BTreeMap<&str, &SubjectRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut rows: Vec<(&PredictionRow, &SubjectRecord)> = Vec::with_capacity(predictions.rows.len());
    for row in &predictions.rows {
        if row.reba.len() != predictions.n_regions {
            return Err(MetricsError::RegionCount {
                expected: predictions.n_regions,
                found: row.reba.len(),
            });
        }
        let rec = by_id
            .get(row.id.as_str())
            .ok_or_else(|| MetricsError::UnknownSubject(row.id.clone()))?;
        rows.push((row, rec));
    }
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    if let Some((_, prior)) = priors.iter().next() {
        if let Some(&r) = prior.regions.iter().find(|&&r| r as usize > predictions.n_regions || r == 0) {
            return Err(MetricsError::MissingCohort(format!("region {r} of prior {}", prior.name)));
        }
    }

    let train: Vec<&(&PredictionRow, &SubjectRecord)> = rows
        .iter()
        .filter(|(r, _)| r.cohort.is_hc() && r.split == Split::Train)
        .collect();
    if train.is_empty() {
        return Err(MetricsError::MissingCohort("hc-train".into()));
    }
    let raw_train: Vec<Vec<f64>> = train.iter().map(|(r, _)| r.reba.clone()).collect();
    let ages: Vec<f64> = train.iter().map(|(r, _)| r.age).collect();
    let bias = fit_bias(&raw_train, &ages)?;

    let corrected_values: Vec<Vec<f64>> = rows
        .iter()
        .map(|(r, _)| {
            r.reba
                .iter()
                .enumerate()
                .map(|(k, &v)| apply_bias(v, r.age, &bias, k))
                .collect()
        })
        .collect();
    let corrected = block(&rows, &corrected_values, priors, config.bandwidth)?;
    let raw = if config.raw {
        let raw_values: Vec<Vec<f64>> = rows.iter().map(|(r, _)| r.reba.clone()).collect();
        Some(block(&rows, &raw_values, priors, config.bandwidth)?)
    } else {
        None
    };
    Ok(MetricsReport {
        config_hash: config_hash.to_string(),
        bandwidth: config.bandwidth,
        bias,
        corrected,
        raw,
    })
}

/// Overall HCS of two gap tables after shifting every test gap by `shift`.
pub fn overall_hcs_shifted(
    train: &[Vec<f64>],
    test: &[Vec<f64>],
    shift: f64,
    rule: BandwidthRule,
) -> Result<f64, MetricsError> {
    let n_regions = train.first().map_or(0, Vec::len);
    let mut total = 0.0;
    for r in 0..n_regions {
        let a: Vec<f64> = train.iter().map(|g| g[r]).collect();
        let b: Vec<f64> = test.iter().map(|g| g[r] + shift).collect();
        total += hcs_region(&a, &b, rule)?;
    }
    Ok(total / n_regions.max(1) as f64)
}

/// Output file names inside an evaluation directory.
pub const METRICS_JSON: &str = "metrics.json";
pub const HCS_CSV: &str = "hcs_per_region.csv";
pub const NDC_CSV: &str = "ndc_per_subject.csv";
pub const HIST_CSV: &str = "histograms.csv";

fn write_rows(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<(), ArtifactError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| ArtifactError::csv(path, e))?;
    w.write_record(header).map_err(|e| ArtifactError::csv(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| ArtifactError::csv(path, e))?;
    }
    w.flush().map_err(|e| ArtifactError::io(path, e))
}

impl MetricsReport {
    /// Writes `metrics.json`, the per-region HCS table, per-subject NDC and
    /// gap histograms into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), ArtifactError> {
        io::create_dir_all(dir)?;
        io::write_json(&dir.join(METRICS_JSON), self)?;
        let raw_hcs = self.raw.as_ref().map(|b| &b.hcs_per_region);
        let mut header = vec!["region", "hcs", "mmd", "bandwidth"];
        if raw_hcs.is_some() {
            header.extend(["raw_hcs", "raw_mmd"]);
        }
        write_rows(
            &dir.join(HCS_CSV),
            &header,
            self.corrected.hcs_per_region.iter().enumerate().map(|(i, h)| {
                let mut row = vec![h.region.to_string(), h.hcs.to_string(), h.mmd.to_string(), h.bandwidth.to_string()];
                if let Some(raw) = raw_hcs {
                    row.extend([raw[i].hcs.to_string(), raw[i].mmd.to_string()]);
                }
                row
            }),
        )?;
        write_rows(
            &dir.join(NDC_CSV),
            &["id", "cohort", "prior", "ndc"],
            self.corrected
                .ndc_subjects
                .iter()
                .map(|s| vec![s.id.clone(), s.cohort.clone(), s.prior.clone(), s.ndc.to_string()]),
        )?;
        let mut hist_rows = Vec::new();
        for (label, gaps) in &self.corrected.gaps {
            let n_regions = gaps.first().map_or(0, Vec::len);
            for r in 0..n_regions {
                let values: Vec<f64> = gaps.iter().map(|g| g[r]).collect();
                for (b, count) in histogram(&values).into_iter().enumerate() {
                    hist_rows.push(vec![
                        (r + 1).to_string(),
                        label.clone(),
                        (HIST_MIN + b as f64).to_string(),
                        count.to_string(),
                    ]);
                }
            }
        }
        write_rows(&dir.join(HIST_CSV), &["region", "cohort", "bin_left", "count"], hist_rows.into_iter())
    }
}

/// Region table and PD/AD relevance levels of the 48-region cortical atlas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasPriors {
    pub atlas: String,
    pub n_regions: usize,
    pub regions: Vec<NamedRegion>,
    pub priors: BTreeMap<String, DiseasePrior>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRegion {
    pub id: u32,
    pub name: String,
}

pub const HARVARD_OXFORD_PRIORS_JSON: &str = include_str!("../data/harvard_oxford_priors.json");

pub fn harvard_oxford_priors() -> AtlasPriors {
    serde_json::from_str(HARVARD_OXFORD_PRIORS_JSON).expect("bundled prior file parses")
}
