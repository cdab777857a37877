//! Acceptance criteria 1-6. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;
use reba_core::backbone::{params_sha256, reference_backbone, ConvRegressor, OptimizerConfig, RegressorModel};
use reba_core::config::ExperimentConfig;
use reba_core::datagen::NetworkMap;
use reba_core::metrics::{self, BandwidthRule, MetricsReport};
use reba_core::pipeline::{self, Layout, Pipeline, RunOptions, ABLATION_ROWS};
use reba_core::seed;
use reba_core::student::{self, StudentConfig, StudentModel};
use reba_core::teacher;
use reba_core::volume::{Shape, Volume};

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn check(failures: &mut Vec<String>, name: &str, ok: bool) {
    if !ok {
        failures.push(name.to_string());
    }
}

fn rel_close(analytic: f64, numeric: f64, tol: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale <= tol
}

fn frozen_backbone(shape: Shape, dm: usize, seed: u64) -> ConvRegressor {
    let mut m = reference_backbone(shape, dm, seed).unwrap();
    m.freeze();
    m
}

fn random_volume(shape: Shape, seed: u64) -> Volume {
    let mut rng = seed::rng(seed);
    Volume::new(shape, (0..shape.len()).map(|_| rng.random_range(0.0f32..2.0)).collect()).unwrap()
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();

    let signs = [-1.0, 0.0, 1.0];
    let mut table_ok = true;
    for &d in &signs {
        for &r in &signs {
            let rho = 2.0 * r;
            let got = teacher::soft_label(50.0 + d, 50.0, rho, 1.0);
            let want = if d * r > 0.0 { 50.0 + rho } else { 50.0 };
            table_ok &= got == want;
        }
    }
    check(&mut failures, "indicator truth table", table_ok);

    let v = metrics::mmd(&[0.0, 2.0], &[0.0, 2.0], BandwidthRule::Fixed(2.0)).unwrap();
    let e = (-0.5f64).exp();
    check(&mut failures, "mmd hand value", (v - (2.0 * e - (1.0 + e))).abs() < 1e-9);
    check(
        &mut failures,
        "hcs of negative mmd",
        metrics::hcs_region(&[0.0, 2.0], &[0.0, 2.0], BandwidthRule::Fixed(2.0)).unwrap() == 1.0,
    );

    let mut rng = seed::rng(101);
    let mut sym_ok = true;
    let mut bounds_ok = true;
    for _ in 0..200 {
        let a: Vec<f64> = (0..rng.random_range(2..15)).map(|_| rng.random_range(-30.0..30.0)).collect();
        let b: Vec<f64> = (0..rng.random_range(2..15)).map(|_| rng.random_range(-30.0..30.0)).collect();
        let x = metrics::mmd(&a, &b, BandwidthRule::MedianHeuristic).unwrap();
        let y = metrics::mmd(&b, &a, BandwidthRule::MedianHeuristic).unwrap();
        sym_ok &= x.to_bits() == y.to_bits();
        let h = metrics::hcs_region(&a, &b, BandwidthRule::MedianHeuristic).unwrap();
        bounds_ok &= (0.0..=1.0).contains(&h);
        let regions = std::collections::BTreeSet::from([1, 2]);
        let ndc = metrics::ndc_subject(&[a[0], a[1]], 0.0, &regions).unwrap();
        bounds_ok &= ndc > 0.0 && ndc < 1.0;
    }
    check(&mut failures, "mmd symmetry", sym_ok);
    check(&mut failures, "hcs/ndc bounds", bounds_ok);

    let preds = vec![vec![40.0, 41.0, 60.0, 60.0]];
    let nets = NetworkMap::new(2, BTreeMap::from([(1, 1), (2, 1), (3, 2), (4, 2)])).unwrap();
    check(&mut failures, "distillation zero case", student::distill_loss(&preds, &preds).unwrap() == 0.0);
    let flat = vec![vec![40.0, 40.0, 60.0, 60.0]];
    check(
        &mut failures,
        "consistency zero case",
        student::func_consistency_loss(&flat, &nets).unwrap() == 0.0,
    );

    let shape = Shape::cube(8);
    let backbone = frozen_backbone(shape, 8, 7);
    let film_off = StudentModel::new(
        &backbone,
        4,
        StudentConfig {
            no_film: true,
            ..StudentConfig::default()
        },
        3,
    )
    .unwrap();
    let x = random_volume(shape, 5);
    let emb = backbone.embed(&x);
    let head = backbone.head();
    let film_ok = (0..4).all(|k| (film_off.predict_embedding(k, &emb) - head.apply(&emb)).abs() < 1e-9)
        && (0..4).all(|k| {
            let (g, b) = film_off.film(k);
            g.iter().all(|&v| v == 1.0) && b.iter().all(|&v| v == 0.0)
        });
    check(&mut failures, "film identity", film_ok);

    let ages: Vec<f64> = (0..60).map(|_| rng.random_range(20.0..80.0)).collect();
    let raw: Vec<Vec<f64>> = ages
        .iter()
        .map(|&a| vec![25.0 + 0.5 * a + 4.0 * rng.sample::<f64, _>(StandardNormal)])
        .collect();
    let bias = metrics::fit_bias(&raw, &ages).unwrap();
    let gaps: Vec<f64> = raw
        .iter()
        .zip(&ages)
        .map(|(p, &a)| metrics::apply_bias(p[0], a, &bias, 0) - a)
        .collect();
    check(&mut failures, "bias orthogonality", metrics::ols(&ages, &gaps).1.abs() < 1e-6);

    let before = params_sha256(backbone.params());
    let mut s = StudentModel::new(&backbone, 4, StudentConfig::default(), 9).unwrap();
    let embeddings: Vec<Vec<Vec<f64>>> = (0..6)
        .map(|i| (0..4).map(|k| backbone.embed(&random_volume(shape, 100 + 4 * i + k))).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..6).map(|i| (0..4).map(|k| 40.0 + (i * 4 + k) as f64).collect()).collect();
    let cfg = OptimizerConfig {
        epochs: 3,
        batch_size: 2,
        lr: 1e-3,
        ..OptimizerConfig::default()
    };
    student::train_student(&mut s, &embeddings, targets.clone(), &nets, &cfg, 1).unwrap();
    check(
        &mut failures,
        "frozen backbone checksum",
        params_sha256(backbone.params()) == before && s.check_backbone(&backbone).is_ok(),
    );

    let model = reference_backbone(shape, 8, 11).unwrap();
    let mut grad = vec![0.0; model.params().len()];
    model.backprop(&x, &mut |_| 1.0, &mut grad);
    let mut teacher_fd_ok = true;
    for i in (0..grad.len()).step_by(grad.len() / 40 + 1) {
        let h = 1e-6;
        let mut plus = model.clone();
        plus.params_mut().unwrap()[i] += h;
        let mut minus = model.clone();
        minus.params_mut().unwrap()[i] -= h;
        let numeric = (plus.predict_age(&x) - minus.predict_age(&x)) / (2.0 * h);
        teacher_fd_ok &= rel_close(grad[i], numeric, 1e-3) || (grad[i] - numeric).abs() < 1e-7;
    }
    check(&mut failures, "teacher gradient vs finite differences", teacher_fd_ok);

    let target = [10.0, 90.0, 15.0, 85.0];
    let (_, sgrad) = student::subject_objective(&s, &embeddings[0], &target, &nets).unwrap();
    let mut student_fd_ok = true;
    for i in (0..sgrad.len()).step_by(sgrad.len() / 40 + 1) {
        let h = 1e-6;
        let total = |delta: f64| {
            let mut m = s.clone();
            m.params_mut()[i] += delta;
            student::subject_objective(&m, &embeddings[0], &target, &nets).unwrap().0[2]
        };
        let numeric = (total(h) - total(-h)) / (2.0 * h);
        student_fd_ok &= rel_close(sgrad[i], numeric, 1e-3) || (sgrad[i] - numeric).abs() < 1e-7;
    }
    check(&mut failures, "student gradient vs finite differences", student_fd_ok);

    let elapsed = start.elapsed();
    check(&mut failures, "runtime under 2 min", elapsed < Duration::from_secs(120));
    Verdict {
        id: 1,
        pass: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("all property checks hold ({:.1}s)", elapsed.as_secs_f64())
        } else {
            format!("failed: {}", failures.join(", "))
        },
    }
}

fn run(dir: &Path, cfg: &ExperimentConfig) -> (MetricsReport, Duration) {
    let start = Instant::now();
    let p = Pipeline::new(cfg.clone(), Layout::new(dir), RunOptions::default()).unwrap();
    let report = p.run_all().unwrap();
    (report, start.elapsed())
}

fn main() -> ExitCode {
    let mut verdicts = vec![criterion_1()];
    let cfg = ExperimentConfig::default();
    let first = tempfile::tempdir().unwrap();
    let (report, elapsed) = run(first.path(), &cfg);
    let c = &report.corrected;

    let spearman = c.oracle_spearman["hc-test"];
    verdicts.push(Verdict {
        id: 2,
        pass: spearman >= 0.7 && elapsed < Duration::from_secs(900),
        detail: format!(
            "mean per-subject Spearman on HC test {spearman:.4} (need >= 0.7), pipeline {:.1}s",
            elapsed.as_secs_f64()
        ),
    });

    let shifted =
        metrics::overall_hcs_shifted(&c.gaps["hc-train"], &c.gaps["hc-test"], 10.0, cfg.metric.bandwidth).unwrap();
    let drop = c.hcs_overall - shifted;
    verdicts.push(Verdict {
        id: 3,
        pass: c.hcs_overall >= 0.6 && drop >= 0.15,
        detail: format!(
            "overall HCS {:.4} (need >= 0.6), with +10y shift {shifted:.4}, drop {drop:.4} (need >= 0.15)",
            c.hcs_overall
        ),
    });

    let sep = c.ndc_differences["pd-hc"];
    let cross = c.ndc_cross_elevation["ad-hc@pd"];
    verdicts.push(Verdict {
        id: 4,
        pass: sep >= 0.10 && cross < 0.10,
        detail: format!("NDC pd-hc {sep:.4} (need >= 0.10), ad over HC on pd regions {cross:.4} (need < 0.10)"),
    });

    let ablation_dir = tempfile::tempdir().unwrap();
    let rows: Vec<_> = ABLATION_ROWS.iter().copied().filter(|r| [2, 3, 5, 6].contains(&r.id)).collect();
    let table = pipeline::run_ablation(&cfg, &[0, 1, 2], &rows, ablation_dir.path(), RunOptions::default()).unwrap();
    let mean = |id: u8| table.mean_of(id).unwrap();
    let (full, alpha0, no_student, zeta0) = (mean(6), mean(2), mean(3), mean(5));
    let ndc = |e: &pipeline::AblationEntry| e.ndc_differences["pd-hc"];
    let a_ok = alpha0.oracle_spearman < full.oracle_spearman;
    let z_ok = zeta0.oracle_spearman < full.oracle_spearman;
    let s_ok = ndc(&no_student) < ndc(&full);
    verdicts.push(Verdict {
        id: 5,
        pass: a_ok && z_ok && s_ok,
        detail: format!(
            "Spearman full {:.4}, alpha=0 {:.4} [{}], zeta=0 {:.4} [{}]; NDC pd-hc full {:.4}, no-student {:.4} [{}]",
            full.oracle_spearman,
            alpha0.oracle_spearman,
            if a_ok { "lower" } else { "not lower" },
            zeta0.oracle_spearman,
            if z_ok { "lower" } else { "not lower" },
            ndc(&full),
            ndc(&no_student),
            if s_ok { "lower" } else { "not lower" },
        ),
    });

    let second = tempfile::tempdir().unwrap();
    run(second.path(), &cfg);
    let a = std::fs::read(first.path().join("eval").join(metrics::METRICS_JSON)).unwrap();
    let b = std::fs::read(second.path().join("eval").join(metrics::METRICS_JSON)).unwrap();
    verdicts.push(Verdict {
        id: 6,
        pass: a == b,
        detail: format!("metrics.json {} across two runs ({} bytes)", if a == b { "identical" } else { "differs" }, a.len()),
    });

    let mut all = true;
    for v in &verdicts {
        all &= v.pass;
        println!("criterion {}: {} - {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
