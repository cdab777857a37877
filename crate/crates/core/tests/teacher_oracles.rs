use reba_core::backbone::{params_sha256, OptimizerConfig, RegressorModel};
use reba_core::datagen::{
    generate_subject_volume, make_synthetic_atlas, Cohort, IntensityLaw, Split, Subject, SubjectRecord,
};
use reba_core::parcellate::{one_hot, NoiseSpec};
use reba_core::teacher::{correction_vector, mae, reference_factory, soft_labels, train_teacher};
use reba_core::volume::{Atlas, Shape};

fn law() -> IntensityLaw {
    IntensityLaw {
        noise_sigma: 0.0,
        ..IntensityLaw::default()
    }
}

/// Subjects whose planted regional ages come from `planted(age)`.
fn cohort(atlas: &Atlas, n: usize, planted: impl Fn(f64) -> Vec<f64>) -> Vec<Subject> {
    (0..n)
        .map(|i| {
            let age = 20.0 + 60.0 * (i as f64 + 0.5) / n as f64;
            let record = SubjectRecord {
                id: format!("hc-train-{i:04}"),
                chronological_age: age,
                cohort: Cohort::Hc,
                split: Split::Train,
                planted_regional_age: planted(age),
            };
            let volume = generate_subject_volume(atlas, &record, &law(), i as u64).unwrap();
            Subject { record, volume }
        })
        .collect()
}

fn optimizer() -> OptimizerConfig {
    OptimizerConfig {
        lr: 1e-3,
        ..OptimizerConfig::default()
    }
}

#[test]
fn teacher_fits_a_noise_free_linear_phantom() {
    let (atlas, _) = make_synthetic_atlas(Shape::cube(16), 4, 2, 3).unwrap();
    let train = cohort(&atlas, 60, |age| vec![age; 4]);
    let (model, history) = train_teacher(&train, reference_factory(16, 1), &optimizer(), 2).unwrap();
    assert!(model.is_frozen());
    let pred: Vec<f64> = train.iter().map(|s| model.predict_age(&s.volume)).collect();
    let ages: Vec<f64> = train.iter().map(|s| s.record.chronological_age).collect();
    let train_mae = mae(&pred, &ages);
    assert!(train_mae <= 3.0, "train MAE {train_mae}");
    let totals = history.totals();
    assert!(totals.last().unwrap() < &totals[0]);
}

#[test]
fn correction_concentrates_on_the_only_aging_region() {
    let (atlas, _) = make_synthetic_atlas(Shape::cube(16), 4, 2, 5).unwrap();
    let signal = 2;
    let train = cohort(&atlas, 60, |age| {
        (0..4).map(|r| if r == signal { age } else { 50.0 }).collect()
    });
    let (model, _) = train_teacher(&train, reference_factory(16, 7), &optimizer(), 8).unwrap();
    let masks = one_hot(&atlas);
    let noise = NoiseSpec::new(0.1, 9);
    let before = params_sha256(model.params());
    let (rho, whole) = correction_vector(&model, &train, &masks, &noise, false).unwrap();
    assert_eq!(rho.n_subjects_used, 60);
    let top = rho.rho[signal].abs();
    for (r, v) in rho.rho.iter().enumerate() {
        if r != signal {
            assert!(top > v.abs(), "rho {:?}", rho.rho);
        }
    }

    let labels = soft_labels(&model, &train, &masks, &noise, &rho, 1.0, Some(&whole)).unwrap();
    for row in &labels.rows {
        for r in 0..4 {
            let (init, soft) = (row.y_init[r], row.y_soft[r]);
            assert!(soft == init || soft == init + rho.rho[r]);
        }
    }
    assert_eq!(params_sha256(model.params()), before);
}
