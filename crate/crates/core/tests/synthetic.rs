use cardiotwin_core::exec::Sequential;
use cardiotwin_core::params::{ParamBounds, PatientParams, N_LEARNABLE};
use cardiotwin_core::solver::{simulate, SimSettings};
use cardiotwin_core::synthetic::{
    generate_finetune_dataset, generate_pretext_dataset, grid_counts, normalized_volume_samples, render_measurement,
    sample_params, FinetuneDataset, FinetuneSpec, SamplingMode, MEASUREMENT_DIM, PRETEXT_SIZE,
};
use proptest::prelude::*;

#[test]
fn pretext_corpus_covers_a_wide_ef_range() {
    let ds = generate_pretext_dataset(PRETEXT_SIZE, &ParamBounds::default(), 7, &SimSettings::default(), &Sequential)
        .unwrap();
    assert!(ds.failures <= PRETEXT_SIZE / 100);
    let efs: Vec<f64> = ds.examples.iter().map(|e| (e.v_ed - e.v_es) / e.v_ed).collect();
    let lo = efs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = efs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(lo <= 0.1 && hi >= 0.7, "EF range [{lo:.3}, {hi:.3}]");
    assert!(ds.examples.iter().all(|e| e.v_ed >= e.v_es));
}

#[test]
fn pretext_generation_is_seeded() {
    let b = ParamBounds::default();
    let s = SimSettings::default();
    let a = generate_pretext_dataset(20, &b, 1, &s, &Sequential).unwrap();
    assert_eq!(a, generate_pretext_dataset(20, &b, 1, &s, &Sequential).unwrap());
    assert_ne!(a, generate_pretext_dataset(20, &b, 2, &s, &Sequential).unwrap());
    assert!(generate_pretext_dataset(0, &b, 1, &s, &Sequential).is_err());
}

#[test]
fn finetune_dataset_split_and_labels() {
    let spec = FinetuneSpec { n: 40, ..FinetuneSpec::default() };
    let ds = generate_finetune_dataset(&spec, &ParamBounds::default(), &SimSettings::default(), &Sequential).unwrap();
    assert_eq!(ds.measurements.len(), 40);
    assert_eq!((ds.train.len(), ds.val.len(), ds.test.len()), (32, 4, 4));
    for m in &ds.measurements {
        assert_eq!(m.y.len(), MEASUREMENT_DIM);
        assert!(m.y.iter().all(|v| v.abs() <= 1.0));
        let p = ParamBounds::default().params(&m.true_theta.unwrap());
        let traj = simulate(&p, None, &SimSettings::default()).unwrap();
        let e = cardiotwin_core::ed_es_volumes(&traj).unwrap();
        assert_eq!((m.v_ed, m.v_es), (e.v_ed, e.v_es));
    }
    assert_eq!(FinetuneDataset::split(1000), (0..800, 800..900, 900..1000));
    let bad = FinetuneSpec { noise_sigma: -1.0, ..spec };
    assert!(generate_finetune_dataset(&bad, &ParamBounds::default(), &SimSettings::default(), &Sequential).is_err());
}

#[test]
fn rendering_depends_on_seed_and_noise() {
    let traj = simulate(&PatientParams::REFERENCE, None, &SimSettings::default()).unwrap();
    let clean = render_measurement(&traj, 4, 0.0, 1).unwrap();
    assert_eq!(clean, render_measurement(&traj, 4, 0.0, 99).unwrap());
    assert_ne!(clean.y, render_measurement(&traj, 5, 0.0, 1).unwrap().y);
    let noisy = render_measurement(&traj, 4, 0.05, 1).unwrap();
    assert_eq!(noisy, render_measurement(&traj, 4, 0.05, 1).unwrap());
    let rms = (clean.y.iter().zip(&noisy.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / MEASUREMENT_DIM as f64).sqrt();
    assert!(rms > 0.02 && rms < 0.1, "noise rms {rms}");

    let v = normalized_volume_samples(&traj).unwrap();
    let e = cardiotwin_core::ed_es_volumes(&traj).unwrap();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max) * 100.0 + 100.0;
    assert!(max <= e.v_ed + 1e-9 && max > e.v_es);
}

#[test]
fn grid_counts_cover_request() {
    for n in [1, 2, 127, 128, 129, 3840, 10_000] {
        let c = grid_counts(n);
        let total: usize = c.iter().product();
        assert!(total >= n);
        assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1, "{c:?}");
    }
    assert_eq!(grid_counts(128), [2; N_LEARNABLE]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn samples_stay_in_box(n in 1usize..200, seed in any::<u64>(), grid in any::<bool>()) {
        let b = ParamBounds::default();
        let mode = if grid { SamplingMode::Grid } else { SamplingMode::Uniform };
        let ps = sample_params(n, &b, seed, mode);
        prop_assert_eq!(ps.len(), n);
        for p in &ps {
            for (v, iv) in p.learnable().iter().zip(b.intervals()) {
                prop_assert!(iv.contains(*v));
            }
            prop_assert_eq!(p.fixed(), b.fixed);
        }
    }
}
