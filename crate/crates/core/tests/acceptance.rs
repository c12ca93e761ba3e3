//! Acceptance gates for the toolkit, one test per numbered criterion.
//!
//! Each test asserts its gate with pinned tolerances and prints a single
//! `PASS criterion N: ...` line with the measured values (visible under
//! `cargo test -- --nocapture`). Criterion 10, byte-identical command-line
//! reruns, lives in the `epam-cli` crate next to the binary it exercises.

mod common;

use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use epam_core::dataset::{encode, split, CycleRecord, EncodingMeta, FeatureSchema, SplitSpec};
use epam_core::eval::{evaluate, pct_rmse, REFERENCE_LML, REFERENCE_PCT_RMSE, REFERENCE_RMSE_J};
use epam_core::gpr::{
    fit, fit_matrix, log_marginal_likelihood, model_with_fixed_hyperparams, FitConfig, Hyperparams,
    TrainedModel,
};
use epam_core::hyperopt::OptimConfig;
use epam_core::synthetic::{
    default_devices, default_models, emit_power_trace, noiseless_energy_j, sample_gp_prior,
    sample_records, TracePlan, TrendConfig,
};
use epam_core::trace::{
    align_clocks, cycle_energies, estimate_base_power, parse_latency_csv, parse_power_csv,
    MarkerSpec, PowerForm,
};

fn fit_config(max_iters: usize, restarts: usize, max_exact: usize) -> FitConfig {
    FitConfig {
        optim: OptimConfig {
            max_iters,
            restarts,
            seed: 7,
            ..OptimConfig::default()
        },
        max_exact,
    }
}

/// Draws records from the generator for the device-catalog indices given.
fn records(n: usize, devices: &[usize], noise_cv: f64, seed: u64) -> Vec<CycleRecord> {
    let catalog = default_devices();
    let chosen: Vec<_> = devices.iter().map(|&i| catalog[i].clone()).collect();
    let trends = TrendConfig {
        noise_cv,
        ..TrendConfig::default()
    };
    sample_records(n, &chosen, &default_models(), &trends, seed)
        .expect("generator accepts the default catalog")
        .into_iter()
        .map(|r| r.record)
        .collect()
}

fn fit_records(train: &[CycleRecord], config: &FitConfig) -> TrainedModel {
    let design = encode(train, &FeatureSchema::default()).expect("records encode");
    let rows: Vec<usize> = (0..train.len()).collect();
    fit(&design, &rows, config).expect("fit succeeds")
}

/// Criterion 1: the original measurement campaign behind the recorded
/// reference metrics is not published, so no test can reproduce its exact
/// numbers. The suite instead pins those headline figures as constants,
/// checks they are mutually consistent, and validates the pipeline against
/// synthetic ground truth in the remaining criteria.
#[test]
fn criterion_01_reference_metrics_recorded_not_reproducible() {
    let implied_mean_j = 100.0 * REFERENCE_RMSE_J / REFERENCE_PCT_RMSE;
    assert!(implied_mean_j.is_finite() && implied_mean_j > 0.0);
    let roundtrip = pct_rmse(REFERENCE_RMSE_J, &[implied_mean_j]).expect("positive mean");
    assert!(
        (roundtrip - REFERENCE_PCT_RMSE).abs() < 1e-9,
        "reference rmse and percentage disagree: {roundtrip} vs {REFERENCE_PCT_RMSE}"
    );
    assert!(REFERENCE_LML.is_finite() && REFERENCE_LML < 0.0);
    println!(
        "PASS criterion 1: reference campaign metrics pinned ({REFERENCE_RMSE_J} J = \
         {REFERENCE_PCT_RMSE}% of an implied {implied_mean_j:.3} J mean); raw campaign data is \
         unavailable, so criteria 2-9 validate against synthetic ground truth"
    );
}

/// Criterion 2: leave-device-out generalization. Train on 1,500 records from
/// three devices, validate on 300 more, test one-step-ahead on 200 records
/// of the fourth device, never seen in training; percentage RMSE stays
/// within 8% at noise_cv = 0.05 and the whole run stays under five minutes.
#[test]
fn criterion_02_held_out_device_error_within_8_percent() {
    let t0 = Instant::now();
    let train = records(1500, &[0, 1, 3], 0.05, 101);
    let val = records(300, &[0, 1, 3], 0.05, 102);
    let test = records(200, &[2], 0.05, 103);
    let model = fit_records(&train, &fit_config(100, 0, 1200));
    let val_report = evaluate(&model, &val).expect("validation evaluates");
    let test_report = evaluate(&model, &test).expect("test evaluates");
    let elapsed = t0.elapsed();

    assert!(
        val_report.pct_rmse <= 8.0,
        "validation pct rmse {:.3}% above 8%",
        val_report.pct_rmse
    );
    assert!(
        test_report.pct_rmse <= 8.0,
        "held-out device pct rmse {:.3}% above 8%",
        test_report.pct_rmse
    );
    assert!(
        (test_report.unseen_fraction - 1.0).abs() < 1e-12,
        "every held-out-device record should carry an unseen catalog level"
    );
    assert!(
        elapsed.as_secs_f64() <= 300.0,
        "run took {elapsed:.1?}, budget is 300 s"
    );
    println!(
        "PASS criterion 2: held-out device pct RMSE {:.2}% (validation {:.2}%) <= 8% in {:.1?}",
        test_report.pct_rmse, val_report.pct_rmse, elapsed
    );
}

/// Criterion 3: in-distribution fit quality. A 0.743/0.170/0.087 random
/// split of 2,000 records from all four devices must reach pct RMSE <= 5%
/// with 95% interval coverage inside [0.90, 0.99], within two minutes.
#[test]
fn criterion_03_random_split_error_and_coverage() {
    let t0 = Instant::now();
    let all = records(2000, &[0, 1, 2, 3], 0.02, 201);
    let parts = split(
        &all,
        &SplitSpec::Random {
            fractions: [0.743, 0.170, 0.087],
            seed: 7,
        },
    )
    .expect("split succeeds");
    let train: Vec<CycleRecord> = parts.train.iter().map(|&i| all[i].clone()).collect();
    let test: Vec<CycleRecord> = parts.test.iter().map(|&i| all[i].clone()).collect();
    let model = fit_records(&train, &fit_config(60, 1, 800));
    let report = evaluate(&model, &test).expect("test evaluates");
    let elapsed = t0.elapsed();

    assert!(
        report.pct_rmse <= 5.0,
        "pct rmse {:.3}% above 5%",
        report.pct_rmse
    );
    assert!(
        (0.90..=0.99).contains(&report.coverage95),
        "coverage95 {:.3} outside [0.90, 0.99]",
        report.coverage95
    );
    assert!(
        elapsed.as_secs_f64() <= 120.0,
        "run took {elapsed:.1?}, budget is 120 s"
    );
    println!(
        "PASS criterion 3: random-split pct RMSE {:.2}% <= 5%, coverage95 {:.3} in [0.90, 0.99], {:.1?}",
        report.pct_rmse, report.coverage95, elapsed
    );
}

/// Criterion 4: the Cholesky predictor agrees with a naive direct-inverse
/// reference implementation to 1e-8 absolute (standardized units) on 100
/// random problems with n <= 50, d <= 8, at training rows and fresh points.
#[test]
fn criterion_04_predictions_match_direct_inverse_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let n = rng.gen_range(2..=50);
        let d = rng.gen_range(1..=8);
        let (x, y, h) = common::random_problem(&mut rng, n, d);
        let model = model_with_fixed_hyperparams(x.clone(), y.clone(), h.clone())
            .expect("fixed-hyperparameter model builds");
        assert_eq!(model.jitter, 0.0, "case {case}: factorization needed jitter");
        let mut queries: Vec<Vec<f64>> = (0..n.min(3)).map(|i| x.row(i).to_vec()).collect();
        for _ in 0..3 {
            queries.push((0..d).map(|_| rng.gen_range(-2.0..2.0)).collect());
        }
        for q in &queries {
            let (mean, var) = model.posterior(q);
            let (ref_mean, ref_var) = common::reference_posterior(&h, &x, &y, q);
            worst = worst.max((mean - ref_mean).abs()).max((var - ref_var).abs());
            assert!(
                (mean - ref_mean).abs() <= 1e-8,
                "case {case}: mean {mean} vs reference {ref_mean}"
            );
            assert!(
                (var - ref_var).abs() <= 1e-8,
                "case {case}: variance {var} vs reference {ref_var}"
            );
        }
    }
    println!("PASS criterion 4: 100 problems, worst |Cholesky - direct inverse| = {worst:.3e} <= 1e-8");
}

/// Criterion 5: the analytic log-marginal-likelihood gradient matches
/// central finite differences (log-space step 1e-5) to a relative error
/// below 1e-5 on 20 random problems with n = 20, d = 5.
#[test]
fn criterion_05_lml_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let (x, y, h) = common::random_problem(&mut rng, 20, 5);
        let (_, grad) = log_marginal_likelihood(&h, &x, &y).expect("lml evaluates");
        let theta = h.to_log();
        let mut fd = Vec::with_capacity(theta.len());
        for k in 0..theta.len() {
            let mut plus = theta.clone();
            plus[k] += step;
            let mut minus = theta.clone();
            minus[k] -= step;
            let (vp, _) = log_marginal_likelihood(&Hyperparams::from_log(&plus), &x, &y)
                .expect("lml at shifted point");
            let (vm, _) = log_marginal_likelihood(&Hyperparams::from_log(&minus), &x, &y)
                .expect("lml at shifted point");
            fd.push((vp - vm) / (2.0 * step));
        }
        let diff_norm: f64 = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let fd_norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rel = diff_norm / fd_norm.max(1e-12);
        worst = worst.max(rel);
        assert!(
            rel < 1e-5,
            "case {case}: gradient relative error {rel:.3e} >= 1e-5"
        );
    }
    println!("PASS criterion 5: 20 problems, worst gradient relative error {worst:.3e} < 1e-5");
}

/// Criterion 6: with the noise variance pinned to 1e-12 the posterior mean
/// interpolates its training targets to 1e-6 (standardized units) at
/// n = 200 across a sweep of length scales.
#[test]
fn criterion_06_near_zero_noise_interpolates_training_targets() {
    let mut worst: f64 = 0.0;
    for ls in [0.75, 1.0, 1.5, 2.0] {
        let h_gen = Hyperparams {
            signal_var: 1.0,
            ard_scales: vec![ls; 5],
            noise_var: 1e-6,
        };
        let (x, y) = sample_gp_prior(200, 5, &h_gen, 42).expect("prior draw");
        let h_fit = Hyperparams {
            signal_var: 1.0,
            ard_scales: vec![ls; 5],
            noise_var: 1e-12,
        };
        let model =
            model_with_fixed_hyperparams(x.clone(), y.clone(), h_fit).expect("model builds");
        for i in 0..x.nrows() {
            let (mean, _) = model.posterior(&x.row(i).to_vec());
            worst = worst.max((mean - y[i]).abs());
        }
    }
    assert!(
        worst <= 1e-6,
        "worst interpolation error {worst:.3e} above 1e-6"
    );
    println!("PASS criterion 6: worst training-point reconstruction error {worst:.3e} <= 1e-6");
}

/// Criterion 7: automatic relevance determination. With one pure-noise
/// column appended to a smooth four-dimensional target, the learned length
/// scale of the noise column exceeds the median scale of the real columns
/// by at least 10x, and held-out RMSE degrades by less than 10% relative to
/// fitting without the junk column.
#[test]
fn criterion_07_ard_discards_pure_noise_column() {
    let h_true = Hyperparams {
        signal_var: 1.0,
        ard_scales: vec![0.8, 1.2, 0.9, 1.1],
        noise_var: 1e-4,
    };
    let (x4, y) = sample_gp_prior(240, 4, &h_true, 77).expect("prior draw");
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let n = x4.nrows();
    let mut x5 = Array2::<f64>::zeros((n, 5));
    for i in 0..n {
        for j in 0..4 {
            x5[[i, j]] = x4[[i, j]];
        }
        x5[[i, 4]] = rng.gen_range(-2.0..2.0);
    }
    let mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64).sqrt();
    let y_std: Vec<f64> = y.iter().map(|v| (v - mean) / sd).collect();

    let n_train = 160;
    let take = |x: &Array2<f64>, lo: usize, hi: usize| {
        let mut out = Array2::<f64>::zeros((hi - lo, x.ncols()));
        for (r, i) in (lo..hi).enumerate() {
            out.row_mut(r).assign(&x.row(i));
        }
        out
    };
    let cfg = fit_config(80, 1, 4000);
    let with_noise = fit_matrix(
        take(&x5, 0, n_train),
        y_std[..n_train].to_vec(),
        &cfg,
        EncodingMeta::identity(5),
    )
    .expect("fit with junk column");
    let without_noise = fit_matrix(
        take(&x4, 0, n_train),
        y_std[..n_train].to_vec(),
        &cfg,
        EncodingMeta::identity(4),
    )
    .expect("fit without junk column");

    let scales = &with_noise.hyperparams.ard_scales;
    let mut real: Vec<f64> = scales[..4].to_vec();
    real.sort_by(|a, b| a.partial_cmp(b).expect("finite scales"));
    let median = 0.5 * (real[1] + real[2]);
    let ratio = scales[4] / median;
    assert!(
        ratio >= 10.0,
        "noise-column scale {} only {ratio:.1}x the median real scale {median}",
        scales[4]
    );

    let rmse_of = |model: &TrainedModel, x: &Array2<f64>| {
        let mut acc = 0.0;
        for i in n_train..n {
            let q: Vec<f64> = x.row(i).iter().copied().take(model.x_train.ncols()).collect();
            let (m, _) = model.posterior(&q);
            acc += (m - y_std[i]) * (m - y_std[i]);
        }
        (acc / (n - n_train) as f64).sqrt()
    };
    let rmse5 = rmse_of(&with_noise, &x5);
    let rmse4 = rmse_of(&without_noise, &x4);
    let degradation = (rmse5 - rmse4) / rmse4;
    assert!(
        degradation < 0.10,
        "junk column degraded held-out RMSE by {:.1}% ({} vs {})",
        100.0 * degradation,
        rmse5,
        rmse4
    );
    println!(
        "PASS criterion 7: junk-column scale {:.2e} = {ratio:.2e}x median real scale; held-out \
         RMSE degradation {:.2}% < 10%",
        scales[4],
        100.0 * degradation
    );
}

/// Criterion 8: trace ingestion is exact on noise-free piecewise-linear
/// captures: per-cycle energies match the emitter's analytic ground truth
/// to 1e-9 relative, and injected clock offsets across [-5 s, 5 s] are
/// recovered within 0.0002 s (one sample interval).
#[test]
fn criterion_08_trace_pipeline_reproduces_analytic_energy_and_offsets() {
    let devices = default_devices();
    let models = default_models();
    let trends = TrendConfig {
        noise_cv: 0.0,
        ..TrendConfig::default()
    };
    let mut worst_energy_rel: f64 = 0.0;
    let mut worst_offset_err: f64 = 0.0;
    for (k, &offset_s) in [-5.0, -2.3217, 0.0, 1.75, 5.0].iter().enumerate() {
        let mut plan = TracePlan::for_model(&models[0], &devices[0], &trends, 3);
        plan.noise_sd_mw = 0.0;
        plan.clock_offset_s = offset_s;
        let art = emit_power_trace(&plan, &devices[0], 900 + k as u64).expect("emit");

        let trace = parse_power_csv(art.power_csv.as_bytes(), PowerForm::PowerMw).expect("power");
        let logs = parse_latency_csv(art.latency_csv.as_bytes()).expect("latency");
        let base = estimate_base_power(&trace, (0.0, 0.4)).expect("base window");
        let recovered = align_clocks(&trace, &logs, &MarkerSpec::new(base)).expect("alignment");
        worst_offset_err = worst_offset_err.max((recovered - art.offset_s).abs());
        assert!(
            (recovered - art.offset_s).abs() <= 0.0002,
            "offset {offset_s}: recovered {recovered}, truth {}",
            art.offset_s
        );

        let cycles: Vec<_> = cycle_energies(&trace, &logs, base, recovered)
            .expect("integration")
            .into_iter()
            .filter(|c| c.cycle_id != 0)
            .collect();
        assert_eq!(cycles.len(), art.truth.len());
        for (got, want) in cycles.iter().zip(&art.truth) {
            assert_eq!(got.cycle_id, want.cycle_id);
            for (label, want_j) in &want.per_segment_j {
                let got_j = got.per_segment_j[label];
                let rel = (got_j - want_j).abs() / want_j.abs();
                worst_energy_rel = worst_energy_rel.max(rel);
                assert!(
                    rel <= 1e-9,
                    "offset {offset_s}, cycle {}, segment {label}: {got_j} vs {want_j}",
                    got.cycle_id
                );
            }
            let rel = (got.total_j - want.total_j).abs() / want.total_j.abs();
            worst_energy_rel = worst_energy_rel.max(rel);
            assert!(rel <= 1e-9, "cycle {} total energy off", got.cycle_id);
        }
    }
    println!(
        "PASS criterion 8: worst energy error {worst_energy_rel:.3e} (rel) <= 1e-9, worst offset \
         error {worst_offset_err:.3e} s <= 2e-4 s"
    );
}

/// Criterion 9: generator calibration. At zero noise the NLP cycle costs
/// exactly 5.7 J and the speech cycle exactly 0.16185 J on the anchor
/// device; across 1,000 matched quantized/float pairs drawn from the noisy
/// population at single-thread CPU, the mean energy ratio is 0.75 +/- 0.02.
#[test]
fn criterion_09_generator_anchors_and_quantization_ratio() {
    let devices = default_devices();
    let models = default_models();
    let exact = TrendConfig {
        noise_cv: 0.0,
        ..TrendConfig::default()
    };
    let nlp = models.iter().find(|m| m.app_type == "nlp").expect("nlp model");
    let speech = models
        .iter()
        .find(|m| m.app_type == "speech")
        .expect("speech model");
    let nlp_j = noiseless_energy_j(&devices[0], nlp, "cpu", 1, &exact);
    let speech_j = noiseless_energy_j(&devices[0], speech, "cpu", 1, &exact);
    assert_eq!(nlp_j, 5.7, "nlp anchor drifted");
    assert_eq!(speech_j, 0.16185, "speech anchor drifted");

    // Matched pairs: sample the noisy population, keep single-thread CPU
    // records, and pair each float record with a quantized record of the
    // same family on the same device.
    let vision_pairs = [(0usize, 1usize), (2, 3)];
    let pair_models: Vec<_> = [0usize, 1, 2, 3].iter().map(|&i| models[i].clone()).collect();
    let sampled = sample_records(16_000, &devices, &pair_models, &TrendConfig::default(), 909)
        .expect("population sample");
    let mut ratios: Vec<f64> = Vec::new();
    'outer: for (float_idx, quant_idx) in vision_pairs {
        for device in &devices {
            let grab = |model_name: &str| -> Vec<f64> {
                sampled
                    .iter()
                    .filter(|r| {
                        let f = &r.record.features;
                        f.soc == device.soc
                            && f.dnn_model == model_name
                            && f.source == "cpu"
                            && f.threads == 1
                    })
                    .map(|r| r.record.energy_j)
                    .collect()
            };
            let floats = grab(&pair_models[float_idx].name);
            let quants = grab(&pair_models[quant_idx].name);
            for (f, q) in floats.iter().zip(&quants) {
                ratios.push(q / f);
                if ratios.len() == 1000 {
                    break 'outer;
                }
            }
        }
    }
    assert_eq!(ratios.len(), 1000, "population too small for 1,000 pairs");
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!(
        (mean_ratio - 0.75).abs() <= 0.02,
        "quantized/float mean energy ratio {mean_ratio:.4} outside 0.75 +/- 0.02"
    );
    println!(
        "PASS criterion 9: anchors exact ({nlp_j} J, {speech_j} J); quantized/float mean ratio \
         {mean_ratio:.4} within 0.75 +/- 0.02 over {} pairs",
        ratios.len()
    );
}
