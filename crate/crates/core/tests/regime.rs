use std::f64::consts::PI;

use corpusnil_core::features::envelope;
use corpusnil_core::regime::*;
use corpusnil_core::seed;
use corpusnil_core::signals::*;
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const RATE: f64 = 4000.0;

fn bursts(zeta: f64, omega: f64, count: usize, period: f64) -> Vec<f64> {
    let duration = count as f64 * period;
    let profile = ContractionProfile::periodic(0.0, period, count, 1.0, 0.01, 0.1).unwrap();
    concat_samples(&synth_mmg(zeta, omega, &profile, duration, RATE, 1).unwrap())
}

fn run(samples: &[f64]) -> Vec<RegimeEstimate> {
    run_with(samples, RegimeParams::default())
}

fn run_with(samples: &[f64], params: RegimeParams) -> Vec<RegimeEstimate> {
    let frames = frames_from_samples(0, SignalKind::Mmg, RATE, samples).unwrap();
    estimate_stream_with(&frames, params).unwrap()
}

fn add_noise(x: &[f64], snr_db: f64, seed_value: u64) -> Vec<f64> {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    let sd = rms * 10f64.powf(-snr_db / 20.0);
    let mut rng = seed::rng(seed_value);
    let noisy: Vec<f64> = x
        .iter()
        .map(|v| {
            let z: f64 = StandardNormal.sample(&mut rng);
            v + sd * z
        })
        .collect();
    let peak = noisy.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    noisy.iter().map(|v| v / peak).collect()
}

/// Fraction of valid estimates within the given tolerances.
fn hit_rate(est: &[RegimeEstimate], zeta: f64, omega: f64, dz: f64, dw: Option<f64>) -> (usize, f64) {
    let valid: Vec<_> = est.iter().filter(|e| e.valid).collect();
    let hits = valid
        .iter()
        .filter(|e| {
            (e.zeta - zeta).abs() <= dz
                && dw.map_or(true, |dw| ((e.omega - omega) / omega).abs() <= dw)
        })
        .count();
    (valid.len(), hits as f64 / valid.len().max(1) as f64)
}

#[test]
fn light_damping_at_eight_hertz() {
    let omega = 2.0 * PI * 8.0;
    let est = run(&bursts(0.1, omega, 6, 2.0));
    let (n, rate) = hit_rate(&est, 0.1, omega, 0.02, Some(0.05));
    assert!(n > 100, "only {n} valid windows");
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn half_damping_at_three_hertz() {
    let omega = 2.0 * PI * 3.0;
    let est = run(&bursts(0.5, omega, 6, 2.0));
    let (n, rate) = hit_rate(&est, 0.5, omega, 0.02, Some(0.05));
    assert!(n > 30, "only {n} valid windows");
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn lag_one_fit_converges_to_generating_recursion() {
    for &(zeta, f0) in &[(0.05, 2.0), (0.1, 8.0), (0.5, 3.0), (0.3, 15.0)] {
        let omega = 2.0 * PI * f0;
        let params = RegimeParams::default();
        let x = bursts(zeta, omega, 1, 20.0);
        let frames = frames_from_samples(0, SignalKind::Mmg, RATE, &x).unwrap();
        let mut est = RegimeEstimator::new(params, RATE).unwrap();
        // ten windows of decimated samples
        let needed = (10.0 * params.window * RATE).ceil() as usize;
        let mut fed = 0;
        for f in &frames {
            est.process_frame(f).unwrap();
            fed += f.len();
            if fed >= needed {
                break;
            }
        }
        let (a1, a2) = continuous_to_poles(zeta, omega, 1.0 / est.decimated_rate());
        let [e1, e2] = est.rls().theta();
        assert!(
            (e1 - a1).abs() < 1e-6 && (e2 - a2).abs() < 1e-6,
            "zeta {zeta} f0 {f0}: ({e1}, {e2}) vs ({a1}, {a2})"
        );
    }
}

#[test]
fn noise_at_twenty_db_keeps_damping_within_tolerance() {
    let mut total = 0;
    let mut hits = 0.0;
    for &zeta in &[0.05, 0.2625, 0.475, 0.6875, 0.9] {
        for &f0 in &[2.0, 5.25, 8.5, 11.75, 15.0] {
            let omega = 2.0 * PI * f0;
            let est = run(&add_noise(&bursts(zeta, omega, 6, 2.0), 20.0, 5));
            let (n, rate) = hit_rate(&est, zeta, omega, 0.05, None);
            total += n;
            hits += rate * n as f64;
        }
    }
    let rate = hits / total as f64;
    assert!(rate >= 0.9, "{rate}");
}

#[test]
fn white_noise_is_mostly_rejected() {
    let mut rng = seed::rng(11);
    let x: Vec<f64> = (0..(8.0 * RATE) as usize)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (0.2 * z).clamp(-1.0, 1.0)
        })
        .collect();
    let est = run(&x);
    // valid estimates are below the residual ceiling by construction
    let rejected = est.iter().filter(|e| !e.valid).count();
    assert!(rejected * 2 > est.len(), "{rejected} of {}", est.len());
}

#[test]
fn silence_is_ill_conditioned() {
    let est = run(&vec![0.0; 4000]);
    assert!(!est.is_empty());
    assert!(est
        .iter()
        .all(|e| !e.valid && e.reason == Some(InvalidReason::IllConditioned)));
}

#[test]
fn valid_estimates_are_physical() {
    let omega = 2.0 * PI * 6.0;
    let est = run(&add_noise(&bursts(0.3, omega, 4, 2.0), 10.0, 3));
    for e in est.iter().filter(|e| e.valid) {
        assert!(e.zeta.is_finite() && e.zeta >= 0.0);
        assert!(e.omega > 0.0 && e.omega < PI * RATE);
        assert!(e.residual_rms.is_finite() && e.excitation >= 0.0);
        assert!(e.reason.is_none());
    }
    for e in est.iter().filter(|e| !e.valid) {
        assert!(e.reason.is_some());
    }
}

#[test]
fn decay_constant_tracks_damping() {
    // ten (zeta, f0) points with distinct zeta * omega
    let points: Vec<(f64, f64)> = (0..10)
        .map(|i| (0.05 + 0.09 * i as f64, 3.0 + 1.1 * i as f64))
        .collect();
    let mut truth = Vec::new();
    let mut measured = Vec::new();
    for &(zeta, f0) in &points {
        let omega = 2.0 * PI * f0;
        let frames = synth_mmg(
            zeta,
            omega,
            &ContractionProfile::periodic(0.1, 10.0, 1, 1.0, 0.01, 0.1).unwrap(),
            3.0,
            RATE,
            1,
        )
        .unwrap();
        let env = envelope(&frames, 0.05, 0.01).unwrap();
        let peak = env
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        truth.push(zeta * omega);
        measured.push(damping_from_decay(&env, peak).unwrap());
    }
    let rho = spearman(&truth, &measured);
    assert!(rho > 0.9, "rank correlation {rho}");
}

fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut r = vec![0.0; x.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn amplitude_scaling_leaves_regime_unchanged(
        zeta in 0.05f64..0.9,
        f0 in 2.0f64..15.0,
        c in 0.01f64..1.0,
    ) {
        let omega = 2.0 * PI * f0;
        let x = bursts(zeta, omega, 3, 2.0);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        // the silence floor is an absolute level; everything else is relative
        let params = RegimeParams { silence_rms: 0.0, ..RegimeParams::default() };
        let a = run_with(&x, params);
        let b = run_with(&scaled, params);
        prop_assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            prop_assert_eq!(p.valid, q.valid, "t={}", p.time);
            if p.valid {
                prop_assert!((p.zeta - q.zeta).abs() < 1e-6, "t={} {} vs {}", p.time, p.zeta, q.zeta);
                prop_assert!((p.omega - q.omega).abs() / p.omega < 1e-6);
                // residuals of an exact fit sit at rounding level and only
                // scale up to that level
                prop_assert!(
                    (q.excitation - c * p.excitation).abs() <= 1e-6 * p.excitation + 1e-12,
                    "t={} {} vs {}", p.time, q.excitation, c * p.excitation
                );
            }
        }
    }
}
