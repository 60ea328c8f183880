use microcavity::rates::SfwmParams;
use microcavity::tagsim::{simulate_stream, DetectorModel, SimConfig};

fn ideal_detector(efficiency: f64) -> DetectorModel {
    DetectorModel {
        jitter_sigma: 0.0,
        ..DetectorModel::with_efficiency(efficiency)
    }
}

fn pairs_only(gamma_exp: f64, p_cav: f64, duration: f64) -> SimConfig {
    SimConfig {
        duration,
        p_cav,
        sfwm: SfwmParams {
            gamma_exp,
            gamma_plus: 0.0,
            gamma_minus: 0.0,
            ..SfwmParams::experiment()
        },
        ..SimConfig::experiment()
    }
}

fn within_sigma(observed: f64, mean: f64, n_sigma: f64) -> bool {
    (observed - mean).abs() <= n_sigma * mean.sqrt()
}

#[test]
fn detected_pairs_scale_quadratically_with_power() {
    let gamma = 4.0e4;
    let duration = 1.0;
    let powers = [0.5, 1.0, 2.0];
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &p) in powers.iter().enumerate() {
        let cfg = SimConfig {
            seed: 100 + i as u64,
            ..pairs_only(gamma, p, duration)
        };
        let (_, _, truth) = simulate_stream(&cfg).unwrap();
        assert!(truth.pairs_detected >= 10_000);
        let rate = truth.pairs_detected as f64 / duration;
        num += rate * p * p / rate.max(1.0);
        den += p.powi(4) / rate.max(1.0);
    }
    let fitted = num / den;
    assert!((fitted / gamma - 1.0).abs() <= 0.03, "{fitted}");
}

#[test]
fn pair_delays_follow_the_cauchy_profile() {
    let tau_c = 1.06e-9;
    let cfg = SimConfig {
        record_pair_delays: true,
        ..pairs_only(4.0e4, 1.58, 1.0)
    };
    let (_, _, truth) = simulate_stream(&cfg).unwrap();
    let mut delays: Vec<f64> = truth
        .pair_delays_ps
        .iter()
        .map(|&d| d as f64 * 1e-12)
        .collect();
    let n = delays.len();
    assert!(n > 90_000);
    delays.sort_by(f64::total_cmp);
    let quantile = |q: f64| delays[((n - 1) as f64 * q).round() as usize];
    let median = quantile(0.5);
    assert!((median - cfg.cable_delay).abs() < tau_c / 10.0, "{median}");

    // sample quartiles of a Cauchy law with scale tau_c/2 have standard error
    // pi tau_c sqrt(3/(16 n))
    let sigma_q = std::f64::consts::PI * tau_c * (3.0 / (16.0 * n as f64)).sqrt();
    // quantized delays live on the 40 ps grid
    let grid = 40e-12;
    let iqr = quantile(0.75) - quantile(0.25);
    assert!(
        (iqr - tau_c).abs() < 3.0 * 2f64.sqrt() * sigma_q + grid,
        "{iqr}"
    );
    let max_offset = delays
        .iter()
        .map(|d| (d - cfg.cable_delay).abs())
        .fold(0.0, f64::max);
    assert!(max_offset <= 100.0 * tau_c + 80e-12);
}

#[test]
fn thinned_singles_match_poisson_mean() {
    let det_plus = ideal_detector(0.099);
    let det_minus = ideal_detector(0.072);
    let cfg = SimConfig {
        duration: 20.0,
        det_plus,
        det_minus,
        background_detected: false,
        sfwm: SfwmParams {
            gamma_exp: 0.0,
            ..SfwmParams::experiment()
        },
        ..SimConfig::experiment()
    };
    let (plus, minus, truth) = simulate_stream(&cfg).unwrap();
    let gamma = cfg.sfwm.gamma_plus;
    let mean_plus = gamma * cfg.p_cav * cfg.duration * det_plus.efficiency;
    let mean_minus = cfg.sfwm.gamma_minus * cfg.p_cav * cfg.duration * det_minus.efficiency;
    assert!(
        within_sigma(plus.len() as f64, mean_plus, 3.0),
        "{}",
        plus.len()
    );
    assert!(
        within_sigma(minus.len() as f64, mean_minus, 3.0),
        "{}",
        minus.len()
    );
    assert!(truth.plus.background_generated > truth.plus.background_detected);
}

#[test]
fn detected_background_and_dark_counts_are_not_thinned() {
    let det = DetectorModel {
        dark_rate: 300.0,
        ..ideal_detector(0.099)
    };
    let cfg = SimConfig {
        duration: 10.0,
        det_plus: det,
        det_minus: det,
        sfwm: SfwmParams {
            gamma_exp: 0.0,
            ..SfwmParams::experiment()
        },
        ..SimConfig::experiment()
    };
    let (plus, _, truth) = simulate_stream(&cfg).unwrap();
    let mean = (cfg.sfwm.gamma_plus * cfg.p_cav + det.dark_rate) * cfg.duration;
    assert!(
        within_sigma(plus.len() as f64, mean, 3.0),
        "{} vs {mean}",
        plus.len()
    );
    assert!(within_sigma(truth.plus.dark_counts as f64, 3000.0, 3.0));
    assert_eq!(
        truth.plus.background_generated,
        truth.plus.background_detected
    );
}

#[test]
fn undetected_pair_convention_thins_each_photon() {
    let cfg = SimConfig {
        pairs_detected: false,
        ..pairs_only(4.0e4, 1.0, 1.0)
    };
    let (_, _, truth) = simulate_stream(&cfg).unwrap();
    let generated = truth.pairs_generated as f64;
    let both = 0.099 * 0.072 * generated;
    assert!(within_sigma(truth.pairs_detected as f64, both, 4.0));
    assert!(within_sigma(
        truth.plus.pair_tags as f64,
        0.099 * generated,
        4.0
    ));
}

#[test]
fn jitter_widens_the_delay_distribution() {
    let jittery = DetectorModel {
        jitter_sigma: 350e-12,
        ..ideal_detector(1.0)
    };
    let base = SimConfig {
        record_pair_delays: true,
        sfwm: SfwmParams {
            tau_c: 50e-12,
            gamma_plus: 0.0,
            gamma_minus: 0.0,
            gamma_exp: 2.0e4,
            order: 2,
        },
        det_plus: jittery,
        det_minus: jittery,
        p_cav: 1.0,
        duration: 1.0,
        ..SimConfig::experiment()
    };
    let (_, _, truth) = simulate_stream(&base).unwrap();
    let d: Vec<f64> = truth
        .pair_delays_ps
        .iter()
        .map(|&x| x as f64 + 12_000.0)
        .collect();
    let mut sorted = d.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the combined jitter of two detectors has sigma 350 sqrt(2) ps, IQR 1.349 sigma,
    // widened slightly by the narrow Lorentzian core
    let iqr = sorted[3 * n / 4] - sorted[n / 4];
    let gaussian_iqr = 1.349 * 350.0 * 2f64.sqrt();
    assert!(
        iqr > gaussian_iqr * 0.97 && iqr < gaussian_iqr * 1.15,
        "{iqr}"
    );
}
