use nalgebra::{Matrix4, Vector4};
use thiserror::Error;

use super::histogram::CorrelationHistogram;

const NS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("a fit needs at least 8 bins, got {0}")]
    TooFewBins(usize),
    #[error("histogram has no counts")]
    Empty,
    #[error("no peak above the flat background (excess {excess:.3}, threshold {threshold:.3})")]
    NoPeak { excess: f64, threshold: f64 },
    #[error("fit did not converge after {iterations} iterations (chi2 {chi2:.6e})")]
    NonConvergence { iterations: usize, chi2: f64 },
    #[error("normal matrix is singular")]
    Singular,
}

/// Starting point of the fit; times in s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitInit {
    pub amplitude: f64,
    pub center: f64,
    pub fwhm: f64,
    pub baseline: f64,
}

/// `baseline + amplitude / (1 + (2 (t - center) / fwhm)^2)`, counts per bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LorentzianFit {
    pub amplitude: f64,
    /// s
    pub center: f64,
    /// s
    pub fwhm: f64,
    pub baseline: f64,
    /// Order: amplitude, center, fwhm, baseline; SI units.
    pub covariance: [[f64; 4]; 4],
    pub reduced_chi2: f64,
    pub iterations: usize,
}

impl LorentzianFit {
    pub fn sigma(&self, i: usize) -> f64 {
        self.covariance[i][i].max(0.0).sqrt()
    }

    pub fn amplitude_sigma(&self) -> f64 {
        self.sigma(0)
    }

    pub fn center_sigma(&self) -> f64 {
        self.sigma(1)
    }

    pub fn fwhm_sigma(&self) -> f64 {
        self.sigma(2)
    }

    pub fn baseline_sigma(&self) -> f64 {
        self.sigma(3)
    }

    pub fn eval(&self, t: f64) -> f64 {
        let u = 2.0 * (t - self.center) / self.fwhm;
        self.baseline + self.amplitude / (1.0 + u * u)
    }
}

/// Variance assigned to each bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `max(count, 1)`.
    Counts,
    /// The fitted model, iterated to a fixed point; this solves the Poisson
    /// maximum-likelihood equations and avoids the low bias of count
    /// weights at small counts.
    Model,
}

impl std::str::FromStr for Weighting {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "counts" => Ok(Weighting::Counts),
            "model" => Ok(Weighting::Model),
            other => Err(format!(
                "unknown weighting '{other}' (expected counts or model)"
            )),
        }
    }
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Counts => "counts",
            Weighting::Model => "model",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub weighting: Weighting,
    pub max_iterations: usize,
    /// Converged once every parameter step is below this fraction of the
    /// parameter.
    pub step_tolerance: f64,
    /// Peaks below this many standard deviations of the baseline are
    /// rejected during self-initialization.
    pub min_significance: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            weighting: Weighting::Counts,
            max_iterations: 200,
            step_tolerance: 1e-10,
            min_significance: 5.0,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Peak bin, tail median and half-maximum crossings.
pub fn initial_guess(
    hist: &CorrelationHistogram,
    min_significance: f64,
) -> Result<FitInit, FitError> {
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    let x = hist.bin_centers();
    let n = y.len();
    let peak = (0..n).fold(0, |best, j| if y[j] > y[best] { j } else { best });
    let radius = n / 4;
    let tails: Vec<f64> = (0..n)
        .filter(|&j| j.abs_diff(peak) > radius)
        .map(|j| y[j])
        .collect();
    let baseline = median(tails);
    let amplitude = y[peak] - baseline;
    let threshold = min_significance * baseline.max(1.0).sqrt();
    if amplitude < threshold {
        return Err(FitError::NoPeak {
            excess: amplitude,
            threshold,
        });
    }
    let half = baseline + amplitude / 2.0;
    let crossing = |dir: isize| -> f64 {
        let mut j = peak as isize;
        loop {
            let next = j + dir;
            if next < 0 || next >= n as isize {
                return x[j as usize];
            }
            let (yj, yn) = (y[j as usize], y[next as usize]);
            if yn < half {
                let f = (yj - half) / (yj - yn);
                return x[j as usize] + f * (x[next as usize] - x[j as usize]);
            }
            j = next;
        }
    };
    let left = crossing(-1);
    let right = crossing(1);
    Ok(FitInit {
        amplitude,
        center: x[peak],
        fwhm: (right - left).max(hist.bin_width()),
        baseline,
    })
}

struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    w: Vec<f64>,
}

impl Problem {
    fn model(p: &Vector4<f64>, x: f64) -> (f64, Vector4<f64>) {
        let (a, c, f) = (p[0], p[1], p[2]);
        let u = 2.0 * (x - c) / f;
        let d = 1.0 + u * u;
        let l = 1.0 / d;
        let g = a * 2.0 * u / (d * d);
        (p[3] + a * l, Vector4::new(l, g * 2.0 / f, g * u / f, 1.0))
    }

    fn chi2(&self, p: &Vector4<f64>) -> f64 {
        self.x
            .iter()
            .zip(&self.y)
            .zip(&self.w)
            .map(|((&x, &y), &w)| {
                let r = y - Self::model(p, x).0;
                w * r * r
            })
            .sum()
    }

    fn normal(&self, p: &Vector4<f64>) -> (Matrix4<f64>, Vector4<f64>) {
        let mut jtj = Matrix4::zeros();
        let mut jtr = Vector4::zeros();
        for ((&x, &y), &w) in self.x.iter().zip(&self.y).zip(&self.w) {
            let (m, j) = Self::model(p, x);
            jtj += w * j * j.transpose();
            jtr += w * (y - m) * j;
        }
        (jtj, jtr)
    }
}

fn constrain(p: &mut Vector4<f64>) {
    p[2] = p[2].abs();
    p[3] = p[3].max(0.0);
}

/// Levenberg-Marquardt fit with weights `1/max(count, 1)`.
pub fn fit_lorentzian(
    hist: &CorrelationHistogram,
    init: Option<FitInit>,
) -> Result<LorentzianFit, FitError> {
    fit_lorentzian_with(hist, init, &FitOptions::default())
}

pub fn fit_lorentzian_with(
    hist: &CorrelationHistogram,
    init: Option<FitInit>,
    opts: &FitOptions,
) -> Result<LorentzianFit, FitError> {
    let n = hist.counts.len();
    if n < 8 {
        return Err(FitError::TooFewBins(n));
    }
    if hist.total() == 0 {
        return Err(FitError::Empty);
    }
    let init = match init {
        Some(i) => i,
        None => initial_guess(hist, opts.min_significance)?,
    };
    let y: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    fit_lorentzian_points(&hist.bin_centers(), &y, init, opts)
}

fn levenberg_marquardt(
    problem: &Problem,
    mut p: Vector4<f64>,
    opts: &FitOptions,
) -> Result<(Vector4<f64>, f64, usize), FitError> {
    constrain(&mut p);
    let mut chi2 = problem.chi2(&p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let (jtj, jtr) = problem.normal(&p);
        let mut accepted = false;
        let mut small = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..4 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial = p + step;
            constrain(&mut trial);
            let trial_chi2 = problem.chi2(&trial);
            if trial_chi2 <= chi2 {
                small = (0..4).all(|i| {
                    (trial[i] - p[i]).abs() <= opts.step_tolerance * p[i].abs().max(1e-12)
                });
                p = trial;
                chi2 = trial_chi2;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        // without a downhill step the minimum is reached to machine precision
        if !accepted || small {
            return Ok((p, chi2, iterations));
        }
    }
    Err(FitError::NonConvergence { iterations, chi2 })
}

/// Fits arbitrary (time in s, counts) samples from an explicit start.
pub fn fit_lorentzian_points(
    t: &[f64],
    y: &[f64],
    init: FitInit,
    opts: &FitOptions,
) -> Result<LorentzianFit, FitError> {
    let n = y.len();
    if n < 8 {
        return Err(FitError::TooFewBins(n));
    }
    let mut problem = Problem {
        x: t.iter().map(|t| t / NS).collect(),
        y: y.to_vec(),
        w: y.iter().map(|&c| 1.0 / c.max(1.0)).collect(),
    };
    let p0 = Vector4::new(
        init.amplitude,
        init.center / NS,
        init.fwhm / NS,
        init.baseline,
    );
    let (mut p, mut chi2, mut iterations) = levenberg_marquardt(&problem, p0, opts)?;
    if opts.weighting == Weighting::Model {
        let mut rounds = 0;
        loop {
            rounds += 1;
            problem.w = problem
                .x
                .iter()
                .map(|&x| 1.0 / Problem::model(&p, x).0.max(1e-3))
                .collect();
            let (next, next_chi2, it) = levenberg_marquardt(&problem, p, opts)?;
            iterations += it;
            let settled = (0..4).all(|i| {
                (next[i] - p[i]).abs() <= 1e3 * opts.step_tolerance * p[i].abs().max(1e-12)
            });
            p = next;
            chi2 = next_chi2;
            if settled {
                break;
            }
            if rounds >= opts.max_iterations {
                return Err(FitError::NonConvergence { iterations, chi2 });
            }
        }
    }
    let (jtj, _) = problem.normal(&p);
    let cov = jtj.try_inverse().ok_or(FitError::Singular)?;
    let scale = [1.0, NS, NS, 1.0];
    let mut covariance = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            covariance[i][j] = cov[(i, j)] * scale[i] * scale[j];
        }
    }
    Ok(LorentzianFit {
        amplitude: p[0],
        center: p[1] * NS,
        fwhm: p[2] * NS,
        baseline: p[3],
        covariance,
        reduced_chi2: chi2 / (n as f64 - 4.0),
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::histogram::Binning;

    pub(crate) fn synthetic(
        amplitude: f64,
        center_ps: f64,
        fwhm_ps: f64,
        baseline: f64,
    ) -> (CorrelationHistogram, Vec<f64>) {
        let binning = Binning::new(100, 10_000).unwrap();
        let mut hist = CorrelationHistogram::empty(binning);
        let exact: Vec<f64> = (0..binning.n_bins())
            .map(|j| {
                let u = 2.0 * (binning.center_ps(j) as f64 - center_ps) / fwhm_ps;
                baseline + amplitude / (1.0 + u * u)
            })
            .collect();
        hist.counts = exact.iter().map(|v| v.round() as u64).collect();
        (hist, exact)
    }

    #[test]
    fn self_initialization_finds_the_peak() {
        let (hist, _) = synthetic(200.0, -1200.0, 1000.0, 40.0);
        let init = initial_guess(&hist, 5.0).unwrap();
        assert!((init.center + 1.2e-9).abs() < 1e-10);
        assert!((init.baseline - 40.0).abs() < 2.0);
        assert!((init.fwhm - 1e-9).abs() < 0.15e-9, "{}", init.fwhm);
    }

    #[test]
    fn flat_histogram_has_no_peak() {
        let binning = Binning::new(100, 5_000).unwrap();
        let mut hist = CorrelationHistogram::empty(binning);
        hist.counts.iter_mut().for_each(|c| *c = 25);
        assert!(matches!(
            fit_lorentzian(&hist, None),
            Err(FitError::NoPeak { .. })
        ));
        let empty = CorrelationHistogram::empty(binning);
        assert_eq!(fit_lorentzian(&empty, None), Err(FitError::Empty));
    }

    #[test]
    fn noiseless_lorentzian_is_recovered() {
        let t: Vec<f64> = (-100..=100).map(|j| j as f64 * 0.1e-9).collect();
        let truth = (150.0, -0.7e-9, 1.06e-9, 12.5);
        let y: Vec<f64> = t
            .iter()
            .map(|&x| {
                let u = 2.0 * (x - truth.1) / truth.2;
                truth.3 + truth.0 / (1.0 + u * u)
            })
            .collect();
        let init = FitInit {
            amplitude: 100.0,
            center: 0.0,
            fwhm: 2e-9,
            baseline: 20.0,
        };
        let fit = fit_lorentzian_points(&t, &y, init, &FitOptions::default()).unwrap();
        let rel = |a: f64, b: f64| ((a - b) / b).abs();
        assert!(rel(fit.amplitude, truth.0) < 1e-6);
        assert!(rel(fit.center, truth.1) < 1e-6);
        assert!(rel(fit.fwhm, truth.2) < 1e-6);
        assert!(rel(fit.baseline, truth.3) < 1e-6);
        assert!(fit.reduced_chi2 < 1e-12);
    }

    #[test]
    fn rounded_histogram_fits_close_to_truth() {
        let (hist, _) = synthetic(400.0, 300.0, 1200.0, 50.0);
        let fit = fit_lorentzian(&hist, None).unwrap();
        assert!((fit.center - 0.3e-9).abs() < 5e-12);
        assert!((fit.fwhm - 1.2e-9).abs() < 1e-11);
        assert!((fit.eval(fit.center) - 450.0).abs() < 1.0);
    }

    #[test]
    fn too_few_bins() {
        let binning = Binning::new(100, 300).unwrap();
        let hist = CorrelationHistogram::empty(binning);
        assert_eq!(fit_lorentzian(&hist, None), Err(FitError::TooFewBins(7)));
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let (hist, _) = synthetic(300.0, 500.0, 1500.0, 20.0);
        let opts = FitOptions {
            max_iterations: 1,
            step_tolerance: 0.0,
            ..FitOptions::default()
        };
        assert!(matches!(
            fit_lorentzian_with(&hist, None, &opts),
            Err(FitError::NonConvergence { iterations: 1, .. })
        ));
    }
}
