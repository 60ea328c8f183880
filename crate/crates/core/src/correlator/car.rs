use std::f64::consts::PI;
use std::fmt;

use thiserror::Error;

use super::fit::LorentzianFit;
use super::histogram::CorrelationHistogram;

/// Baseline bins lie farther than this many FWHM from the peak centre.
pub const BASELINE_EXCLUSION_FWHM: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CarError {
    #[error("no histogram bins lie outside {radius:.3e} s of the peak")]
    NoBaselineBins { radius: f64 },
    #[error("peak centre {0:.3e} s is outside the histogram window")]
    CenterOutsideWindow(f64),
    #[error("fwhm must be positive, got {0}")]
    NonPositiveFwhm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarMethod {
    Fit,
    Binned,
}

impl CarMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            CarMethod::Fit => "fit",
            CarMethod::Binned => "binned",
        }
    }
}

impl fmt::Display for CarMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CarMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fit" => Ok(CarMethod::Fit),
            "binned" => Ok(CarMethod::Binned),
            other => Err(format!(
                "unknown CAR method '{other}' (expected fit or binned)"
            )),
        }
    }
}

/// Coincidence-to-accidental ratio.
///
/// `value` is the coincidence excess at the peak over the accidental level,
/// `normalized_peak = 1 + value` the peak height in units of the accidental
/// level. A baseline consistent with zero gives `value = inf` and a finite
/// `lower_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CarEstimate {
    pub value: f64,
    pub sigma: f64,
    pub normalized_peak: f64,
    pub method: CarMethod,
    pub lower_bound: Option<f64>,
}

impl CarEstimate {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }

    fn infinite(lower_bound: f64, method: CarMethod) -> Self {
        CarEstimate {
            value: f64::INFINITY,
            sigma: 0.0,
            normalized_peak: f64::INFINITY,
            method,
            lower_bound: Some(lower_bound.max(0.0)),
        }
    }
}

/// From fitted amplitude and baseline with covariance propagation.
pub fn car_from_fit(fit: &LorentzianFit) -> CarEstimate {
    let (a, b) = (fit.amplitude, fit.baseline);
    let (sa, sb) = (fit.amplitude_sigma(), fit.baseline_sigma());
    if b <= 2.0 * sb {
        return CarEstimate::infinite((a - 2.0 * sa) / (b + 2.0 * sb), CarMethod::Fit);
    }
    let value = a / b;
    let cov_ab = fit.covariance[0][3];
    let var = (sa / b).powi(2) + (a * sb / (b * b)).powi(2) - 2.0 * a / b.powi(3) * cov_ab;
    CarEstimate {
        value,
        sigma: var.max(0.0).sqrt(),
        normalized_peak: 1.0 + value,
        method: CarMethod::Fit,
        lower_bound: None,
    }
}

/// Peak bin against the mean of every bin farther than five FWHM from the
/// centre. Poisson errors, with at least one count of variance in the peak
/// bin.
pub fn car_binned(
    hist: &CorrelationHistogram,
    center: f64,
    fwhm: f64,
) -> Result<CarEstimate, CarError> {
    if !(fwhm > 0.0) {
        return Err(CarError::NonPositiveFwhm(fwhm));
    }
    let centers = hist.bin_centers();
    let w = hist.bin_width();
    let peak = centers
        .iter()
        .position(|&c| center >= c - w / 2.0 && center < c + w / 2.0)
        .ok_or(CarError::CenterOutsideWindow(center))?;
    let radius = BASELINE_EXCLUSION_FWHM * fwhm;
    let (sum, n) = centers
        .iter()
        .zip(&hist.counts)
        .filter(|(c, _)| (*c - center).abs() > radius)
        .fold((0u64, 0usize), |(s, n), (_, &c)| (s + c, n + 1));
    if n == 0 {
        return Err(CarError::NoBaselineBins { radius });
    }
    let c = hist.counts[peak] as f64;
    let nb = n as f64;
    if sum == 0 {
        // about 3 counts is the 95% upper limit for none observed
        let upper = 3.0 / nb;
        return Ok(CarEstimate::infinite(
            (c - 2.0 * c.sqrt()) / upper - 1.0,
            CarMethod::Binned,
        ));
    }
    let b = sum as f64 / nb;
    let sb = (sum as f64).sqrt() / nb;
    let ratio = c / b;
    let var = c.max(1.0) / (b * b) + (ratio * sb / b).powi(2);
    Ok(CarEstimate {
        value: (ratio - 1.0).max(0.0),
        sigma: var.sqrt(),
        normalized_peak: ratio,
        method: CarMethod::Binned,
        lower_bound: None,
    })
}

/// Dispatches on `method`; the binned estimator takes its centre and width
/// from the fit.
pub fn estimate_car(
    hist: &CorrelationHistogram,
    fit: &LorentzianFit,
    method: CarMethod,
) -> Result<CarEstimate, CarError> {
    match method {
        CarMethod::Fit => Ok(car_from_fit(fit)),
        CarMethod::Binned => car_binned(hist, fit.center, fit.fwhm),
    }
}

/// Detected pair rate, 1/s, with standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairRate {
    pub rate: f64,
    pub sigma: f64,
}

/// Area under the fitted Lorentzian over the measurement time.
pub fn pair_rate_from_fit(fit: &LorentzianFit, hist: &CorrelationHistogram) -> PairRate {
    let k = PI / 2.0 / hist.bin_width() / hist.duration;
    let rate = k * fit.amplitude * fit.fwhm;
    let (sa, sf) = (fit.amplitude_sigma(), fit.fwhm_sigma());
    let var = (fit.fwhm * sa).powi(2)
        + (fit.amplitude * sf).powi(2)
        + 2.0 * fit.amplitude * fit.fwhm * fit.covariance[0][2];
    PairRate {
        rate,
        sigma: k * var.max(0.0).sqrt(),
    }
}

/// Coincidences within `half_width` of `center` minus the accidental level
/// taken from the bins beyond five FWHM, corrected for the Lorentzian tails
/// outside the window.
pub fn pair_rate_from_window(
    hist: &CorrelationHistogram,
    center: f64,
    fwhm: f64,
    half_width: f64,
) -> Result<PairRate, CarError> {
    if !(fwhm > 0.0) {
        return Err(CarError::NonPositiveFwhm(fwhm));
    }
    let centers = hist.bin_centers();
    let radius = BASELINE_EXCLUSION_FWHM * fwhm;
    let w = hist.bin_width();
    let (mut inside, mut n_in, mut outside, mut n_out) = (0u64, 0usize, 0u64, 0usize);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (c, &k) in centers.iter().zip(&hist.counts) {
        let d = (c - center).abs();
        if d <= half_width {
            inside += k;
            n_in += 1;
            lo = lo.min(c - w / 2.0);
            hi = hi.max(c + w / 2.0);
        } else if d > radius {
            outside += k;
            n_out += 1;
        }
    }
    if n_out == 0 {
        return Err(CarError::NoBaselineBins { radius });
    }
    let b = outside as f64 / n_out as f64;
    let excess = inside as f64 - b * n_in as f64;
    let var = inside as f64 + (n_in as f64).powi(2) * outside as f64 / (n_out as f64).powi(2);
    if n_in == 0 {
        return Err(CarError::CenterOutsideWindow(center));
    }
    // fraction of a Cauchy law within the summed bins
    let fraction = ((2.0 * (hi - center) / fwhm).atan() - (2.0 * (lo - center) / fwhm).atan()) / PI;
    Ok(PairRate {
        rate: excess / fraction / hist.duration,
        sigma: var.sqrt() / fraction / hist.duration,
    })
}
