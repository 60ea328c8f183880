use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("a power scan needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("power {0} W appears more than once")]
    DuplicatePower(f64),
    #[error("power must be positive, got {0} W")]
    NonPositivePower(f64),
    #[error("all pair rates are zero")]
    AllZero,
    #[error("uncertainties must be all positive or all zero")]
    MixedSigmas,
}

/// Pair rate measured at one pump power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanPoint {
    /// W
    pub p_cav: f64,
    /// 1/s
    pub rate: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerScanFit {
    /// 1/(W^2 s)
    pub curvature: f64,
    pub curvature_sigma: f64,
    /// Exponent `b` of a free `a P^b` fit, when at least two rates are positive.
    pub exponent: Option<f64>,
    pub exponent_sigma: Option<f64>,
}

/// Weighted least squares of `rate = curvature · P²`. Zero uncertainties on
/// every point select unit weights.
pub fn power_scan_fit(points: &[ScanPoint]) -> Result<PowerScanFit, ScanError> {
    if points.len() < 3 {
        return Err(ScanError::TooFewPoints(points.len()));
    }
    for (i, p) in points.iter().enumerate() {
        if !(p.p_cav > 0.0) {
            return Err(ScanError::NonPositivePower(p.p_cav));
        }
        if points[..i].iter().any(|q| q.p_cav == p.p_cav) {
            return Err(ScanError::DuplicatePower(p.p_cav));
        }
    }
    if points.iter().all(|p| p.rate == 0.0) {
        return Err(ScanError::AllZero);
    }
    let unit = points.iter().all(|p| p.sigma == 0.0);
    if !unit && !points.iter().all(|p| p.sigma > 0.0) {
        return Err(ScanError::MixedSigmas);
    }
    let weight = |p: &ScanPoint| if unit { 1.0 } else { 1.0 / (p.sigma * p.sigma) };

    let (mut sxy, mut sxx) = (0.0, 0.0);
    for p in points {
        let x = p.p_cav * p.p_cav;
        sxy += weight(p) * p.rate * x;
        sxx += weight(p) * x * x;
    }
    let curvature = sxy / sxx;
    let curvature_sigma = if unit {
        let rss: f64 = points
            .iter()
            .map(|p| (p.rate - curvature * p.p_cav.powi(2)).powi(2))
            .sum();
        (rss / (points.len() - 1) as f64 / sxx).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };

    // ln rate = ln a + b ln P, weights (rate/sigma)^2
    let logs: Vec<(f64, f64, f64)> = points
        .iter()
        .filter(|p| p.rate > 0.0)
        .map(|p| {
            let w = if unit {
                1.0
            } else {
                (p.rate / p.sigma).powi(2)
            };
            (p.p_cav.ln(), p.rate.ln(), w)
        })
        .collect();
    let (exponent, exponent_sigma) = if logs.len() >= 2 {
        let sw: f64 = logs.iter().map(|l| l.2).sum();
        let mx = logs.iter().map(|l| l.2 * l.0).sum::<f64>() / sw;
        let my = logs.iter().map(|l| l.2 * l.1).sum::<f64>() / sw;
        let sxx: f64 = logs.iter().map(|l| l.2 * (l.0 - mx).powi(2)).sum();
        let sxy: f64 = logs.iter().map(|l| l.2 * (l.0 - mx) * (l.1 - my)).sum();
        let b = sxy / sxx;
        let sigma = if unit {
            let a = my - b * mx;
            let rss: f64 = logs.iter().map(|l| (l.1 - a - b * l.0).powi(2)).sum();
            if logs.len() > 2 {
                (rss / (logs.len() - 2) as f64 / sxx).sqrt()
            } else {
                0.0
            }
        } else {
            (1.0 / sxx).sqrt()
        };
        (Some(b), Some(sigma))
    } else {
        (None, None)
    };
    Ok(PowerScanFit {
        curvature,
        curvature_sigma,
        exponent,
        exponent_sigma,
    })
}
