use std::fmt::Write;

use super::car::CarEstimate;
use super::fit::LorentzianFit;
use super::scan::PowerScanFit;

/// key=value summary of a correlation analysis; absent entries are omitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Report {
    pub fit: Option<LorentzianFit>,
    pub car: Option<CarEstimate>,
    pub scan: Option<PowerScanFit>,
    pub extra: Vec<(String, String)>,
}

impl Report {
    pub fn push(&mut self, key: &str, value: impl ToString) {
        self.extra.push((key.to_string(), value.to_string()));
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        if let Some(car) = &self.car {
            kv("car", car.value.to_string());
            kv("car_sigma", car.sigma.to_string());
            kv("car_method", car.method.to_string());
            kv("normalized_peak", car.normalized_peak.to_string());
            if let Some(lb) = car.lower_bound {
                kv("car_lower_bound", lb.to_string());
            }
        }
        if let Some(fit) = &self.fit {
            kv("fwhm_ps", (fit.fwhm * 1e12).to_string());
            kv("fwhm_sigma_ps", (fit.fwhm_sigma() * 1e12).to_string());
            kv("center_ps", (fit.center * 1e12).to_string());
            kv("center_sigma_ps", (fit.center_sigma() * 1e12).to_string());
            kv("amplitude", fit.amplitude.to_string());
            kv("baseline", fit.baseline.to_string());
            kv("reduced_chi2", fit.reduced_chi2.to_string());
        }
        if let Some(scan) = &self.scan {
            kv("curvature", scan.curvature.to_string());
            kv("curvature_sigma", scan.curvature_sigma.to_string());
            if let Some(b) = scan.exponent {
                kv("exponent_diagnostic", b.to_string());
            }
        }
        for (k, v) in &self.extra {
            kv(k, v.clone());
        }
        s
    }
}
