//! Passive Fabry-Perot microcavity: spectral properties, longitudinal mode
//! frequencies, medium inference from measured spectra and dispersion
//! compensation.
//!
//! All frequencies are ordinary frequencies in Hz. Lengths are in meters.

use std::f64::consts::PI;

use thiserror::Error;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CavityError {
    #[error("cavity length must be positive, got {0} m")]
    NonPositiveLength(f64),
    #[error("unstable plano-concave geometry: length {length} m is not below the radius of curvature {roc} m")]
    UnstableGeometry { length: f64, roc: f64 },
    #[error("{name} must lie in (0, 1), got {value}")]
    MirrorParameter { name: &'static str, value: f64 },
    #[error("wavelength must be positive, got {0} m")]
    NonPositiveWavelength(f64),
    #[error("invalid medium: {0}")]
    InvalidMedium(String),
    #[error("free spectral ranges must be positive (empty {empty} Hz, filled {filled} Hz)")]
    NonPositiveFsr { empty: f64, filled: f64 },
    #[error("filled-cavity FSR {filled} Hz exceeds empty-cavity FSR {empty} Hz (index below 1)")]
    IndexBelowUnity { empty: f64, filled: f64 },
    #[error("finesse uncertainty must be positive, got {0}")]
    NonPositiveFinesseSigma(f64),
    #[error("dispersion cannot be compensated: best residual {residual} Hz exceeds linewidth {linewidth} Hz")]
    Uncompensatable { residual: f64, linewidth: f64 },
}

/// How the per-mirror transmission and loss add up to the loss that sets the
/// finesse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossAccounting {
    /// Two identical mirrors per round trip: loss = 2 (T + loss).
    #[default]
    RoundTrip,
    /// loss = T + loss, i.e. the expression F = pi / (T + L) taken literally.
    PerMirror,
}

impl LossAccounting {
    pub fn as_str(self) -> &'static str {
        match self {
            LossAccounting::RoundTrip => "round_trip",
            LossAccounting::PerMirror => "per_mirror",
        }
    }
}

impl std::str::FromStr for LossAccounting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "round_trip" => Ok(LossAccounting::RoundTrip),
            "per_mirror" => Ok(LossAccounting::PerMirror),
            other => Err(format!("expected round_trip or per_mirror, got {other:?}")),
        }
    }
}

/// Plano-concave resonator made of a curved fiber mirror and a planar mirror.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityGeometry {
    /// Mirror separation, m.
    pub length: f64,
    /// Radius of curvature of the fiber mirror, m.
    pub roc: f64,
    /// Transmission of each mirror.
    pub mirror_transmission: f64,
    /// Scatter/absorption loss of each mirror.
    pub mirror_loss: f64,
    /// Vacuum wavelength of the pump, m.
    pub wavelength_vac: f64,
    pub loss_accounting: LossAccounting,
}

impl CavityGeometry {
    /// The liquid-filled cavity: 38.4 um long, 200 um fiber-mirror radius,
    /// 100 ppm transmission and 100 ppm loss per mirror, pumped near 784.5 nm.
    pub fn experiment() -> Self {
        CavityGeometry {
            length: 38.4e-6,
            roc: 200e-6,
            mirror_transmission: 100e-6,
            mirror_loss: 100e-6,
            wavelength_vac: SPEED_OF_LIGHT / 382.155e12,
            loss_accounting: LossAccounting::RoundTrip,
        }
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        if !(self.length > 0.0) {
            return Err(CavityError::NonPositiveLength(self.length));
        }
        if !(self.length < self.roc) {
            return Err(CavityError::UnstableGeometry {
                length: self.length,
                roc: self.roc,
            });
        }
        for (name, value) in [
            ("mirror transmission", self.mirror_transmission),
            ("mirror loss", self.mirror_loss),
        ] {
            if !(value > 0.0 && value < 1.0) {
                return Err(CavityError::MirrorParameter { name, value });
            }
        }
        if !(self.wavelength_vac > 0.0) {
            return Err(CavityError::NonPositiveWavelength(self.wavelength_vac));
        }
        Ok(())
    }

    /// Loss entering the finesse under the configured accounting.
    pub fn finesse_loss(&self) -> f64 {
        let per_mirror = self.mirror_transmission + self.mirror_loss;
        match self.loss_accounting {
            LossAccounting::RoundTrip => 2.0 * per_mirror,
            LossAccounting::PerMirror => per_mirror,
        }
    }
}

/// Optical medium filling the resonator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Medium {
    pub index: f64,
    /// Nonlinear refractive index, m^2/W.
    pub n2: f64,
    /// Absorption coefficient, 1/m.
    pub absorption: f64,
    /// Thermo-optic coefficient dn/dT, 1/K.
    pub thermo_optic: f64,
}

impl Medium {
    pub const VACUUM: Medium = Medium {
        index: 1.0,
        n2: 0.0,
        absorption: 0.0,
        thermo_optic: 0.0,
    };

    /// Tetramethyl-tetraphenyl-trisiloxane silicone oil.
    pub fn silicone_oil() -> Self {
        Medium {
            index: 1.556,
            n2: 3.62e-20,
            absorption: 0.0,
            thermo_optic: 3e-4,
        }
    }

    pub fn validate(&self) -> Result<(), CavityError> {
        if !(self.index >= 1.0) {
            return Err(CavityError::InvalidMedium(format!(
                "refractive index must be >= 1, got {}",
                self.index
            )));
        }
        if !(self.n2 >= 0.0) {
            return Err(CavityError::InvalidMedium(format!(
                "n2 must be >= 0, got {}",
                self.n2
            )));
        }
        if !(self.absorption >= 0.0) {
            return Err(CavityError::InvalidMedium(format!(
                "absorption must be >= 0, got {}",
                self.absorption
            )));
        }
        if !self.thermo_optic.is_finite() {
            return Err(CavityError::InvalidMedium(
                "thermo-optic coefficient must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Spectral properties of the fundamental transverse mode family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityProperties {
    pub fsr_hz: f64,
    pub finesse: f64,
    pub linewidth_hz: f64,
    /// 1/e^2 intensity radius on the planar mirror, m.
    pub waist: f64,
    pub quality: f64,
    pub resonance_hz: f64,
    /// Geometric mirror separation, m.
    pub length: f64,
    pub index: f64,
}

impl CavityProperties {
    /// Angular free spectral range, rad/s.
    pub fn fsr_angular(&self) -> f64 {
        2.0 * PI * self.fsr_hz
    }

    /// Vacuum wavelength of the reference resonance, m.
    pub fn wavelength_vac(&self) -> f64 {
        SPEED_OF_LIGHT / self.resonance_hz
    }

    /// Replaces the loss-derived finesse by a measured value, keeping
    /// `linewidth * finesse == fsr` and `Q == nu / linewidth`.
    pub fn with_finesse(mut self, finesse: f64) -> Self {
        self.finesse = finesse;
        self.linewidth_hz = self.fsr_hz / finesse;
        self.quality = self.resonance_hz / self.linewidth_hz;
        self
    }
}

/// Free spectral range c / (2 n L) in Hz.
pub fn free_spectral_range(length: f64, index: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * index * length)
}

/// Gaussian mode radius on the planar mirror of a plano-concave cavity,
/// using the wavelength inside the medium.
pub fn planar_mirror_waist(length: f64, roc: f64, wavelength_vac: f64, index: f64) -> f64 {
    let w0_sq = wavelength_vac / (PI * index) * (length * (roc - length)).sqrt();
    w0_sq.sqrt()
}

pub fn derive_properties(
    geom: &CavityGeometry,
    med: &Medium,
) -> Result<CavityProperties, CavityError> {
    geom.validate()?;
    med.validate()?;

    let fsr_hz = free_spectral_range(geom.length, med.index);
    let finesse = PI / geom.finesse_loss();
    let linewidth_hz = fsr_hz / finesse;
    let resonance_hz = SPEED_OF_LIGHT / geom.wavelength_vac;
    Ok(CavityProperties {
        fsr_hz,
        finesse,
        linewidth_hz,
        waist: planar_mirror_waist(geom.length, geom.roc, geom.wavelength_vac, med.index),
        quality: resonance_hz / linewidth_hz,
        resonance_hz,
        length: geom.length,
        index: med.index,
    })
}

/// Refractive index of the filling from the empty and filled free spectral
/// ranges (or, at constant finesse, the empty and filled linewidths).
pub fn infer_index_from_fsr(fsr_empty: f64, fsr_filled: f64) -> Result<f64, CavityError> {
    if !(fsr_empty > 0.0 && fsr_filled > 0.0) {
        return Err(CavityError::NonPositiveFsr {
            empty: fsr_empty,
            filled: fsr_filled,
        });
    }
    if fsr_filled > fsr_empty {
        return Err(CavityError::IndexBelowUnity {
            empty: fsr_empty,
            filled: fsr_filled,
        });
    }
    Ok(fsr_empty / fsr_filled)
}

/// Quadratic comb-offset model: mode of order n sits at nu0 +/- n FSR + D2 n^2.
///
/// Retuning the cavity by a control offset `x` moves the energy-sum residual
/// by `tuning_sensitivity * x`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DispersionModel {
    /// Hz per order squared.
    pub quadratic_offset: f64,
    /// Hz of energy-sum residual per control unit.
    pub tuning_sensitivity: f64,
}

impl DispersionModel {
    pub const NONE: DispersionModel = DispersionModel {
        quadratic_offset: 0.0,
        tuning_sensitivity: 0.0,
    };

    /// Energy-sum residual nu+ + nu- - 2 nu0 at a given control offset.
    pub fn residual(&self, order: u32, control_offset: f64) -> f64 {
        let n = order as f64;
        2.0 * self.quadratic_offset * n * n + self.tuning_sensitivity * control_offset
    }
}

/// Signal/idler mode pair of one order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePair {
    pub plus_hz: f64,
    pub minus_hz: f64,
}

impl ModePair {
    /// nu+ + nu- - 2 nu0.
    pub fn energy_residual(&self, nu0: f64) -> f64 {
        (self.plus_hz - nu0) + (self.minus_hz - nu0)
    }
}

pub fn mode_frequencies(nu0: f64, fsr: f64, order: u32, disp: &DispersionModel) -> ModePair {
    mode_frequencies_retuned(nu0, fsr, order, disp, 0.0)
}

/// Mode pair after applying a dispersion-compensating control offset. The
/// offset shifts both modes by half of its residual contribution.
pub fn mode_frequencies_retuned(
    nu0: f64,
    fsr: f64,
    order: u32,
    disp: &DispersionModel,
    control_offset: f64,
) -> ModePair {
    let n = order as f64;
    let common = disp.residual(order, control_offset) / 2.0;
    ModePair {
        plus_hz: nu0 + n * fsr + common,
        minus_hz: nu0 - n * fsr + common,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compensation {
    pub control_offset: f64,
    /// |nu+ + nu- - 2 nu0| after the offset is applied, Hz.
    pub residual: f64,
}

/// Control offset within `[-max_offset, max_offset]` that minimizes the
/// energy-sum residual of order `order`. Fails when the best residual still
/// exceeds the cavity linewidth.
pub fn find_dispersion_compensation(
    order: u32,
    disp: &DispersionModel,
    linewidth: f64,
    max_offset: f64,
) -> Result<Compensation, CavityError> {
    let uncompensated = disp.residual(order, 0.0);
    let offset = if disp.tuning_sensitivity != 0.0 {
        (-uncompensated / disp.tuning_sensitivity).clamp(-max_offset.abs(), max_offset.abs())
    } else {
        0.0
    };
    let residual = disp.residual(order, offset).abs();
    if residual > linewidth {
        return Err(CavityError::Uncompensatable {
            residual,
            linewidth,
        });
    }
    Ok(Compensation {
        control_offset: offset,
        residual,
    })
}

/// Largest absorption coefficient compatible with an unchanged finesse: the
/// round-trip absorption 2 alpha n L may use up the loss headroom
/// pi/F - pi/(F + sigma_F).
///
/// The loss budget ignores any change of mirror reflectivity caused by the
/// liquid.
pub fn absorption_upper_bound(
    finesse_measured: f64,
    finesse_sigma: f64,
    geom: &CavityGeometry,
    med: &Medium,
) -> Result<f64, CavityError> {
    if !(finesse_sigma > 0.0) {
        return Err(CavityError::NonPositiveFinesseSigma(finesse_sigma));
    }
    let headroom = PI / finesse_measured - PI / (finesse_measured + finesse_sigma);
    Ok(headroom / (2.0 * med.index * geom.length))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn empty_cavity_fsr_matches_measurement() {
        let fsr = free_spectral_range(38.4e-6, 1.0);
        assert!((fsr / 1e12 - 3.904).abs() < 5e-4, "{fsr}");
        assert!(rel(fsr, 3.901e12) < 1e-3);
    }

    #[test]
    fn filled_cavity_fsr_matches_measurement() {
        let fsr = free_spectral_range(38.4e-6, 1.556);
        assert!((fsr / 1e12 - 2.509).abs() < 5e-4, "{fsr}");
        assert!(rel(fsr, 2.507e12) < 1e-3);
    }

    #[test]
    fn doubling_length_halves_fsr() {
        let f1 = free_spectral_range(38.4e-6, 1.0);
        let f2 = free_spectral_range(2.0 * 38.4e-6, 1.0);
        assert_eq!(f1, 2.0 * f2);
    }

    #[test]
    fn waist_at_780nm() {
        let w0 = planar_mirror_waist(38.4e-6, 200e-6, 780e-9, 1.556);
        assert!((w0 - 3.5e-6).abs() < 0.1e-6, "{w0}");
    }

    #[test]
    fn derived_properties_are_consistent() {
        let props =
            derive_properties(&CavityGeometry::experiment(), &Medium::silicone_oil()).unwrap();
        assert!(rel(props.linewidth_hz * props.finesse, props.fsr_hz) < 1e-15);
        assert!(rel(props.quality, props.resonance_hz / props.linewidth_hz) < 1e-15);
        // round-trip accounting: pi / 400 ppm
        assert!(rel(props.finesse, PI / 400e-6) < 1e-12);

        let measured = props.with_finesse(12_500.0);
        assert!((measured.linewidth_hz / 1e6 - 200.7).abs() < 0.1);
        assert!((measured.quality / 2e6 - 1.0).abs() < 0.06);
    }

    #[test]
    fn per_mirror_accounting_doubles_finesse() {
        let mut geom = CavityGeometry::experiment();
        let rt = derive_properties(&geom, &Medium::VACUUM).unwrap();
        geom.loss_accounting = LossAccounting::PerMirror;
        let pm = derive_properties(&geom, &Medium::VACUUM).unwrap();
        assert!(rel(pm.finesse, 2.0 * rt.finesse) < 1e-15);
    }

    #[test]
    fn rejects_unstable_and_degenerate_geometry() {
        let mut geom = CavityGeometry::experiment();
        geom.length = geom.roc;
        assert!(matches!(
            derive_properties(&geom, &Medium::VACUUM),
            Err(CavityError::UnstableGeometry { .. })
        ));
        geom.length = 300e-6;
        assert!(derive_properties(&geom, &Medium::VACUUM).is_err());
        geom.length = 0.0;
        assert!(matches!(
            derive_properties(&geom, &Medium::VACUUM),
            Err(CavityError::NonPositiveLength(_))
        ));
        geom.length = -1e-6;
        assert!(derive_properties(&geom, &Medium::VACUUM).is_err());
    }

    #[test]
    fn index_from_fsr_change() {
        let n = infer_index_from_fsr(3.901e12, 2.507e12).unwrap();
        assert!((n - 1.556).abs() < 5e-4, "{n}");
        assert_eq!(infer_index_from_fsr(2.5e12, 2.5e12).unwrap(), 1.0);
        let n_lw = infer_index_from_fsr(313e6, 200e6).unwrap();
        assert!((n_lw - 1.565).abs() < 1e-9);
        assert!(matches!(
            infer_index_from_fsr(2.0e12, 3.0e12),
            Err(CavityError::IndexBelowUnity { .. })
        ));
        assert!(infer_index_from_fsr(0.0, 0.0).is_err());
    }

    #[test]
    fn second_order_modes() {
        let pair = mode_frequencies(382.155e12, 2.5e12, 2, &DispersionModel::NONE);
        assert!((pair.plus_hz - 387.155e12).abs() < 1.0);
        assert!((pair.minus_hz - 377.155e12).abs() < 1.0);
    }

    #[test]
    fn third_order_modes() {
        let pair = mode_frequencies(382.410e12, 2.526e12, 3, &DispersionModel::NONE);
        assert!((pair.plus_hz - 389.988e12).abs() < 1e9);
        assert!((pair.minus_hz - 374.832e12).abs() < 1e9);
        // the measured pair is symmetric about the pump to within 1 GHz
        assert!(((389.988e12_f64 + 374.831e12) / 2.0 - 382.410e12).abs() < 1e9);
    }

    #[test]
    fn zeroth_order_is_degenerate() {
        let disp = DispersionModel {
            quadratic_offset: 1e6,
            tuning_sensitivity: 3.0,
        };
        let pair = mode_frequencies(382e12, 2.5e12, 0, &disp);
        assert_eq!(pair.plus_hz, 382e12);
        assert_eq!(pair.minus_hz, 382e12);
    }

    #[test]
    fn dispersion_residual_is_quadratic_in_order() {
        let disp = DispersionModel {
            quadratic_offset: 7.5e6,
            tuning_sensitivity: 0.0,
        };
        for n in 0..6u32 {
            let pair = mode_frequencies(382e12, 2.5e12, n, &disp);
            let expected = 2.0 * 7.5e6 * (n * n) as f64;
            assert!((pair.energy_residual(382e12) - expected).abs() < 1e-1);
        }
    }

    #[test]
    fn compensation_already_compensated() {
        let disp = DispersionModel {
            quadratic_offset: 0.0,
            tuning_sensitivity: 2e6,
        };
        let c = find_dispersion_compensation(2, &disp, 200e6, 1e3).unwrap();
        assert_eq!(c.control_offset, 0.0);
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn compensation_linear_inversion() {
        let linewidth = 200e6;
        let order = 2;
        // residual = 5 linewidths at zero offset
        let d2 = 5.0 * linewidth / (2.0 * (order * order) as f64);
        let sensitivity = 1.7e7;
        let disp = DispersionModel {
            quadratic_offset: d2,
            tuning_sensitivity: sensitivity,
        };
        let residual0 = disp.residual(order, 0.0);
        assert!((residual0 - 5.0 * linewidth).abs() < 1e-3);

        let c = find_dispersion_compensation(order, &disp, linewidth, 1e6).unwrap();
        let analytic = -residual0 / sensitivity;
        assert!(rel(c.control_offset, analytic) < 1e-12);
        assert!(c.residual <= linewidth);

        let retuned = mode_frequencies_retuned(382e12, 2.5e12, order, &disp, c.control_offset);
        assert!(retuned.energy_residual(382e12).abs() <= linewidth);
    }

    #[test]
    fn compensation_matches_bruteforce_scan_when_bounded() {
        let disp = DispersionModel {
            quadratic_offset: 1e8,
            tuning_sensitivity: 1e6,
        };
        let max_offset = 700.0;
        // residual 8e8 needs offset -800, out of reach; best achievable is at the bound
        let best_scan = (0..=14_000)
            .map(|i| -max_offset + i as f64 * 0.1)
            .map(|x| disp.residual(2, x).abs())
            .fold(f64::INFINITY, f64::min);
        match find_dispersion_compensation(2, &disp, 50e6, max_offset) {
            Err(CavityError::Uncompensatable { residual, .. }) => {
                assert!((residual - best_scan).abs() < 1e-3 * best_scan);
            }
            other => panic!("expected uncompensatable, got {other:?}"),
        }
        let ok = find_dispersion_compensation(2, &disp, 150e6, max_offset).unwrap();
        assert!((ok.residual - best_scan).abs() < 1.0);
    }

    #[test]
    fn zero_sensitivity_cannot_compensate() {
        let disp = DispersionModel {
            quadratic_offset: 1e9,
            tuning_sensitivity: 0.0,
        };
        assert!(matches!(
            find_dispersion_compensation(2, &disp, 200e6, 1e6),
            Err(CavityError::Uncompensatable { .. })
        ));
    }

    #[test]
    fn absorption_budget() {
        let geom = CavityGeometry::experiment();
        let med = Medium::silicone_oil();
        let alpha = absorption_upper_bound(12_500.0, 500.0, &geom, &med).unwrap();
        let expected = (PI / 12_500.0 - PI / 13_000.0) / (2.0 * 1.556 * 38.4e-6);
        assert!(rel(alpha, expected) < 1e-12);
        assert!((alpha - 0.08).abs() < 0.005, "{alpha}");
        // the simple budget is far below the 5 1/m bound that includes the
        // reflectivity change of the mirrors in oil
        assert!(alpha < 5.0 / 10.0);

        let tiny = absorption_upper_bound(12_500.0, 1e-9, &geom, &med).unwrap();
        assert!(tiny < 1e-12);
        assert!(absorption_upper_bound(12_500.0, 0.0, &geom, &med).is_err());
    }

    proptest! {
        #[test]
        fn fsr_scales_inversely_with_optical_length(
            length in 1e-6f64..1e-3,
            index in 1.0f64..3.0,
            k in 0.01f64..100.0,
        ) {
            let f = free_spectral_range(length, index);
            let fk = free_spectral_range(length * k, index);
            prop_assert!(rel(fk, f / k) < 1e-14);
        }

        #[test]
        fn linewidth_times_finesse_is_fsr(
            length in 1e-6f64..150e-6,
            t in 1e-6f64..1e-2,
            loss in 1e-6f64..1e-2,
            index in 1.0f64..2.0,
        ) {
            let geom = CavityGeometry { length, roc: 200e-6, mirror_transmission: t, mirror_loss: loss, ..CavityGeometry::experiment() };
            let med = Medium { index, ..Medium::VACUUM };
            let p = derive_properties(&geom, &med).unwrap();
            prop_assert!(rel(p.linewidth_hz * p.finesse, p.fsr_hz) < 1e-15);
        }

        #[test]
        fn ideal_comb_conserves_energy(order in 0u32..1000, fsr in 1e11f64..1e13) {
            let nu0 = 382.155e12;
            let pair = mode_frequencies(nu0, fsr, order, &DispersionModel::NONE);
            // exact up to the rounding of nu0 +/- n fsr
            let scale = pair.plus_hz.abs().max(pair.minus_hz.abs());
            prop_assert!(pair.energy_residual(nu0).abs() <= 4.0 * f64::EPSILON * scale);
        }

        #[test]
        fn waist_grows_with_length_below_half_roc(
            l1 in 1e-6f64..99e-6,
            dl in 1e-9f64..1e-6,
        ) {
            let roc = 200e-6;
            let l2 = (l1 + dl).min(roc / 2.0);
            let w1 = planar_mirror_waist(l1, roc, 780e-9, 1.556);
            let w2 = planar_mirror_waist(l2, roc, 780e-9, 1.556);
            prop_assert!(w2 >= w1);
            // L <-> R - L leaves sqrt(L (R - L)) unchanged
            let wm = planar_mirror_waist(roc - l1, roc, 780e-9, 1.556);
            prop_assert!(rel(wm, w1) < 1e-12);
        }

        #[test]
        fn index_inference_inverts_fsr_scaling(fsr in 1e9f64..1e13, n in 1.0f64..4.0) {
            let inferred = infer_index_from_fsr(fsr, fsr / n).unwrap();
            prop_assert!(rel(inferred, n) < 1e-14);
        }
    }
}
