//! End-to-end pipelines behind the command-line reports and figure analogs.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::bistability::{
    extract_lineshift, linear_fit, lineshift_series, simulate_scan, temperature_rise, LinearFit,
    LineshapeError, LineshapeScan, LineshiftExtraction, LineshiftPoint, NonlinearLineshapeParams,
    SweepDirection,
};
use crate::cavity::{
    absorption_upper_bound, derive_properties, find_dispersion_compensation, free_spectral_range,
    infer_index_from_fsr, mode_frequencies_retuned, CavityError, CavityProperties,
};
use crate::config::RunConfig;
use crate::correlator::{
    car_binned, car_from_fit, fit_lorentzian_with, pair_rate_from_fit, power_scan_fit, Binning,
    CarError, CarEstimate, CorrelationHistogram, CorrelatorError, FitError, LorentzianFit,
    PairRate, PowerScanFit, Report, ScanError, ScanPoint, StreamingCorrelator,
};
use crate::rates::{infer_n2, predict_car, predict_pair_flux, RateError};
use crate::tagsim::{SimConfig, SimError, TagGenerator, Truth};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Cavity(#[from] CavityError),
    #[error(transparent)]
    Lineshape(#[from] LineshapeError),
    #[error(transparent)]
    Rate(#[from] RateError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Correlator(#[from] CorrelatorError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Car(#[from] CarError),
    #[error(transparent)]
    Scan(#[from] ScanError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Cavity properties with the measured finesse applied when configured.
pub fn cavity_properties(cfg: &RunConfig) -> Result<CavityProperties, CavityError> {
    let props = derive_properties(&cfg.geometry, &cfg.medium)?;
    Ok(match cfg.cavity.finesse {
        Some(f) => props.with_finesse(f),
        None => props,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeRow {
    pub order: u32,
    pub plus_hz: f64,
    pub minus_hz: f64,
    pub control_offset: Option<f64>,
    pub residual_hz: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CavityReport {
    pub fsr_empty_hz: f64,
    pub fsr_filled_hz: f64,
    pub index_from_fsr: f64,
    pub mirror_finesse: f64,
    pub props: CavityProperties,
    pub absorption_bound: Option<f64>,
    pub pair_flux_at_p_cav: f64,
    pub n2_from_gamma: Option<f64>,
    pub predicted_car: String,
    pub modes: Vec<ModeRow>,
}

pub fn cavity_report(cfg: &RunConfig) -> Result<CavityReport, PipelineError> {
    let mirror = derive_properties(&cfg.geometry, &cfg.medium)?;
    let props = cavity_properties(cfg)?;
    let fsr_empty_hz = free_spectral_range(cfg.geometry.length, 1.0);
    let fsr_filled_hz = props.fsr_hz;
    let index_from_fsr = infer_index_from_fsr(fsr_empty_hz, fsr_filled_hz)?;
    let absorption_bound = cfg
        .cavity
        .finesse
        .map(|f| absorption_upper_bound(f, cfg.cavity.finesse_sigma, &cfg.geometry, &cfg.medium))
        .transpose()?;
    let sfwm = &cfg.sim.sfwm;
    let n2_from_gamma = if sfwm.gamma_exp > 0.0 {
        Some(infer_n2(
            sfwm.gamma_exp,
            &props,
            &cfg.medium,
            &cfg.conventions,
        )?)
    } else {
        None
    };
    let modes = (0..=cfg.cavity.max_order)
        .map(|order| {
            let comp = find_dispersion_compensation(
                order,
                &cfg.cavity.dispersion,
                props.linewidth_hz,
                cfg.cavity.max_control_offset,
            )
            .ok();
            let offset = comp.map_or(0.0, |c| c.control_offset);
            let pair = mode_frequencies_retuned(
                props.resonance_hz,
                props.fsr_hz,
                order,
                &cfg.cavity.dispersion,
                offset,
            );
            ModeRow {
                order,
                plus_hz: pair.plus_hz,
                minus_hz: pair.minus_hz,
                control_offset: comp.map(|c| c.control_offset),
                residual_hz: cfg.cavity.dispersion.residual(order, offset),
            }
        })
        .collect();
    Ok(CavityReport {
        fsr_empty_hz,
        fsr_filled_hz,
        index_from_fsr,
        mirror_finesse: mirror.finesse,
        pair_flux_at_p_cav: predict_pair_flux(&props, &cfg.medium, cfg.sim.p_cav, &cfg.conventions),
        n2_from_gamma,
        predicted_car: predict_car(sfwm)?.to_string(),
        absorption_bound,
        props,
        modes,
    })
}

impl CavityReport {
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("fsr_empty_hz", self.fsr_empty_hz.to_string());
        kv("fsr_filled_hz", self.fsr_filled_hz.to_string());
        kv("index_from_fsr", self.index_from_fsr.to_string());
        kv("mirror_finesse", self.mirror_finesse.to_string());
        kv("finesse", self.props.finesse.to_string());
        kv("linewidth_hz", self.props.linewidth_hz.to_string());
        kv("waist_m", self.props.waist.to_string());
        kv("quality", self.props.quality.to_string());
        kv("resonance_hz", self.props.resonance_hz.to_string());
        if let Some(a) = self.absorption_bound {
            kv("absorption_bound_per_m", a.to_string());
        }
        kv("pair_flux_per_s", self.pair_flux_at_p_cav.to_string());
        if let Some(n2) = self.n2_from_gamma {
            kv("n2_from_gamma_m2_per_w", n2.to_string());
        }
        kv("predicted_car", self.predicted_car.clone());
        s
    }

    pub fn write_modes_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "order,plus_hz,minus_hz,control_offset,residual_hz")?;
        for m in &self.modes {
            let offset = m
                .control_offset
                .map_or("uncompensatable".to_string(), |o| o.to_string());
            writeln!(
                out,
                "{},{},{},{},{}",
                m.order, m.plus_hz, m.minus_hz, offset, m.residual_hz
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1b {
    pub up: LineshapeScan,
    pub down: LineshapeScan,
    pub extraction: LineshiftExtraction,
    pub temperature_rise: f64,
}

/// Up and down sweeps of one bistable lineshape and the lineshift of the
/// configured sweep direction.
pub fn fig1b(cfg: &RunConfig) -> Result<Fig1b, PipelineError> {
    let ls = &cfg.lineshape;
    let range = (ls.detuning_min, ls.detuning_max);
    let up = simulate_scan(&ls.params, range, ls.points, SweepDirection::Up)?;
    let down = simulate_scan(&ls.params, range, ls.points, SweepDirection::Down)?;
    let chosen = match ls.direction {
        SweepDirection::Up => &up,
        SweepDirection::Down => &down,
    };
    let extraction = extract_lineshift(chosen, ls.threshold)?;
    let props = cavity_properties(cfg)?;
    Ok(Fig1b {
        temperature_rise: temperature_rise(
            extraction.beta,
            props.quality,
            cfg.medium.thermo_optic,
            cfg.medium.index,
        ),
        up,
        down,
        extraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1c {
    pub points: Vec<LineshiftPoint>,
    /// Lineshift against transmitted power, linewidths/W.
    pub fit_transmitted: LinearFit,
    pub fit_intracavity: LinearFit,
    /// beta_prime / outcoupling.
    pub expected_slope: f64,
}

pub fn fig1c(cfg: &RunConfig) -> Result<Fig1c, PipelineError> {
    let ls = &cfg.lineshape;
    let points = lineshift_series(
        &ls.params,
        &ls.powers,
        (ls.detuning_min, ls.detuning_max),
        ls.points,
        ls.threshold,
    )?;
    let beta: Vec<f64> = points.iter().map(|p| p.extraction.beta).collect();
    let pt: Vec<f64> = points.iter().map(|p| p.p_transmitted).collect();
    let pc: Vec<f64> = points.iter().map(|p| p.p_intracavity).collect();
    Ok(Fig1c {
        fit_transmitted: linear_fit(&pt, &beta),
        fit_intracavity: linear_fit(&pc, &beta),
        expected_slope: ls.params.beta_prime / ls.params.outcoupling,
        points,
    })
}

impl Fig1c {
    pub fn write_csv<W: Write>(&self, out: W) -> io::Result<()> {
        write_lineshift_csv(&self.points, out)
    }
}

pub fn write_lineshift_csv<W: Write>(points: &[LineshiftPoint], mut out: W) -> io::Result<()> {
    writeln!(
        out,
        "p_in,p_transmitted,p_intracavity,beta,left_edge,right_edge"
    )?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{:?},{:?}",
            p.p_in,
            p.p_transmitted,
            p.p_intracavity,
            p.extraction.beta,
            p.extraction.left,
            p.extraction.right
        )?;
    }
    Ok(())
}

/// Per-power scans in the configured sweep direction with the lineshift of
/// each.
#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeRun {
    pub scans: Vec<LineshapeScan>,
    pub points: Vec<LineshiftPoint>,
    pub fit_transmitted: LinearFit,
    pub fit_intracavity: LinearFit,
}

pub fn lineshape_run(cfg: &RunConfig) -> Result<LineshapeRun, PipelineError> {
    let ls = &cfg.lineshape;
    let mut scans = Vec::with_capacity(ls.powers.len());
    let mut points = Vec::with_capacity(ls.powers.len());
    for &p_in in &ls.powers {
        let params = NonlinearLineshapeParams { p_in, ..ls.params };
        let scan = simulate_scan(
            &params,
            (ls.detuning_min, ls.detuning_max),
            ls.points,
            ls.direction,
        )?;
        let extraction = extract_lineshift(&scan, ls.threshold)?;
        points.push(LineshiftPoint {
            p_in,
            p_transmitted: extraction.max_power,
            p_intracavity: extraction.max_power / params.outcoupling,
            extraction,
        });
        scans.push(scan);
    }
    let beta: Vec<f64> = points.iter().map(|p| p.extraction.beta).collect();
    let pt: Vec<f64> = points.iter().map(|p| p.p_transmitted).collect();
    let pc: Vec<f64> = points.iter().map(|p| p.p_intracavity).collect();
    Ok(LineshapeRun {
        fit_transmitted: linear_fit(&pt, &beta),
        fit_intracavity: linear_fit(&pc, &beta),
        scans,
        points,
    })
}

impl LineshapeRun {
    pub fn report(&self) -> String {
        let (t, c) = (self.fit_transmitted, self.fit_intracavity);
        format!(
            "slope_per_transmitted_w={}\nintercept={}\nr_squared={}\nslope_per_intracavity_w={}\nintercept_intracavity={}\n",
            t.slope, t.intercept, t.r_squared, c.slope, c.intercept
        )
    }
}

/// Simulates both channels block by block and correlates them on the fly,
/// so memory stays bounded by one block of tags.
pub fn correlate_simulation(
    sim: &SimConfig,
    binning: Binning,
) -> Result<(CorrelationHistogram, Truth), PipelineError> {
    let mut generator = TagGenerator::new(sim.clone())?;
    let mut correlator = StreamingCorrelator::new(binning);
    while let Some((plus, minus)) = generator.next_chunk() {
        correlator.push(&plus, &minus)?;
    }
    let mut hist = correlator.finish();
    hist.duration = sim.duration;
    Ok((hist, generator.into_truth()))
}

/// Fit, both CAR estimators and the pair rate of one coincidence histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakAnalysis {
    pub fit: LorentzianFit,
    pub car_fit: CarEstimate,
    pub car_binned: CarEstimate,
    pub pair_rate: PairRate,
}

pub fn analyze_peak(
    hist: &CorrelationHistogram,
    cfg: &RunConfig,
) -> Result<PeakAnalysis, PipelineError> {
    let fit = fit_lorentzian_with(hist, None, &cfg.correlator.fit_options())?;
    Ok(PeakAnalysis {
        car_fit: car_from_fit(&fit),
        car_binned: car_binned(hist, fit.center, fit.fwhm)?,
        pair_rate: pair_rate_from_fit(&fit, hist),
        fit,
    })
}

impl PeakAnalysis {
    pub fn selected_car(&self, cfg: &RunConfig) -> CarEstimate {
        match cfg.correlator.car_method {
            crate::correlator::CarMethod::Fit => self.car_fit,
            crate::correlator::CarMethod::Binned => self.car_binned,
        }
    }

    pub fn report(&self, cfg: &RunConfig) -> Report {
        let mut r = Report {
            fit: Some(self.fit),
            car: Some(self.selected_car(cfg)),
            ..Report::default()
        };
        let other = match cfg.correlator.car_method {
            crate::correlator::CarMethod::Fit => self.car_binned,
            crate::correlator::CarMethod::Binned => self.car_fit,
        };
        r.push(&format!("car_{}", other.method), other.value);
        r.push(&format!("car_{}_sigma", other.method), other.sigma);
        r.push("pair_rate_per_s", self.pair_rate.rate);
        r.push("pair_rate_sigma_per_s", self.pair_rate.sigma);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2a {
    pub hist: CorrelationHistogram,
    pub analysis: PeakAnalysis,
    pub truth: Truth,
    pub predicted_car: f64,
}

pub fn fig2a(cfg: &RunConfig) -> Result<Fig2a, PipelineError> {
    let (hist, truth) = correlate_simulation(&cfg.sim, cfg.correlator.binning()?)?;
    let analysis = analyze_peak(&hist, cfg)?;
    Ok(Fig2a {
        predicted_car: predict_car(&cfg.sim.sfwm)?
            .finite()
            .unwrap_or(f64::INFINITY),
        hist,
        analysis,
        truth,
    })
}

impl Fig2a {
    pub fn report(&self, cfg: &RunConfig) -> Report {
        let mut r = self.analysis.report(cfg);
        r.push("predicted_car", self.predicted_car);
        r.push("pairs_detected", self.truth.pairs_detected);
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub p_cav: f64,
    pub seed: u64,
    pub analysis: PeakAnalysis,
    pub true_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerScan {
    pub rows: Vec<ScanRow>,
    pub fit: PowerScanFit,
    pub predicted_car: f64,
    /// Slope of binned CAR against power with its standard error.
    pub car_slope: (f64, f64),
}

/// Seed of scan point `i`: distinct streams for every power.
pub fn scan_seed(base: u64, i: usize) -> u64 {
    base.wrapping_add((i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Pair rate and CAR at every scan power (Fig. 2b and 2c analogs).
pub fn power_scan(cfg: &RunConfig) -> Result<PowerScan, PipelineError> {
    let binning = cfg.correlator.binning()?;
    let rows = cfg
        .scan
        .powers
        .iter()
        .enumerate()
        .map(|(i, &p_cav)| {
            let sim = SimConfig {
                p_cav,
                duration: cfg.scan.duration,
                seed: scan_seed(cfg.sim.seed, i),
                ..cfg.sim.clone()
            };
            let (hist, truth) = correlate_simulation(&sim, binning)?;
            Ok(ScanRow {
                p_cav,
                seed: sim.seed,
                analysis: analyze_peak(&hist, cfg)?,
                true_rate: truth.pairs_detected as f64 / sim.duration,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    let points: Vec<ScanPoint> = rows
        .iter()
        .map(|r| ScanPoint {
            p_cav: r.p_cav,
            rate: r.analysis.pair_rate.rate,
            sigma: r.analysis.pair_rate.sigma,
        })
        .collect();
    let fit = power_scan_fit(&points)?;
    let car_slope = weighted_slope(
        &rows.iter().map(|r| r.p_cav).collect::<Vec<_>>(),
        &rows
            .iter()
            .map(|r| r.analysis.car_binned.value)
            .collect::<Vec<_>>(),
        &rows
            .iter()
            .map(|r| r.analysis.car_binned.sigma)
            .collect::<Vec<_>>(),
    );
    Ok(PowerScan {
        rows,
        fit,
        predicted_car: predict_car(&cfg.sim.sfwm)?
            .finite()
            .unwrap_or(f64::INFINITY),
        car_slope,
    })
}

/// Weighted straight-line slope with standard error.
fn weighted_slope(x: &[f64], y: &[f64], sigma: &[f64]) -> (f64, f64) {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, b)| b * (a - mx).powi(2)).sum();
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(&w)
        .map(|((a, c), b)| b * (a - mx) * (c - my))
        .sum();
    (sxy / sxx, (1.0 / sxx).sqrt())
}

impl PowerScan {
    pub fn write_rates_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "p_cav,pair_rate,pair_rate_sigma,fitted_rate,true_rate")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                r.p_cav,
                r.analysis.pair_rate.rate,
                r.analysis.pair_rate.sigma,
                self.fit.curvature * r.p_cav * r.p_cav,
                r.true_rate
            )?;
        }
        Ok(())
    }

    pub fn write_car_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "p_cav,car_binned,car_binned_sigma,car_fit,car_fit_sigma,predicted_car"
        )?;
        for r in &self.rows {
            let (b, f) = (r.analysis.car_binned, r.analysis.car_fit);
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.p_cav, b.value, b.sigma, f.value, f.sigma, self.predicted_car
            )?;
        }
        Ok(())
    }

    pub fn report(&self) -> Report {
        let mut r = Report {
            scan: Some(self.fit),
            ..Report::default()
        };
        if let Some(s) = self.fit.exponent_sigma {
            r.push("exponent_sigma", s);
        }
        r.push("predicted_car", self.predicted_car);
        r.push("car_slope_per_w", self.car_slope.0);
        r.push("car_slope_sigma_per_w", self.car_slope.1);
        r
    }
}

/// Minimal SVG line and marker chart.
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

pub struct Series {
    pub points: Vec<(f64, f64)>,
    pub errors: Option<Vec<f64>>,
    pub markers: bool,
    pub color: &'static str,
}

impl Series {
    pub fn line(points: Vec<(f64, f64)>, color: &'static str) -> Self {
        Series {
            points,
            errors: None,
            markers: false,
            color,
        }
    }

    pub fn markers(points: Vec<(f64, f64)>, errors: Option<Vec<f64>>, color: &'static str) -> Self {
        Series {
            points,
            errors,
            markers: true,
            color,
        }
    }
}

impl Chart {
    pub fn to_svg(&self) -> String {
        let (w, h, m) = (640.0, 420.0, 60.0);
        let all = self.series.iter().flat_map(|s| {
            s.points.iter().enumerate().map(move |(i, &(x, y))| {
                let e = s.errors.as_ref().map_or(0.0, |e| e[i]);
                (x, y - e, y + e)
            })
        });
        let (mut x0, mut x1, mut y0, mut y1) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for (x, lo, hi) in all {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(lo);
            y1 = y1.max(hi);
        }
        if !(x1 > x0) {
            x1 = x0 + 1.0;
        }
        if !(y1 > y0) {
            y1 = y0 + 1.0;
        }
        let pad = 0.05 * (y1 - y0);
        let (y0, y1) = (y0 - pad, y1 + pad);
        let sx = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
        let sy = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            w - 2.0 * m,
            h - 2.0 * m
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="30" text-anchor="middle" font-size="14">{}</text>"#,
            w / 2.0,
            self.title
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            w / 2.0,
            h - 15.0,
            self.x_label
        );
        let _ = writeln!(
            s,
            r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{}</text>"#,
            h / 2.0,
            h / 2.0,
            self.y_label
        );
        for (v, anchor) in [(x0, "start"), (x1, "end")] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="{anchor}">{v:.3e}</text>"#,
                sx(v),
                h - m + 15.0
            );
        }
        for v in [y0, y1] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{v:.3e}</text>"#,
                m - 4.0,
                sy(v) + 4.0
            );
        }
        for series in &self.series {
            if series.markers {
                for (i, &(x, y)) in series.points.iter().enumerate() {
                    if let Some(e) = &series.errors {
                        let _ = writeln!(
                            s,
                            r#"<line x1="{0:.2}" x2="{0:.2}" y1="{1:.2}" y2="{2:.2}" stroke="{3}"/>"#,
                            sx(x),
                            sy(y - e[i]),
                            sy(y + e[i]),
                            series.color
                        );
                    }
                    let _ = writeln!(
                        s,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
                        sx(x),
                        sy(y),
                        series.color
                    );
                }
            } else {
                let path: Vec<String> = series
                    .points
                    .iter()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                let _ = writeln!(
                    s,
                    r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
                    series.color,
                    path.join(" ")
                );
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

fn write_file(
    dir: &Path,
    name: &str,
    f: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
) -> io::Result<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(dir.join(name), buf)
}

fn scan_points(scan: &LineshapeScan) -> Vec<(f64, f64)> {
    scan.detunings
        .iter()
        .copied()
        .zip(scan.p_out.iter().copied())
        .collect()
}

/// Writes CSVs (and SVGs when enabled) of one figure analog; returns the
/// key=value report.
pub fn reproduce(figure: &str, cfg: &RunConfig, out: &Path) -> Result<String, PipelineError> {
    fs::create_dir_all(out)?;
    let svg = |name: &str, chart: Chart| -> io::Result<()> {
        if cfg.svg {
            fs::write(out.join(name), chart.to_svg())?;
        }
        Ok(())
    };
    let report = match figure {
        "fig1b" => {
            let fig = fig1b(cfg)?;
            write_file(out, "fig1b_up.csv", |w| fig.up.write_csv(w))?;
            write_file(out, "fig1b_down.csv", |w| fig.down.write_csv(w))?;
            svg(
                "fig1b.svg",
                Chart {
                    title: "Bistable lineshape".into(),
                    x_label: "detuning (linewidths)".into(),
                    y_label: "transmitted power (W)".into(),
                    series: vec![
                        Series::line(scan_points(&fig.up), "steelblue"),
                        Series::line(scan_points(&fig.down), "darkorange"),
                    ],
                },
            )?;
            let e = &fig.extraction;
            format!(
                "beta={}\nwidth={}\nleft_edge={:?}\nright_edge={:?}\nmax_power_w={}\ntemperature_rise_k={}\nup_jump={}\ndown_jump={}\n",
                e.beta,
                e.width,
                e.left,
                e.right,
                e.max_power,
                fig.temperature_rise,
                fig.up.jump_detuning().map_or("none".into(), |d| d.to_string()),
                fig.down.jump_detuning().map_or("none".into(), |d| d.to_string()),
            )
        }
        "fig1c" => {
            let fig = fig1c(cfg)?;
            write_file(out, "fig1c.csv", |w| fig.write_csv(w))?;
            let pts: Vec<(f64, f64)> = fig
                .points
                .iter()
                .map(|p| (p.p_transmitted, p.extraction.beta))
                .collect();
            let line = pts
                .iter()
                .map(|&(x, _)| {
                    (
                        x,
                        fig.fit_transmitted.intercept + fig.fit_transmitted.slope * x,
                    )
                })
                .collect();
            svg(
                "fig1c.svg",
                Chart {
                    title: "Lineshift against transmitted power".into(),
                    x_label: "transmitted power (W)".into(),
                    y_label: "lineshift (linewidths)".into(),
                    series: vec![
                        Series::markers(pts, None, "steelblue"),
                        Series::line(line, "black"),
                    ],
                },
            )?;
            let (t, c) = (fig.fit_transmitted, fig.fit_intracavity);
            format!(
                "slope_per_transmitted_w={}\nintercept={}\nr_squared={}\nslope_per_intracavity_w={}\nexpected_slope_per_transmitted_w={}\n",
                t.slope, t.intercept, t.r_squared, c.slope, fig.expected_slope
            )
        }
        "fig2a" => {
            let fig = fig2a(cfg)?;
            write_file(out, "fig2a.csv", |w| fig.hist.write_csv(w))?;
            let base = fig.analysis.fit.baseline.max(1e-12);
            let centers = fig.hist.bin_centers();
            let norm: Vec<(f64, f64)> = centers
                .iter()
                .zip(&fig.hist.counts)
                .map(|(&t, &c)| (t * 1e9, c as f64 / base))
                .collect();
            let model = centers
                .iter()
                .map(|&t| (t * 1e9, fig.analysis.fit.eval(t) / base))
                .collect();
            svg(
                "fig2a.svg",
                Chart {
                    title: "Normalized coincidences".into(),
                    x_label: "delay (ns)".into(),
                    y_label: "coincidences / accidentals".into(),
                    series: vec![
                        Series::line(norm, "steelblue"),
                        Series::line(model, "black"),
                    ],
                },
            )?;
            fig.report(cfg).to_key_values()
        }
        "fig2b" | "fig2c" => {
            let scan = power_scan(cfg)?;
            write_file(out, "fig2b.csv", |w| scan.write_rates_csv(w))?;
            write_file(out, "fig2c.csv", |w| scan.write_car_csv(w))?;
            let rates = scan
                .rows
                .iter()
                .map(|r| (r.p_cav, r.analysis.pair_rate.rate))
                .collect();
            let rate_err = scan
                .rows
                .iter()
                .map(|r| r.analysis.pair_rate.sigma)
                .collect();
            let p_max = scan.rows.iter().map(|r| r.p_cav).fold(0.0, f64::max);
            let curve = (0..=50)
                .map(|i| {
                    let p = p_max * i as f64 / 50.0;
                    (p, scan.fit.curvature * p * p)
                })
                .collect();
            svg(
                "fig2b.svg",
                Chart {
                    title: "Pair rate against pump power".into(),
                    x_label: "intracavity power (W)".into(),
                    y_label: "pair rate (1/s)".into(),
                    series: vec![
                        Series::markers(rates, Some(rate_err), "steelblue"),
                        Series::line(curve, "black"),
                    ],
                },
            )?;
            let cars = scan
                .rows
                .iter()
                .map(|r| (r.p_cav, r.analysis.car_binned.value))
                .collect();
            let car_err = scan
                .rows
                .iter()
                .map(|r| r.analysis.car_binned.sigma)
                .collect();
            let p_min = scan
                .rows
                .iter()
                .map(|r| r.p_cav)
                .fold(f64::INFINITY, f64::min);
            svg(
                "fig2c.svg",
                Chart {
                    title: "CAR against pump power".into(),
                    x_label: "intracavity power (W)".into(),
                    y_label: "CAR".into(),
                    series: vec![
                        Series::markers(cars, Some(car_err), "steelblue"),
                        Series::line(
                            vec![(p_min, scan.predicted_car), (p_max, scan.predicted_car)],
                            "black",
                        ),
                    ],
                },
            )?;
            scan.report().to_key_values()
        }
        other => {
            return Err(PipelineError::Io(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("unknown figure '{other}'"),
            )))
        }
    };
    fs::write(out.join(format!("{figure}_report.txt")), &report)?;
    fs::write(out.join("resolved_config.txt"), cfg.to_config_string())?;
    Ok(report)
}

pub const FIGURES: &[&str] = &["fig1b", "fig1c", "fig2a", "fig2b", "fig2c"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scan_seeds_are_distinct() {
        let seeds: std::collections::HashSet<u64> = (0..64).map(|i| scan_seed(7, i)).collect();
        assert_eq!(seeds.len(), 64);
        assert!(!seeds.contains(&7));
    }

    #[test]
    fn weighted_slope_of_a_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (slope, sigma) = weighted_slope(&x, &y, &[1.0; 4]);
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((sigma - (1.0 / 5.0_f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn svg_has_one_element_per_marker() {
        let chart = Chart {
            title: "t".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            series: vec![
                Series::markers(vec![(0.0, 1.0), (1.0, 2.0)], Some(vec![0.1, 0.2]), "red"),
                Series::line(vec![(0.0, 0.0), (1.0, 1.0)], "black"),
            ],
        };
        let svg = chart.to_svg();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn cavity_report_lists_every_order() {
        let cfg = RunConfig::default();
        let report = cavity_report(&cfg).unwrap();
        assert_eq!(report.modes.len(), cfg.cavity.max_order as usize + 1);
        assert!((report.index_from_fsr - cfg.medium.index).abs() < 1e-12);
        let kv = report.to_key_values();
        assert!(kv.contains("fsr_filled_hz="));
    }

    #[test]
    fn unknown_figure_is_an_error() {
        let dir = std::env::temp_dir().join("microcavity-unknown-figure");
        assert!(reproduce("fig3", &RunConfig::default(), &dir).is_err());
    }
}
