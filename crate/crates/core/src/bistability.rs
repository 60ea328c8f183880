//! Power-shifted Lorentzian lineshape of a cavity with an intensity-dependent
//! round-trip phase (thermal or Kerr), its steady states, adiabatic frequency
//! scans with hysteresis, lineshift extraction and the thermal estimate.
//!
//! The transmitted power obeys
//!
//! ```text
//! P_out / P_in = 1 / ((delta - beta' P_cav)^2 + 1),   P_cav = P_out / eta
//! ```
//!
//! with `delta` in natural linewidths. Writing `u = beta' P_out / eta` (the
//! lineshift in linewidths) turns this into the cubic
//! `u ((delta - u)^2 + 1) = a` with `a = beta' P_in / eta`.

use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

use thiserror::Error;

/// Cusp of the steady-state cubic: three real roots exist for some detuning
/// iff `|a| > 8 / (3 sqrt 3)`.
pub const CUSP_SHIFT: f64 = 1.539_600_717_839_002; // 8 / (3 * sqrt(3))

const ROOT_MERGE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LineshapeError {
    #[error("outcoupling ratio must lie in (0, 1], got {0}")]
    Outcoupling(f64),
    #[error("a scan needs at least two points, got {0}")]
    TooFewPoints(usize),
    #[error("detuning range must be increasing and finite, got [{0}, {1}]")]
    Range(f64, f64),
    #[error("scan is empty or has no positive amplitude")]
    EmptyScan,
    #[error("no point of the scan exceeds the threshold")]
    NoCrossing,
    #[error("threshold must lie in (0, 1), got {0}")]
    Threshold(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearLineshapeParams {
    /// Lineshift per watt of intracavity power, in natural linewidths / W.
    pub beta_prime: f64,
    /// P_out / P_cav.
    pub outcoupling: f64,
    /// On-resonance transmitted power of the linear cavity, W.
    pub p_in: f64,
}

impl NonlinearLineshapeParams {
    pub fn validate(&self) -> Result<(), LineshapeError> {
        if !(self.outcoupling > 0.0 && self.outcoupling <= 1.0) {
            return Err(LineshapeError::Outcoupling(self.outcoupling));
        }
        Ok(())
    }

    /// Lineshift per watt of transmitted power, beta' / eta.
    pub fn shift_per_output_watt(&self) -> f64 {
        self.beta_prime / self.outcoupling
    }

    /// Lineshift at the peak of the shifted resonance, in linewidths.
    pub fn peak_shift(&self) -> f64 {
        self.shift_per_output_watt() * self.p_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Unstable,
    /// Double root at a fold.
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyState {
    pub p_out: f64,
    pub stability: Stability,
}

/// All real roots of `u^3 - 2 d u^2 + (d^2 + 1) u - a = 0`, ascending, with
/// double roots merged. Roots are polished by Newton iteration.
fn normalized_roots(delta: f64, a: f64) -> Vec<f64> {
    if a == 0.0 {
        return vec![0.0];
    }
    let b = -2.0 * delta;
    let c = delta * delta + 1.0;
    let d = -a;
    // depressed cubic t^3 + p t + q with u = t - b/3
    let shift = -b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;

    let mut roots: Vec<f64> = if disc < 0.0 {
        let r = (-p / 3.0).sqrt();
        let phi = (-q / (2.0 * r * r * r)).clamp(-1.0, 1.0).acos();
        (0..3)
            .map(|k| 2.0 * r * ((phi - 2.0 * PI * k as f64) / 3.0).cos() + shift)
            .collect()
    } else {
        let s = disc.sqrt();
        let big = -(q.signum()) * (q.abs() / 2.0 + s).cbrt();
        let t = if big != 0.0 {
            big - p / (3.0 * big)
        } else {
            0.0
        };
        vec![t + shift]
    };

    for u in roots.iter_mut() {
        *u = polish(*u, delta, a);
    }
    roots.sort_by(|x, y| x.total_cmp(y));
    roots.dedup_by(|x, y| (*x - *y).abs() <= ROOT_MERGE_TOL * x.abs().max(y.abs()).max(1.0));
    roots
}

fn cubic(u: f64, delta: f64) -> f64 {
    let s = delta - u;
    u * (s * s + 1.0)
}

fn cubic_slope(u: f64, delta: f64) -> f64 {
    3.0 * u * u - 4.0 * delta * u + delta * delta + 1.0
}

fn polish(mut u: f64, delta: f64, a: f64) -> f64 {
    for _ in 0..8 {
        let f = cubic(u, delta) - a;
        let df = cubic_slope(u, delta);
        if df == 0.0 {
            break;
        }
        let step = f / df;
        let next = u - step;
        // never let Newton make the residual worse near a fold
        if (cubic(next, delta) - a).abs() > f.abs() {
            break;
        }
        u = next;
        if step.abs() <= 1e-15 * u.abs().max(1e-300) {
            break;
        }
    }
    u
}

/// Discriminant of the normalized cubic as a function of detuning. Positive
/// where three distinct steady states exist.
pub fn discriminant(delta: f64, a: f64) -> f64 {
    let c = delta * delta + 1.0;
    -4.0 * c * c + 4.0 * a * delta.powi(3) + 36.0 * a * delta - 27.0 * a * a
}

/// Steady-state transmitted powers at a detuning, ascending. The middle root
/// of three is unstable.
pub fn steady_states(delta: f64, params: &NonlinearLineshapeParams) -> Vec<SteadyState> {
    let k = params.shift_per_output_watt();
    if k == 0.0 || params.p_in == 0.0 {
        return vec![SteadyState {
            p_out: params.p_in / (delta * delta + 1.0),
            stability: Stability::Stable,
        }];
    }
    let a = k * params.p_in;
    let roots = normalized_roots(delta, a);
    let merged = roots.len() == 2;
    let mut states: Vec<SteadyState> = roots
        .into_iter()
        .map(|u| {
            let slope = cubic_slope(u, delta);
            let scale = delta * delta + 1.0;
            let stability = if merged && slope.abs() <= 1e-6 * scale {
                Stability::Marginal
            } else if slope > 0.0 {
                Stability::Stable
            } else {
                Stability::Unstable
            };
            SteadyState {
                p_out: u / k,
                stability,
            }
        })
        .collect();
    if states.len() == 3 {
        // the middle branch has negative slope even when rounding blurs it
        states[1].stability = Stability::Unstable;
        states[0].stability = Stability::Stable;
        states[2].stability = Stability::Stable;
    }
    states.sort_by(|x, y| x.p_out.total_cmp(&y.p_out));
    states
}

/// Relative residual of the implicit lineshape equation for a candidate
/// transmitted power.
pub fn lineshape_residual(delta: f64, p_out: f64, params: &NonlinearLineshapeParams) -> f64 {
    let s = delta - params.beta_prime * p_out / params.outcoupling;
    (p_out * (s * s + 1.0) - params.p_in).abs() / params.p_in.abs().max(f64::MIN_POSITIVE)
}

/// True iff some detuning admits three steady states.
pub fn detect_bistability(params: &NonlinearLineshapeParams) -> bool {
    params.peak_shift().abs() > CUSP_SHIFT
}

/// Detuning interval bounded by the two folds, if the cavity is bistable.
pub fn bistable_range(params: &NonlinearLineshapeParams) -> Option<(f64, f64)> {
    if !detect_bistability(params) {
        return None;
    }
    let a = params.peak_shift();
    let mag = a.abs();
    // for a > 0 the discriminant is positive only on (sqrt 3, a + 9/sqrt 3)
    let hi_bound = mag + 6.0;
    let n = 8192;
    let step = hi_bound / n as f64;
    let mut crossings = Vec::with_capacity(2);
    let mut prev = discriminant(0.0, mag);
    for i in 1..=n {
        let x = i as f64 * step;
        let cur = discriminant(x, mag);
        if (prev > 0.0) != (cur > 0.0) {
            crossings.push(bisect(|d| discriminant(d, mag), x - step, x));
        }
        prev = cur;
    }
    if crossings.len() < 2 {
        return None;
    }
    let (lo, hi) = (crossings[0], crossings[crossings.len() - 1]);
    if a > 0.0 {
        Some((lo, hi))
    } else {
        Some((-hi, -lo))
    }
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if (f(mid) > 0.0) == flo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    Up,
    Down,
}

impl SweepDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepDirection::Up => "up",
            SweepDirection::Down => "down",
        }
    }
}

impl std::str::FromStr for SweepDirection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(SweepDirection::Up),
            "down" => Ok(SweepDirection::Down),
            other => Err(format!("expected up or down, got {other:?}")),
        }
    }
}

/// Which stable branch a scan point sits on. Scans only ever occupy stable
/// steady states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// Only one steady state exists.
    Single,
    /// Bistable detuning, high-power branch.
    Upper,
    /// Bistable detuning, low-power branch.
    Lower,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Single => "single",
            Branch::Upper => "upper",
            Branch::Lower => "lower",
        })
    }
}

impl std::str::FromStr for Branch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Branch::Single),
            "upper" => Ok(Branch::Upper),
            "lower" => Ok(Branch::Lower),
            other => Err(format!("unknown branch {other:?}")),
        }
    }
}

/// Transmitted power along a detuning sweep, in sweep order.
#[derive(Debug, Clone, PartialEq)]
pub struct LineshapeScan {
    pub detunings: Vec<f64>,
    pub p_out: Vec<f64>,
    pub direction: SweepDirection,
    pub branches: Vec<Branch>,
}

impl LineshapeScan {
    pub fn len(&self) -> usize {
        self.detunings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detunings.is_empty()
    }

    pub fn max_power(&self) -> f64 {
        self.p_out.iter().copied().fold(0.0, f64::max)
    }

    /// Detuning of the discontinuous drop or rise where the sweep leaves the
    /// bistable region, halfway between the two points around it.
    pub fn jump_detuning(&self) -> Option<f64> {
        self.branches
            .windows(2)
            .position(|w| w[0] != Branch::Single && w[1] == Branch::Single)
            .map(|i| 0.5 * (self.detunings[i] + self.detunings[i + 1]))
    }

    /// Detuning of the highest transmitted power.
    pub fn peak_detuning(&self) -> Option<f64> {
        self.p_out
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .map(|(i, _)| self.detunings[i])
    }

    /// Points reordered by ascending detuning.
    fn ascending(&self) -> (Vec<f64>, Vec<f64>, Vec<Branch>) {
        let mut d = self.detunings.clone();
        let mut p = self.p_out.clone();
        let mut b = self.branches.clone();
        if d.len() > 1 && d[0] > d[d.len() - 1] {
            d.reverse();
            p.reverse();
            b.reverse();
        }
        (d, p, b)
    }

    /// CSV with columns detuning, p_out, branch, direction.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "detuning,p_out,branch,direction")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{},{},{},{}",
                self.detunings[i],
                self.p_out[i],
                self.branches[i],
                self.direction.as_str()
            )?;
        }
        Ok(())
    }
}

/// Adiabatic sweep over `range` (linewidth units). At each detuning the
/// stable steady state nearest to the previous output is taken; at a fold the
/// scan drops onto the remaining stable branch.
pub fn simulate_scan(
    params: &NonlinearLineshapeParams,
    range: (f64, f64),
    n_points: usize,
    direction: SweepDirection,
) -> Result<LineshapeScan, LineshapeError> {
    params.validate()?;
    if n_points < 2 {
        return Err(LineshapeError::TooFewPoints(n_points));
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(LineshapeError::Range(lo, hi));
    }
    let step = (hi - lo) / (n_points - 1) as f64;
    let detunings: Vec<f64> = (0..n_points)
        .map(|i| match direction {
            SweepDirection::Up => lo + step * i as f64,
            SweepDirection::Down => hi - step * i as f64,
        })
        .collect();

    let mut p_out = Vec::with_capacity(n_points);
    let mut branches = Vec::with_capacity(n_points);
    let mut previous: Option<f64> = None;
    for &delta in &detunings {
        let stable: Vec<f64> = steady_states(delta, params)
            .into_iter()
            .filter(|s| s.stability != Stability::Unstable)
            .map(|s| s.p_out)
            .collect();
        // sweeps start far from resonance, on the low intracavity power state
        let chosen = match previous {
            None => *stable
                .iter()
                .min_by(|x, y| x.abs().total_cmp(&y.abs()))
                .expect("at least one steady state"),
            Some(prev) => *stable
                .iter()
                .min_by(|x, y| (*x - prev).abs().total_cmp(&(*y - prev).abs()))
                .expect("at least one steady state"),
        };
        let branch = if stable.len() < 2 {
            Branch::Single
        } else if chosen == stable[stable.len() - 1] {
            Branch::Upper
        } else {
            Branch::Lower
        };
        p_out.push(chosen);
        branches.push(branch);
        previous = Some(chosen);
    }

    Ok(LineshapeScan {
        detunings,
        p_out,
        direction,
        branches,
    })
}

/// Full width of the linear Lorentzian above `threshold` of its peak, in
/// linewidths: 2 sqrt(1/threshold - 1).
pub fn linear_threshold_width(threshold: f64) -> f64 {
    2.0 * (1.0 / threshold - 1.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeKind {
    /// The threshold is crossed on a Lorentzian flank.
    Flank,
    /// The scan leaves the threshold interval by jumping off a fold.
    Fold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineshiftExtraction {
    /// Lineshift in natural linewidths.
    pub beta: f64,
    /// Width of the interval above threshold, linewidths.
    pub width: f64,
    /// `width` minus the width of the linear Lorentzian at the same threshold.
    pub excess_width: f64,
    pub left: EdgeKind,
    pub right: EdgeKind,
    /// Highest transmitted power of the scan, W.
    pub max_power: f64,
}

/// Lineshift from the endpoints of the interval where the transmission
/// exceeds `threshold` times its maximum.
///
/// A flank crossing sits where the transmission is `threshold` of the peak,
/// so it is itself shifted by `threshold * beta`; a fold edge sits at the
/// fully shifted resonance. With one fold edge the lineshift follows as
/// `(width - w/2) / (1 - threshold)` where `w` is the linear threshold
/// width. With two flank edges the width carries no lineshift information
/// and the excess width over the linear Lorentzian (zero up to grid
/// resolution) is returned.
pub fn extract_lineshift(
    scan: &LineshapeScan,
    threshold: f64,
) -> Result<LineshiftExtraction, LineshapeError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(LineshapeError::Threshold(threshold));
    }
    let max_power = scan.max_power();
    if scan.is_empty() || !(max_power > 0.0) {
        return Err(LineshapeError::EmptyScan);
    }
    let (d, p, b) = scan.ascending();
    let level = threshold * max_power;
    let first = p
        .iter()
        .position(|&x| x > level)
        .ok_or(LineshapeError::NoCrossing)?;
    let last = p
        .iter()
        .rposition(|&x| x > level)
        .ok_or(LineshapeError::NoCrossing)?;

    let is_fold = |inside: usize, outside: usize| b[inside] != b[outside];
    let crossing = |inside: usize, outside: usize| -> f64 {
        let t = (p[inside] - level) / (p[inside] - p[outside]);
        d[inside] + t * (d[outside] - d[inside])
    };

    let (left_pos, left) = if first == 0 {
        (d[0], EdgeKind::Flank)
    } else if is_fold(first, first - 1) && p[first] > 0.5 * max_power {
        (0.5 * (d[first] + d[first - 1]), EdgeKind::Fold)
    } else {
        (crossing(first, first - 1), EdgeKind::Flank)
    };
    let (right_pos, right) = if last + 1 == d.len() {
        (d[last], EdgeKind::Flank)
    } else if is_fold(last, last + 1) && p[last] > 0.5 * max_power {
        (0.5 * (d[last] + d[last + 1]), EdgeKind::Fold)
    } else {
        (crossing(last, last + 1), EdgeKind::Flank)
    };

    let width = right_pos - left_pos;
    let linear = linear_threshold_width(threshold);
    let excess_width = width - linear;
    let beta = match (left, right) {
        (EdgeKind::Flank, EdgeKind::Fold) => (width - linear / 2.0) / (1.0 - threshold),
        (EdgeKind::Fold, EdgeKind::Flank) => -(width - linear / 2.0) / (1.0 - threshold),
        _ => excess_width,
    };
    Ok(LineshiftExtraction {
        beta,
        width,
        excess_width,
        left,
        right,
        max_power,
    })
}

/// Temperature rise from a lineshift: |beta| n / (Q |C_TO|), K.
pub fn temperature_rise(beta: f64, quality: f64, thermo_optic: f64, index: f64) -> f64 {
    beta.abs() * index / (quality * thermo_optic.abs())
}

/// Lineshift magnitude that corresponds to a temperature rise.
pub fn lineshift_for_temperature(delta_t: f64, quality: f64, thermo_optic: f64, index: f64) -> f64 {
    delta_t.abs() * quality * thermo_optic.abs() / index
}

/// Least-squares straight line with coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    LinearFit {
        slope,
        intercept,
        r_squared,
    }
}

/// One point of a lineshift-versus-power series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineshiftPoint {
    pub p_in: f64,
    /// Maximum transmitted power of the scan, W.
    pub p_transmitted: f64,
    /// Intracavity power at the transmission maximum, W.
    pub p_intracavity: f64,
    pub extraction: LineshiftExtraction,
}

/// Up-sweeps at each input power and the extracted lineshift of each.
pub fn lineshift_series(
    base: &NonlinearLineshapeParams,
    powers: &[f64],
    range: (f64, f64),
    n_points: usize,
    threshold: f64,
) -> Result<Vec<LineshiftPoint>, LineshapeError> {
    powers
        .iter()
        .map(|&p_in| {
            let params = NonlinearLineshapeParams { p_in, ..*base };
            let scan = simulate_scan(&params, range, n_points, SweepDirection::Up)?;
            let extraction = extract_lineshift(&scan, threshold)?;
            Ok(LineshiftPoint {
                p_in,
                p_transmitted: extraction.max_power,
                p_intracavity: extraction.max_power / base.outcoupling,
                extraction,
            })
        })
        .collect()
}
