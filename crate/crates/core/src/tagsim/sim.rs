use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Exp, Normal};
use thiserror::Error;

use super::format::TagStream;
use crate::rates::SfwmParams;

const PS_PER_S: f64 = 1e12;
/// Generation proceeds in blocks of this many picoseconds (1 s).
const BLOCK_PS: u64 = 1_000_000_000_000;
/// Cauchy pair delays are truncated to this many FWHM around the cable delay.
pub const DELAY_TRUNCATION: f64 = 100.0;
/// Gaussian jitter is clipped at this many standard deviations.
const JITTER_CLIP: f64 = 10.0;

pub const CHANNEL_PLUS: u8 = 0;
pub const CHANNEL_MINUS: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("expected {expected_bytes} bytes of tags exceed the memory budget of {budget} bytes")]
    MemoryBudget { expected_bytes: u64, budget: u64 },
}

/// Single-photon counting module followed by a time-to-digital converter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorModel {
    /// Gaussian timing jitter, standard deviation, s.
    pub jitter_sigma: f64,
    /// TDC bin, s.
    pub quantization: f64,
    /// Dark counts per second.
    pub dark_rate: f64,
    /// Non-paralyzable dead time, s.
    pub dead_time: f64,
    pub efficiency: f64,
}

impl Default for DetectorModel {
    fn default() -> Self {
        DetectorModel {
            jitter_sigma: 350e-12,
            quantization: 40e-12,
            dark_rate: 0.0,
            dead_time: 0.0,
            efficiency: 1.0,
        }
    }
}

impl DetectorModel {
    pub fn with_efficiency(efficiency: f64) -> Self {
        DetectorModel {
            efficiency,
            ..DetectorModel::default()
        }
    }

    pub fn quantization_ps(&self) -> u32 {
        (self.quantization * PS_PER_S).round() as u32
    }

    fn validate(&self, name: &str) -> Result<(), SimError> {
        let bad = |what: &str| Err(SimError::InvalidConfig(format!("{name} detector: {what}")));
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return bad("jitter must be non-negative");
        }
        if self.quantization_ps() == 0 {
            return bad("quantization must be at least 1 ps");
        }
        if !(self.dark_rate >= 0.0 && self.dead_time >= 0.0) {
            return bad("dark rate and dead time must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return bad("efficiency must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Measurement time, s.
    pub duration: f64,
    /// Intracavity pump power, W.
    pub p_cav: f64,
    pub sfwm: SfwmParams,
    pub det_plus: DetectorModel,
    pub det_minus: DetectorModel,
    /// Mean arrival of the (-) photon relative to the (+) photon, s.
    pub cable_delay: f64,
    pub seed: u64,
    /// `gamma_exp` already counts detected pairs: no efficiency thinning of
    /// pair photons.
    pub pairs_detected: bool,
    /// `gamma_plus`/`gamma_minus` are detected count rates: no efficiency
    /// thinning of background photons.
    pub background_detected: bool,
    pub memory_budget: u64,
    /// Keep the delay of every detected pair in the truth record.
    pub record_pair_delays: bool,
}

impl SimConfig {
    /// Twenty-minute second-order run at 0.58 W intracavity power.
    ///
    /// `tau_c` is the observed coincidence width, which already contains the
    /// detector response, so both detectors are jitter-free here.
    pub fn experiment() -> Self {
        let detector = |efficiency| DetectorModel {
            jitter_sigma: 0.0,
            ..DetectorModel::with_efficiency(efficiency)
        };
        SimConfig {
            duration: 1200.0,
            p_cav: 0.58,
            sfwm: SfwmParams::experiment(),
            det_plus: detector(0.099),
            det_minus: detector(0.072),
            cable_delay: -12e-9,
            seed: 0x5f3a_11c0_ffee_2019,
            pairs_detected: true,
            background_detected: true,
            memory_budget: 2 << 30,
            record_pair_delays: false,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SimError::InvalidConfig(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.p_cav >= 0.0) {
            return Err(SimError::InvalidConfig(
                "pump power must be non-negative".into(),
            ));
        }
        if !self.cable_delay.is_finite() {
            return Err(SimError::InvalidConfig("cable delay must be finite".into()));
        }
        self.sfwm
            .validate()
            .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.det_plus.validate("plus")?;
        self.det_minus.validate("minus")?;
        Ok(())
    }

    /// Pair emission rate before any thinning, 1/s.
    pub fn pair_rate(&self) -> f64 {
        self.sfwm.gamma_exp * self.p_cav * self.p_cav
    }

    fn pair_keep(&self, det: &DetectorModel) -> f64 {
        if self.pairs_detected {
            1.0
        } else {
            det.efficiency
        }
    }

    fn background_keep(&self, det: &DetectorModel) -> f64 {
        if self.background_detected {
            1.0
        } else {
            det.efficiency
        }
    }

    /// Expected (+, -) tag counts before dead-time losses.
    pub fn expected_counts(&self) -> (f64, f64) {
        let pairs = self.pair_rate();
        let channel = |det: &DetectorModel, gamma: f64| {
            (pairs * self.pair_keep(det)
                + gamma * self.p_cav * self.background_keep(det)
                + det.dark_rate)
                * self.duration
        };
        (
            channel(&self.det_plus, self.sfwm.gamma_plus),
            channel(&self.det_minus, self.sfwm.gamma_minus),
        )
    }

    fn duration_ps(&self) -> u64 {
        (self.duration * PS_PER_S).floor() as u64
    }

    /// Largest distance a tag can land from its emission block.
    fn spill_ps(&self) -> u64 {
        let jitter = self.det_plus.jitter_sigma.max(self.det_minus.jitter_sigma) * JITTER_CLIP;
        let delay = self.cable_delay.abs() + DELAY_TRUNCATION * self.sfwm.tau_c;
        let q = self
            .det_plus
            .quantization_ps()
            .max(self.det_minus.quantization_ps()) as f64;
        ((jitter + delay) * PS_PER_S + q).ceil() as u64 + 1
    }
}

/// Ground-truth counters of one channel.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelTruth {
    /// Pair photons that survived thinning.
    pub pair_tags: u64,
    pub background_generated: u64,
    pub background_detected: u64,
    pub dark_counts: u64,
    pub dead_time_losses: u64,
    /// Tags written to the stream.
    pub emitted: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Truth {
    pub pairs_generated: u64,
    /// Pairs with both photons surviving thinning.
    pub pairs_detected: u64,
    pub plus: ChannelTruth,
    pub minus: ChannelTruth,
    /// Quantized (-) minus (+) arrival of each detected pair, ps; filled only
    /// when requested.
    pub pair_delays_ps: Vec<i64>,
}

impl Truth {
    /// key=value sidecar.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: u64| s.push_str(&format!("{k}={v}\n"));
        kv("pairs_generated", self.pairs_generated);
        kv("pairs_detected", self.pairs_detected);
        for (name, c) in [("plus", &self.plus), ("minus", &self.minus)] {
            kv(&format!("{name}.pair_tags"), c.pair_tags);
            kv(
                &format!("{name}.background_generated"),
                c.background_generated,
            );
            kv(
                &format!("{name}.background_detected"),
                c.background_detected,
            );
            kv(&format!("{name}.dark_counts"), c.dark_counts);
            kv(&format!("{name}.dead_time_losses"), c.dead_time_losses);
            kv(&format!("{name}.emitted"), c.emitted);
        }
        s
    }
}

#[derive(Clone, Copy)]
enum Process {
    Pairs = 0,
    BackgroundPlus = 1,
    BackgroundMinus = 2,
    DarkPlus = 3,
    DarkMinus = 4,
}

const PROCESSES: u64 = 8;

/// Per-channel post-processing state: quantization, clamping and dead time.
struct ChannelState {
    quantization: u64,
    max_tag: u64,
    jitter: Option<Normal<f64>>,
    jitter_clip: f64,
    dead_ps: u64,
    last_kept: Option<u64>,
    pending: Vec<u64>,
}

impl ChannelState {
    fn new(det: &DetectorModel, duration_ps: u64) -> Self {
        let quantization = det.quantization_ps() as u64;
        ChannelState {
            quantization,
            max_tag: duration_ps / quantization * quantization,
            jitter: (det.jitter_sigma > 0.0).then(|| Normal::new(0.0, det.jitter_sigma).unwrap()),
            jitter_clip: JITTER_CLIP * det.jitter_sigma,
            dead_ps: (det.dead_time * PS_PER_S).round() as u64,
            last_kept: None,
            pending: Vec::new(),
        }
    }

    /// Converts an arrival time (block start + offset in s) into a tag after
    /// jitter, clamping into the measurement window and flooring to the grid.
    fn tag<R: Rng>(&self, block_start: u64, offset_s: f64, rng: &mut R) -> u64 {
        let mut off = offset_s;
        if let Some(n) = &self.jitter {
            off += n.sample(rng).clamp(-self.jitter_clip, self.jitter_clip);
        }
        let t = block_start as i128 + (off * PS_PER_S).floor() as i128;
        let t = t.clamp(0, self.max_tag as i128) as u64;
        t / self.quantization * self.quantization
    }

    /// Sorts pending tags and releases those before `cutoff` through the
    /// dead-time filter.
    fn release(&mut self, cutoff: u64, out: &mut Vec<u64>, truth: &mut ChannelTruth) {
        self.pending.sort_unstable();
        let n = self.pending.partition_point(|&t| t < cutoff);
        for t in self.pending.drain(..n) {
            let keep = match self.last_kept {
                Some(last) if self.dead_ps > 0 => t - last >= self.dead_ps,
                _ => true,
            };
            if keep {
                out.push(t);
                self.last_kept = Some(t);
                truth.emitted += 1;
            } else {
                truth.dead_time_losses += 1;
            }
        }
    }
}

/// Block-wise generator of the two tag streams.
///
/// Every 1 s block draws from its own ChaCha streams keyed by block index and
/// process, so the output depends only on the configuration. Chunks are
/// released in global time order: concatenating all chunks of a channel gives
/// exactly the sorted stream.
pub struct TagGenerator {
    cfg: SimConfig,
    duration_ps: u64,
    spill_ps: u64,
    next_block: u64,
    n_blocks: u64,
    plus: ChannelState,
    minus: ChannelState,
    truth: Truth,
    delay: Cauchy<f64>,
    delay_bounds: (f64, f64),
}

impl TagGenerator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let duration_ps = cfg.duration_ps();
        let half_width = cfg.sfwm.tau_c / 2.0;
        Ok(TagGenerator {
            duration_ps,
            spill_ps: cfg.spill_ps(),
            next_block: 0,
            n_blocks: duration_ps.div_ceil(BLOCK_PS).max(1),
            plus: ChannelState::new(&cfg.det_plus, duration_ps),
            minus: ChannelState::new(&cfg.det_minus, duration_ps),
            truth: Truth::default(),
            delay: Cauchy::new(cfg.cable_delay, half_width).unwrap(),
            delay_bounds: (
                cfg.cable_delay - DELAY_TRUNCATION * cfg.sfwm.tau_c,
                cfg.cable_delay + DELAY_TRUNCATION * cfg.sfwm.tau_c,
            ),
            cfg,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn truth(&self) -> &Truth {
        &self.truth
    }

    pub fn into_truth(self) -> Truth {
        self.truth
    }

    fn rng(&self, block: u64, process: Process) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(block * PROCESSES + process as u64);
        rng
    }

    fn sample_delay<R: Rng>(&self, rng: &mut R) -> f64 {
        let (lo, hi) = self.delay_bounds;
        loop {
            let d = self.delay.sample(rng);
            if (lo..=hi).contains(&d) {
                return d;
            }
        }
    }

    /// Arrival offsets (s, relative to `start`) of a Poisson process.
    fn poisson_offsets<R: Rng>(rate: f64, len_s: f64, rng: &mut R) -> Vec<f64> {
        if !(rate > 0.0) {
            return Vec::new();
        }
        let exp = Exp::new(rate).unwrap();
        let mut out = Vec::with_capacity((rate * len_s * 1.1) as usize + 8);
        let mut t = exp.sample(rng);
        while t < len_s {
            out.push(t);
            t += exp.sample(rng);
        }
        out
    }

    fn generate_block(&mut self, block: u64) {
        let start = block * BLOCK_PS;
        let end = ((block + 1) * BLOCK_PS).min(self.duration_ps);
        let len_s = (end - start) as f64 / PS_PER_S;
        let cfg = &self.cfg;

        // correlated pairs
        let mut rng = self.rng(block, Process::Pairs);
        let keep_plus = cfg.pair_keep(&cfg.det_plus);
        let keep_minus = cfg.pair_keep(&cfg.det_minus);
        let emissions = Self::poisson_offsets(cfg.pair_rate(), len_s, &mut rng);
        self.truth.pairs_generated += emissions.len() as u64;
        for t in emissions {
            let delay = self.sample_delay(&mut rng);
            let has_plus = keep_plus >= 1.0 || rng.random::<f64>() < keep_plus;
            let has_minus = keep_minus >= 1.0 || rng.random::<f64>() < keep_minus;
            let tag_plus = has_plus.then(|| self.plus.tag(start, t, &mut rng));
            let tag_minus = has_minus.then(|| self.minus.tag(start, t + delay, &mut rng));
            if let Some(tp) = tag_plus {
                self.plus.pending.push(tp);
                self.truth.plus.pair_tags += 1;
            }
            if let Some(tm) = tag_minus {
                self.minus.pending.push(tm);
                self.truth.minus.pair_tags += 1;
            }
            if let (Some(tp), Some(tm)) = (tag_plus, tag_minus) {
                self.truth.pairs_detected += 1;
                if cfg.record_pair_delays {
                    self.truth.pair_delays_ps.push(tm as i64 - tp as i64);
                }
            }
        }

        // uncorrelated background and dark counts
        for (bg, dark, is_plus) in [
            (Process::BackgroundPlus, Process::DarkPlus, true),
            (Process::BackgroundMinus, Process::DarkMinus, false),
        ] {
            let (det, gamma) = if is_plus {
                (&cfg.det_plus, cfg.sfwm.gamma_plus)
            } else {
                (&cfg.det_minus, cfg.sfwm.gamma_minus)
            };
            let keep = cfg.background_keep(det);
            let mut rng = self.rng(block, bg);
            let offsets = Self::poisson_offsets(gamma * cfg.p_cav, len_s, &mut rng);
            let mut rng_dark = self.rng(block, dark);
            let darks = Self::poisson_offsets(det.dark_rate, len_s, &mut rng_dark);

            let (state, truth) = if is_plus {
                (&mut self.plus, &mut self.truth.plus)
            } else {
                (&mut self.minus, &mut self.truth.minus)
            };
            truth.background_generated += offsets.len() as u64;
            for t in offsets {
                if keep >= 1.0 || rng.random::<f64>() < keep {
                    let tag = state.tag(start, t, &mut rng);
                    state.pending.push(tag);
                    truth.background_detected += 1;
                }
            }
            truth.dark_counts += darks.len() as u64;
            for t in darks {
                let tag = state.tag(start, t, &mut rng_dark);
                state.pending.push(tag);
            }
        }
    }

    /// Generates the next block and returns the tags of both channels that
    /// can no longer be preceded by later blocks. `None` once exhausted.
    pub fn next_chunk(&mut self) -> Option<(Vec<u64>, Vec<u64>)> {
        if self.next_block >= self.n_blocks {
            return None;
        }
        let block = self.next_block;
        self.next_block += 1;
        self.generate_block(block);

        let cutoff = if self.next_block >= self.n_blocks {
            u64::MAX
        } else {
            (self.next_block * BLOCK_PS).saturating_sub(self.spill_ps)
        };
        let mut plus = Vec::new();
        let mut minus = Vec::new();
        self.plus.release(cutoff, &mut plus, &mut self.truth.plus);
        self.minus
            .release(cutoff, &mut minus, &mut self.truth.minus);
        Some((plus, minus))
    }
}

/// Simulates both channels in full.
pub fn simulate_stream(cfg: &SimConfig) -> Result<(TagStream, TagStream, Truth), SimError> {
    cfg.validate()?;
    let (n_plus, n_minus) = cfg.expected_counts();
    let expected_bytes = ((n_plus + n_minus) * 8.0).ceil() as u64;
    if expected_bytes > cfg.memory_budget {
        return Err(SimError::MemoryBudget {
            expected_bytes,
            budget: cfg.memory_budget,
        });
    }
    let mut plus = TagStream::new(CHANNEL_PLUS, cfg.det_plus.quantization_ps());
    let mut minus = TagStream::new(CHANNEL_MINUS, cfg.det_minus.quantization_ps());
    plus.tags.reserve((n_plus * 1.01) as usize + 16);
    minus.tags.reserve((n_minus * 1.01) as usize + 16);
    let mut generator = TagGenerator::new(cfg.clone())?;
    while let Some((p, m)) = generator.next_chunk() {
        plus.tags.extend_from_slice(&p);
        minus.tags.extend_from_slice(&m);
    }
    Ok((plus, minus, generator.into_truth()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(duration: f64, p_cav: f64) -> SimConfig {
        SimConfig {
            duration,
            p_cav,
            ..SimConfig::experiment()
        }
    }

    #[test]
    fn dark_and_unpumped_gives_empty_streams() {
        let (p, m, truth) = simulate_stream(&quick(10.0, 0.0)).unwrap();
        assert!(p.is_empty() && m.is_empty());
        assert_eq!(truth.pairs_generated, 0);
    }

    #[test]
    fn streams_are_sorted_and_on_grid() {
        let cfg = SimConfig {
            det_plus: DetectorModel {
                dark_rate: 50.0,
                ..SimConfig::experiment().det_plus
            },
            ..quick(5.5, 0.58)
        };
        let (p, m, truth) = simulate_stream(&cfg).unwrap();
        p.validate().unwrap();
        m.validate().unwrap();
        let max = (5.5e12 as u64) / 40 * 40;
        assert!(p.tags.iter().chain(&m.tags).all(|&t| t <= max));
        assert_eq!(truth.plus.emitted as usize, p.len());
        assert_eq!(truth.minus.emitted as usize, m.len());
        assert!(truth.plus.dark_counts > 0);
        assert_eq!(
            truth.plus.emitted,
            truth.plus.pair_tags + truth.plus.background_detected + truth.plus.dark_counts
        );
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let cfg = quick(3.0, 0.58);
        let a = simulate_stream(&cfg).unwrap();
        let b = simulate_stream(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_stream(&SimConfig {
            seed: cfg.seed + 1,
            ..cfg
        })
        .unwrap();
        assert_ne!(a.0.tags, c.0.tags);
    }

    #[test]
    fn chunks_concatenate_to_sorted_stream() {
        let cfg = SimConfig {
            cable_delay: -300e-3,
            ..quick(4.2, 0.58)
        };
        let mut generator = TagGenerator::new(cfg.clone()).unwrap();
        let mut all_plus = Vec::new();
        let mut last_chunk_max = 0;
        while let Some((p, _)) = generator.next_chunk() {
            if let Some(&first) = p.first() {
                assert!(first >= last_chunk_max);
                last_chunk_max = *p.last().unwrap();
            }
            all_plus.extend(p);
        }
        let (p, _, _) = simulate_stream(&cfg).unwrap();
        assert_eq!(all_plus, p.tags);
    }

    #[test]
    fn dead_time_enforces_minimum_spacing() {
        let det = DetectorModel {
            dead_time: 22e-6,
            ..DetectorModel::default()
        };
        let cfg = SimConfig {
            det_plus: det,
            det_minus: det,
            ..quick(2.0, 0.58)
        };
        let (p, _, truth) = simulate_stream(&cfg).unwrap();
        assert!(p.tags.windows(2).all(|w| w[1] - w[0] >= 22_000_000));
        // ~8300/s * 22 us ~ 17% of tags fall into a dead interval
        assert!(truth.plus.dead_time_losses > 0);
    }

    #[test]
    fn memory_budget_is_enforced() {
        let cfg = SimConfig {
            memory_budget: 1024,
            ..quick(10.0, 0.58)
        };
        assert!(matches!(
            simulate_stream(&cfg),
            Err(SimError::MemoryBudget { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(simulate_stream(&quick(0.0, 0.5)).is_err());
        assert!(simulate_stream(&quick(1.0, -0.5)).is_err());
        let cfg = SimConfig {
            det_plus: DetectorModel {
                efficiency: 1.5,
                ..DetectorModel::default()
            },
            ..quick(1.0, 0.5)
        };
        assert!(simulate_stream(&cfg).is_err());
    }

    #[test]
    fn truth_sidecar_lists_counters() {
        let (_, _, truth) = simulate_stream(&quick(1.0, 0.58)).unwrap();
        let kv = truth.to_key_values();
        assert!(kv.contains(&format!("pairs_generated={}\n", truth.pairs_generated)));
        assert!(kv.contains("minus.emitted="));
    }
}
