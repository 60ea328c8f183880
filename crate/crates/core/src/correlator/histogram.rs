use std::io::{self, Write};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CorrelatorError {
    #[error("bin width must be a positive number of picoseconds")]
    ZeroBinWidth,
    #[error("window {window_ps} ps is smaller than the bin width {bin_width_ps} ps")]
    WindowTooSmall { bin_width_ps: u64, window_ps: u64 },
    #[error("stream {stream} is not time-sorted at index {index} ({previous} > {value})")]
    Unsorted {
        stream: char,
        index: usize,
        previous: u64,
        value: u64,
    },
    #[error("a stream cannot be correlated with itself")]
    SameStream,
}

/// Bin layout: `2·half_bins + 1` half-open bins of width `bin_width_ps`, the
/// middle one centred on zero delay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Binning {
    pub bin_width_ps: u64,
    pub half_bins: u64,
}

impl Binning {
    /// Rounds `window / bin_width` to the nearest whole number of bins on
    /// each side.
    pub fn new(bin_width_ps: u64, window_ps: u64) -> Result<Self, CorrelatorError> {
        if bin_width_ps == 0 {
            return Err(CorrelatorError::ZeroBinWidth);
        }
        if window_ps < bin_width_ps {
            return Err(CorrelatorError::WindowTooSmall {
                bin_width_ps,
                window_ps,
            });
        }
        let half_bins = (window_ps + bin_width_ps / 2) / bin_width_ps;
        Ok(Binning {
            bin_width_ps,
            half_bins,
        })
    }

    /// From seconds, rounded to whole picoseconds.
    pub fn from_seconds(bin_width: f64, window: f64) -> Result<Self, CorrelatorError> {
        if !(bin_width > 0.0 && window > 0.0) {
            return Err(CorrelatorError::ZeroBinWidth);
        }
        Self::new(
            (bin_width * 1e12).round() as u64,
            (window * 1e12).round() as u64,
        )
    }

    pub fn n_bins(&self) -> usize {
        (2 * self.half_bins + 1) as usize
    }

    /// Twice the outer edge, ps; delays `d` with `|2d| < edge2` or
    /// `2d == -edge2` are binned.
    fn edge2(&self) -> i64 {
        ((2 * self.half_bins + 1) * self.bin_width_ps) as i64
    }

    /// Bin of delay `d` (ps), or `None` outside the window.
    #[inline]
    pub fn index(&self, d: i64) -> Option<usize> {
        let e = self.edge2();
        let x = 2 * d + e;
        if x < 0 || x >= 2 * e {
            return None;
        }
        Some((x / (2 * self.bin_width_ps as i64)) as usize)
    }

    pub fn center_ps(&self, j: usize) -> i64 {
        (j as i64 - self.half_bins as i64) * self.bin_width_ps as i64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationHistogram {
    pub binning: Binning,
    pub counts: Vec<u64>,
    pub n_a: u64,
    pub n_b: u64,
    /// Measurement time, s.
    pub duration: f64,
}

impl CorrelationHistogram {
    pub fn empty(binning: Binning) -> Self {
        CorrelationHistogram {
            binning,
            counts: vec![0; binning.n_bins()],
            n_a: 0,
            n_b: 0,
            duration: 0.0,
        }
    }

    pub fn bin_width(&self) -> f64 {
        self.binning.bin_width_ps as f64 * 1e-12
    }

    /// Half range covered, s.
    pub fn window(&self) -> f64 {
        (self.binning.half_bins as f64 + 0.5) * self.bin_width()
    }

    pub fn bin_centers_ps(&self) -> Vec<i64> {
        (0..self.counts.len())
            .map(|j| self.binning.center_ps(j))
            .collect()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        (0..self.counts.len())
            .map(|j| self.binning.center_ps(j) as f64 * 1e-12)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Accidental counts per bin expected for uncorrelated streams.
    pub fn accidental_level(&self) -> f64 {
        if self.duration <= 0.0 {
            return 0.0;
        }
        self.n_a as f64 * self.n_b as f64 * self.bin_width() / self.duration
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "bin_center_ps,counts")?;
        for (j, c) in self.counts.iter().enumerate() {
            writeln!(out, "{},{}", self.binning.center_ps(j), c)?;
        }
        Ok(())
    }

    fn merge(&mut self, other: &CorrelationHistogram) {
        for (c, o) in self.counts.iter_mut().zip(&other.counts) {
            *c += o;
        }
    }
}

pub fn check_sorted(tags: &[u64], stream: char) -> Result<(), CorrelatorError> {
    match tags.windows(2).position(|w| w[1] < w[0]) {
        None => Ok(()),
        Some(i) => Err(CorrelatorError::Unsorted {
            stream,
            index: i + 1,
            previous: tags[i],
            value: tags[i + 1],
        }),
    }
}

fn observation_time(a: &[u64], b: &[u64]) -> f64 {
    let first = a.first().into_iter().chain(b.first()).min();
    let last = a.last().into_iter().chain(b.last()).max();
    match (first, last) {
        (Some(f), Some(l)) => (l - f) as f64 * 1e-12,
        _ => 0.0,
    }
}

fn prepare(
    a: &[u64],
    b: &[u64],
    binning: Binning,
) -> Result<CorrelationHistogram, CorrelatorError> {
    if std::ptr::eq(a, b) && !a.is_empty() {
        return Err(CorrelatorError::SameStream);
    }
    check_sorted(a, 'a')?;
    check_sorted(b, 'b')?;
    let mut hist = CorrelationHistogram::empty(binning);
    hist.n_a = a.len() as u64;
    hist.n_b = b.len() as u64;
    hist.duration = observation_time(a, b);
    Ok(hist)
}

/// Accumulates `t_b - t_a` for every `t_a` in `a` against sorted `b`, where
/// `b[start..]` holds every candidate partner of `a[0]`. Returns the
/// advanced start.
#[inline]
fn accumulate(
    a: &[u64],
    b: &[u64],
    mut start: usize,
    binning: &Binning,
    counts: &mut [u64],
) -> usize {
    let e = binning.edge2();
    let w2 = 2 * binning.bin_width_ps as i64;
    for &ta in a {
        let ta = ta as i64;
        while start < b.len() && 2 * (b[start] as i64 - ta) < -e {
            start += 1;
        }
        for &tb in &b[start..] {
            let x = 2 * (tb as i64 - ta) + e;
            if x >= 2 * e {
                break;
            }
            counts[(x / w2) as usize] += 1;
        }
    }
    start
}

/// Histogram of `t_b - t_a` over all pairs within the window, one forward
/// pass over both streams.
pub fn cross_correlate(
    a: &[u64],
    b: &[u64],
    binning: Binning,
) -> Result<CorrelationHistogram, CorrelatorError> {
    let mut hist = prepare(a, b, binning)?;
    accumulate(a, b, 0, &binning, &mut hist.counts);
    Ok(hist)
}

/// Same result as [`cross_correlate`], with `a` split into chunks processed
/// on the rayon pool.
pub fn cross_correlate_parallel(
    a: &[u64],
    b: &[u64],
    binning: Binning,
    chunk: usize,
) -> Result<CorrelationHistogram, CorrelatorError> {
    let mut hist = prepare(a, b, binning)?;
    let e = binning.edge2();
    let partial = a
        .par_chunks(chunk.max(1))
        .map(|part| {
            let mut counts = vec![0u64; binning.n_bins()];
            let first = part[0] as i64;
            let start = b.partition_point(|&tb| 2 * (tb as i64 - first) < -e);
            accumulate(part, b, start, &binning, &mut counts);
            counts
        })
        .reduce(
            || vec![0u64; binning.n_bins()],
            |mut x, y| {
                for (c, o) in x.iter_mut().zip(&y) {
                    *c += o;
                }
                x
            },
        );
    hist.counts = partial;
    Ok(hist)
}

/// All-pairs reference implementation, O(N_a·N_b).
pub fn cross_correlate_brute_force(
    a: &[u64],
    b: &[u64],
    binning: Binning,
) -> Result<CorrelationHistogram, CorrelatorError> {
    let mut hist = prepare(a, b, binning)?;
    for &ta in a {
        for &tb in b {
            if let Some(j) = binning.index(tb as i64 - ta as i64) {
                hist.counts[j] += 1;
            }
        }
    }
    Ok(hist)
}

/// Incremental correlator fed with consecutive chunks of both streams.
///
/// Only the tags that can still find partners are buffered.
#[derive(Debug, Clone)]
pub struct StreamingCorrelator {
    binning: Binning,
    hist: CorrelationHistogram,
    a: Vec<u64>,
    b: Vec<u64>,
    last_a: Option<u64>,
    last_b: Option<u64>,
    first: Option<u64>,
    b_start: usize,
}

impl StreamingCorrelator {
    pub fn new(binning: Binning) -> Self {
        StreamingCorrelator {
            binning,
            hist: CorrelationHistogram::empty(binning),
            a: Vec::new(),
            b: Vec::new(),
            last_a: None,
            last_b: None,
            first: None,
            b_start: 0,
        }
    }

    fn append(
        buf: &mut Vec<u64>,
        last: &mut Option<u64>,
        chunk: &[u64],
        seen: u64,
        stream: char,
    ) -> Result<(), CorrelatorError> {
        if let (Some(prev), Some(&head)) = (*last, chunk.first()) {
            if head < prev {
                return Err(CorrelatorError::Unsorted {
                    stream,
                    index: seen as usize,
                    previous: prev,
                    value: head,
                });
            }
        }
        check_sorted(chunk, stream).map_err(|e| match e {
            CorrelatorError::Unsorted {
                stream,
                index,
                previous,
                value,
            } => CorrelatorError::Unsorted {
                stream,
                index: index + seen as usize,
                previous,
                value,
            },
            other => other,
        })?;
        buf.extend_from_slice(chunk);
        if let Some(&l) = chunk.last() {
            *last = Some(l);
        }
        Ok(())
    }

    /// Adds the next tags of each stream. Chunks must continue the sorted
    /// order of everything pushed before.
    pub fn push(&mut self, a: &[u64], b: &[u64]) -> Result<(), CorrelatorError> {
        Self::append(&mut self.a, &mut self.last_a, a, self.hist.n_a, 'a')?;
        Self::append(&mut self.b, &mut self.last_b, b, self.hist.n_b, 'b')?;
        self.hist.n_a += a.len() as u64;
        self.hist.n_b += b.len() as u64;
        for &t in a.first().into_iter().chain(b.first()) {
            self.first = Some(self.first.map_or(t, |f| f.min(t)));
        }
        self.drain(false);
        Ok(())
    }

    /// Correlates every buffered `a` tag whose partners in `b` are complete.
    /// Future `b` tags are at least `last_b`, so partners are complete for
    /// `t_a` with `2(last_b - t_a) >= edge2`.
    fn drain(&mut self, finish: bool) {
        let e = self.binning.edge2();
        let ready = if finish {
            self.a.len()
        } else {
            match self.last_b {
                None => 0,
                Some(lb) => self
                    .a
                    .partition_point(|&ta| 2 * (lb as i64 - ta as i64) >= e),
            }
        };
        if ready == 0 {
            return;
        }
        self.b_start = accumulate(
            &self.a[..ready],
            &self.b,
            self.b_start,
            &self.binning,
            &mut self.hist.counts,
        );
        self.a.drain(..ready);
        // b tags before the next a tag's window can no longer match
        let keep_from = match self.a.first() {
            Some(&ta) => self
                .b
                .partition_point(|&tb| 2 * (tb as i64 - ta as i64) < -e),
            None if finish => self.b.len(),
            None => {
                // later a tags are at least last_a
                let la = self.last_a.unwrap_or(0) as i64;
                self.b.partition_point(|&tb| 2 * (tb as i64 - la) < -e)
            }
        };
        let keep_from = keep_from.min(self.b_start);
        self.b.drain(..keep_from);
        self.b_start -= keep_from;
    }

    /// Tags currently held in memory.
    pub fn buffered(&self) -> usize {
        self.a.len() + self.b.len()
    }

    pub fn finish(mut self) -> CorrelationHistogram {
        self.drain(true);
        let last = self.last_a.into_iter().chain(self.last_b).max();
        self.hist.duration = match (self.first, last) {
            (Some(f), Some(l)) => (l - f) as f64 * 1e-12,
            _ => 0.0,
        };
        self.hist
    }
}

impl CorrelationHistogram {
    /// Adds the counts of a histogram with the same binning.
    pub fn accumulate(&mut self, other: &CorrelationHistogram) {
        assert_eq!(self.binning, other.binning);
        self.merge(other);
        self.n_a += other.n_a;
        self.n_b += other.n_b;
        self.duration += other.duration;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bins(w: u64, win: u64) -> Binning {
        Binning::new(w, win).unwrap()
    }

    #[test]
    fn coincident_tags_land_in_center_bin() {
        let b = bins(100, 1000);
        let (a, c) = (vec![0u64], vec![0u64]);
        let h = cross_correlate(&a, &c, b).unwrap();
        assert_eq!(h.counts.len(), 21);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.total(), 1);
        assert_eq!(h.binning.center_ps(10), 0);
    }

    #[test]
    fn bins_are_half_open_and_symmetric() {
        let b = bins(100, 200);
        assert_eq!(b.n_bins(), 5);
        assert_eq!(b.index(-250), Some(0));
        assert_eq!(b.index(-251), None);
        assert_eq!(b.index(249), Some(4));
        assert_eq!(b.index(250), None);
        assert_eq!(b.index(-50), Some(2));
        assert_eq!(b.index(50), Some(3));
        assert_eq!(b.index(49), Some(2));
        let odd = bins(3, 3);
        assert_eq!(odd.index(-2), Some(0));
        assert_eq!(odd.index(-1), Some(1));
        assert_eq!(odd.index(1), Some(1));
        assert_eq!(odd.index(2), Some(2));
    }

    #[test]
    fn unsorted_input_reports_first_violation() {
        let err = cross_correlate(&[0, 10, 5, 1], &[0], bins(1, 10)).unwrap_err();
        assert_eq!(
            err,
            CorrelatorError::Unsorted {
                stream: 'a',
                index: 2,
                previous: 10,
                value: 5
            }
        );
    }

    #[test]
    fn same_stream_is_rejected() {
        let a = vec![1, 2, 3];
        assert_eq!(
            cross_correlate(&a, &a, bins(1, 5)),
            Err(CorrelatorError::SameStream)
        );
    }

    #[test]
    fn invalid_binning() {
        assert_eq!(Binning::new(0, 10), Err(CorrelatorError::ZeroBinWidth));
        assert!(Binning::new(10, 5).is_err());
    }

    #[test]
    fn streaming_matches_batch_for_uneven_chunks() {
        let a: Vec<u64> = (0..2000u64).map(|i| i * 37 + (i * i) % 11).collect();
        let b: Vec<u64> = (0..1500u64).map(|i| i * 49 + (i * 7) % 13).collect();
        let binning = bins(10, 300);
        let batch = cross_correlate(&a, &b, binning).unwrap();
        let mut s = StreamingCorrelator::new(binning);
        let mut ia = 0;
        let mut ib = 0;
        let mut step = 1;
        while ia < a.len() || ib < b.len() {
            let na = (ia + step).min(a.len());
            let nb = (ib + 2 * step / 3).min(b.len());
            s.push(&a[ia..na], &b[ib..nb]).unwrap();
            ia = na;
            ib = nb;
            step = step * 3 % 97 + 1;
        }
        assert!(s.buffered() < 200);
        let streamed = s.finish();
        assert_eq!(streamed.counts, batch.counts);
        assert_eq!(streamed.n_a, batch.n_a);
        assert_eq!(streamed.duration, batch.duration);
    }

    #[test]
    fn streaming_rejects_out_of_order_chunk() {
        let mut s = StreamingCorrelator::new(bins(10, 100));
        s.push(&[5, 10], &[]).unwrap();
        let err = s.push(&[9], &[]).unwrap_err();
        assert!(matches!(err, CorrelatorError::Unsorted { index: 2, .. }));
    }

    #[test]
    fn csv_lists_centers() {
        let h = cross_correlate(&[100], &[60], bins(40, 40)).unwrap();
        let mut out = Vec::new();
        h.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "bin_center_ps,counts\n-40,1\n0,0\n40,0\n"
        );
    }
}
