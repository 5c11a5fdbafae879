//! Interval collections for scanning.
//!
//! Intervals are half-open `(j, k]` with integer endpoints `0 <= j < k <= n`;
//! the data points covered by `(j, k]` are the 0-based indices `j..k`.
//!
//! Two collections are used throughout:
//!
//! * the *full* enumeration of all intervals up to a maximum length, and
//! * the sparse *approximating* collection: level `l` holds intervals whose
//!   endpoints lie on a grid of spacing `d_l = ceil(m_l / sqrt(2 ln(e n / m_l)))`
//!   and whose lengths fall in `[m_l, 2 m_l)` with `m_l = 2^l`.
//!
//! The grid spacing keeps the relative approximation error of order
//! `(2 ln(e n / m_l))^{-1/2}`, which is simultaneously fine enough for the
//! overlap guarantee verified by [`best_approximation`] and sparse enough
//! that the whole collection has roughly `O(n log n)` members.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open interval `(j, k]`; covers data indices `j..k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interval {
    pub j: usize,
    pub k: usize,
}

impl Interval {
    /// Validated constructor: `0 <= j < k <= n`.
    pub fn new(j: usize, k: usize, n: usize) -> Result<Self> {
        if j < k && k <= n {
            Ok(Interval { j, k })
        } else {
            Err(Error::InvalidInterval { j, k, n })
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.k - self.j
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.k <= self.j
    }

    /// Number of shared indices with `other`.
    #[inline]
    pub fn overlap(&self, other: &Interval) -> usize {
        let lo = self.j.max(other.j);
        let hi = self.k.min(other.k);
        hi.saturating_sub(lo)
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{}]", self.j, self.k)
    }
}

/// `|I ∩ J| / sqrt(|I| |J|)`, in `[0, 1]`.
pub fn overlap_ratio(a: &Interval, b: &Interval) -> f64 {
    a.overlap(b) as f64 / ((a.len() as f64) * (b.len() as f64)).sqrt()
}

/// One level of the approximating collection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxLevel {
    /// Level index `l`.
    pub level: u32,
    /// `m = 2^l`; lengths in this level lie in `[m, 2m)`.
    pub m: usize,
    /// Endpoint grid spacing `d`.
    pub d: usize,
    /// The admissible lengths: multiples of `d` in `[m, 2m)`.
    pub lengths: Vec<usize>,
}

impl ApproxLevel {
    fn build(level: u32, n: usize) -> Self {
        let m = 1usize << level;
        let d = grid_spacing(n, m);
        let first = m.div_ceil(d) * d;
        let lengths: Vec<usize> = (first..2 * m).step_by(d).collect();
        ApproxLevel { level, m, d, lengths }
    }

    /// Number of grid positions for a given length.
    #[inline]
    pub fn positions(&self, n: usize, len: usize) -> usize {
        if len > n {
            0
        } else {
            (n - len) / self.d + 1
        }
    }

    /// Total number of intervals in this level for sample size `n`.
    pub fn count(&self, n: usize) -> usize {
        self.lengths.iter().map(|&w| self.positions(n, w)).sum()
    }

    /// All intervals of this level, grid-discarded at the right boundary
    /// (intervals reaching past `n` are dropped, not shortened).
    pub fn intervals<'a>(&'a self, n: usize) -> impl Iterator<Item = Interval> + 'a {
        self.lengths.iter().flat_map(move |&w| {
            (0..self.positions(n, w)).map(move |i| Interval { j: i * self.d, k: i * self.d + w })
        })
    }
}

/// `d_l = ceil(m / sqrt(2 ln(e n / m)))` with natural log.
pub fn grid_spacing(n: usize, m: usize) -> usize {
    let arg = std::f64::consts::E * n as f64 / m as f64;
    let denom = (2.0 * arg.ln()).sqrt();
    ((m as f64 / denom).ceil() as usize).max(1)
}

/// The sparse approximating collection, stratified by dyadic length levels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApproxSet {
    pub n: usize,
    /// Length cap; the levels kept are exactly those with `2 m_l <= max_window`.
    pub max_window: usize,
    pub levels: Vec<ApproxLevel>,
}

impl ApproxSet {
    /// Total number of intervals.
    pub fn len(&self) -> usize {
        self.levels.iter().map(|l| l.count(self.n)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Per-level interval counts.
    pub fn level_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.count(self.n)).collect()
    }

    /// All intervals, level-major then length-major then left endpoint.
    pub fn intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        self.levels.iter().flat_map(|l| l.intervals(self.n))
    }

    /// Largest interval length present in the set.
    pub fn max_len(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|l| l.lengths.iter().copied())
            .max()
            .unwrap_or(0)
    }
}

/// Build the approximating set for sample size `n`, keeping every level whose
/// whole length range `[m_l, 2 m_l)` fits under `max_window_fraction * n`.
pub fn build_approx_set(n: usize, max_window_fraction: f64) -> Result<ApproxSet> {
    if !(max_window_fraction > 0.0 && max_window_fraction <= 0.5) {
        return Err(Error::invalid(format!(
            "max_window_fraction must lie in (0, 1/2], got {max_window_fraction}"
        )));
    }
    build_approx_set_window(n, (max_window_fraction * n as f64).floor() as usize)
}

/// [`build_approx_set`] with an absolute window cap (used to reconstruct a
/// set from persisted table metadata).
pub fn build_approx_set_window(n: usize, max_window: usize) -> Result<ApproxSet> {
    if n < 8 {
        return Err(Error::TooSmall { n, what: "approximating set needs n >= 8" });
    }
    if max_window > n / 2 {
        return Err(Error::invalid(format!(
            "max_window {max_window} exceeds n/2 = {}",
            n / 2
        )));
    }
    let mut levels = Vec::new();
    let mut level = 0u32;
    while 2usize << level <= max_window {
        levels.push(ApproxLevel::build(level, n));
        level += 1;
    }
    if levels.is_empty() {
        return Err(Error::TooSmall { n, what: "window cap admits no interval level" });
    }
    Ok(ApproxSet { n, max_window, levels })
}

/// Every interval `(j, k]` with `k - j <= max_len`, in deterministic
/// length-major order.
pub fn enumerate_full(n: usize, max_len: usize) -> Result<impl Iterator<Item = Interval>> {
    if max_len == 0 || max_len > n {
        return Err(Error::invalid(format!("max_len must lie in [1, n], got {max_len} for n={n}")));
    }
    Ok((1..=max_len).flat_map(move |w| (0..=n - w).map(move |j| Interval { j, k: j + w })))
}

/// Dyadic grouping of interval lengths.
///
/// Block 1 holds lengths `[1, 2^{s_n})` with `s_n = ceil(log2 ln n)`; block
/// `B >= 2` holds `[2^{B-2+s_n}, 2^{B-1+s_n})`, up to
/// `B_max = floor(log2(n/4)) - s_n + 1`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct BlockPartition {
    pub n: usize,
    pub s_n: u32,
    pub b_max: usize,
    /// Half-open length ranges `[lo, hi)` for blocks `1..=b_max`.
    ranges: Vec<(usize, usize)>,
}

/// Build the block partition for sample size `n`.
pub fn blocks(n: usize) -> Result<BlockPartition> {
    if n < 16 {
        return Err(Error::TooSmall { n, what: "block partition needs n >= 16" });
    }
    let s_n = (n as f64).ln().log2().ceil() as u32;
    let b_max_signed = (n as f64 / 4.0).log2().floor() as i64 - s_n as i64 + 1;
    if b_max_signed < 1 {
        return Err(Error::TooSmall { n, what: "block partition has B_max < 1" });
    }
    let b_max = b_max_signed as usize;
    let mut ranges = Vec::with_capacity(b_max);
    ranges.push((1usize, 1usize << s_n));
    for b in 2..=b_max {
        let lo = 1usize << (b as u32 - 2 + s_n);
        let hi = 1usize << (b as u32 - 1 + s_n);
        ranges.push((lo, hi));
    }
    Ok(BlockPartition { n, s_n, b_max, ranges })
}

impl BlockPartition {
    /// 1-based block index containing interval length `w`, if covered.
    pub fn block_of_len(&self, w: usize) -> Option<usize> {
        if w == 0 {
            return None;
        }
        self.ranges
            .iter()
            .position(|&(lo, hi)| lo <= w && w < hi)
            .map(|i| i + 1)
    }

    /// Length range `[lo, hi)` of block `b` (1-based).
    pub fn range(&self, b: usize) -> Option<(usize, usize)> {
        self.ranges.get(b - 1).copied()
    }

    /// One past the largest covered length, `2^{B_max - 1 + s_n}`.
    pub fn len_limit(&self) -> usize {
        self.ranges.last().map(|&(_, hi)| hi).unwrap_or(1)
    }

    /// Block containing approximating-set level `l` (every level length range
    /// sits inside exactly one block).
    pub fn block_of_level(&self, level: u32) -> usize {
        if level < self.s_n {
            1
        } else {
            (level - self.s_n) as usize + 2
        }
    }
}

/// Outcome of [`best_approximation`].
#[derive(Debug, Clone, Copy)]
pub struct Approximation {
    pub best: Interval,
    pub ratio: f64,
}

/// Lower bounds of the overlap guarantee for an interval pair, as a function
/// of `min(|I|, |J|)`: the square-root form and its linearization. Either may
/// be negative (vacuous) when the windows are long relative to `n`.
pub fn approximation_bounds(n: usize, min_len: usize) -> (f64, f64) {
    let l = (std::f64::consts::E * n as f64 / min_len as f64).ln();
    let x = 2.0 / (2.0 * l).sqrt();
    let sqrt_form = if x >= 1.0 { -1.0 } else { (1.0 - x).sqrt() };
    let linear_form = 1.0 - 1.0 / (2.0 * l).sqrt() - 1.0 / l;
    (sqrt_form, linear_form)
}

/// Exact argmax of [`overlap_ratio`] over the whole approximating set.
///
/// Only candidates with positive overlap can win, so each level is scanned
/// over the grid window `(j - 2m, k)`; ties break toward the smallest left
/// endpoint, then the smallest length.
pub fn best_approximation(iv: &Interval, set: &ApproxSet) -> Result<Approximation> {
    if set.is_empty() {
        return Err(Error::TooSmall { n: set.n, what: "empty approximating set" });
    }
    if iv.k > set.n {
        return Err(Error::InvalidInterval { j: iv.j, k: iv.k, n: set.n });
    }
    let n = set.n;
    let mut best: Option<(f64, Interval)> = None;
    for level in &set.levels {
        let d = level.d;
        let lo_j = iv.j.saturating_sub(2 * level.m);
        let first_j = lo_j.div_ceil(d) * d;
        let mut j = first_j;
        while j < iv.k {
            for &w in &level.lengths {
                let k = j + w;
                if k > n {
                    continue;
                }
                let cand = Interval { j, k };
                let r = overlap_ratio(iv, &cand);
                let better = match best {
                    None => true,
                    Some((br, bi)) => {
                        r > br
                            || (r == br
                                && (cand.j < bi.j || (cand.j == bi.j && cand.len() < bi.len())))
                    }
                };
                if better {
                    best = Some((r, cand));
                }
            }
            j += d;
        }
    }
    // level 0 has unit spacing, so a positive-overlap candidate always exists
    let (ratio, bi) =
        best.ok_or(Error::TooSmall { n, what: "no candidate interval in approximating set" })?;
    Ok(Approximation { best: bi, ratio })
}

/// One line of a [`CountBoundReport`].
#[derive(Debug, Clone, Serialize)]
pub struct CountBoundLine {
    pub label: String,
    pub count: usize,
    pub bound: f64,
    pub ok: bool,
}

/// Result of [`verify_count_bounds`]: per-level and per-block interval counts
/// against their analytic bounds. Violations are reported, never thrown.
#[derive(Debug, Clone, Serialize)]
pub struct CountBoundReport {
    pub n: usize,
    pub lines: Vec<CountBoundLine>,
}

impl CountBoundReport {
    pub fn violations(&self) -> Vec<&CountBoundLine> {
        self.lines.iter().filter(|l| !l.ok).collect()
    }

    pub fn all_ok(&self) -> bool {
        self.lines.iter().all(|l| l.ok)
    }
}

/// Check `#J_l <= 2 n 2^{-l} ln(e 2^{-l} n)` for every level, plus the block
/// bounds `#block_1 <= 4 n ln(e n)` and `#block_B <= 8 n 2^{-B}` for `B >= 2`.
pub fn verify_count_bounds(set: &ApproxSet) -> CountBoundReport {
    let n = set.n as f64;
    let mut lines = Vec::new();
    for level in &set.levels {
        let count = level.count(set.n);
        let scale = 2f64.powi(-(level.level as i32));
        let bound = 2.0 * n * scale * (std::f64::consts::E * scale * n).ln();
        lines.push(CountBoundLine {
            label: format!("level {}", level.level),
            count,
            bound,
            ok: (count as f64) <= bound,
        });
    }
    if let Ok(partition) = blocks(set.n) {
        let mut block_counts = vec![0usize; partition.b_max];
        for level in &set.levels {
            let b = partition.block_of_level(level.level);
            if b <= partition.b_max {
                block_counts[b - 1] += level.count(set.n);
            }
        }
        for (idx, &count) in block_counts.iter().enumerate() {
            let b = idx + 1;
            let bound = if b == 1 {
                4.0 * n * (std::f64::consts::E * n).ln()
            } else {
                8.0 * n * 2f64.powi(-(b as i32))
            };
            lines.push(CountBoundLine {
                label: format!("block {b}"),
                count,
                bound,
                ok: (count as f64) <= bound,
            });
        }
    }
    CountBoundReport { n: set.n, lines }
}
