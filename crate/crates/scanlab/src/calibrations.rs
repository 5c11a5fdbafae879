//! The five calibrations and their critical values.
//!
//! * `Scan` — one global threshold: the simulated `(1−α)`-quantile of
//!   `max_I T_I`.
//! * `Ds` — per-length penalty `sqrt(2 ln(e n/|I|))` plus the simulated
//!   quantile of the penalized maximum.
//! * `Sac` — the same with penalty `sqrt(2 ln[(e n/|I|)(1+ln|I|)²])`, which
//!   shifts power from the largest scales back to the smallest.
//! * `Blocked` — dyadic length blocks, each with its own simulated quantile
//!   at level `α̃/B`; `α̃` is calibrated so the overall level is `α`.
//! * `Bonferroni` — the approximating set plus a weighted union bound
//!   `α / (#block · B · Σ 1/i)` per block; needs no simulation, only a tail
//!   bound for `T_I`.
//!
//! Scanning reduces to per-length sliding-window maxima of prefix sums: all
//! supported statistics are monotone in the window sum, so each length class
//! costs one pass and one statistic evaluation.

use serde::{Deserialize, Serialize};

use crate::interval_sets::{blocks, build_approx_set_window, ApproxSet, BlockPartition, Interval};
use crate::local_stats::{LocalStatKind, WindowScanner};
use crate::null_models::{sample_null, NullModel, RngStream};
use crate::numerics::{empirical_quantile, harmonic, normal_sf, normal_upper_quantile};
use crate::{map_replicates, map_replicates_seq, Error, Result};

/// Dümbgen–Spokoiny penalty `sqrt(2 ln(e n / w))`.
#[inline]
pub fn penalty_ds(n: usize, w: usize) -> f64 {
    (2.0 * (std::f64::consts::E * n as f64 / w as f64).ln()).sqrt()
}

/// Sharpnack–Arias-Castro penalty `sqrt(2 ln[(e n / w)(1 + ln w)²])`.
#[inline]
pub fn penalty_sac(n: usize, w: usize) -> f64 {
    let wf = w as f64;
    let inner = std::f64::consts::E * n as f64 / wf * (1.0 + wf.ln()).powi(2);
    (2.0 * inner.ln()).sqrt()
}

/// Which calibration a table carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationKind {
    Scan,
    Ds,
    Sac,
    Blocked,
    Bonferroni,
}

impl CalibrationKind {
    pub const ALL: [CalibrationKind; 5] = [
        CalibrationKind::Scan,
        CalibrationKind::Ds,
        CalibrationKind::Sac,
        CalibrationKind::Blocked,
        CalibrationKind::Bonferroni,
    ];

    pub fn needs_simulation(&self) -> bool {
        !matches!(self, CalibrationKind::Bonferroni)
    }
}

impl std::fmt::Display for CalibrationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CalibrationKind::Scan => "scan",
            CalibrationKind::Ds => "ds",
            CalibrationKind::Sac => "sac",
            CalibrationKind::Blocked => "blocked",
            CalibrationKind::Bonferroni => "bonferroni",
        })
    }
}

impl std::str::FromStr for CalibrationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "scan" => Ok(CalibrationKind::Scan),
            "ds" => Ok(CalibrationKind::Ds),
            "sac" => Ok(CalibrationKind::Sac),
            "blocked" => Ok(CalibrationKind::Blocked),
            "bonferroni" => Ok(CalibrationKind::Bonferroni),
            other => Err(Error::invalid(format!("unknown calibration '{other}'"))),
        }
    }
}

/// Which interval collection the statistic maximizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalSource {
    Full,
    Approx,
}

impl std::fmt::Display for IntervalSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IntervalSource::Full => "full",
            IntervalSource::Approx => "approx",
        })
    }
}

impl std::str::FromStr for IntervalSource {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(IntervalSource::Full),
            "approx" => Ok(IntervalSource::Approx),
            other => Err(Error::invalid(format!("unknown interval source '{other}'"))),
        }
    }
}

/// A calibration request: kind, interval source, level and simulation budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Calibration {
    pub kind: CalibrationKind,
    pub source: IntervalSource,
    pub alpha: f64,
    pub sims: usize,
    pub seed: u64,
}

impl Calibration {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if self.kind.needs_simulation() && self.sims == 0 {
            return Err(Error::Incompatible(format!(
                "{} calibration needs simulated critical values but sims = 0",
                self.kind
            )));
        }
        Ok(())
    }
}

/// One length class of the scan: windows of length `len` starting on a grid
/// of spacing `step`, tagged with the block containing `len` (if any).
#[derive(Debug, Clone, Copy)]
pub struct LenClass {
    pub len: usize,
    pub step: usize,
    /// 1-based block index, `None` for lengths beyond the block partition.
    pub block: Option<usize>,
}

/// The concrete set of windows a scan maximizes over, plus the per-class
/// penalty values needed during sweeps.
#[derive(Debug, Clone)]
pub struct ScanGeometry {
    pub n: usize,
    pub max_window: usize,
    pub source: IntervalSource,
    pub classes: Vec<LenClass>,
    pub pen_ds: Vec<f64>,
    pub pen_sac: Vec<f64>,
    pub partition: Option<BlockPartition>,
}

impl ScanGeometry {
    /// Full enumeration: every length `1..=max_window` on the unit grid.
    pub fn full(n: usize, max_window: usize) -> Result<Self> {
        if max_window == 0 || max_window > n {
            return Err(Error::invalid(format!(
                "max_window must lie in [1, n], got {max_window} for n={n}"
            )));
        }
        let partition = blocks(n).ok();
        let classes: Vec<LenClass> = (1..=max_window)
            .map(|len| LenClass {
                len,
                step: 1,
                block: partition.as_ref().and_then(|p| p.block_of_len(len)),
            })
            .collect();
        Ok(Self::finish(n, max_window, IntervalSource::Full, classes, partition))
    }

    /// The approximating set.
    pub fn approx(set: &ApproxSet) -> Result<Self> {
        let partition = blocks(set.n).ok();
        let mut classes = Vec::new();
        for level in &set.levels {
            let block = partition.as_ref().map(|p| p.block_of_level(level.level));
            for &len in &level.lengths {
                classes.push(LenClass {
                    len,
                    step: level.d,
                    block: block.filter(|&b| b <= partition.as_ref().map_or(0, |p| p.b_max)),
                });
            }
        }
        if classes.is_empty() {
            return Err(Error::TooSmall { n: set.n, what: "approximating set has no class" });
        }
        Ok(Self::finish(set.n, set.max_window, IntervalSource::Approx, classes, partition))
    }

    /// Rebuild the geometry a table was produced with.
    pub fn for_table(table: &CritTable) -> Result<Self> {
        match table.source {
            IntervalSource::Full => ScanGeometry::full(table.n, table.max_window),
            IntervalSource::Approx => {
                ScanGeometry::approx(&build_approx_set_window(table.n, table.max_window)?)
            }
        }
    }

    fn finish(
        n: usize,
        max_window: usize,
        source: IntervalSource,
        classes: Vec<LenClass>,
        partition: Option<BlockPartition>,
    ) -> Self {
        let pen_ds = classes.iter().map(|c| penalty_ds(n, c.len)).collect();
        let pen_sac = classes.iter().map(|c| penalty_sac(n, c.len)).collect();
        ScanGeometry { n, max_window, source, classes, pen_ds, pen_sac, partition }
    }

    /// Number of blocks tracked during sweeps.
    pub fn b_max(&self) -> usize {
        self.partition.as_ref().map_or(0, |p| p.b_max)
    }

    /// Grid positions of one class.
    #[inline]
    pub fn positions(&self, class: &LenClass) -> usize {
        (self.n - class.len) / class.step + 1
    }

    /// Interval count per block (the Bonferroni `#(Bth block)`).
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.b_max()];
        for class in &self.classes {
            if let Some(b) = class.block {
                sizes[b - 1] += self.positions(class);
            }
        }
        sizes
    }

    /// Window lengths present in block `b`.
    pub fn lengths_in_block(&self, b: usize) -> Vec<usize> {
        self.classes
            .iter()
            .filter(|c| c.block == Some(b))
            .map(|c| c.len)
            .collect()
    }

    /// Total number of windows.
    pub fn interval_count(&self) -> usize {
        self.classes.iter().map(|c| self.positions(c)).sum()
    }

    /// All windows of one class, left to right.
    pub fn class_intervals<'a>(
        &'a self,
        class: &'a LenClass,
    ) -> impl Iterator<Item = Interval> + 'a {
        (0..self.positions(class))
            .map(move |i| Interval { j: i * class.step, k: i * class.step + class.len })
    }
}

/// Sliding-window maximum of `s[j+len] - s[j]` on the unit grid.
fn rowmax_unit(s: &[f64], len: usize) -> f64 {
    let a = &s[len..];
    let b = &s[..s.len() - len];
    let mut m = [f64::NEG_INFINITY; 4];
    for (ca, cb) in a.chunks_exact(4).zip(b.chunks_exact(4)) {
        m[0] = m[0].max(ca[0] - cb[0]);
        m[1] = m[1].max(ca[1] - cb[1]);
        m[2] = m[2].max(ca[2] - cb[2]);
        m[3] = m[3].max(ca[3] - cb[3]);
    }
    let mut best = m[0].max(m[1]).max(m[2]).max(m[3]);
    let rem = a.chunks_exact(4).remainder();
    let remb = b.chunks_exact(4).remainder();
    for (x, y) in rem.iter().zip(remb) {
        best = best.max(x - y);
    }
    best
}

/// Sliding-window maximum on a strided grid.
fn rowmax_strided(s: &[f64], len: usize, step: usize) -> f64 {
    let n = s.len() - 1;
    let mut best = f64::NEG_INFINITY;
    let mut j = 0;
    while j + len <= n {
        best = best.max(s[j + len] - s[j]);
        j += step;
    }
    best
}

/// Per-replicate record: the maxima every calibration needs, from one pass.
#[derive(Debug, Clone)]
pub struct SweepMaxima {
    /// `max_I T_I`
    pub global: f64,
    /// `max_I (T_I - penalty_ds(|I|))`
    pub ds: f64,
    /// `max_I (T_I - penalty_sac(|I|))`
    pub sac: f64,
    /// `max_{I in block B} T_I`, indexed `B-1`; `-inf` where a block is empty
    pub per_block: Vec<f64>,
}

/// One pass over the geometry: global, penalized and per-block maxima.
pub fn sweep(scanner: &WindowScanner, geom: &ScanGeometry) -> SweepMaxima {
    let s = scanner.prefix_sums();
    let mut global = f64::NEG_INFINITY;
    let mut ds = f64::NEG_INFINITY;
    let mut sac = f64::NEG_INFINITY;
    let mut per_block = vec![f64::NEG_INFINITY; geom.b_max()];
    for (idx, class) in geom.classes.iter().enumerate() {
        let best_sum = if class.step == 1 {
            rowmax_unit(s, class.len)
        } else {
            rowmax_strided(s, class.len, class.step)
        };
        let t = scanner.eval_sum(best_sum, class.len);
        global = global.max(t);
        ds = ds.max(t - geom.pen_ds[idx]);
        sac = sac.max(t - geom.pen_sac[idx]);
        if let Some(b) = class.block {
            per_block[b - 1] = per_block[b - 1].max(t);
        }
    }
    SweepMaxima { global, ds, sac, per_block }
}

/// Metadata identifying a batch of simulated null maxima.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub n: usize,
    pub model: String,
    pub stat: String,
    pub source: IntervalSource,
    pub max_window: usize,
    pub sims: usize,
    pub seed: u64,
    pub b_max: usize,
}

/// Null maxima for `sims` replicates, stored column-wise.
#[derive(Debug, Clone)]
pub struct NullMaximaRecords {
    pub meta: SimMeta,
    pub global: Vec<f64>,
    pub ds: Vec<f64>,
    pub sac: Vec<f64>,
    /// `per_block[b][replicate]`
    pub per_block: Vec<Vec<f64>>,
}

fn one_replicate(
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    seed: u64,
    rep: usize,
) -> Result<SweepMaxima> {
    let stream = RngStream::new(seed, rep as u64);
    let data = sample_null(model, geom.n, stream)?;
    let scanner = WindowScanner::prepare(kind, &data)?;
    Ok(sweep(&scanner, geom))
}

fn assemble_records(
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    sims: usize,
    seed: u64,
    rows: Vec<Result<SweepMaxima>>,
) -> Result<NullMaximaRecords> {
    let b_max = geom.b_max();
    let mut records = NullMaximaRecords {
        meta: SimMeta {
            n: geom.n,
            model: model.label(),
            stat: kind.label(),
            source: geom.source,
            max_window: geom.max_window,
            sims,
            seed,
            b_max,
        },
        global: Vec::with_capacity(sims),
        ds: Vec::with_capacity(sims),
        sac: Vec::with_capacity(sims),
        per_block: vec![Vec::with_capacity(sims); b_max],
    };
    for row in rows {
        let row = row?;
        records.global.push(row.global);
        records.ds.push(row.ds);
        records.sac.push(row.sac);
        for (b, v) in row.per_block.into_iter().enumerate() {
            records.per_block[b].push(v);
        }
    }
    Ok(records)
}

/// Simulate the null maxima needed by every simulation-based calibration:
/// for each replicate, the global maximum of `T_I`, the DS- and
/// SAC-penalized maxima and the per-block maxima, all from a single pass.
pub fn simulate_null_maxima(
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    sims: usize,
    seed: u64,
) -> Result<NullMaximaRecords> {
    check_simulable(kind, model, sims)?;
    let rows = map_replicates(sims, |rep| one_replicate(kind, geom, model, seed, rep));
    assemble_records(kind, geom, model, sims, seed, rows)
}

/// Sequential variant of [`simulate_null_maxima`] (benchmark comparison).
pub fn simulate_null_maxima_seq(
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    sims: usize,
    seed: u64,
) -> Result<NullMaximaRecords> {
    check_simulable(kind, model, sims)?;
    let rows = map_replicates_seq(sims, |rep| one_replicate(kind, geom, model, seed, rep));
    assemble_records(kind, geom, model, sims, seed, rows)
}

fn check_simulable(kind: &LocalStatKind, model: &NullModel, sims: usize) -> Result<()> {
    if !kind.supports_simulated_calibration() {
        return Err(Error::Incompatible(format!(
            "statistic '{}' has no simulable null (unknown heteroscedastic noise); \
             only the Bonferroni scan applies",
            kind.label()
        )));
    }
    if sims == 0 {
        return Err(Error::invalid("simulation budget must be >= 1".to_string()));
    }
    model.validate()
}

/// One persisted rejection threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CritEntry {
    /// Global threshold for `T_I` (Scan).
    Scalar { threshold: f64 },
    /// Quantile offset added to the penalty curve (DS / SAC).
    Offset { threshold: f64 },
    /// Per-block threshold (Blocked / Bonferroni).
    Block { block: usize, threshold: f64 },
}

/// Persisted rejection thresholds for one `(n, model, calibration, alpha)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CritTable {
    pub schema_version: u32,
    pub n: usize,
    pub model: String,
    pub stat: String,
    pub calibration: CalibrationKind,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alpha_tilde: Option<f64>,
    #[serde(skip_serializing_if = "std::ops::Not::not", default)]
    pub alpha_tilde_warning: bool,
    pub n_sims: usize,
    pub seed: u64,
    pub max_window: usize,
    pub source: IntervalSource,
    pub entries: Vec<CritEntry>,
}

impl CritTable {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::TableIo(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let table: CritTable =
            serde_json::from_str(s).map_err(|e| Error::TableIo(e.to_string()))?;
        if table.schema_version != 1 {
            return Err(Error::TableIo(format!(
                "unsupported schema version {}",
                table.schema_version
            )));
        }
        Ok(table)
    }

    /// The scalar threshold (Scan tables).
    pub fn scalar(&self) -> Option<f64> {
        self.entries.iter().find_map(|e| match e {
            CritEntry::Scalar { threshold } => Some(*threshold),
            _ => None,
        })
    }

    /// The quantile offset (DS / SAC tables).
    pub fn offset(&self) -> Option<f64> {
        self.entries.iter().find_map(|e| match e {
            CritEntry::Offset { threshold } => Some(*threshold),
            _ => None,
        })
    }

    /// Threshold of block `b` (Blocked / Bonferroni tables).
    pub fn block_threshold(&self, b: usize) -> Option<f64> {
        self.entries.iter().find_map(|e| match e {
            CritEntry::Block { block, threshold } if *block == b => Some(*threshold),
            _ => None,
        })
    }

    /// Effective rejection threshold for `T_I` at window length `w`
    /// (reconstructs the critical-value curve of the figures).
    pub fn effective_threshold(&self, w: usize) -> Option<f64> {
        if w == 0 || w > self.max_window {
            return None;
        }
        match self.calibration {
            CalibrationKind::Scan => self.scalar(),
            CalibrationKind::Ds => self.offset().map(|q| penalty_ds(self.n, w) + q),
            CalibrationKind::Sac => self.offset().map(|q| penalty_sac(self.n, w) + q),
            CalibrationKind::Blocked | CalibrationKind::Bonferroni => {
                let partition = blocks(self.n).ok()?;
                let b = partition.block_of_len(w)?;
                self.block_threshold(b)
            }
        }
    }
}

/// Result of the blocked-scan level search.
#[derive(Debug, Clone)]
pub struct BlockedCalibration {
    pub alpha_tilde: f64,
    /// `thresholds[b-1]` = empirical `(1 - α̃/b)`-quantile of block `b` maxima.
    pub thresholds: Vec<f64>,
    pub achieved_level: f64,
    /// Set when no grid value met the level and the smallest was returned.
    pub warning: bool,
}

const ALPHA_TILDE_STEP: f64 = 1e-3;

/// Find the largest `α̃` on a `1e-3` grid (capped at `α`) such that the
/// fraction of replicates with any block maximum above its empirical
/// `(1 − α̃/B)`-quantile stays `<= α`.
pub fn calibrate_blocked_alpha(records: &NullMaximaRecords, alpha: f64) -> Result<BlockedCalibration> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let b_max = records.per_block.len();
    if b_max == 0 {
        return Err(Error::invalid("records carry no block maxima".to_string()));
    }
    let m = records.global.len();
    if m == 0 {
        return Err(Error::EmptySample);
    }
    let mut sorted: Vec<Vec<f64>> = records.per_block.clone();
    for col in &mut sorted {
        col.sort_unstable_by(f64::total_cmp);
    }
    let thresholds_at = |alpha_tilde: f64| -> Vec<f64> {
        (1..=b_max)
            .map(|b| {
                let level = 1.0 - alpha_tilde / b as f64;
                let idx = ((level * m as f64).ceil() as usize).clamp(1, m);
                sorted[b - 1][idx - 1]
            })
            .collect()
    };
    let achieved = |thresholds: &[f64]| -> f64 {
        let mut rejected = 0usize;
        for rep in 0..m {
            if (0..b_max).any(|b| records.per_block[b][rep] > thresholds[b]) {
                rejected += 1;
            }
        }
        rejected as f64 / m as f64
    };

    let steps = ((alpha / ALPHA_TILDE_STEP) + 1e-9).floor() as usize;
    let grid: Vec<f64> = if steps == 0 {
        vec![alpha]
    } else {
        (1..=steps).map(|k| k as f64 * ALPHA_TILDE_STEP).collect()
    };
    for &alpha_tilde in grid.iter().rev() {
        let thresholds = thresholds_at(alpha_tilde);
        let level = achieved(&thresholds);
        if level <= alpha {
            return Ok(BlockedCalibration { alpha_tilde, thresholds, achieved_level: level, warning: false });
        }
    }
    let alpha_tilde = grid[0];
    let thresholds = thresholds_at(alpha_tilde);
    let achieved_level = achieved(&thresholds);
    Ok(BlockedCalibration { alpha_tilde, thresholds, achieved_level, warning: true })
}

/// Bonferroni threshold for block `b`: the smallest `t` with
/// `tail_prob(t) <= α / (block_size · b · H(b_max))`, taken over every
/// window length the block contains (so the union bound holds for each).
pub fn bonferroni_threshold(
    b: usize,
    block_size: usize,
    b_max: usize,
    alpha: f64,
    kind: &LocalStatKind,
    n: usize,
    lengths: &[usize],
) -> Result<f64> {
    if block_size == 0 || b == 0 || b > b_max {
        return Err(Error::invalid(format!(
            "bonferroni block out of range: b={b}, b_max={b_max}, size={block_size}"
        )));
    }
    let level = alpha / (block_size as f64 * b as f64 * harmonic(b_max));
    if !(level > 0.0) || level < f64::MIN_POSITIVE {
        return Err(Error::LevelUnderflow { level });
    }
    let lengths = if lengths.is_empty() { &[1][..] } else { lengths };
    let mut threshold: f64 = 0.0;
    for &w in lengths {
        threshold = threshold.max(solve_tail_threshold(kind, level, w, n)?);
    }
    Ok(threshold)
}

/// Smallest `t >= 0` with `kind.tail_prob(t, w, n) <= level`.
fn solve_tail_threshold(kind: &LocalStatKind, level: f64, w: usize, n: usize) -> Result<f64> {
    // exact normal tails invert directly
    let gaussian_tail = matches!(
        kind,
        LocalStatKind::GaussKnown
            | LocalStatKind::GaussBaseline { .. }
            | LocalStatKind::GaussStudentized
            | LocalStatKind::ExpFam { analytic_tail: false, .. }
    );
    if gaussian_tail {
        return normal_upper_quantile(level);
    }
    if kind.tail_prob(0.0, w, n) <= level {
        return Ok(0.0);
    }
    let mut hi = 2.0f64;
    while kind.tail_prob(hi, w, n) > level {
        hi *= 2.0;
        if hi > 1e7 {
            return Err(Error::LevelUnderflow { level });
        }
    }
    let mut lo = 0.0f64;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kind.tail_prob(mid, w, n) <= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Build a critical-value table from a calibration request and (for the
/// simulation-based calibrations) a matching batch of null maxima.
pub fn build_crit_table(
    cal: &Calibration,
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    records: Option<&NullMaximaRecords>,
) -> Result<CritTable> {
    cal.validate()?;
    let mut table = CritTable {
        schema_version: 1,
        n: geom.n,
        model: model.label(),
        stat: kind.label(),
        calibration: cal.kind,
        alpha: cal.alpha,
        alpha_tilde: None,
        alpha_tilde_warning: false,
        n_sims: cal.sims,
        seed: cal.seed,
        max_window: geom.max_window,
        source: geom.source,
        entries: Vec::new(),
    };

    match cal.kind {
        CalibrationKind::Scan | CalibrationKind::Ds | CalibrationKind::Sac | CalibrationKind::Blocked => {
            let records = records.ok_or_else(|| {
                Error::MetadataMismatch(format!("{} calibration needs null records", cal.kind))
            })?;
            check_records_match(cal, kind, geom, model, records)?;
            match cal.kind {
                CalibrationKind::Scan => {
                    let q = empirical_quantile(&records.global, 1.0 - cal.alpha)?;
                    table.entries.push(CritEntry::Scalar { threshold: q });
                }
                CalibrationKind::Ds => {
                    let q = empirical_quantile(&records.ds, 1.0 - cal.alpha)?;
                    table.entries.push(CritEntry::Offset { threshold: q });
                }
                CalibrationKind::Sac => {
                    let q = empirical_quantile(&records.sac, 1.0 - cal.alpha)?;
                    table.entries.push(CritEntry::Offset { threshold: q });
                }
                CalibrationKind::Blocked => {
                    let blocked = calibrate_blocked_alpha(records, cal.alpha)?;
                    table.alpha_tilde = Some(blocked.alpha_tilde);
                    table.alpha_tilde_warning = blocked.warning;
                    for (idx, &thr) in blocked.thresholds.iter().enumerate() {
                        table.entries.push(CritEntry::Block { block: idx + 1, threshold: thr });
                    }
                }
                CalibrationKind::Bonferroni => unreachable!(),
            }
        }
        CalibrationKind::Bonferroni => {
            if geom.source != IntervalSource::Approx {
                return Err(Error::Incompatible(
                    "the Bonferroni scan is defined on the approximating interval set; \
                     rebuild the geometry with source=approx"
                        .into(),
                ));
            }
            let b_max = geom.b_max();
            if b_max == 0 {
                return Err(Error::TooSmall { n: geom.n, what: "no block partition for bonferroni" });
            }
            let sizes = geom.block_sizes();
            for b in 1..=b_max {
                if sizes[b - 1] == 0 {
                    continue;
                }
                let lengths = geom.lengths_in_block(b);
                let thr =
                    bonferroni_threshold(b, sizes[b - 1], b_max, cal.alpha, kind, geom.n, &lengths)?;
                table.entries.push(CritEntry::Block { block: b, threshold: thr });
            }
        }
    }

    // thresholds must be finite, and effective thresholds positive
    for class in &geom.classes {
        if let Some(thr) = table.effective_threshold(class.len) {
            if !thr.is_finite() || thr <= 0.0 {
                return Err(Error::MetadataMismatch(format!(
                    "non-positive effective threshold {thr} at window length {}",
                    class.len
                )));
            }
        }
    }
    Ok(table)
}

fn check_records_match(
    cal: &Calibration,
    kind: &LocalStatKind,
    geom: &ScanGeometry,
    model: &NullModel,
    records: &NullMaximaRecords,
) -> Result<()> {
    let meta = &records.meta;
    let want = SimMeta {
        n: geom.n,
        model: model.label(),
        stat: kind.label(),
        source: geom.source,
        max_window: geom.max_window,
        sims: cal.sims,
        seed: cal.seed,
        b_max: geom.b_max(),
    };
    if *meta != want {
        return Err(Error::MetadataMismatch(format!(
            "records {meta:?} do not match request {want:?}"
        )));
    }
    if records.global.len() != meta.sims {
        return Err(Error::MetadataMismatch(format!(
            "records hold {} replicates, metadata says {}",
            records.global.len(),
            meta.sims
        )));
    }
    Ok(())
}

/// How a table's thresholds apply to sweep maxima.
#[derive(Debug, Clone)]
pub enum DecisionRule {
    Scalar(f64),
    DsOffset(f64),
    SacOffset(f64),
    /// `thresholds[b-1]`, `+inf` for blocks without a stored entry.
    Blocks(Vec<f64>),
}

impl DecisionRule {
    /// Extract the rule from a table (geometry supplies `b_max`).
    pub fn from_table(table: &CritTable, geom: &ScanGeometry) -> Result<Self> {
        match table.calibration {
            CalibrationKind::Scan => table
                .scalar()
                .map(DecisionRule::Scalar)
                .ok_or_else(|| Error::TableIo("scan table lacks a scalar entry".into())),
            CalibrationKind::Ds => table
                .offset()
                .map(DecisionRule::DsOffset)
                .ok_or_else(|| Error::TableIo("ds table lacks an offset entry".into())),
            CalibrationKind::Sac => table
                .offset()
                .map(DecisionRule::SacOffset)
                .ok_or_else(|| Error::TableIo("sac table lacks an offset entry".into())),
            CalibrationKind::Blocked | CalibrationKind::Bonferroni => {
                let b_max = geom.b_max();
                let mut thresholds = vec![f64::INFINITY; b_max];
                for b in 1..=b_max {
                    if let Some(t) = table.block_threshold(b) {
                        thresholds[b - 1] = t;
                    }
                }
                Ok(DecisionRule::Blocks(thresholds))
            }
        }
    }

    /// Does a replicate with these sweep maxima reject?
    pub fn rejects(&self, maxima: &SweepMaxima) -> bool {
        match self {
            DecisionRule::Scalar(c) => maxima.global > *c,
            DecisionRule::DsOffset(q) => maxima.ds > *q,
            DecisionRule::SacOffset(q) => maxima.sac > *q,
            DecisionRule::Blocks(th) => {
                maxima.per_block.iter().zip(th).any(|(m, t)| *m > *t)
            }
        }
    }

    /// Per-class rejection threshold for `T_I` (`+inf` when the class is not
    /// tested by this calibration).
    pub fn class_threshold(&self, geom: &ScanGeometry, class_idx: usize) -> f64 {
        let class = &geom.classes[class_idx];
        match self {
            DecisionRule::Scalar(c) => *c,
            DecisionRule::DsOffset(q) => geom.pen_ds[class_idx] + q,
            DecisionRule::SacOffset(q) => geom.pen_sac[class_idx] + q,
            DecisionRule::Blocks(th) => match class.block {
                Some(b) => th[b - 1],
                None => f64::INFINITY,
            },
        }
    }
}

/// One interval whose statistic exceeded its threshold.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Exceedance {
    pub interval: Interval,
    pub stat: f64,
    pub threshold: f64,
}

/// Outcome of [`run_test`].
#[derive(Debug, Clone, Serialize)]
pub struct TestDecision {
    pub reject: bool,
    /// Every interval with `T_I > threshold`.
    pub exceedances: Vec<Exceedance>,
    /// The interval maximizing `T_I - threshold` over all tested intervals.
    pub argmax: Option<Exceedance>,
}

/// Evaluate the test on `data`: compare `T_I` against the table's thresholds
/// over the table's interval source and report all exceedances plus the
/// argmax of `T_I - threshold`.
pub fn run_test(
    data: &[f64],
    kind: &LocalStatKind,
    cal: &Calibration,
    table: &CritTable,
) -> Result<TestDecision> {
    if data.len() != table.n {
        return Err(Error::MetadataMismatch(format!(
            "data length {} does not match table n={}",
            data.len(),
            table.n
        )));
    }
    if table.calibration != cal.kind {
        return Err(Error::MetadataMismatch(format!(
            "table calibration {} does not match request {}",
            table.calibration, cal.kind
        )));
    }
    if (table.alpha - cal.alpha).abs() > 1e-12 {
        return Err(Error::MetadataMismatch(format!(
            "table alpha {} does not match request {}",
            table.alpha, cal.alpha
        )));
    }
    if table.stat != kind.label() {
        return Err(Error::MetadataMismatch(format!(
            "table statistic '{}' does not match request '{}'",
            table.stat,
            kind.label()
        )));
    }
    let geom = ScanGeometry::for_table(table)?;
    let rule = DecisionRule::from_table(table, &geom)?;

    let mut exceedances = Vec::new();
    let mut argmax: Option<Exceedance> = None;

    if matches!(kind, LocalStatKind::SelfNormalized) {
        // no window-sum reduction exists; evaluate per interval (intervals
        // reaching past the per-length trimmed tail are skipped)
        for (idx, class) in geom.classes.iter().enumerate() {
            let thr = rule.class_threshold(&geom, idx);
            if !thr.is_finite() {
                continue;
            }
            for iv in geom.class_intervals(class) {
                let t = match crate::local_stats::t_self_normalized(data, iv) {
                    Ok(t) => t,
                    Err(Error::Incompatible(_)) => continue,
                    Err(e) => return Err(e),
                };
                record(&mut exceedances, &mut argmax, iv, t, thr);
            }
        }
    } else {
        let scanner = WindowScanner::prepare(kind, data)?;
        let s = scanner.prefix_sums();
        for (idx, class) in geom.classes.iter().enumerate() {
            let thr = rule.class_threshold(&geom, idx);
            if !thr.is_finite() {
                continue;
            }
            for iv in geom.class_intervals(class) {
                let t = scanner.eval_sum(s[iv.k] - s[iv.j], class.len);
                record(&mut exceedances, &mut argmax, iv, t, thr);
            }
        }
    }

    Ok(TestDecision { reject: !exceedances.is_empty(), exceedances, argmax })
}

fn record(
    exceedances: &mut Vec<Exceedance>,
    argmax: &mut Option<Exceedance>,
    iv: Interval,
    t: f64,
    thr: f64,
) {
    let entry = Exceedance { interval: iv, stat: t, threshold: thr };
    if t > thr {
        exceedances.push(entry);
    }
    let better = match argmax {
        None => true,
        Some(best) => t - thr > best.stat - best.threshold,
    };
    if better {
        *argmax = Some(entry);
    }
}
