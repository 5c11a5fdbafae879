//! Local statistics `T_I` and their null tail bounds.
//!
//! Every statistic here is standardized so that, under the null, `T_I` is
//! (sub-)Gaussian with scale close to 1; that is what makes the penalty and
//! Bonferroni calibrations portable across distributional settings. The
//! variants:
//!
//! * `GaussKnown` — `Σ_{i∈I} Y_i / sqrt(|I|)`, the known-baseline Gaussian
//!   statistic,
//! * `GaussBaseline` — `(Ȳ_I − Ȳ) sqrt(n|I|/(n−|I|)) / σ`, unknown baseline,
//!   known variance,
//! * `GaussStudentized` — the same with the overall sample standard deviation
//!   in place of `σ`; empirical centering restores the normal tail bound for
//!   `t >= 2.5, n >= 10` (or `t >= 2.75, n >= 6`),
//! * `ExpFam` — the signed root `sign(Ȳ_I − Ȳ) sqrt(2 logLR_{I,I^c})` of the
//!   generalized likelihood ratio for a natural exponential family; satisfies
//!   `P(T > t) <= (2+e) exp(-t²/2)` one-sided,
//! * `SelfNormalized` — interval sum of complement-differenced observations
//!   over the root of their squared sum; handles heteroscedastic symmetric
//!   noise,
//! * `WilcoxonRank` / `SignTest` — rank and sign scans for exchangeable data.
//!
//! All statistics used for scanning are monotone in the raw window sum, so a
//! scan over a length class reduces to one sliding-window maximum plus a
//! single statistic evaluation.

use serde::{Deserialize, Serialize};

use crate::interval_sets::Interval;
use crate::numerics::{
    hypergeometric_upper_tail, normal_pdf, normal_sf, xlnx, PrefixTable,
};
use crate::{Error, Result};

/// A natural exponential family, described by what the signed-root statistic
/// needs: the per-observation supremum `φ(x) = sup_θ (θx − A(θ))` evaluated
/// at a sample mean, plus `A` and `A'` for the known-parameter variant.
#[derive(Clone)]
pub enum ExpFamily {
    Bernoulli,
    Poisson,
    /// `N(θ, σ²)` with known `σ`; included mainly because its signed root
    /// collapses to the Gaussian baseline statistic, which pins the algebra.
    Gaussian { sigma: f64 },
    /// User-supplied family via `A`, `A' = mean`, and `(A')⁻¹`.
    Custom {
        log_partition: fn(f64) -> f64,
        mean: fn(f64) -> f64,
        mean_inverse: fn(f64) -> f64,
    },
}

impl std::fmt::Debug for ExpFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ExpFamily::Bernoulli => "Bernoulli",
            ExpFamily::Poisson => "Poisson",
            ExpFamily::Gaussian { .. } => "Gaussian",
            ExpFamily::Custom { .. } => "Custom",
        })
    }
}

impl ExpFamily {
    /// Domain check for a sample mean.
    fn check_mean(&self, x: f64) -> Result<()> {
        let ok = match self {
            ExpFamily::Bernoulli => (-1e-12..=1.0 + 1e-12).contains(&x),
            ExpFamily::Poisson => x >= -1e-12,
            _ => x.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("mean {x} outside the {self:?} family domain")))
        }
    }

    /// `φ(x) = θ̂ x − A(θ̂)` with `θ̂ = (A')⁻¹(x)`; conventions `0 ln 0 = 0`.
    fn sup_unit(&self, x: f64) -> f64 {
        match self {
            ExpFamily::Bernoulli => {
                let x = x.clamp(0.0, 1.0);
                xlnx(x) + xlnx(1.0 - x)
            }
            ExpFamily::Poisson => {
                let x = x.max(0.0);
                xlnx(x) - x
            }
            ExpFamily::Gaussian { sigma } => x * x / (2.0 * sigma * sigma),
            ExpFamily::Custom { log_partition, mean_inverse, .. } => {
                let theta = mean_inverse(x);
                theta * x - log_partition(theta)
            }
        }
    }

    /// Log-partition `A(θ)`.
    fn log_partition(&self, theta: f64) -> f64 {
        match self {
            ExpFamily::Bernoulli => theta.exp().ln_1p(),
            ExpFamily::Poisson => theta.exp(),
            ExpFamily::Gaussian { sigma } => theta * theta * sigma * sigma / 2.0,
            ExpFamily::Custom { log_partition, .. } => log_partition(theta),
        }
    }

    /// Mean parametrization `A'(θ)`.
    fn mean_of(&self, theta: f64) -> f64 {
        match self {
            ExpFamily::Bernoulli => {
                let e = theta.exp();
                e / (1.0 + e)
            }
            ExpFamily::Poisson => theta.exp(),
            ExpFamily::Gaussian { sigma } => theta * sigma * sigma,
            ExpFamily::Custom { mean, .. } => mean(theta),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ExpFamily::Bernoulli => "bernoulli",
            ExpFamily::Poisson => "poisson",
            ExpFamily::Gaussian { .. } => "gaussian",
            ExpFamily::Custom { .. } => "custom",
        }
    }
}

/// Tagged family of local statistics, each exposing the statistic itself and
/// an upper bound on its null tail (consumed by the Bonferroni scan).
#[derive(Debug, Clone)]
pub enum LocalStatKind {
    GaussKnown,
    GaussBaseline { sigma: f64 },
    GaussStudentized,
    ExpFam {
        family: ExpFamily,
        /// Use the finite-sample `(2+e) e^{-t²/2}` bound instead of the
        /// standard normal approximation when solving for thresholds. The
        /// analytic bound is conservative by roughly a factor of ten, so the
        /// normal approximation is the default.
        analytic_tail: bool,
    },
    SelfNormalized,
    WilcoxonRank,
    SignTest,
}

impl LocalStatKind {
    pub fn label(&self) -> String {
        match self {
            LocalStatKind::GaussKnown => "gauss-known".into(),
            LocalStatKind::GaussBaseline { .. } => "gauss-baseline".into(),
            LocalStatKind::GaussStudentized => "studentized".into(),
            LocalStatKind::ExpFam { family, analytic_tail } => {
                if *analytic_tail {
                    format!("expfam-{}-analytic", family.label())
                } else {
                    format!("expfam-{}", family.label())
                }
            }
            LocalStatKind::SelfNormalized => "self-normalized".into(),
            LocalStatKind::WilcoxonRank => "wilcoxon".into(),
            LocalStatKind::SignTest => "sign".into(),
        }
    }

    /// Data-free upper bound on the null `P(T_I >= t)` for a window of
    /// length `w` out of `n`. Non-increasing in `t` and capped at 1.
    pub fn tail_prob(&self, t: f64, w: usize, n: usize) -> f64 {
        match self {
            LocalStatKind::GaussKnown
            | LocalStatKind::GaussBaseline { .. }
            | LocalStatKind::GaussStudentized => normal_sf(t).min(1.0),
            LocalStatKind::ExpFam { analytic_tail, .. } => {
                if *analytic_tail {
                    expfam_tail_bound(t)
                } else {
                    normal_sf(t).min(1.0)
                }
            }
            LocalStatKind::SelfNormalized => selfnorm_tail_bound(t),
            LocalStatKind::WilcoxonRank => wilcoxon_tail_bound(t, w, n),
            LocalStatKind::SignTest => sign_tail_prob(t, w, n, n - n / 2),
        }
    }

    /// Whether null critical values can be produced by simulation. The
    /// self-normalized statistic targets unknown heteroscedastic noise, so
    /// there is nothing to simulate from; only the Bonferroni scan applies.
    pub fn supports_simulated_calibration(&self) -> bool {
        !matches!(self, LocalStatKind::SelfNormalized)
    }
}

/// Eq.-(3)-style statistic: `Σ_{i∈I} Y_i / sqrt(|I|)`.
pub fn t_gauss_known(prefix: &PrefixTable, iv: Interval) -> Result<f64> {
    Ok(prefix.interval_sum(iv)? / (iv.len() as f64).sqrt())
}

/// Unknown-baseline, known-variance statistic
/// `(Ȳ_I − Ȳ) sqrt(n|I|/(n−|I|)) / σ`.
pub fn t_gauss_baseline(prefix: &PrefixTable, iv: Interval, sigma: f64) -> Result<f64> {
    if sigma <= 0.0 {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let n = prefix.n();
    if iv.len() >= n {
        return Err(Error::invalid("baseline statistic needs |I| < n".to_string()));
    }
    let sum = prefix.interval_sum(iv)?;
    let w = iv.len() as f64;
    let nf = n as f64;
    let mean_i = sum / w;
    let mean = prefix.total() / nf;
    Ok((mean_i - mean) / sigma * (nf * w / (nf - w)).sqrt())
}

/// Studentized statistic: the baseline form with the overall sample standard
/// deviation; invariant under affine maps `Y -> aY + b`, `a > 0`.
pub fn t_gauss_studentized(prefix: &PrefixTable, iv: Interval) -> Result<f64> {
    let n = prefix.n();
    if n < 2 {
        return Err(Error::invalid("studentized statistic needs n >= 2".to_string()));
    }
    if iv.len() >= n {
        return Err(Error::invalid("studentized statistic needs |I| < n".to_string()));
    }
    let nf = n as f64;
    let total = prefix.total();
    let ss = prefix.total_sq() - total * total / nf;
    let var = ss / (nf - 1.0);
    if !(var > 1e-12 * (prefix.total_sq() / nf).max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateData("zero sample variance".into()));
    }
    let sum = prefix.interval_sum(iv)?;
    let w = iv.len() as f64;
    let mean_i = sum / w;
    let mean = total / nf;
    Ok((mean_i - mean) / var.sqrt() * (nf * w / (nf - w)).sqrt())
}

/// Signed root of the generalized log likelihood ratio for an exponential
/// family, from precomputed sums: `sign(Ȳ_I − Ȳ) sqrt(2 logLR_{I,I^c})`,
/// each supremum solved at `θ̂ = (A')⁻¹(sample mean)`.
pub fn signed_root_from_sums(
    family: &ExpFamily,
    sum_i: f64,
    w: usize,
    total: f64,
    n: usize,
) -> Result<f64> {
    if w >= n {
        return Err(Error::invalid("signed root needs |I| < n".to_string()));
    }
    let wf = w as f64;
    let nf = n as f64;
    let mean_i = sum_i / wf;
    let mean_c = (total - sum_i) / (nf - wf);
    let grand = total / nf;
    family.check_mean(mean_i)?;
    family.check_mean(mean_c)?;
    family.check_mean(grand)?;
    let loglr =
        wf * family.sup_unit(mean_i) + (nf - wf) * family.sup_unit(mean_c) - nf * family.sup_unit(grand);
    let t = (2.0 * loglr.max(0.0)).sqrt();
    Ok(if mean_i >= grand { t } else { -t })
}

/// Signed root of `logLR_{I,I^c}(θ̂_[n])` for the interval `I`.
pub fn signed_root_loglr_expfam(
    prefix: &PrefixTable,
    iv: Interval,
    family: &ExpFamily,
) -> Result<f64> {
    let sum = prefix.interval_sum(iv)?;
    signed_root_from_sums(family, sum, iv.len(), prefix.total(), prefix.n())
}

/// Known-parameter variant: signed root of
/// `logLR_I(θ0) = sup_θ ((θ−θ0) Σ_I Y − |I| (A(θ) − A(θ0)))`.
///
/// For `N(θ, 1)` with `θ0 = 0` this equals [`t_gauss_known`] exactly.
pub fn signed_root_loglr_known(
    prefix: &PrefixTable,
    iv: Interval,
    family: &ExpFamily,
    theta0: f64,
) -> Result<f64> {
    let sum = prefix.interval_sum(iv)?;
    let w = iv.len() as f64;
    let mean_i = sum / w;
    family.check_mean(mean_i)?;
    let loglr = w * (family.sup_unit(mean_i) - (theta0 * mean_i - family.log_partition(theta0)));
    let t = (2.0 * loglr.max(0.0)).sqrt();
    Ok(if mean_i >= family.mean_of(theta0) { t } else { -t })
}

/// One-sided tail bound for the signed-root exponential family statistic:
/// `min(1, (2+e) exp(-t²/2))`.
pub fn expfam_tail_bound(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    ((2.0 + std::f64::consts::E) * (-0.5 * t * t).exp()).min(1.0)
}

/// Partition context for the self-normalized statistic: the complement of
/// `I` (after trimming the series to `n = |I| p`) split into `|I|` index
/// sets of `p − 1` elements each.
#[derive(Debug, Clone)]
pub struct SelfNormContext {
    pub interval: Interval,
    pub p: usize,
    pub n_trim: usize,
    /// `partition[slot]` holds the complement indices differenced against
    /// the `slot`-th element of `I`.
    pub partition: Vec<Vec<usize>>,
}

impl SelfNormContext {
    pub fn build(n: usize, iv: Interval) -> Result<Self> {
        let w = iv.len();
        let p = n / w;
        if p < 2 {
            return Err(Error::invalid(format!(
                "self-normalized statistic needs n >= 2|I| (n={n}, |I|={w})"
            )));
        }
        let n_trim = p * w;
        if iv.k > n_trim {
            return Err(Error::Incompatible(format!(
                "interval {iv} extends past the trimmed length {n_trim}"
            )));
        }
        let mut partition = vec![Vec::with_capacity(p - 1); w];
        for (idx, pos) in (0..iv.j).chain(iv.k..n_trim).enumerate() {
            partition[idx % w].push(pos);
        }
        Ok(SelfNormContext { interval: iv, p, n_trim, partition })
    }

    /// `Ỹ_i = Y_i − mean(Y over J_i)` for each `i ∈ I`.
    pub fn transformed(&self, data: &[f64]) -> Vec<f64> {
        let w = self.interval.len();
        (0..w)
            .map(|slot| {
                let js = &self.partition[slot];
                let m: f64 = js.iter().map(|&p| data[p]).sum::<f64>() / js.len() as f64;
                data[self.interval.j + slot] - m
            })
            .collect()
    }
}

/// Self-normalized statistic `Σ_{i∈I} Ỹ_i / sqrt(Σ_{i∈I} Ỹ_i²)`.
pub fn t_self_normalized(data: &[f64], iv: Interval) -> Result<f64> {
    let ctx = SelfNormContext::build(data.len(), iv)?;
    let yt = ctx.transformed(data);
    let num: f64 = yt.iter().sum();
    let den: f64 = yt.iter().map(|y| y * y).sum::<f64>().sqrt();
    if den == 0.0 {
        return Err(Error::DegenerateData(
            "self-normalized denominator is zero (all transformed values vanish)".into(),
        ));
    }
    Ok(num / den)
}

/// The factor `g(t) = 1 + 14.11 φ(t) / ((9 + t²)(1 − Φ(t)))`.
pub fn selfnorm_g(t: f64) -> f64 {
    1.0 + 14.11 * normal_pdf(t) / ((9.0 + t * t) * normal_sf(t))
}

/// Tail bound for the self-normalized statistic:
/// `min(1, min(3.18, g(t)) (1 − Φ(t)))`.
pub fn selfnorm_tail_bound(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    (selfnorm_g(t).min(3.18) * normal_sf(t)).min(1.0)
}

/// Midranks of `data` (ties get the average rank); ranks are in `1..=n`.
pub fn midranks(data: &[f64]) -> Vec<f64> {
    let n = data.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_unstable_by(|&a, &b| data[a].total_cmp(&data[b]));
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && data[idx[j + 1]] == data[idx[i]] {
            j += 1;
        }
        let avg = (i + j + 2) as f64 / 2.0; // mean of ranks i+1 ..= j+1
        for &pos in &idx[i..=j] {
            out[pos] = avg;
        }
        i = j + 1;
    }
    out
}

/// Wilcoxon rank-sum scan statistic on precomputed ranks:
/// `sqrt(12|I|/((n+1)(n−|I|))) ((1/|I|) Σ_{i∈I} R_i − (n+1)/2)`.
pub fn t_wilcoxon(ranks: &[f64], iv: Interval) -> Result<f64> {
    let n = ranks.len();
    if iv.len() >= n {
        return Err(Error::invalid("wilcoxon statistic needs |I| < n".to_string()));
    }
    if iv.k > n {
        return Err(Error::InvalidInterval { j: iv.j, k: iv.k, n });
    }
    let w = iv.len() as f64;
    let nf = n as f64;
    let mean_rank: f64 = ranks[iv.j..iv.k].iter().sum::<f64>() / w;
    Ok((12.0 * w / ((nf + 1.0) * (nf - w))).sqrt() * (mean_rank - (nf + 1.0) / 2.0))
}

/// Tail bound `P(T_I > t) <= exp(-u²/2)` with `u = sqrt((n−|I|)/(n+1)) t`
/// (the finite-population correction taken out), capped at 1.
pub fn wilcoxon_tail_bound(t: f64, w: usize, n: usize) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    let u2 = (n - w) as f64 / (n as f64 + 1.0) * t * t;
    (-0.5 * u2).exp().min(1.0)
}

/// Sample median; for even `n` the average of the two central order
/// statistics.
pub fn sample_median(data: &[f64]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut sorted: Vec<f64> = data.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Sign scan statistic: indicators `1(Y_i >= median)` pushed through the
/// signed-root Bernoulli log likelihood ratio.
pub fn t_sign(data: &[f64], iv: Interval) -> Result<f64> {
    let med = sample_median(data)?;
    let n = data.len();
    if iv.k > n {
        return Err(Error::InvalidInterval { j: iv.j, k: iv.k, n });
    }
    let total: f64 = data.iter().filter(|&&y| y >= med).count() as f64;
    let sum_i = data[iv.j..iv.k].iter().filter(|&&y| y >= med).count() as f64;
    signed_root_from_sums(&ExpFamily::Bernoulli, sum_i, iv.len(), total, n)
}

/// Exact null tail of the sign scan statistic from the hypergeometric count
/// distribution with `K = n − floor(n/2)` values at or above the median:
/// sums the probabilities of all counts whose transformed statistic is `>= t`.
pub fn sign_tail_prob(t: f64, w: usize, n: usize, k_above: usize) -> f64 {
    if w == 0 || w >= n {
        return 1.0;
    }
    let hi = w.min(k_above);
    // the signed root is non-decreasing in the count, so find the first
    // count whose statistic reaches t
    let total = k_above as f64;
    let mut first = None;
    for c in 0..=hi {
        let stat = signed_root_from_sums(&ExpFamily::Bernoulli, c as f64, w, total, n)
            .unwrap_or(f64::NEG_INFINITY);
        if stat >= t {
            first = Some(c as i64);
            break;
        }
    }
    match first {
        None => 0.0,
        Some(c) => hypergeometric_upper_tail(c, n as u64, k_above as u64, w as u64)
            .unwrap_or(1.0),
    }
}

/// A data series prepared for window scanning with a fixed statistic kind.
///
/// `eval_sum(sum, w)` maps a raw window sum (of the transformed series:
/// values, ranks or indicators) to `T_I`; every supported statistic is
/// non-decreasing in the window sum, so per-length maxima of `T_I` come from
/// per-length maxima of window sums.
pub struct WindowScanner {
    prefix: PrefixTable,
    ctx: ScanCtx,
}

enum ScanCtx {
    GaussKnown,
    Baseline { sigma: f64, mean: f64 },
    Studentized { mean: f64, sd: f64 },
    ExpFam { family: ExpFamily, analytic_tail: bool },
    Wilcoxon,
    Sign { k_above: usize },
}

impl WindowScanner {
    pub fn prepare(kind: &LocalStatKind, data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = data.len();
        let nf = n as f64;
        match kind {
            LocalStatKind::GaussKnown => Ok(WindowScanner {
                prefix: PrefixTable::new(data)?,
                ctx: ScanCtx::GaussKnown,
            }),
            LocalStatKind::GaussBaseline { sigma } => {
                if *sigma <= 0.0 {
                    return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
                }
                let prefix = PrefixTable::new(data)?;
                let mean = prefix.total() / nf;
                Ok(WindowScanner { prefix, ctx: ScanCtx::Baseline { sigma: *sigma, mean } })
            }
            LocalStatKind::GaussStudentized => {
                if n < 2 {
                    return Err(Error::invalid("studentized scan needs n >= 2".to_string()));
                }
                let mean = data.iter().sum::<f64>() / nf;
                let ss: f64 = data.iter().map(|y| (y - mean) * (y - mean)).sum();
                let sd = (ss / (nf - 1.0)).sqrt();
                if sd == 0.0 {
                    return Err(Error::DegenerateData("zero sample variance".into()));
                }
                Ok(WindowScanner {
                    prefix: PrefixTable::new(data)?,
                    ctx: ScanCtx::Studentized { mean, sd },
                })
            }
            LocalStatKind::ExpFam { family, analytic_tail } => {
                match family {
                    ExpFamily::Bernoulli => {
                        if data.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
                            return Err(Error::Domain(
                                "bernoulli data must lie in [0,1]".into(),
                            ));
                        }
                    }
                    ExpFamily::Poisson => {
                        if data.iter().any(|&y| y < 0.0) {
                            return Err(Error::Domain("poisson data must be >= 0".into()));
                        }
                    }
                    _ => {}
                }
                Ok(WindowScanner {
                    prefix: PrefixTable::new(data)?,
                    ctx: ScanCtx::ExpFam { family: family.clone(), analytic_tail: *analytic_tail },
                })
            }
            LocalStatKind::WilcoxonRank => {
                let ranks = midranks(data);
                Ok(WindowScanner { prefix: PrefixTable::new(&ranks)?, ctx: ScanCtx::Wilcoxon })
            }
            LocalStatKind::SignTest => {
                let med = sample_median(data)?;
                let ind: Vec<f64> =
                    data.iter().map(|&y| if y >= med { 1.0 } else { 0.0 }).collect();
                let k_above = ind.iter().filter(|&&v| v == 1.0).count();
                Ok(WindowScanner { prefix: PrefixTable::new(&ind)?, ctx: ScanCtx::Sign { k_above } })
            }
            LocalStatKind::SelfNormalized => Err(Error::Incompatible(
                "the self-normalized statistic is not window-sum scannable; \
                 use t_self_normalized per interval"
                    .into(),
            )),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.prefix.n()
    }

    /// Raw prefix array of the transformed series.
    #[inline]
    pub fn prefix_sums(&self) -> &[f64] {
        self.prefix.sums()
    }

    /// Statistic value from a window sum; non-decreasing in `sum` for fixed
    /// `w`.
    pub fn eval_sum(&self, sum: f64, w: usize) -> f64 {
        let n = self.n();
        let nf = n as f64;
        let wf = w as f64;
        match &self.ctx {
            ScanCtx::GaussKnown => sum / wf.sqrt(),
            ScanCtx::Baseline { sigma, mean } => {
                (sum / wf - mean) / sigma * (nf * wf / (nf - wf)).sqrt()
            }
            ScanCtx::Studentized { mean, sd } => {
                (sum / wf - mean) / sd * (nf * wf / (nf - wf)).sqrt()
            }
            ScanCtx::ExpFam { family, .. } => {
                signed_root_from_sums(family, sum, w, self.prefix.total(), n).unwrap_or(0.0)
            }
            ScanCtx::Wilcoxon => {
                (12.0 * wf / ((nf + 1.0) * (nf - wf))).sqrt() * (sum / wf - (nf + 1.0) / 2.0)
            }
            ScanCtx::Sign { .. } => {
                signed_root_from_sums(&ExpFamily::Bernoulli, sum, w, self.prefix.total(), n)
                    .unwrap_or(0.0)
            }
        }
    }

    /// `T_I` for one interval.
    pub fn stat(&self, iv: Interval) -> Result<f64> {
        let sum = self.prefix.interval_sum(iv)?;
        Ok(self.eval_sum(sum, iv.len()))
    }

    /// Upper bound on the null `P(T_I >= t)` for windows of length `w`,
    /// using data context where it sharpens the bound (sign-test counts).
    pub fn tail_prob(&self, t: f64, w: usize) -> f64 {
        let n = self.n();
        match &self.ctx {
            ScanCtx::GaussKnown | ScanCtx::Baseline { .. } | ScanCtx::Studentized { .. } => {
                normal_sf(t).min(1.0)
            }
            ScanCtx::ExpFam { analytic_tail, .. } => {
                if *analytic_tail {
                    expfam_tail_bound(t)
                } else {
                    normal_sf(t).min(1.0)
                }
            }
            ScanCtx::Wilcoxon => wilcoxon_tail_bound(t, w, n),
            ScanCtx::Sign { k_above } => sign_tail_prob(t, w, n, *k_above),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::PrefixTable;

    fn iv(j: usize, k: usize) -> Interval {
        Interval { j, k }
    }

    // deterministic xorshift data for oracle comparisons
    fn pseudo_data(n: usize, seed: u64) -> Vec<f64> {
        let mut state = seed | 1;
        (0..n)
            .map(|_| {
                state ^= state >> 12;
                state ^= state << 25;
                state ^= state >> 27;
                (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 / (1u64 << 53) as f64
                    - 0.5
            })
            .collect()
    }

    #[test]
    fn gauss_known_examples() {
        let p = PrefixTable::new(&[0.0; 8]).unwrap();
        assert_eq!(t_gauss_known(&p, iv(2, 5)).unwrap(), 0.0);
        let p = PrefixTable::new(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(t_gauss_known(&p, iv(0, 4)).unwrap(), 2.0);

        let data = pseudo_data(300, 7);
        let p = PrefixTable::new(&data).unwrap();
        for (j, k) in [(0, 7), (13, 99), (250, 300), (0, 300)] {
            let naive: f64 = data[j..k].iter().sum::<f64>() / ((k - j) as f64).sqrt();
            assert!((t_gauss_known(&p, iv(j, k)).unwrap() - naive).abs() < 1e-10);
        }
    }

    #[test]
    fn gauss_baseline_examples() {
        let p = PrefixTable::new(&[5.0; 6]).unwrap();
        assert_eq!(t_gauss_baseline(&p, iv(1, 3), 2.0).unwrap(), 0.0);

        let p = PrefixTable::new(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        let t = t_gauss_baseline(&p, iv(0, 1), 1.0).unwrap();
        assert!((t - 1.5 * (4.0f64 / 3.0).sqrt()).abs() < 1e-10);
        assert!((t - 1.73205).abs() < 1e-5);
        // doubling sigma halves the statistic
        let th = t_gauss_baseline(&p, iv(0, 1), 2.0).unwrap();
        assert!((t - 2.0 * th).abs() < 1e-12);
        // |I| = n is rejected
        assert!(t_gauss_baseline(&p, iv(0, 4), 1.0).is_err());
    }

    #[test]
    fn studentized_examples() {
        let p = PrefixTable::new(&[2.0, 0.0, 0.0, 0.0]).unwrap();
        let t = t_gauss_studentized(&p, iv(0, 1)).unwrap();
        assert!((t - 1.73205).abs() < 1e-5);

        // affine invariance
        let data = pseudo_data(50, 41);
        let mapped: Vec<f64> = data.iter().map(|y| 3.0 * y + 7.0).collect();
        let p1 = PrefixTable::new(&data).unwrap();
        let p2 = PrefixTable::new(&mapped).unwrap();
        for (j, k) in [(0, 3), (10, 30), (44, 50)] {
            let a = t_gauss_studentized(&p1, iv(j, k)).unwrap();
            let b = t_gauss_studentized(&p2, iv(j, k)).unwrap();
            assert!((a - b).abs() < 1e-10);
        }

        let c = PrefixTable::new(&[4.0; 10]).unwrap();
        assert!(t_gauss_studentized(&c, iv(0, 3)).is_err());
    }

    #[test]
    fn expfam_signed_root_examples() {
        // constant data: all three suprema coincide
        let p = PrefixTable::new(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        let t = signed_root_loglr_expfam(&p, iv(0, 2), &ExpFamily::Poisson).unwrap();
        assert_eq!(t, 0.0);

        // Bernoulli hand example: logLR = 4 ln 2
        let p = PrefixTable::new(&[1.0, 1.0, 0.0, 0.0]).unwrap();
        let t = signed_root_loglr_expfam(&p, iv(0, 2), &ExpFamily::Bernoulli).unwrap();
        assert!((t - (8.0 * 2f64.ln()).sqrt()).abs() < 1e-12);
        assert!((t - 2.35482).abs() < 1e-5);

        // Poisson hand example: logLR = 2 ln 2
        let p = PrefixTable::new(&[2.0, 0.0]).unwrap();
        let t = signed_root_loglr_expfam(&p, iv(0, 1), &ExpFamily::Poisson).unwrap();
        assert!((t - (4.0 * 2f64.ln()).sqrt()).abs() < 1e-12);
        assert!((t - 1.66511).abs() < 1e-5);

        // domain errors
        let bad = PrefixTable::new(&[2.0, 0.0]).unwrap();
        assert!(signed_root_loglr_expfam(&bad, iv(0, 1), &ExpFamily::Bernoulli).is_err());
    }

    #[test]
    fn known_theta_variant_matches_gauss_known() {
        let data = pseudo_data(120, 99);
        let p = PrefixTable::new(&data).unwrap();
        let fam = ExpFamily::Gaussian { sigma: 1.0 };
        for (j, k) in [(0, 1), (5, 40), (100, 120)] {
            let a = signed_root_loglr_known(&p, iv(j, k), &fam, 0.0).unwrap();
            let b = t_gauss_known(&p, iv(j, k)).unwrap();
            assert!((a - b).abs() < 1e-9, "({j},{k}): {a} vs {b}");
        }
    }

    #[test]
    fn gaussian_family_signed_root_matches_baseline_form() {
        let data = pseudo_data(80, 1234);
        let p = PrefixTable::new(&data).unwrap();
        for sigma in [1.0, 0.7] {
            let fam = ExpFamily::Gaussian { sigma };
            for (j, k) in [(0, 1), (3, 17), (40, 79)] {
                let a = signed_root_loglr_expfam(&p, iv(j, k), &fam).unwrap();
                let b = t_gauss_baseline(&p, iv(j, k), sigma).unwrap();
                assert!((a - b).abs() < 1e-9, "({j},{k}) sigma={sigma}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn expfam_tail_bound_values() {
        assert!((expfam_tail_bound(3.0) - 0.052415).abs() < 1e-5);
        assert_eq!(expfam_tail_bound(0.5), 1.0);
        let mut prev = 1.0;
        for i in 1..60 {
            let b = expfam_tail_bound(i as f64 / 10.0);
            assert!(b <= prev + 1e-15);
            prev = b;
        }
    }

    #[test]
    fn self_normalized_examples() {
        let t = t_self_normalized(&[1.0, 2.0, 0.0, 0.0], iv(0, 2)).unwrap();
        assert!((t - 3.0 / 5f64.sqrt()).abs() < 1e-12);
        assert!((t - 1.34164).abs() < 1e-5);

        assert!(t_self_normalized(&[2.0; 8], iv(0, 2)).is_err());

        // scale invariance
        let data = pseudo_data(60, 5);
        let scaled: Vec<f64> = data.iter().map(|y| 17.0 * y).collect();
        let a = t_self_normalized(&data, iv(10, 20)).unwrap();
        let b = t_self_normalized(&scaled, iv(10, 20)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn self_normalized_two_forms_agree() {
        let data = pseudo_data(60, 333);
        for (j, k) in [(0, 10), (12, 32), (5, 20)] {
            let interval = iv(j, k);
            let ctx = SelfNormContext::build(data.len(), interval).unwrap();
            for js in &ctx.partition {
                assert_eq!(js.len(), ctx.p - 1);
            }
            let yt = ctx.transformed(&data);
            let den = yt.iter().map(|y| y * y).sum::<f64>().sqrt();
            // closed form of the numerator on the trimmed series
            let nf = ctx.n_trim as f64;
            let w = interval.len() as f64;
            let mean: f64 = data[..ctx.n_trim].iter().sum::<f64>() / nf;
            let num_closed: f64 = nf / (nf - w)
                * data[interval.j..interval.k].iter().map(|y| y - mean).sum::<f64>();
            let direct = t_self_normalized(&data[..ctx.n_trim], interval).unwrap();
            assert!((direct - num_closed / den).abs() < 1e-10);
        }
    }

    #[test]
    fn selfnorm_bound_values() {
        assert!((selfnorm_g(3.0) - 3.5735).abs() < 2e-4);
        assert!((selfnorm_tail_bound(3.0) - 0.0042927).abs() < 1e-6);
        assert_eq!(selfnorm_tail_bound(1e-9), 1.0);
        // g drops below the 3.18 cap for large t
        for t in [5.0, 6.0, 8.0] {
            assert!(selfnorm_g(t) < 3.18, "g({t}) = {}", selfnorm_g(t));
        }
        assert!(selfnorm_g(3.0) > 3.18);
    }

    #[test]
    fn wilcoxon_examples() {
        let ranks = midranks(&[5.0, 1.0, 3.0]);
        assert_eq!(ranks, vec![3.0, 1.0, 2.0]);
        let t = t_wilcoxon(&ranks, iv(0, 1)).unwrap();
        assert!((t - 1.5f64.sqrt()).abs() < 1e-12);

        // window whose ranks average exactly (n+1)/2 gives 0
        let ranks = midranks(&[1.0, 4.0, 2.0, 3.0]); // ranks 1,4,2,3
        let t = t_wilcoxon(&ranks, iv(0, 2)).unwrap(); // (1+4)/2 = 2.5 = (n+1)/2
        assert_eq!(t, 0.0);
    }

    #[test]
    fn wilcoxon_permutation_null_moments() {
        // exhaustive over all 5! permutations of distinct data
        let base = [1.0f64, 2.0, 3.0, 4.0, 5.0];
        let mut perm = [0usize; 5];
        let mut stats = Vec::new();
        fn permute(
            left: &mut Vec<usize>,
            perm: &mut [usize; 5],
            depth: usize,
            base: &[f64; 5],
            stats: &mut Vec<f64>,
        ) {
            if left.is_empty() {
                let data: Vec<f64> = perm.iter().map(|&i| base[i]).collect();
                let ranks = midranks(&data);
                stats.push(t_wilcoxon(&ranks, Interval { j: 0, k: 2 }).unwrap());
                return;
            }
            for i in 0..left.len() {
                let v = left.remove(i);
                perm[depth] = v;
                permute(left, perm, depth + 1, base, stats);
                left.insert(i, v);
            }
        }
        permute(&mut (0..5).collect(), &mut perm, 0, &base, &mut stats);
        assert_eq!(stats.len(), 120);
        let mean: f64 = stats.iter().sum::<f64>() / 120.0;
        let var: f64 = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 120.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12, "exact permutation variance is 1, got {var}");
    }

    #[test]
    fn sign_test_examples() {
        let t = t_sign(&[1.0, 2.0, 3.0, 4.0], iv(2, 4)).unwrap();
        assert!((t - 2.35482).abs() < 1e-5);
        // indicators balanced on I vs overall -> 0
        let t = t_sign(&[1.0, 4.0, 2.0, 3.0], iv(1, 3)).unwrap();
        assert_eq!(t, 0.0);
    }

    #[test]
    fn sign_tail_matches_hypergeometric_enumeration() {
        // n=8, |I|=3, K=4: compare against direct enumeration over counts
        let (n, w, k_above) = (8usize, 3usize, 4usize);
        for t in [1e-9, 0.5, 1.0, 2.0] {
            let got = sign_tail_prob(t, w, n, k_above);
            let mut want = 0.0;
            for c in 0..=w.min(k_above) {
                let stat =
                    signed_root_from_sums(&ExpFamily::Bernoulli, c as f64, w, k_above as f64, n)
                        .unwrap();
                if stat >= t {
                    // pmf via upper-tail differences
                    let upper = hypergeometric_upper_tail(c as i64, n as u64, k_above as u64, w as u64)
                        .unwrap();
                    let next = hypergeometric_upper_tail(
                        c as i64 + 1,
                        n as u64,
                        k_above as u64,
                        w as u64,
                    )
                    .unwrap();
                    want += upper - next;
                }
            }
            assert!((got - want).abs() < 1e-12, "t={t}: {got} vs {want}");
        }
    }

    #[test]
    fn scanner_matches_pointwise_statistics() {
        let data = pseudo_data(100, 77);
        let counts: Vec<f64> = data.iter().map(|y| (y.abs() * 10.0).floor()).collect();

        let cases: Vec<(LocalStatKind, Box<dyn Fn(Interval) -> f64>)> = vec![
            (LocalStatKind::GaussKnown, {
                let p = PrefixTable::new(&data).unwrap();
                Box::new(move |i| t_gauss_known(&p, i).unwrap())
            }),
            (LocalStatKind::GaussBaseline { sigma: 1.3 }, {
                let p = PrefixTable::new(&data).unwrap();
                Box::new(move |i| t_gauss_baseline(&p, i, 1.3).unwrap())
            }),
            (LocalStatKind::GaussStudentized, {
                let p = PrefixTable::new(&data).unwrap();
                Box::new(move |i| t_gauss_studentized(&p, i).unwrap())
            }),
            (LocalStatKind::WilcoxonRank, {
                let r = midranks(&data);
                Box::new(move |i| t_wilcoxon(&r, i).unwrap())
            }),
            (LocalStatKind::SignTest, {
                let d = data.clone();
                Box::new(move |i| t_sign(&d, i).unwrap())
            }),
        ];
        for (kind, oracle) in cases {
            let scanner = WindowScanner::prepare(&kind, &data).unwrap();
            for (j, k) in [(0, 1), (3, 20), (50, 90)] {
                let got = scanner.stat(iv(j, k)).unwrap();
                assert!(
                    (got - oracle(iv(j, k))).abs() < 1e-10,
                    "{} at ({j},{k})",
                    kind.label()
                );
            }
        }

        let kind = LocalStatKind::ExpFam { family: ExpFamily::Poisson, analytic_tail: false };
        let scanner = WindowScanner::prepare(&kind, &counts).unwrap();
        let p = PrefixTable::new(&counts).unwrap();
        for (j, k) in [(0, 1), (3, 20), (50, 90)] {
            let got = scanner.stat(iv(j, k)).unwrap();
            let want = signed_root_loglr_expfam(&p, iv(j, k), &ExpFamily::Poisson).unwrap();
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn scanner_rejects_self_normalized() {
        let err = WindowScanner::prepare(&LocalStatKind::SelfNormalized, &[1.0, 2.0, 3.0]);
        assert!(err.is_err());
    }

    #[test]
    fn eval_sum_monotone_in_sum() {
        let data = pseudo_data(64, 2024);
        let counts: Vec<f64> = data.iter().map(|y| (y.abs() * 8.0).floor()).collect();
        let kinds = [
            (LocalStatKind::GaussKnown, &data),
            (LocalStatKind::GaussBaseline { sigma: 1.0 }, &data),
            (LocalStatKind::GaussStudentized, &data),
            (LocalStatKind::ExpFam { family: ExpFamily::Poisson, analytic_tail: false }, &counts),
        ];
        for (kind, series) in kinds {
            let s = WindowScanner::prepare(&kind, series).unwrap();
            for w in [1usize, 5, 16] {
                let mut prev = f64::NEG_INFINITY;
                for step in 0..40 {
                    let sum = -4.0 + step as f64 * 0.5;
                    let sum = if matches!(
                        kind,
                        LocalStatKind::ExpFam { .. }
                    ) {
                        sum.max(0.0)
                    } else {
                        sum
                    };
                    let v = s.eval_sum(sum, w);
                    assert!(v >= prev - 1e-12, "{} w={w}", kind.label());
                    prev = v;
                }
            }
        }
    }

    #[test]
    fn tail_bounds_are_probability_caps() {
        let kinds = [
            LocalStatKind::GaussKnown,
            LocalStatKind::GaussStudentized,
            LocalStatKind::ExpFam { family: ExpFamily::Poisson, analytic_tail: true },
            LocalStatKind::ExpFam { family: ExpFamily::Poisson, analytic_tail: false },
            LocalStatKind::SelfNormalized,
            LocalStatKind::WilcoxonRank,
            LocalStatKind::SignTest,
        ];
        for kind in kinds {
            let mut prev = f64::INFINITY;
            for step in 0..80 {
                let t = step as f64 * 0.1;
                let p = kind.tail_prob(t, 5, 40);
                assert!((0.0..=1.0).contains(&p), "{}", kind.label());
                assert!(p <= prev + 1e-12);
                prev = p;
            }
        }
    }
}
