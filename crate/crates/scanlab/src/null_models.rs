//! Null data generation and signal injection.
//!
//! Reproducibility contract: every replicate owns a ChaCha8 stream selected
//! by `(master seed, replicate index)`, so a study produces bit-identical
//! output no matter how replicates are scheduled across workers. Within one
//! stream, word positions are carved into fixed regions:
//!
//! * data region (word 0): Gaussian draws consume the stream sequentially;
//!   count models read one 64-bit uniform per index at word `2 i`, which
//!   makes the uniform for index `i` recoverable by seeking,
//! * placement region: the random start point of a planted signal,
//! * shuffle region: the permutation model's Fisher–Yates draws.
//!
//! Count models sample by inverse CDF from those per-index uniforms. Signal
//! injection at level `mu` re-applies the inverse CDF with the elevated
//! parameter to the *same* uniforms, so the injected data are coordinatewise
//! non-decreasing in `mu` — which is what makes the power study's bisection
//! over `mu` well defined for count data.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::interval_sets::Interval;
use crate::local_stats::ExpFamily;
use crate::{Error, Result};

/// Null hypothesis data model.
#[derive(Debug, Clone)]
pub enum NullModel {
    /// i.i.d. `N(0, 1)`.
    GaussianStd,
    /// i.i.d. `N(0, σ²)`.
    GaussianSigma(f64),
    /// i.i.d. Poisson with baseline mean `μ0`.
    PoissonRate(f64),
    /// i.i.d. Bernoulli with baseline probability `p0`.
    BernoulliP(f64),
    /// Plug-in exponential family: i.i.d. from the family at the mean
    /// estimated from observed data (Bernoulli or Poisson).
    PluginExpFam { family: PluginFamily, mean: f64 },
    /// Uniformly random permutation of a fixed source series.
    Permutation(Arc<Vec<f64>>),
}

/// Families supported by the plug-in sampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PluginFamily {
    Bernoulli,
    Poisson,
}

impl NullModel {
    /// Plug-in model fitted by the null MLE (the grand mean) of `data`.
    pub fn plugin_from_data(family: PluginFamily, data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        let mean = data.iter().sum::<f64>() / data.len() as f64;
        let model = NullModel::PluginExpFam { family, mean };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NullModel::GaussianStd => Ok(()),
            NullModel::GaussianSigma(s) => {
                if *s > 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("sigma must be positive, got {s}")))
                }
            }
            NullModel::PoissonRate(m) => {
                if *m > 0.0 && m.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("poisson rate must be positive, got {m}")))
                }
            }
            NullModel::BernoulliP(p) => {
                if *p > 0.0 && *p < 1.0 {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("bernoulli p must lie in (0,1), got {p}")))
                }
            }
            NullModel::PluginExpFam { family, mean } => match family {
                PluginFamily::Bernoulli => {
                    if *mean >= 0.0 && *mean <= 1.0 {
                        Ok(())
                    } else {
                        Err(Error::invalid(format!("plugin bernoulli mean {mean} outside [0,1]")))
                    }
                }
                PluginFamily::Poisson => {
                    if *mean >= 0.0 && mean.is_finite() {
                        Ok(())
                    } else {
                        Err(Error::invalid(format!("plugin poisson mean {mean} invalid")))
                    }
                }
            },
            NullModel::Permutation(src) => {
                if src.is_empty() {
                    Err(Error::EmptySample)
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            NullModel::GaussianStd => "gaussian".into(),
            NullModel::GaussianSigma(s) => format!("gaussian(sigma={s})"),
            NullModel::PoissonRate(m) => format!("poisson(mu0={m})"),
            NullModel::BernoulliP(p) => format!("bernoulli(p0={p})"),
            NullModel::PluginExpFam { family, mean } => match family {
                PluginFamily::Bernoulli => format!("plugin-bernoulli(mean={mean})"),
                PluginFamily::Poisson => format!("plugin-poisson(mean={mean})"),
            },
            NullModel::Permutation(_) => "permutation".into(),
        }
    }

    /// The matching signed-root statistic family, if this is a count model.
    pub fn expfamily(&self) -> Option<ExpFamily> {
        match self {
            NullModel::PoissonRate(_) => Some(ExpFamily::Poisson),
            NullModel::BernoulliP(_) => Some(ExpFamily::Bernoulli),
            NullModel::PluginExpFam { family: PluginFamily::Poisson, .. } => {
                Some(ExpFamily::Poisson)
            }
            NullModel::PluginExpFam { family: PluginFamily::Bernoulli, .. } => {
                Some(ExpFamily::Bernoulli)
            }
            _ => None,
        }
    }
}

/// A value-type handle on one replicate's random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStream {
    pub master_seed: u64,
    pub stream: u64,
}

const PLACEMENT_REGION: u128 = 1 << 64;
const SHUFFLE_REGION: u128 = (1 << 64) + (1 << 32);

impl RngStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        RngStream { master_seed, stream }
    }

    fn key(&self) -> [u8; 32] {
        // expand the master seed with splitmix64 so neighboring seeds give
        // unrelated keys
        let mut key = [0u8; 32];
        let mut z = self.master_seed;
        for chunk in key.chunks_exact_mut(8) {
            z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut x = z;
            x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            x ^= x >> 31;
            chunk.copy_from_slice(&x.to_le_bytes());
        }
        key
    }

    /// RNG positioned at the start of the data region.
    pub fn data_rng(&self) -> ChaCha8Rng {
        self.rng_at(0)
    }

    fn rng_at(&self, word_pos: u128) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key());
        rng.set_stream(self.stream);
        rng.set_word_pos(word_pos);
        rng
    }

    /// RNG positioned at the per-index uniform for data index `i`.
    fn rng_at_index(&self, i: usize) -> ChaCha8Rng {
        self.rng_at(2 * i as u128)
    }

    fn placement_rng(&self) -> ChaCha8Rng {
        self.rng_at(PLACEMENT_REGION)
    }

    fn shuffle_rng(&self) -> ChaCha8Rng {
        self.rng_at(SHUFFLE_REGION)
    }
}

#[inline]
fn unit_uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Largest elevated Poisson mean the inverse CDF will accept.
const POISSON_MEAN_CAP: f64 = 1e6;

/// Poisson inverse CDF: smallest `k` with `P(X <= k) > u`, monotone
/// non-decreasing in both `u` and `lambda`.
pub fn poisson_inv_cdf(lambda: f64, u: f64) -> Result<f64> {
    if !(lambda >= 0.0) || lambda > POISSON_MEAN_CAP {
        return Err(Error::invalid(format!(
            "poisson mean must lie in [0, {POISSON_MEAN_CAP}], got {lambda}"
        )));
    }
    if lambda == 0.0 {
        return Ok(0.0);
    }
    let cap = (lambda + 40.0 * lambda.sqrt() + 100.0) as usize;
    if lambda <= 700.0 {
        let mut pmf = (-lambda).exp();
        let mut cdf = pmf;
        let mut k = 0usize;
        while u >= cdf && k < cap {
            k += 1;
            pmf *= lambda / k as f64;
            cdf += pmf;
        }
        Ok(k as f64)
    } else {
        // start below the bulk; mass below k_lo is < 1e-31, unreachable by a
        // 53-bit uniform
        let k_lo = (lambda - 12.0 * lambda.sqrt()).floor().max(0.0);
        let mut k = k_lo as usize;
        let mut pmf =
            (k as f64 * lambda.ln() - lambda - libm::lgamma(k as f64 + 1.0)).exp();
        let mut cdf = pmf;
        while u >= cdf && k < cap {
            k += 1;
            pmf *= lambda / k as f64;
            cdf += pmf;
        }
        Ok(k as f64)
    }
}

/// Draw a length-`n` series from `model` on the given stream.
pub fn sample_null(model: &NullModel, n: usize, stream: RngStream) -> Result<Vec<f64>> {
    model.validate()?;
    if n == 0 {
        return Err(Error::EmptySample);
    }
    match model {
        NullModel::GaussianStd => {
            let mut rng = stream.data_rng();
            Ok((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        }
        NullModel::GaussianSigma(s) => {
            let mut rng = stream.data_rng();
            Ok((0..n).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect())
        }
        NullModel::PoissonRate(m)
        | NullModel::PluginExpFam { family: PluginFamily::Poisson, mean: m } => {
            let mut rng = stream.data_rng();
            (0..n).map(|_| poisson_inv_cdf(*m, unit_uniform(&mut rng))).collect()
        }
        NullModel::BernoulliP(p)
        | NullModel::PluginExpFam { family: PluginFamily::Bernoulli, mean: p } => {
            let mut rng = stream.data_rng();
            Ok((0..n)
                .map(|_| if unit_uniform(&mut rng) < *p { 1.0 } else { 0.0 })
                .collect())
        }
        NullModel::Permutation(src) => {
            if src.len() != n {
                return Err(Error::invalid(format!(
                    "permutation source has length {}, requested n={n}",
                    src.len()
                )));
            }
            let mut data = src.as_ref().clone();
            data.shuffle(&mut stream.shuffle_rng());
            Ok(data)
        }
    }
}

/// Plant a one-sided signal of amplitude `mu >= 0` on `I`.
///
/// Gaussian and permutation models shift the values on `I` by `mu`. Count
/// models regenerate the entries on `I` by inverse CDF at the elevated
/// parameter, reusing the per-index uniforms of the null draw, so the output
/// is coordinatewise monotone in `mu` and equals `null_draw` at `mu = 0`.
pub fn inject_signal(
    null_draw: &[f64],
    iv: Interval,
    mu: f64,
    model: &NullModel,
    stream: RngStream,
) -> Result<Vec<f64>> {
    if iv.k > null_draw.len() {
        return Err(Error::InvalidInterval { j: iv.j, k: iv.k, n: null_draw.len() });
    }
    if !(mu >= 0.0) {
        return Err(Error::invalid(format!("signal amplitude must be >= 0, got {mu}")));
    }
    let mut out = null_draw.to_vec();
    match model {
        NullModel::GaussianStd | NullModel::GaussianSigma(_) | NullModel::Permutation(_) => {
            for y in &mut out[iv.j..iv.k] {
                *y += mu;
            }
        }
        NullModel::PoissonRate(m)
        | NullModel::PluginExpFam { family: PluginFamily::Poisson, mean: m } => {
            let elevated = m + mu;
            if !elevated.is_finite() || elevated > POISSON_MEAN_CAP {
                return Err(Error::invalid(format!(
                    "elevated poisson mean {elevated} exceeds cap {POISSON_MEAN_CAP}"
                )));
            }
            let mut rng = stream.rng_at_index(iv.j);
            for y in &mut out[iv.j..iv.k] {
                *y = poisson_inv_cdf(elevated, unit_uniform(&mut rng))?;
            }
        }
        NullModel::BernoulliP(p)
        | NullModel::PluginExpFam { family: PluginFamily::Bernoulli, mean: p } => {
            let elevated = p + mu;
            if elevated > 1.0 {
                return Err(Error::Domain(format!(
                    "elevated bernoulli probability {elevated} exceeds 1"
                )));
            }
            let mut rng = stream.rng_at_index(iv.j);
            for y in &mut out[iv.j..iv.k] {
                *y = if unit_uniform(&mut rng) < elevated { 1.0 } else { 0.0 };
            }
        }
    }
    Ok(out)
}

/// Uniform placement of a signal of length `len`: all `n - len + 1` start
/// points are equally likely.
pub fn random_signal_placement(n: usize, len: usize, stream: RngStream) -> Result<Interval> {
    if len == 0 || len > n {
        return Err(Error::invalid(format!("signal length {len} outside [1, n={n}]")));
    }
    let mut rng = stream.placement_rng();
    let j = rng.random_range(0..=(n - len));
    Ok(Interval { j, k: j + len })
}
