//! Shared special functions, quantile utilities and prefix-sum tables.

use crate::interval_sets::Interval;
use crate::{Error, Result};

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal CDF `Φ(x)`, computed through `erfc` so both tails keep
/// full relative precision.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal survival function `1 − Φ(x)` without cancellation.
#[inline]
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal quantile `Φ⁻¹(p)`.
///
/// Wichura's algorithm AS 241 (PPND16); absolute error well below 1e-9 on
/// `p ∈ [1e-12, 1-1e-12]`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile needs p in (0,1), got {p}")));
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return Ok(q * poly(&A, r) / poly(&B, r));
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - 5.0;
        poly(&E, r) / poly(&F, r)
    };
    Ok(if q < 0.0 { -z } else { z })
}

/// Threshold `t` with `P(N(0,1) > t) = level`, exact for tiny levels where
/// `normal_quantile(1 - level)` would lose precision to rounding.
pub fn normal_upper_quantile(level: f64) -> Result<f64> {
    Ok(-normal_quantile(level)?)
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci)
}

const A: [f64; 8] = [
    3.387_132_872_796_366_5e0,
    1.331_416_678_917_843_8e2,
    1.971_590_950_306_551_3e3,
    1.373_169_376_550_946_1e4,
    4.592_195_393_154_987_2e4,
    6.726_577_092_700_870_1e4,
    3.343_057_558_358_813e4,
    2.509_080_928_730_122_7e3,
];
const B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091e1,
    6.871_870_074_920_579e2,
    5.394_196_021_424_751e3,
    2.121_379_430_158_659_7e4,
    3.930_789_580_009_271e4,
    2.872_908_573_572_194_3e4,
    5.226_495_278_852_545_5e3,
];
const C: [f64; 8] = [
    1.423_437_110_749_683_5e0,
    4.630_337_846_156_545e0,
    5.769_497_221_460_691e0,
    3.647_848_324_763_204_5e0,
    1.270_458_252_452_368_4e0,
    2.417_807_251_774_506e-1,
    2.272_384_498_926_918_4e-2,
    7.745_450_142_783_414e-4,
];
const D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_8e0,
    1.676_384_830_183_803_8e0,
    6.897_673_349_851e-1,
    1.481_039_764_274_800_8e-1,
    1.519_866_656_361_645_7e-2,
    5.475_938_084_995_345e-4,
    1.050_750_071_644_416_9e-9,
];
const E: [f64; 8] = [
    6.657_904_643_501_103_8e0,
    5.463_784_911_164_114e0,
    1.784_826_539_917_291_3e0,
    2.965_605_718_285_048_9e-1,
    2.653_218_952_657_612_4e-2,
    1.242_660_947_388_078_4e-3,
    2.711_555_568_743_487_6e-5,
    2.010_334_399_292_288_1e-7,
];
const F: [f64; 8] = [
    1.0,
    5.998_322_065_558_88e-1,
    1.369_298_809_227_358e-1,
    1.487_536_129_085_061_5e-2,
    7.868_691_311_456_133e-4,
    1.846_318_317_510_054_8e-5,
    1.421_511_758_316_446e-7,
    2.044_263_103_389_939_7e-15,
];

/// Natural log of the binomial coefficient `C(n, k)`.
fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    libm::lgamma((n + 1) as f64) - libm::lgamma((k + 1) as f64) - libm::lgamma((n - k + 1) as f64)
}

/// Upper tail `P(X >= x)` of the hypergeometric distribution: `X` counts
/// successes in `m` draws without replacement from a population of `n`
/// containing `K` successes. Exact via log-gamma summation.
pub fn hypergeometric_upper_tail(x: i64, n: u64, k_succ: u64, m: u64) -> Result<f64> {
    if k_succ > n || m == 0 || m > n {
        return Err(Error::invalid(format!(
            "hypergeometric needs 0<=K<=n and 1<=m<=n, got n={n} K={k_succ} m={m}"
        )));
    }
    let lo = (m + k_succ).saturating_sub(n) as i64; // smallest attainable count
    let hi = k_succ.min(m) as i64;
    if x <= lo {
        return Ok(1.0);
    }
    if x > hi {
        return Ok(0.0);
    }
    let ln_denom = ln_choose(n, m);
    let mut acc = 0.0;
    for c in x..=hi {
        let c_u = c as u64;
        let lp = ln_choose(k_succ, c_u) + ln_choose(n - k_succ, m - c_u) - ln_denom;
        acc += lp.exp();
    }
    Ok(acc.min(1.0))
}

/// Upper empirical quantile: the `ceil(level * M)`-th order statistic.
///
/// This is the conservative rule used for all simulated critical values.
pub fn empirical_quantile(samples: &[f64], level: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid(format!("quantile level {level} outside (0,1)")));
    }
    let m = samples.len();
    let mut sorted: Vec<f64> = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let idx = ((level * m as f64).ceil() as usize).clamp(1, m);
    Ok(sorted[idx - 1])
}

/// Cumulative sums `S_k = Σ_{i<k} y_i` and squared sums `Q_k = Σ_{i<k} y_i²`,
/// with `S_0 = Q_0 = 0`, so any interval sum is one subtraction.
///
/// For `n >= 1e5` accumulation is compensated (Kahan): million-length series
/// are scanned tens of thousands of times and plain cumsum drift would leak
/// into every window.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    s: Vec<f64>,
    q: Vec<f64>,
}

const KAHAN_MIN_N: usize = 100_000;

impl PrefixTable {
    pub fn new(data: &[f64]) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptySample);
        }
        let n = data.len();
        let mut s = Vec::with_capacity(n + 1);
        let mut q = Vec::with_capacity(n + 1);
        s.push(0.0);
        q.push(0.0);
        if n >= KAHAN_MIN_N {
            let (mut sum, mut sc) = (0.0f64, 0.0f64);
            let (mut sq, mut qc) = (0.0f64, 0.0f64);
            for &y in data {
                let t = y - sc;
                let next = sum + t;
                sc = (next - sum) - t;
                sum = next;
                s.push(sum);
                let t2 = y * y - qc;
                let next2 = sq + t2;
                qc = (next2 - sq) - t2;
                sq = next2;
                q.push(sq);
            }
        } else {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for &y in data {
                sum += y;
                sq += y * y;
                s.push(sum);
                q.push(sq);
            }
        }
        Ok(PrefixTable { s, q })
    }

    /// Number of data points.
    #[inline]
    pub fn n(&self) -> usize {
        self.s.len() - 1
    }

    /// Raw prefix array `S` of length `n + 1` (for hot scan loops).
    #[inline]
    pub fn sums(&self) -> &[f64] {
        &self.s
    }

    /// `Σ_{i in I} y_i`.
    pub fn interval_sum(&self, iv: Interval) -> Result<f64> {
        self.check(iv)?;
        Ok(self.s[iv.k] - self.s[iv.j])
    }

    /// `Σ_{i in I} y_i²`.
    pub fn interval_sumsq(&self, iv: Interval) -> Result<f64> {
        self.check(iv)?;
        Ok(self.q[iv.k] - self.q[iv.j])
    }

    /// Total sum over all `n` points.
    #[inline]
    pub fn total(&self) -> f64 {
        *self.s.last().unwrap()
    }

    /// Total sum of squares.
    #[inline]
    pub fn total_sq(&self) -> f64 {
        *self.q.last().unwrap()
    }

    fn check(&self, iv: Interval) -> Result<()> {
        if iv.k > self.n() {
            return Err(Error::InvalidInterval { j: iv.j, k: iv.k, n: self.n() });
        }
        Ok(())
    }
}

/// Harmonic sum `Σ_{i=1..b} 1/i`.
pub fn harmonic(b: usize) -> f64 {
    (1..=b).map(|i| 1.0 / i as f64).sum()
}

/// `x ln x` with the convention `0 ln 0 = 0`.
#[inline]
pub fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent high-precision oracle: erf by its positive-term series near
    // the origin, erfc by the A&S 7.1.14 continued fraction in the tail,
    // quantile by bisection on the oracle CDF.
    mod oracle {
        pub fn erf_series(z: f64) -> f64 {
            // erf(z) = 2/sqrt(pi) * e^{-z^2} * sum_k 2^k z^{2k+1} / (1*3*...*(2k+1))
            let mut term = z;
            let mut sum = z;
            for k in 0..400 {
                term *= 2.0 * z * z / (2.0 * k as f64 + 3.0);
                sum += term;
                if term.abs() < 1e-19 * sum.abs() {
                    break;
                }
            }
            2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum
        }

        pub fn erfc_cf(z: f64) -> f64 {
            // sqrt(pi) e^{z^2} erfc(z) = 1/(z + (1/2)/(z + 1/(z + (3/2)/(z + ...))))
            // evaluated by the convergent recurrence with rescaling.
            let (mut a_prev, mut a_cur) = (1.0f64, 0.0f64);
            let (mut b_prev, mut b_cur) = (0.0f64, 1.0f64);
            for k in 1..=120u32 {
                let a_k = if k == 1 { 1.0 } else { (k - 1) as f64 / 2.0 };
                let (a_next, b_next) = (z * a_cur + a_k * a_prev, z * b_cur + a_k * b_prev);
                a_prev = a_cur;
                a_cur = a_next;
                b_prev = b_cur;
                b_cur = b_next;
                if b_cur.abs() > 1e250 {
                    a_prev /= b_cur;
                    a_cur /= b_cur;
                    b_prev /= b_cur;
                    b_cur = 1.0;
                }
            }
            (a_cur / b_cur) * (-z * z).exp() / std::f64::consts::PI.sqrt()
        }

        pub fn cdf(x: f64) -> f64 {
            let z = x.abs() / std::f64::consts::SQRT_2;
            let half = if z < 2.0 {
                0.5 * (1.0 - erf_series(z))
            } else {
                0.5 * erfc_cf(z)
            };
            if x < 0.0 {
                half
            } else {
                1.0 - half
            }
        }

        pub fn quantile(p: f64) -> f64 {
            if p > 0.5 {
                return -quantile(1.0 - p);
            }
            let (mut lo, mut hi) = (-9.0, 0.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
    }

    #[test]
    fn quantile_matches_series_oracle() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.975).unwrap() - 1.959964).abs() < 1e-6);
        // the n=64 Bonferroni block-1 level
        let z = normal_quantile(1.0 - 0.1 / 375.0).unwrap();
        assert!((z - 3.4611).abs() < 1.5e-4, "got {z}");
        for &p in &[
            1e-12, 1e-9, 1e-6, 1e-4, 1e-2, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0 - 1e-6, 1.0 - 1e-10,
        ] {
            let got = normal_quantile(p).unwrap();
            let want = oracle::quantile(p);
            assert!(
                (got - want).abs() <= 1e-9,
                "p={p}: got {got}, oracle {want}"
            );
        }
    }

    #[test]
    fn quantile_rejects_bad_p() {
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn cdf_quantile_mutual_inverses() {
        for i in 1..200 {
            let p = i as f64 / 200.0;
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-8);
        }
        for &p in &[1e-12, 1e-8, 1.0 - 1e-8, 1.0 - 1e-12] {
            let x = normal_quantile(p).unwrap();
            assert!((normal_cdf(x) - p).abs() < 1e-8);
        }
        for i in -50..=50 {
            let x = i as f64 / 10.0;
            let back = normal_quantile(normal_cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-8, "x={x} back={back}");
        }
    }

    #[test]
    fn cdf_matches_series_oracle() {
        for i in -80..=80 {
            let x = i as f64 / 10.0;
            assert!((normal_cdf(x) - oracle::cdf(x)).abs() < 1e-14);
        }
    }

    #[test]
    fn gaussian_tail_inequality() {
        // 1 - Phi(t) <= exp(-t^2/2) for t = 1..6
        for t in 1..=6 {
            let t = t as f64;
            assert!(normal_sf(t) <= (-0.5 * t * t).exp());
        }
    }

    #[test]
    fn hypergeometric_examples() {
        assert_eq!(hypergeometric_upper_tail(0, 10, 5, 3).unwrap(), 1.0);
        let p = hypergeometric_upper_tail(2, 4, 2, 2).unwrap();
        assert!((p - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(hypergeometric_upper_tail(3, 4, 2, 2).unwrap(), 0.0);
        // monotone non-increasing in x
        let mut prev = 1.0;
        for x in 0..=6 {
            let p = hypergeometric_upper_tail(x, 12, 6, 6).unwrap();
            assert!(p <= prev + 1e-15);
            prev = p;
        }
    }

    #[test]
    fn empirical_quantile_order_statistic_rule() {
        let samples: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        assert_eq!(empirical_quantile(&samples, 0.9).unwrap(), 9.0);
        assert_eq!(empirical_quantile(&samples, 0.9999).unwrap(), 10.0);
        let constant = vec![3.5; 7];
        for &lvl in &[0.1, 0.5, 0.9] {
            assert_eq!(empirical_quantile(&constant, lvl).unwrap(), 3.5);
        }
        assert!(empirical_quantile(&[], 0.5).is_err());
    }

    #[test]
    fn prefix_matches_naive() {
        let data = [1.0, 2.0, 3.0];
        let t = PrefixTable::new(&data).unwrap();
        let iv = Interval::new(0, 3, 3).unwrap();
        assert_eq!(t.interval_sum(iv).unwrap(), 6.0);
        assert_eq!(t.interval_sumsq(iv).unwrap(), 14.0);

        let zeros = vec![0.0; 32];
        let tz = PrefixTable::new(&zeros).unwrap();
        for j in 0..31 {
            let iv = Interval::new(j, j + 1, 32).unwrap();
            assert_eq!(tz.interval_sum(iv).unwrap(), 0.0);
        }

        // random data vs direct summation
        let mut state = 0x243F_6A88_85A3_08D3u64;
        let mut next = move || {
            state ^= state >> 12;
            state ^= state << 25;
            state ^= state >> 27;
            (state.wrapping_mul(0x2545_F491_4F6C_DD1D) >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let data: Vec<f64> = (0..500).map(|_| next()).collect();
        let t = PrefixTable::new(&data).unwrap();
        for trial in 0..100 {
            let j = (trial * 37) % 400;
            let k = j + 1 + (trial * 13) % (500 - j - 1).max(1);
            let iv = Interval::new(j, k, 500).unwrap();
            let naive: f64 = data[j..k].iter().sum();
            let got = t.interval_sum(iv).unwrap();
            assert!((got - naive).abs() <= 1e-10 * (k - j) as f64);
        }
        assert!(t
            .interval_sum(Interval { j: 10, k: 501 })
            .is_err());
    }

    #[test]
    fn xlnx_convention() {
        assert_eq!(xlnx(0.0), 0.0);
        assert!((xlnx(1.0)).abs() < 1e-15);
        assert!((xlnx(2.0) - 2.0 * 2f64.ln()).abs() < 1e-15);
    }
}
