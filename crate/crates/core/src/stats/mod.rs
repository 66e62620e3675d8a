//! Sample-size planning, stratified allocation, Wilson intervals, and
//! two-rater agreement for the human verification step.

mod agreement;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::metrics::round_half_up;

pub use agreement::{
    annotation_rows, derive_table, parse_judgments, write_annotation_sheet, write_judgments, AgreementStats,
    AgreementTable, AnnotationRow, Judgment, JudgmentRecord, StatsReport, StratumRow,
};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StatsError {
    #[error("{name} must be in (0, 1), got {value}")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("population must be at least 1")]
    EmptyPopulation,
    #[error("sample size {n} exceeds population {population}")]
    ExceedsPopulation { n: u64, population: u64 },
    #[error("invalid counts: {successes} successes out of {n}")]
    InvalidCounts { successes: u64, n: u64 },
    #[error("agreement table is empty")]
    EmptyTable,
    #[error("chance agreement is 1; the coefficient is undefined")]
    Degenerate,
    #[error("judgment files cover different tasks (only in first: {only_first:?}; only in second: {only_second:?})")]
    MismatchedIds {
        only_first: Vec<String>,
        only_second: Vec<String>,
    },
    #[error("judgment file: {0}")]
    Judgments(String),
}

/// Inverse of the standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
pub fn probit(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const LOW: f64 = 0.02425;
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// Two-sided critical value for a confidence level, e.g. 1.959964 for 0.95.
pub fn z_two_sided(confidence: f64) -> f64 {
    probit(1.0 - (1.0 - confidence) / 2.0)
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), StatsError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(StatsError::InvalidFraction { name, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRounding {
    #[default]
    Ceil,
    HalfUp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub population: u64,
    pub confidence: f64,
    pub margin: f64,
    pub variability: f64,
    pub z: f64,
    /// Infinite-population size before the finite population correction.
    pub n0: f64,
    /// After the correction, unrounded.
    pub n_fpc: f64,
    pub n: u64,
    pub rounding: SizeRounding,
    /// Set when `n` was supplied instead of computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overridden_from: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub allocation: BTreeMap<String, u64>,
}

impl SamplePlan {
    /// Replaces the computed size, keeping the formula value for reference.
    pub fn with_override(mut self, n: u64) -> Result<Self, StatsError> {
        if n > self.population {
            return Err(StatsError::ExceedsPopulation {
                n,
                population: self.population,
            });
        }
        if n != self.n {
            self.overridden_from = Some(self.n);
            self.n = n;
        }
        Ok(self)
    }

    pub fn with_allocation(mut self, strata: &BTreeMap<String, u64>) -> Result<Self, StatsError> {
        self.allocation = proportional_allocation(self.n, strata)?;
        Ok(self)
    }
}

/// Cochran's formula with finite population correction, rounded up.
pub fn cochran_sample_size(population: u64, confidence: f64, margin: f64, p: f64) -> Result<SamplePlan, StatsError> {
    cochran_sample_size_with(population, confidence, margin, p, SizeRounding::Ceil)
}

pub fn cochran_sample_size_with(
    population: u64,
    confidence: f64,
    margin: f64,
    p: f64,
    rounding: SizeRounding,
) -> Result<SamplePlan, StatsError> {
    check_fraction("confidence", confidence)?;
    check_fraction("margin", margin)?;
    check_fraction("p", p)?;
    if population == 0 {
        return Err(StatsError::EmptyPopulation);
    }
    let z = z_two_sided(confidence);
    let n0 = z * z * p * (1.0 - p) / (margin * margin);
    let n_fpc = n0 / (1.0 + (n0 - 1.0) / population as f64);
    let rounded = match rounding {
        SizeRounding::Ceil => n_fpc.ceil(),
        SizeRounding::HalfUp => round_half_up(n_fpc, 0),
    };
    Ok(SamplePlan {
        population,
        confidence,
        margin,
        variability: p,
        z,
        n0,
        n_fpc,
        n: (rounded.max(1.0) as u64).min(population),
        rounding,
        overridden_from: None,
        allocation: BTreeMap::new(),
    })
}

/// Splits `n` across strata in proportion to their sizes using the
/// largest-remainder method. Equal remainders go to the larger stratum,
/// then to the earlier name.
pub fn proportional_allocation(n: u64, strata: &BTreeMap<String, u64>) -> Result<BTreeMap<String, u64>, StatsError> {
    let total: u64 = strata.values().sum();
    if n > total {
        return Err(StatsError::ExceedsPopulation { n, population: total });
    }
    if total == 0 {
        return Ok(strata.keys().map(|k| (k.clone(), 0)).collect());
    }
    let mut out = BTreeMap::new();
    let mut remainders = Vec::with_capacity(strata.len());
    let mut assigned = 0u64;
    for (name, &size) in strata {
        let num = u128::from(n) * u128::from(size);
        let floor = (num / u128::from(total)) as u64;
        assigned += floor;
        out.insert(name.clone(), floor);
        remainders.push((num % u128::from(total), size, name));
    }
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(b.2)));
    for (_, _, name) in remainders.into_iter().take((n - assigned) as usize) {
        *out.get_mut(name).expect("present") += 1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Wilson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub method: IntervalMethod,
}

impl ConfidenceInterval {
    /// Endpoints rounded half-up to `decimals` places.
    pub fn rounded(&self, decimals: u32) -> (f64, f64) {
        (round_half_up(self.low, decimals), round_half_up(self.high, decimals))
    }
}

impl fmt::Display for ConfidenceInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (lo, hi) = self.rounded(3);
        write!(f, "{:.3} [{lo:.3}, {hi:.3}]", round_half_up(self.point, 3))
    }
}

pub fn wilson_interval(successes: u64, n: u64, confidence: f64) -> Result<ConfidenceInterval, StatsError> {
    if n == 0 || successes > n {
        return Err(StatsError::InvalidCounts { successes, n });
    }
    check_fraction("confidence", confidence)?;
    let z = z_two_sided(confidence);
    let nf = n as f64;
    let p = successes as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    Ok(ConfidenceInterval {
        point: p,
        low: (center - half).max(0.0).min(p),
        high: (center + half).min(1.0).max(p),
        method: IntervalMethod::Wilson,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use statrs::distribution::{ContinuousCDF, Normal};

    #[test]
    fn probit_agrees_with_statrs() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        for i in 1..2000 {
            let p = i as f64 / 2000.0;
            let want = normal.inverse_cdf(p);
            assert!((probit(p) - want).abs() < 1e-8, "p={p}");
        }
        for p in [1e-6, 1e-3, 0.01, 0.975, 0.999, 1.0 - 1e-6] {
            assert!((probit(p) - normal.inverse_cdf(p)).abs() < 1e-8 * normal.inverse_cdf(p).abs().max(1.0));
        }
    }

    #[test]
    fn cochran_examples() {
        let plan = cochran_sample_size(1036, 0.95, 0.05, 0.5).unwrap();
        assert!((plan.n0 - 384.146).abs() < 1e-3);
        assert_eq!(plan.n, 281);
        assert_eq!(cochran_sample_size(1_000_000_000, 0.95, 0.05, 0.5).unwrap().n, 385);
        assert_eq!(cochran_sample_size(100, 0.95, 0.05, 0.5).unwrap().n, 80);
        assert_eq!(cochran_sample_size(5, 0.95, 0.05, 0.5).unwrap().n, 5);
        let half_up = cochran_sample_size_with(1036, 0.95, 0.05, 0.5, SizeRounding::HalfUp).unwrap();
        assert_eq!(half_up.n, 280);
        let reported = plan.with_override(283).unwrap();
        assert_eq!((reported.n, reported.overridden_from), (283, Some(281)));
        assert!(cochran_sample_size(10, 0.95, 0.0, 0.5).is_err());
    }

    fn strata(sizes: &[u64]) -> BTreeMap<String, u64> {
        sizes.iter().enumerate().map(|(i, s)| (format!("s{i}"), *s)).collect()
    }

    #[test]
    fn allocation_examples() {
        let even = proportional_allocation(10, &strata(&[50, 50])).unwrap();
        assert_eq!(even.values().copied().collect::<Vec<_>>(), [5, 5]);
        let four = proportional_allocation(283, &strata(&[445, 300, 184, 107])).unwrap();
        assert_eq!(four.values().copied().collect::<Vec<_>>(), [122, 82, 50, 29]);
        assert!(proportional_allocation(11, &strata(&[5, 5])).is_err());
    }

    #[test]
    fn wilson_examples() {
        let ci = wilson_interval(268, 283, 0.95).unwrap();
        assert_eq!(ci.rounded(3), (0.914, 0.968));
        assert_eq!(wilson_interval(28, 30, 0.95).unwrap().rounded(3), (0.787, 0.982));
        let zero = wilson_interval(0, 10, 0.95).unwrap();
        assert_eq!(zero.low, 0.0);
        assert!(zero.high < 1.0 && zero.high > 0.0);
        assert_eq!(zero.to_string(), "0.000 [0.000, 0.278]");
        assert!(wilson_interval(3, 2, 0.95).is_err());
    }

    proptest! {
        #[test]
        fn allocation_sums_and_tracks_quota(sizes in prop::collection::vec(0u64..500, 1..8), frac in 0.0f64..=1.0) {
            let st = strata(&sizes);
            let total: u64 = sizes.iter().sum();
            let n = (total as f64 * frac).floor() as u64;
            let alloc = proportional_allocation(n, &st).unwrap();
            prop_assert_eq!(alloc.values().sum::<u64>(), n);
            for (k, count) in &alloc {
                let size = st[k];
                prop_assert!(*count <= size);
                if total > 0 {
                    let quota = n as f64 * size as f64 / total as f64;
                    prop_assert!((*count as f64 - quota).abs() < 1.0 + 1e-9);
                }
            }
        }

        #[test]
        fn wilson_brackets_the_point(n in 1u64..2000, k in 0u64..2000) {
            let k = k.min(n);
            let ci = wilson_interval(k, n, 0.95).unwrap();
            prop_assert!(0.0 <= ci.low && ci.low <= ci.point && ci.point <= ci.high && ci.high <= 1.0);
        }

        #[test]
        fn wilson_narrows_with_n(k in 1u64..50, scale in 2u64..10) {
            let a = wilson_interval(k, 2 * k, 0.95).unwrap();
            let b = wilson_interval(k * scale, 2 * k * scale, 0.95).unwrap();
            prop_assert!(b.high - b.low < a.high - a.low);
        }

        #[test]
        fn cochran_monotonicity(pop in 1u64..100_000, e in 0.01f64..0.2, c in 0.5f64..0.99, p in 0.05f64..0.95) {
            let n = |pop, c, e, p| cochran_sample_size(pop, c, e, p).unwrap().n;
            prop_assert!(n(pop, c, e * 1.5, p) <= n(pop, c, e, p));
            prop_assert!(n(pop, (c + 1.0) / 2.0, e, p) >= n(pop, c, e, p));
            prop_assert!(n(pop, c, e, 0.5) >= n(pop, c, e, p));
        }
    }
}
