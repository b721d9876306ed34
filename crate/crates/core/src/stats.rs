//! Estimate records, binomial standard errors and power-law fits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::clusters::Sign;
use crate::error::{Error, Result};
use crate::lattice::Site;

/// Below this many successes (or failures) intervals use Wilson's formula.
pub const WILSON_THRESHOLD: u64 = 50;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const BOOTSTRAP_SEED: u64 = 0x0b00_7575;

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Standard error of `k / n`: Wald, or the Wilson half-width over `z` when
/// either count is below [`WILSON_THRESHOLD`]. `None` for `n = 0`.
pub fn proportion_se(k: u64, n: u64) -> Option<f64> {
    if n == 0 {
        return None;
    }
    if k < WILSON_THRESHOLD || n - k < WILSON_THRESHOLD {
        let (lo, hi) = wilson_interval(k, n, Z95);
        return Some((hi - lo) / (2.0 * Z95));
    }
    let p = k as f64 / n as f64;
    Some((p * (1.0 - p) / n as f64).sqrt())
}

/// 95% interval matching [`proportion_se`].
pub fn proportion_interval(k: u64, n: u64) -> Option<(f64, f64)> {
    if n == 0 {
        return None;
    }
    if k < WILSON_THRESHOLD || n - k < WILSON_THRESHOLD {
        return Some(wilson_interval(k, n, Z95));
    }
    let p = k as f64 / n as f64;
    let se = proportion_se(k, n).unwrap();
    Some(((p - Z95 * se).max(0.0), (p + Z95 * se).min(1.0)))
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Location summary of a sample of values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueSummary {
    pub count: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl ValueSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Some(ValueSummary {
            count: s.len(),
            mean: s.iter().sum::<f64>() / s.len() as f64,
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
        })
    }
}

/// Parameters of one estimated point.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordParams {
    pub d: usize,
    /// Outer scale `N`.
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub box_factor: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sign: Option<Sign>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pins: Vec<(Site, f64)>,
}

/// Counts (and optional value summary) for one parameter point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub experiment: String,
    pub params: RecordParams,
    pub trials: u64,
    pub successes: u64,
    /// `successes / trials`; absent when there are no trials.
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    pub interval: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<ValueSummary>,
    pub seed_base: u64,
    pub stream: u64,
    /// Replica indices `[start, end)` used for this point.
    pub replicas: (u64, u64),
    /// Seconds; kept out of result files so they stay byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<f64>,
}

impl EstimateRecord {
    pub fn from_counts(
        experiment: impl Into<String>,
        params: RecordParams,
        successes: u64,
        trials: u64,
        seed_base: u64,
        stream: u64,
        replicas: (u64, u64),
    ) -> Self {
        assert!(successes <= trials);
        EstimateRecord {
            experiment: experiment.into(),
            params,
            trials,
            successes,
            estimate: (trials > 0).then(|| successes as f64 / trials as f64),
            std_error: proportion_se(successes, trials),
            interval: proportion_interval(successes, trials),
            values: None,
            seed_base,
            stream,
            replicas,
            wall_time: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

/// One point of a log-log regression.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub x: f64,
    pub y: f64,
    /// Standard error of `y`; zero means exact.
    pub se: f64,
}

/// Weighted least-squares fit of `log y = intercept + slope · log x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub xs: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Bootstrap percentile interval (95%).
    pub interval: (f64, f64),
    /// `log y − fit` per point.
    pub residuals: Vec<f64>,
    /// Weighted residual sum of squares per degree of freedom.
    pub chi2_per_dof: f64,
    /// Abscissae dropped for a non-positive estimate.
    pub excluded: Vec<f64>,
}

impl ExponentFit {
    pub fn contains(&self, slope: f64) -> bool {
        self.interval.0 <= slope && slope <= self.interval.1
    }
}

fn log_weights(points: &[FitPoint]) -> Vec<f64> {
    let vars: Vec<f64> = points.iter().map(|p| (p.se / p.y).powi(2)).collect();
    let min_pos = vars.iter().copied().filter(|&v| v > 0.0).fold(f64::INFINITY, f64::min);
    if !min_pos.is_finite() {
        return vec![1.0; points.len()];
    }
    vars.iter().map(|&v| 1.0 / v.max(min_pos)).collect()
}

fn wls(lx: &[f64], ly: &[f64], w: &[f64]) -> (f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = lx.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / sw;
    let my = ly.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / sw;
    let sxy: f64 = (0..lx.len()).map(|i| w[i] * (lx[i] - mx) * (ly[i] - my)).sum();
    let sxx: f64 = (0..lx.len()).map(|i| w[i] * (lx[i] - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Fits a power law to `points`. `resample` draws bootstrap replicates of
/// the `y` values (same order as `points`); replicates with a non-positive
/// value are discarded.
pub fn fit_power_law<F>(points: &[FitPoint], mut resample: F) -> Result<ExponentFit>
where
    F: FnMut(&mut ChaCha8Rng, &[FitPoint]) -> Vec<f64>,
{
    let mut usable = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        if p.y > 0.0 && p.x > 0.0 {
            usable.push(*p);
        } else {
            log::warn!("excluding scale {} from the fit: estimate {}", p.x, p.y);
            excluded.push(p.x);
        }
    }
    let distinct = {
        let mut xs: Vec<f64> = usable.iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        xs.len()
    };
    if distinct < 3 {
        return Err(Error::Fit(format!(
            "{distinct} usable scales, at least 3 are needed"
        )));
    }
    let lx: Vec<f64> = usable.iter().map(|p| p.x.ln()).collect();
    let ly: Vec<f64> = usable.iter().map(|p| p.y.ln()).collect();
    let w = log_weights(&usable);
    let (slope, intercept) = wls(&lx, &ly, &w);
    let residuals: Vec<f64> = (0..lx.len()).map(|i| ly[i] - intercept - slope * lx[i]).collect();
    let chi2 = (0..lx.len()).map(|i| w[i] * residuals[i].powi(2)).sum::<f64>();
    let chi2_per_dof = chi2 / (lx.len() - 2) as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ys = resample(&mut rng, &usable);
        if ys.iter().any(|&y| y <= 0.0) {
            continue;
        }
        let lys: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
        slopes.push(wls(&lx, &lys, &w).0);
    }
    let interval = if slopes.len() < BOOTSTRAP_RESAMPLES / 2 {
        log::warn!("only {} usable bootstrap replicates", slopes.len());
        (f64::NEG_INFINITY, f64::INFINITY)
    } else {
        slopes.sort_by(f64::total_cmp);
        (quantile(&slopes, 0.025), quantile(&slopes, 0.975))
    };
    Ok(ExponentFit {
        xs: usable.iter().map(|p| p.x).collect(),
        slope,
        intercept,
        interval,
        residuals,
        chi2_per_dof,
        excluded,
    })
}

/// Fit of binomial proportions `(x, successes, trials)`, bootstrapped by
/// redrawing each scale's replicas.
pub fn fit_proportions(counts: &[(f64, u64, u64)]) -> Result<ExponentFit> {
    let points: Vec<FitPoint> = counts
        .iter()
        .map(|&(x, k, n)| FitPoint {
            x,
            y: if n == 0 { 0.0 } else { k as f64 / n as f64 },
            se: proportion_se(k, n).unwrap_or(0.0),
        })
        .collect();
    let trials: Vec<(f64, u64)> = counts.iter().map(|&(x, _, n)| (x, n)).collect();
    fit_power_law(&points, |rng, usable| {
        usable
            .iter()
            .map(|p| {
                let n = trials.iter().find(|t| t.0 == p.x).unwrap().1;
                Binomial::new(n, p.y.min(1.0)).unwrap().sample(rng) as f64 / n as f64
            })
            .collect()
    })
}

/// Fit of the estimates in `records` against `abscissa`.
pub fn fit_exponent(records: &[EstimateRecord], abscissa: impl Fn(&EstimateRecord) -> f64) -> Result<ExponentFit> {
    let counts: Vec<(f64, u64, u64)> = records
        .iter()
        .map(|r| (abscissa(r), r.successes, r.trials))
        .collect();
    fit_proportions(&counts)
}

/// Fit of a statistic of raw samples per scale (e.g. medians), bootstrapped
/// by resampling the samples within each scale.
pub fn fit_statistic(
    samples: &[(f64, Vec<f64>)],
    statistic: impl Fn(&[f64]) -> f64,
) -> Result<ExponentFit> {
    let points: Vec<FitPoint> = samples
        .iter()
        .map(|(x, v)| FitPoint {
            x: *x,
            y: if v.is_empty() { 0.0 } else { statistic(v) },
            se: 0.0,
        })
        .collect();
    fit_power_law(&points, |rng, usable| {
        usable
            .iter()
            .map(|p| {
                let v = &samples.iter().find(|s| s.0 == p.x).unwrap().1;
                let draw: Vec<f64> = (0..v.len()).map(|_| v[rng.gen_range(0..v.len())]).collect();
                statistic(&draw)
            })
            .collect()
    })
}

/// `f ⊡ g`: the low-dimensional value for `d ≤ 6`, the high one above.
pub fn boxdot(d: usize, low: f64, high: f64) -> f64 {
    if d <= 6 {
        low
    } else {
        high
    }
}

/// Observables with a predicted scaling exponent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    /// `θ_d(N)` against `N`.
    OneArm,
    /// `ρ_d(n, N)` against `n / N` at fixed `N`.
    Crossing,
    /// Two-arm probability against `N`.
    TwoArm,
    /// Two-arm probability against `χ ≤ 1` at fixed `N`.
    TwoArmChiSmall,
    /// Two-arm probability against `χ ≥ 1` at fixed `N`.
    TwoArmChiLarge,
    /// Four-point probability against `N`.
    FourPoint,
    /// `P(vol ≥ M)` against `M`.
    VolumeTail,
    /// Median conditioned volume against `M`.
    ConditionalVolume,
    /// `P(cap ≥ T)` against `T`.
    CapacityTail,
}

/// Predicted log-log slope of `obs` in dimension `d`.
pub fn predicted_slope(obs: Observable, d: usize) -> f64 {
    let df = d as f64;
    match obs {
        Observable::OneArm => -boxdot(d, df / 2.0 - 1.0, 2.0),
        Observable::Crossing => boxdot(d, df / 2.0 + 1.0, df - 4.0),
        Observable::TwoArm => -boxdot(d, df / 2.0 + 1.0, 4.0),
        Observable::TwoArmChiSmall => 1.5,
        Observable::TwoArmChiLarge => boxdot(d, 3.0 - df / 2.0, 0.0),
        Observable::FourPoint => -boxdot(d, 1.5 * df - 1.0, 2.0 * df - 4.0),
        Observable::VolumeTail => -boxdot(d, (df - 2.0) / (df + 2.0), 0.5),
        Observable::ConditionalVolume => boxdot(d, df / 2.0 + 1.0, 4.0),
        Observable::CapacityTail => -0.5,
    }
}
