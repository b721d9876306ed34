//! Scaling studies built on the experiment driver: capacity tail and
//! volume growth under the two-arm event.

use serde::{Deserialize, Serialize};

use super::{run_experiment, ExperimentKind, ExperimentSpec};
use crate::clusters::{Explorer, FieldView, Sign, Stop};
use crate::dst::DstScratch;
use crate::error::{domain, Error, Result};
use crate::gff::SpectralSampler;
use crate::lattice::{BoxSpec, Site};
use crate::par::Execution;
use crate::rng::{Purpose, SeedPath};
use crate::stats::{fit_exponent, fit_statistic, quantile, EstimateRecord, ExponentFit, ValueSummary};

/// Conditioned replicas required per window size.
pub const MIN_CONDITIONED: usize = 200;
const STREAM_VOLUME: u64 = 0x7011;
const BATCH: u64 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityTail {
    pub records: Vec<EstimateRecord>,
    pub fit: ExponentFit,
}

/// Tail `P(cap(C_0) ≥ T)` of the capacity of the origin's sign cluster
/// (sampled in `B(box_factor · n)`) over `thresholds`, with a slope fit.
pub fn capacity_tail(
    d: usize,
    n: usize,
    box_factor: usize,
    thresholds: &[f64],
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<CapacityTail> {
    if d != 3 {
        return domain("the capacity tail study runs in d = 3");
    }
    let mut spec = ExperimentSpec::new(ExperimentKind::Captail, d, vec![n], trials, seed_base);
    spec.box_factor = box_factor;
    spec.thresholds = thresholds.to_vec();
    let records = run_experiment(&spec, exec)?;
    let fit = fit_exponent(&records, |r| r.params.threshold.unwrap())?;
    Ok(CapacityTail { records, fit })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeBand {
    pub m: usize,
    pub plus: ValueSummary,
    pub minus: ValueSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionalVolume {
    pub trials: u64,
    pub conditioned: usize,
    pub bands: Vec<VolumeBand>,
    /// Slope of the median of `V^+_v(M)` against `M`.
    pub fit_plus: ExponentFit,
    pub fit_minus: ExponentFit,
}

/// Raw samples of `(V^+_v(M), V^-_{v'}(M))` per `M` over replicas where
/// the two-arm event to `∂B(n)` holds.
pub fn conditioned_volumes(
    d: usize,
    n: usize,
    m_grid: &[usize],
    v: &Site,
    v2: &Site,
    box_factor: usize,
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = BoxSpec::new(d, box_factor * n)?;
    let r = b.radius() as i64;
    for &m in m_grid {
        for s in [v, v2] {
            if s.coords().iter().any(|c| c.abs() + m as i64 > r) {
                return domain(format!("window B_{s}({m}) exceeds B({r})"));
            }
        }
    }
    if v == v2 {
        return domain("the two arms need distinct starting points");
    }
    let (iv, iv2) = (b.index(v).unwrap(), b.index(v2).unwrap());
    let sampler = SpectralSampler::new(b);
    let nm = m_grid.len();
    let parts = exec.map_batches(
        trials.div_ceil(BATCH) as usize,
        || (Vec::new(), DstScratch::default(), Explorer::new(), vec![0i64; d]),
        |(values, scratch, ex, coords), k| {
            let mut plus = vec![Vec::new(); nm];
            let mut minus = vec![Vec::new(); nm];
            let start = k as u64 * BATCH;
            for r in start..(start + BATCH).min(trials) {
                let path = SeedPath::new(seed_base, STREAM_VOLUME, r);
                sampler.sample_into(&mut path.rng(Purpose::Field), values, scratch);
                let view = FieldView {
                    boxspec: &b,
                    values,
                    edge_key: path.key(Purpose::Edges),
                    blocked: None,
                };
                if !(ex.explore(&view, &[iv], Sign::Plus, Stop::at_reach(n), |_| {}).reached
                    && ex.explore(&view, &[iv2], Sign::Minus, Stop::at_reach(n), |_| {}).reached)
                {
                    continue;
                }
                for (src, sign, out) in [(v, Sign::Plus, &mut plus), (v2, Sign::Minus, &mut minus)] {
                    let mut counts = vec![0usize; nm];
                    let i = b.index(src).unwrap();
                    ex.explore(&view, &[i], sign, Stop::never(), |j| {
                        b.coords_into(j, coords);
                        let dist = coords
                            .iter()
                            .zip(src.coords())
                            .map(|(a, c)| (a - c).unsigned_abs() as usize)
                            .max()
                            .unwrap();
                        for (c, &m) in counts.iter_mut().zip(m_grid) {
                            *c += (dist <= m) as usize;
                        }
                    });
                    for (o, c) in out.iter_mut().zip(counts) {
                        o.push(c as f64);
                    }
                }
            }
            (plus, minus)
        },
    );
    let mut plus = vec![Vec::new(); nm];
    let mut minus = vec![Vec::new(); nm];
    for (p, q) in parts {
        for k in 0..nm {
            plus[k].extend(&p[k]);
            minus[k].extend(&q[k]);
        }
    }
    Ok((plus, minus))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    quantile(&s, 0.5)
}

/// Median and interquartile band of the conditioned volumes per `M`, and
/// the slope of the median against `M`.
pub fn conditional_volume(
    d: usize,
    n: usize,
    m_grid: &[usize],
    v: &Site,
    v2: &Site,
    box_factor: usize,
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<ConditionalVolume> {
    let (plus, minus) = conditioned_volumes(d, n, m_grid, v, v2, box_factor, trials, seed_base, exec)?;
    let conditioned = plus.first().map_or(0, Vec::len);
    if conditioned < MIN_CONDITIONED {
        return Err(Error::Insufficient(format!(
            "{conditioned} of {trials} replicas satisfy the two-arm event, {MIN_CONDITIONED} needed per window"
        )));
    }
    let bands = m_grid
        .iter()
        .zip(plus.iter().zip(&minus))
        .map(|(&m, (p, q))| VolumeBand {
            m,
            plus: ValueSummary::of(p).unwrap(),
            minus: ValueSummary::of(q).unwrap(),
        })
        .collect();
    let series = |s: &[Vec<f64>]| -> Vec<(f64, Vec<f64>)> {
        m_grid.iter().zip(s).map(|(&m, v)| (m as f64, v.clone())).collect()
    };
    Ok(ConditionalVolume {
        trials,
        conditioned,
        bands,
        fit_plus: fit_statistic(&series(&plus), median)?,
        fit_minus: fit_statistic(&series(&minus), median)?,
    })
}
