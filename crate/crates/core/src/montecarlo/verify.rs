//! Monte Carlo checks of closed-form connection probabilities.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::clusters::{Explorer, FieldView, Sign, Stop};
use crate::dst::DstScratch;
use crate::error::{domain, Error, Result};
use crate::gff::{ConditionedSampler, SpectralSampler};
use crate::greens::{dirichlet_green, excursion_kernel, BoundaryCondition};
use crate::lattice::{BoxSpec, MetricPoint, Site};
use crate::par::Execution;
use crate::quad::Rule;
use crate::rng::{Purpose, SeedPath};
use crate::stats::proportion_se;

/// Replicas per batch in the verification runs.
const BATCH: u64 = 1024;
/// Deviations beyond this many standard errors fail a check.
pub const Z_TOLERANCE: f64 = 4.0;
/// Density check passes above this chi-square p-value.
pub const DENSITY_P_MIN: f64 = 0.001;
/// Density cells with a smaller expected count are excluded.
pub const MIN_EXPECTED: f64 = 5.0;

const STREAM_ARCSIN: u64 = 0xa5c1;
const STREAM_CONDITIONAL: u64 = 0xc0d1;
const STREAM_DENSITY: u64 = 0xde45;

/// Empirical frequency against a predicted probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityCheck {
    pub label: String,
    pub expected: f64,
    pub successes: u64,
    pub trials: u64,
    pub estimate: f64,
    pub std_error: f64,
    /// `(estimate − expected) / std_error`.
    pub z: f64,
}

impl ProbabilityCheck {
    fn new(label: String, expected: f64, successes: u64, trials: u64) -> Self {
        let estimate = successes as f64 / trials as f64;
        let std_error = proportion_se(successes, trials).unwrap_or(f64::NAN);
        let z = if std_error > 0.0 {
            (estimate - expected) / std_error
        } else {
            0.0
        };
        ProbabilityCheck {
            label,
            expected,
            successes,
            trials,
            estimate,
            std_error,
            z,
        }
    }

    pub fn pass(&self) -> bool {
        self.z.abs() <= Z_TOLERANCE
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checks: Vec<ProbabilityCheck>,
    pub pass: bool,
}

impl CheckReport {
    fn from_checks(checks: Vec<ProbabilityCheck>) -> Self {
        let pass = checks.iter().all(ProbabilityCheck::pass);
        CheckReport { checks, pass }
    }
}

/// `π^{-1} arcsin(G(v,w) / √(G(v,v) G(w,w)))`, the probability that `v`
/// and `w` lie in one positive cluster.
pub fn arcsin_probability(b: &BoxSpec, v: &Site, w: &Site) -> Result<f64> {
    let gvw = dirichlet_green(b, &[], v, w)?;
    let gvv = dirichlet_green(b, &[], v, v)?;
    let gww = dirichlet_green(b, &[], w, w)?;
    Ok((gvw / (gvv * gww).sqrt()).asin() / std::f64::consts::PI)
}

fn batches(trials: u64) -> usize {
    trials.div_ceil(BATCH) as usize
}

fn batch_range(k: usize, trials: u64) -> std::ops::Range<u64> {
    let start = k as u64 * BATCH;
    start..(start + BATCH).min(trials)
}

fn sum_counts(parts: Vec<Vec<u64>>, len: usize) -> Vec<u64> {
    let mut out = vec![0; len];
    for p in parts {
        for (a, b) in out.iter_mut().zip(p) {
            *a += b;
        }
    }
    out
}

/// Positive-connection frequency of each pair against the arcsin law.
pub fn verify_arcsin(
    b: &BoxSpec,
    pairs: &[(Site, Site)],
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<CheckReport> {
    let mut idx = Vec::with_capacity(pairs.len());
    let mut expected = Vec::with_capacity(pairs.len());
    for (v, w) in pairs {
        if v == w {
            return domain(format!("pair ({v}, {w}) is not two distinct sites"));
        }
        let (Some(i), Some(j)) = (b.index(v), b.index(w)) else {
            return domain(format!("pair ({v}, {w}) leaves B({})", b.radius()));
        };
        idx.push((i, j));
        expected.push(arcsin_probability(b, v, w)?);
    }
    if pairs.is_empty() {
        return Ok(CheckReport::from_checks(Vec::new()));
    }
    let sampler = SpectralSampler::new(*b);
    let parts = exec.map_batches(
        batches(trials),
        || (Vec::new(), DstScratch::default(), Explorer::new()),
        |(values, scratch, ex), k| {
            let mut hits = vec![0u64; idx.len()];
            for r in batch_range(k, trials) {
                let path = SeedPath::new(seed_base, STREAM_ARCSIN, r);
                sampler.sample_into(&mut path.rng(Purpose::Field), values, scratch);
                let view = FieldView {
                    boxspec: b,
                    values,
                    edge_key: path.key(Purpose::Edges),
                    blocked: None,
                };
                for (h, &(i, j)) in hits.iter_mut().zip(&idx) {
                    if ex.explore(&view, &[i], Sign::Plus, Stop::at_target(j), |_| {}).reached {
                        *h += 1;
                    }
                }
            }
            hits
        },
    );
    let hits = sum_counts(parts, idx.len());
    let checks = pairs
        .iter()
        .zip(expected)
        .zip(hits)
        .map(|(((v, w), e), h)| ProbabilityCheck::new(format!("{v}-{w}"), e, h, trials))
        .collect();
    Ok(CheckReport::from_checks(checks))
}

/// `K_{D ∪ {v, w}}(v, w)` in the grounded box.
pub fn pinned_kernel(b: &BoxSpec, v: &Site, w: &Site) -> Result<f64> {
    if v == w {
        return domain("kernel endpoints coincide");
    }
    Ok(excursion_kernel(
        b,
        BoundaryCondition::Grounded,
        &[],
        &MetricPoint::at_site(v),
        &MetricPoint::at_site(w),
    )?
    .value)
}

/// `P(v ↔ w in the positive clusters | φ_v = a, φ_w = c)` against
/// `1 − exp(−2ac · K_{D ∪ {v,w}}(v, w))` for each `(a, c)` in `grid`.
pub fn verify_conditional(
    b: &BoxSpec,
    v: &Site,
    w: &Site,
    grid: &[(f64, f64)],
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<CheckReport> {
    let k = pinned_kernel(b, v, w)?;
    let (i, j) = (b.index(v).unwrap(), b.index(w).unwrap());
    let mut checks = Vec::with_capacity(grid.len());
    for (cell, &(a, c)) in grid.iter().enumerate() {
        let expected = if a > 0.0 && c > 0.0 { -(-2.0 * a * c * k).exp_m1() } else { 0.0 };
        let sampler = ConditionedSampler::new(*b, &[(v.clone(), a), (w.clone(), c)])?;
        let stream = STREAM_CONDITIONAL + ((cell as u64) << 16);
        let parts = exec.map_batches(
            batches(trials),
            || (Vec::new(), DstScratch::default(), Explorer::new()),
            |(values, scratch, ex), kb| {
                let mut hits = 0u64;
                for r in batch_range(kb, trials) {
                    let path = SeedPath::new(seed_base, stream, r);
                    sampler.sample_into(&mut path.rng(Purpose::Field), values, scratch);
                    let view = FieldView {
                        boxspec: b,
                        values,
                        edge_key: path.key(Purpose::Edges),
                        blocked: None,
                    };
                    hits += ex.explore(&view, &[i], Sign::Plus, Stop::at_target(j), |_| {}).reached as u64;
                }
                vec![hits]
            },
        );
        let hits = sum_counts(parts, 1)[0];
        checks.push(ProbabilityCheck::new(format!("a={a},b={c}"), expected, hits, trials));
    }
    Ok(CheckReport::from_checks(checks))
}

/// One cell of the density check, in the variables `s = φ_v²/2`,
/// `t = φ_w²/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityCell {
    pub s: (f64, f64),
    pub t: (f64, f64),
    pub expected: f64,
    pub observed: u64,
    /// Whether the cell entered the chi-square sum.
    pub used: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub cells: Vec<DensityCell>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Predicted `P(v ↔ w)` (either sign) summed over all cells.
    pub expected_mass: f64,
    /// Empirical `P(v ↔ w)` (either sign).
    pub empirical_mass: f64,
    pub trials: u64,
    pub pass: bool,
}

/// Bin edges in units of `G(v,v)` used when none are given.
pub const DEFAULT_DENSITY_EDGES: [f64; 5] = [0.0, 0.15, 0.45, 1.0, f64::INFINITY];

/// Predicted probability that `v ↔ w` in either sign with
/// `φ_v²/2 ∈ s`, `φ_w²/2 ∈ t`: the integral of
/// `(st)^{-1/2} g(√(2s), √(2t)) (1 − e^{−4√(st) K})` over the cell, with `g`
/// the joint density of `(φ_v, φ_w)`.
pub fn density_cell_mass(cov: [f64; 3], kernel: f64, s: (f64, f64), t: (f64, f64)) -> f64 {
    let [gvv, gvw, gww] = cov;
    let det = gvv * gww - gvw * gvw;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    // in x = √(2s), y = √(2t) the integrand becomes 2 g(x, y) (1 − e^{−2xyK})
    let to_x = |u: f64, g: f64| {
        if u.is_infinite() {
            14.0 * g.sqrt()
        } else {
            (2.0 * u).sqrt()
        }
    };
    let (x0, x1) = (to_x(s.0, gvv), to_x(s.1, gvv));
    let (y0, y1) = (to_x(t.0, gww), to_x(t.1, gww));
    if x1 <= x0 || y1 <= y0 {
        return 0.0;
    }
    let order = 48;
    let panels = 4;
    let dx = (x1 - x0) / panels as f64;
    let dy = (y1 - y0) / panels as f64;
    let mut total = 0.0;
    for px in 0..panels {
        let rx = Rule::new(order, x0 + px as f64 * dx, x0 + (px + 1) as f64 * dx);
        total += rx.integrate(|x| {
            let mut inner = 0.0;
            for py in 0..panels {
                let ry = Rule::new(order, y0 + py as f64 * dy, y0 + (py + 1) as f64 * dy);
                inner += ry.integrate(|y| {
                    let q = (gww * x * x - 2.0 * gvw * x * y + gvv * y * y) / det;
                    2.0 * norm * (-0.5 * q).exp() * -(-2.0 * x * y * kernel).exp_m1()
                });
            }
            inner
        });
    }
    total
}

/// Binned joint law of `(φ_v²/2, φ_w²/2)` on `{v ↔ w}` (either sign)
/// against the switching-identity density; `edges` are bin edges on each
/// axis in units of `G(v,v)` and `G(w,w)`.
pub fn verify_density(
    b: &BoxSpec,
    v: &Site,
    w: &Site,
    edges: &[f64],
    trials: u64,
    seed_base: u64,
    exec: Execution,
) -> Result<DensityReport> {
    if edges.len() < 2 || edges.windows(2).any(|e| e[1] <= e[0]) || edges[0] != 0.0 {
        return domain("bin edges must start at 0 and increase");
    }
    let gvv = dirichlet_green(b, &[], v, v)?;
    let gvw = dirichlet_green(b, &[], v, w)?;
    let gww = dirichlet_green(b, &[], w, w)?;
    let k = pinned_kernel(b, v, w)?;
    let (i, j) = (b.index(v).unwrap(), b.index(w).unwrap());
    let nb = edges.len() - 1;
    let bin = |u: f64, g: f64| edges.partition_point(|&e| e * g <= u).saturating_sub(1).min(nb - 1);
    let sampler = SpectralSampler::new(*b);
    let parts = exec.map_batches(
        batches(trials),
        || (Vec::new(), DstScratch::default(), Explorer::new()),
        |(values, scratch, ex), kb| {
            let mut counts = vec![0u64; nb * nb];
            for r in batch_range(kb, trials) {
                let path = SeedPath::new(seed_base, STREAM_DENSITY, r);
                sampler.sample_into(&mut path.rng(Purpose::Field), values, scratch);
                let Some(sign) = Sign::of(values[i]) else {
                    continue;
                };
                let view = FieldView {
                    boxspec: b,
                    values,
                    edge_key: path.key(Purpose::Edges),
                    blocked: None,
                };
                if ex.explore(&view, &[i], sign, Stop::at_target(j), |_| {}).reached {
                    let (s, t) = (values[i] * values[i] / 2.0, values[j] * values[j] / 2.0);
                    counts[bin(s, gvv) * nb + bin(t, gww)] += 1;
                }
            }
            counts
        },
    );
    let counts = sum_counts(parts, nb * nb);
    let mut cells = Vec::with_capacity(nb * nb);
    let (mut chi2, mut dof, mut expected_mass) = (0.0, 0, 0.0);
    for a in 0..nb {
        for c in 0..nb {
            let s = (edges[a] * gvv, edges[a + 1] * gvv);
            let t = (edges[c] * gww, edges[c + 1] * gww);
            let mass = density_cell_mass([gvv, gvw, gww], k, s, t);
            expected_mass += mass;
            let expected = mass * trials as f64;
            let observed = counts[a * nb + c];
            let used = expected >= MIN_EXPECTED;
            if used {
                chi2 += (observed as f64 - expected).powi(2) / expected;
                dof += 1;
            }
            cells.push(DensityCell {
                s,
                t,
                expected,
                observed,
                used,
            });
        }
    }
    if dof == 0 {
        return Err(Error::Insufficient("no density cell reaches the minimum expected count".into()));
    }
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(chi2);
    Ok(DensityReport {
        cells,
        chi2,
        dof,
        p_value,
        expected_mass,
        empirical_mass: counts.iter().sum::<u64>() as f64 / trials as f64,
        trials,
        pass: p_value > DENSITY_P_MIN,
    })
}
