//! Exploratory estimators with no predicted constants: they tabulate
//! trends and are not pass/fail checks.
//!
//! * Rigidity: `P(V^+_v(M) ≥ T | two-arm) / P(V^+_v(M) ≥ T | one-arm)` over
//!   thresholds `T`, for `v = 0`, `v' = e_1`.
//! * Separation: with `v_1 = 2n e_1`, `v_2 = −2n e_1`, `w_1 = 2N e_1`,
//!   `w_2 = −2N e_1` and `C = {v_1 ↔ w_1 positively, v_2 ↔ w_2 negatively}`,
//!   the probability given `C` that `v_i`'s cluster meets
//!   `B_{v_{3−i}}(δn) ∪ B_{w_{3−i}}(δN) ∪ B(δn) ∪ B(N/δ)^c` for some `i`.

use serde::{Deserialize, Serialize};

use crate::clusters::{ClusterLabeling, NodeRef, Sign};
use crate::error::{domain, Result};
use crate::gff::{open_edges, sample_field};
use crate::lattice::{BoxSpec, Site};
use crate::par::Execution;
use crate::rng::SeedPath;

const STREAM: u64 = 0xe7b1;
const BATCH: u64 = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploratoryConfig {
    pub d: usize,
    /// Inner scale `n` of the separation quadruple.
    pub n_inner: usize,
    /// Outer scale `N`.
    pub n: usize,
    /// Volume window `M` of the rigidity ratio.
    pub m: usize,
    pub thresholds: Vec<f64>,
    pub deltas: Vec<f64>,
    pub box_factor: usize,
    pub trials: u64,
    pub seed_base: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidityRow {
    pub threshold: f64,
    /// `(hits, conditioned)` under the two-arm event.
    pub two_arm: (u64, u64),
    /// `(hits, conditioned)` under the one-arm event.
    pub one_arm: (u64, u64),
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationRow {
    pub delta: f64,
    pub conditioned: u64,
    pub hits: u64,
    pub probability: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExploratoryReport {
    pub rigidity: Vec<RigidityRow>,
    /// Largest finite ratio; boundedness is reported, not asserted.
    pub max_ratio: Option<f64>,
    pub separation: Vec<SeparationRow>,
    /// Whether the separation probability is nondecreasing in `δ`.
    pub separation_monotone: bool,
}

#[derive(Default)]
struct Counts {
    one: u64,
    two: u64,
    one_hits: Vec<u64>,
    two_hits: Vec<u64>,
    cond: u64,
    sep_hits: Vec<u64>,
}

impl Counts {
    fn merge(&mut self, o: Counts) {
        self.one += o.one;
        self.two += o.two;
        self.cond += o.cond;
        for (a, b) in [
            (&mut self.one_hits, o.one_hits),
            (&mut self.two_hits, o.two_hits),
            (&mut self.sep_hits, o.sep_hits),
        ] {
            if a.is_empty() {
                *a = b;
            } else {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
}

fn dist(a: &Site, b: &Site) -> f64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (x - y).abs())
        .max()
        .unwrap() as f64
}

/// Whether the cluster of `v_i` meets the separation targets at `delta`,
/// given the sites of that cluster.
fn separated_hit(sites: &[Site], other_v: &Site, other_w: &Site, n_inner: usize, n: usize, delta: f64) -> bool {
    if delta <= 0.0 {
        return false;
    }
    let (ni, no) = (n_inner as f64, n as f64);
    sites.iter().any(|s| {
        let r = s.max_norm() as f64;
        dist(s, other_v) <= delta * ni || dist(s, other_w) <= delta * no || r <= delta * ni || r > no / delta
    })
}

pub fn exploratory_rigidity_separation(cfg: &ExploratoryConfig, exec: Execution) -> Result<ExploratoryReport> {
    if cfg.d != 3 {
        return domain("the exploratory estimators run in d = 3");
    }
    if cfg.n < 10 * cfg.n_inner || cfg.n_inner == 0 {
        return domain("separation quadruples need N ≥ 10 n and n ≥ 1");
    }
    let b = BoxSpec::new(cfg.d, cfg.box_factor * cfg.n)?;
    if b.radius() <= 2 * cfg.n || cfg.m > b.radius() {
        return domain("box must contain B(2N) and the volume window");
    }
    let d = cfg.d;
    let o = NodeRef::Site(Site::origin(d));
    let e1 = NodeRef::Site(Site::unit(d, 0));
    let v1 = Site::on_axis(d, 0, 2 * cfg.n_inner as i64);
    let v2 = Site::on_axis(d, 0, -2 * (cfg.n_inner as i64));
    let w1 = Site::on_axis(d, 0, 2 * cfg.n as i64);
    let w2 = Site::on_axis(d, 0, -2 * (cfg.n as i64));
    let parts = exec.map_batches(
        cfg.trials.div_ceil(BATCH) as usize,
        || (),
        |_, k| -> Result<Counts> {
            let mut c = Counts {
                one_hits: vec![0; cfg.thresholds.len()],
                two_hits: vec![0; cfg.thresholds.len()],
                sep_hits: vec![0; cfg.deltas.len()],
                ..Counts::default()
            };
            let start = k as u64 * BATCH;
            for r in start..(start + BATCH).min(cfg.trials) {
                let path = SeedPath::new(cfg.seed_base, STREAM, r);
                let f = sample_field(&b, path);
                let l = ClusterLabeling::label(&f, &open_edges(&f, path))?;
                if l.one_arm(&o, cfg.n)? {
                    let vol = l.cluster_volume(&o, cfg.m, Sign::Plus)? as f64;
                    c.one += 1;
                    let two = l.arm(&e1, Sign::Minus, cfg.n)?;
                    c.two += two as u64;
                    for (t, &th) in cfg.thresholds.iter().enumerate() {
                        if vol >= th {
                            c.one_hits[t] += 1;
                            c.two_hits[t] += two as u64;
                        }
                    }
                }
                let (n1, n2) = (NodeRef::Site(v1.clone()), NodeRef::Site(v2.clone()));
                if l.two_point(&n1, &NodeRef::Site(w1.clone()), Sign::Plus)?
                    && l.two_point(&n2, &NodeRef::Site(w2.clone()), Sign::Minus)?
                {
                    c.cond += 1;
                    let members = |v: &NodeRef, sign| -> Result<Vec<Site>> {
                        let root = l.root_of(l.node_index(v)?, sign);
                        Ok((0..b.site_count())
                            .filter(|&i| l.root_of(i, sign) == root)
                            .map(|i| b.site(i))
                            .collect())
                    };
                    let c1 = members(&n1, Sign::Plus)?;
                    let c2 = members(&n2, Sign::Minus)?;
                    for (k, &delta) in cfg.deltas.iter().enumerate() {
                        if separated_hit(&c1, &v2, &w2, cfg.n_inner, cfg.n, delta)
                            || separated_hit(&c2, &v1, &w1, cfg.n_inner, cfg.n, delta)
                        {
                            c.sep_hits[k] += 1;
                        }
                    }
                }
            }
            Ok(c)
        },
    );
    let mut total = Counts::default();
    for p in parts {
        total.merge(p?);
    }
    let rigidity: Vec<RigidityRow> = cfg
        .thresholds
        .iter()
        .enumerate()
        .map(|(t, &threshold)| {
            let p2 = (total.two > 0).then(|| total.two_hits[t] as f64 / total.two as f64);
            let p1 = (total.one > 0).then(|| total.one_hits[t] as f64 / total.one as f64);
            RigidityRow {
                threshold,
                two_arm: (total.two_hits[t], total.two),
                one_arm: (total.one_hits[t], total.one),
                ratio: match (p2, p1) {
                    (Some(a), Some(b)) if b > 0.0 => Some(a / b),
                    _ => None,
                },
            }
        })
        .collect();
    let max_ratio = rigidity.iter().filter_map(|r| r.ratio).fold(None, |m: Option<f64>, r| {
        Some(m.map_or(r, |m| m.max(r)))
    });
    let separation: Vec<SeparationRow> = cfg
        .deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| SeparationRow {
            delta,
            conditioned: total.cond,
            hits: total.sep_hits[k],
            probability: (total.cond > 0).then(|| total.sep_hits[k] as f64 / total.cond as f64),
        })
        .collect();
    let mut order: Vec<&SeparationRow> = separation.iter().collect();
    order.sort_by(|a, b| a.delta.total_cmp(&b.delta));
    let separation_monotone = order.windows(2).all(|w| w[0].hits <= w[1].hits);
    Ok(ExploratoryReport {
        rigidity,
        max_ratio,
        separation,
        separation_monotone,
    })
}
