//! Monte Carlo experiments over independent replicas.
//!
//! Replica `r` of parameter point `p` draws all its randomness from
//! `SeedPath::new(seed_base, stream(p), r)`. Replicas are grouped in fixed
//! batches and counters are merged in batch order, so results do not depend
//! on the thread count.

pub mod exploratory;
pub mod observables;
pub mod verify;

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::clusters::{set_capacity, CapacityOptions, ClusterLabeling, Explorer, FieldView, Sign, Stop};
use crate::dst::DstScratch;
use crate::error::{domain, Error, Result};
use crate::gff::{bridge_points, open_edges, FieldSample, InteriorPointSample, SpectralSampler};
use crate::lattice::{BoxSpec, Edge, Site};
use crate::par::Execution;
use crate::rng::{Purpose, SeedPath};
use crate::stats::{EstimateRecord, RecordParams, ValueSummary};

pub const DEFAULT_BATCH: u64 = 256;
pub const DEFAULT_MEMORY_BUDGET: usize = 8 << 30;
/// Clusters up to this size have their capacity cached by shape.
const CAPACITY_CACHE_SITES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    OneArm,
    TwoArm,
    Crossing,
    Volume,
    FourPoint,
    Captail,
    Touching,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::OneArm,
        ExperimentKind::TwoArm,
        ExperimentKind::Crossing,
        ExperimentKind::Volume,
        ExperimentKind::FourPoint,
        ExperimentKind::Captail,
        ExperimentKind::Touching,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::OneArm => "one-arm",
            ExperimentKind::TwoArm => "two-arm",
            ExperimentKind::Crossing => "crossing",
            ExperimentKind::Volume => "volume",
            ExperimentKind::FourPoint => "four-point",
            ExperimentKind::Captail => "captail",
            ExperimentKind::Touching => "touching",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    fn id(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u64 + 1
    }
}

fn default_batch() -> u64 {
    DEFAULT_BATCH
}

fn default_budget() -> usize {
    DEFAULT_MEMORY_BUDGET
}

/// One estimation experiment over a grid of parameter points.
///
/// Fields by kind: `scales` is the outer radius `N` grid for every kind;
/// `inner` the crossing radii `n`; `chi` the two-arm separations in graph
/// units (multiples of `d` place `v'` on the lattice axis, other values
/// place `v, v'` symmetrically inside the edge `{0, e_1}`, empty means
/// adjacent sites); `m_grid` the volume thresholds; `thresholds` the
/// capacity thresholds `T`. Fields are sampled in `B(box_factor · N)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub d: usize,
    pub scales: Vec<usize>,
    #[serde(default)]
    pub inner: Vec<usize>,
    #[serde(default)]
    pub chi: Vec<f64>,
    #[serde(default)]
    pub m_grid: Vec<usize>,
    #[serde(default)]
    pub thresholds: Vec<f64>,
    pub box_factor: usize,
    pub trials: u64,
    pub seed_base: u64,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
    #[serde(default)]
    pub capacity: CapacityOptions,
    #[serde(default = "default_budget")]
    pub memory_budget: usize,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, d: usize, scales: Vec<usize>, trials: u64, seed_base: u64) -> Self {
        ExperimentSpec {
            kind,
            d,
            scales,
            inner: Vec::new(),
            chi: Vec::new(),
            m_grid: Vec::new(),
            thresholds: Vec::new(),
            box_factor: 4,
            trials,
            seed_base,
            batch_size: DEFAULT_BATCH,
            capacity: CapacityOptions::default(),
            memory_budget: DEFAULT_MEMORY_BUDGET,
        }
    }

    /// Parameter points in a fixed order.
    pub fn points(&self) -> Vec<Point> {
        let mut out = Vec::new();
        let mut push = |n, inner, chi| {
            out.push(Point {
                index: out.len(),
                n,
                inner,
                chi,
            })
        };
        for &n in &self.scales {
            match self.kind {
                ExperimentKind::Crossing => {
                    for &i in &self.inner {
                        push(n, Some(i), None);
                    }
                }
                ExperimentKind::TwoArm if !self.chi.is_empty() => {
                    for &c in &self.chi {
                        push(n, None, Some(c));
                    }
                }
                _ => push(n, None, None),
            }
        }
        out
    }

    /// Random stream of a parameter point.
    pub fn stream(&self, point: &Point) -> u64 {
        (self.kind.id() << 40) | point.index as u64
    }

    fn field_radius(&self, n: usize) -> usize {
        self.box_factor * n
    }

    /// Checks the grid and memory needs before anything is sampled.
    pub fn plan(&self, exec: Execution) -> Result<()> {
        if self.d < 3 {
            return domain("dimension must be at least 3");
        }
        if self.scales.is_empty() {
            return domain("empty scale grid");
        }
        if self.box_factor == 0 || self.batch_size == 0 {
            return domain("box factor and batch size must be positive");
        }
        match self.kind {
            ExperimentKind::Crossing if self.inner.is_empty() => return domain("crossing needs inner radii"),
            ExperimentKind::Volume if self.m_grid.is_empty() => return domain("volume needs an M grid"),
            ExperimentKind::Captail if self.thresholds.is_empty() => return domain("captail needs thresholds"),
            _ => {}
        }
        let threads = match exec {
            Execution::Sequential => 1,
            Execution::Parallel { threads: 0 } => std::thread::available_parallelism().map_or(1, |n| n.get()),
            Execution::Parallel { threads } => threads,
        };
        for p in self.points() {
            let radius = self.field_radius(p.n);
            let sites = (2 * radius as u128 + 1).pow(self.d as u32);
            if sites >= u32::MAX as u128 {
                return Err(Error::Planning(format!("B({radius}) in d = {} has {sites} sites", self.d)));
            }
            let per_site: u128 = match self.kind {
                ExperimentKind::Touching => 112,
                ExperimentKind::Captail => 48,
                _ => 32,
            };
            let need = per_site * sites * threads as u128;
            if need > self.memory_budget as u128 {
                return Err(Error::Planning(format!(
                    "point {} (N = {}) needs about {} MiB with {threads} threads, budget {} MiB",
                    p.index,
                    p.n,
                    need >> 20,
                    self.memory_budget >> 20
                )));
            }
            if let Some(i) = p.inner {
                if i >= p.n {
                    return domain(format!("inner radius {i} is not below N = {}", p.n));
                }
            }
            if let Some(c) = p.chi {
                let d = self.d as f64;
                if !(c > 0.0) || (c >= d && c % d != 0.0) {
                    return domain(format!("separation {c} is neither inside one edge nor a multiple of {d}"));
                }
                if c >= d && (c / d) as usize > radius {
                    return domain(format!("separation {c} leaves the box"));
                }
            }
            if self.kind == ExperimentKind::FourPoint && p.n + 1 > radius {
                return domain("four-point targets leave the box");
            }
        }
        Ok(())
    }
}

/// A parameter point of an [`ExperimentSpec`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub index: usize,
    pub n: usize,
    pub inner: Option<usize>,
    pub chi: Option<f64>,
}

/// Per-replica scratch reused within a worker.
struct Worker {
    values: Vec<f64>,
    scratch: DstScratch,
    explorer: Explorer,
    members: Vec<usize>,
    capacities: HashMap<Vec<i64>, f64>,
}

impl Worker {
    fn new() -> Self {
        Worker {
            values: Vec::new(),
            scratch: DstScratch::default(),
            explorer: Explorer::new(),
            members: Vec::new(),
            capacities: HashMap::new(),
        }
    }
}

/// Outcome counters of a batch: successes per slot and raw values.
#[derive(Clone, Debug, Default)]
struct Tally {
    successes: Vec<u64>,
    values: Vec<f64>,
}

impl Tally {
    fn merge(&mut self, other: Tally) {
        if self.successes.is_empty() {
            self.successes = other.successes;
        } else {
            for (a, b) in self.successes.iter_mut().zip(other.successes) {
                *a += b;
            }
        }
        self.values.extend(other.values);
    }
}

/// How a two-arm pair is placed.
enum Pair {
    Lattice(usize, usize),
    Interior { edge: Edge, slot: usize, offsets: [f64; 2] },
}

struct PointPlan<'a> {
    spec: &'a ExperimentSpec,
    point: Point,
    boxspec: BoxSpec,
    sampler: SpectralSampler,
    pair: Option<Pair>,
    slots: usize,
}

impl<'a> PointPlan<'a> {
    fn new(spec: &'a ExperimentSpec, point: Point) -> Result<Self> {
        let b = BoxSpec::new(spec.d, spec.field_radius(point.n))?;
        let d = spec.d;
        let index = |s: Site| b.index(&s).ok_or_else(|| Error::Domain(format!("{s} is outside B({})", b.radius())));
        let pair = match spec.kind {
            ExperimentKind::TwoArm => Some(match point.chi {
                Some(c) if c < d as f64 => {
                    let edge = Edge::along(&Site::origin(d), 0);
                    let slot = b.edge_slot(&edge).unwrap();
                    let mid = d as f64 / 2.0;
                    Pair::Interior {
                        edge,
                        slot,
                        offsets: [mid - c / 2.0, mid + c / 2.0],
                    }
                }
                c => {
                    let k = c.map_or(1, |c| (c / d as f64).round() as i64);
                    Pair::Lattice(index(Site::origin(d))?, index(Site::on_axis(d, 0, k))?)
                }
            }),
            _ => None,
        };
        let slots = match spec.kind {
            ExperimentKind::OneArm => 2,
            ExperimentKind::Volume => spec.m_grid.len(),
            ExperimentKind::Captail => spec.thresholds.len(),
            _ => 1,
        };
        Ok(PointPlan {
            spec,
            point,
            boxspec: b,
            sampler: SpectralSampler::new(b),
            pair,
            slots,
        })
    }

    fn run_batch(&self, w: &mut Worker, batch: u64) -> Result<Tally> {
        let start = batch * self.spec.batch_size;
        let end = (start + self.spec.batch_size).min(self.spec.trials);
        let mut t = Tally {
            successes: vec![0; self.slots],
            values: Vec::new(),
        };
        let stream = self.spec.stream(&self.point);
        for r in start..end {
            let path = SeedPath::new(self.spec.seed_base, stream, r);
            self.replica(w, path, &mut t)?;
        }
        Ok(t)
    }

    fn replica(&self, w: &mut Worker, path: SeedPath, t: &mut Tally) -> Result<()> {
        let b = &self.boxspec;
        let d = b.dim();
        let n = self.point.n;
        self.sampler
            .sample_into(&mut path.rng(Purpose::Field), &mut w.values, &mut w.scratch);
        let mut view = FieldView {
            boxspec: b,
            values: &w.values,
            edge_key: path.key(Purpose::Edges),
            blocked: None,
        };
        let origin = b.index(&Site::origin(d)).unwrap();
        let ex = &mut w.explorer;
        match self.spec.kind {
            ExperimentKind::OneArm => {
                for (k, sign) in [Sign::Plus, Sign::Minus].into_iter().enumerate() {
                    if ex.explore(&view, &[origin], sign, Stop::at_reach(n), |_| {}).reached {
                        t.successes[k] += 1;
                    }
                }
            }
            ExperimentKind::Crossing => {
                let inner = BoxSpec::new(d, self.point.inner.unwrap())?;
                let sources: Vec<usize> = (0..inner.site_count())
                    .map(|k| b.index(&inner.site(k)).unwrap())
                    .collect();
                if ex.explore(&view, &sources, Sign::Plus, Stop::at_reach(n), |_| {}).reached {
                    t.successes[0] += 1;
                }
            }
            ExperimentKind::TwoArm => {
                let hit = match self.pair.as_ref().unwrap() {
                    Pair::Lattice(v, v2) => {
                        ex.explore(&view, &[*v], Sign::Plus, Stop::at_reach(n), |_| {}).reached
                            && ex.explore(&view, &[*v2], Sign::Minus, Stop::at_reach(n), |_| {}).reached
                    }
                    Pair::Interior { edge, slot, offsets } => {
                        let (lo, hi) = (b.index(edge.lo()).unwrap(), b.index(edge.hi()).unwrap());
                        let mut rng = path.rng_for(Purpose::Interior, *slot as u64);
                        let s = bridge_points(w.values[lo], w.values[hi], edge.clone(), offsets, &mut rng)?;
                        view.blocked = Some(*slot);
                        let arm = |ex: &mut Explorer, k: usize, sign: Sign| {
                            let src = chain_sources(&s, k, sign, lo, hi);
                            !src.is_empty() && ex.explore(&view, &src, sign, Stop::at_reach(n), |_| {}).reached
                        };
                        arm(ex, 0, Sign::Plus) && arm(ex, 1, Sign::Minus)
                    }
                };
                t.successes[0] += hit as u64;
            }
            ExperimentKind::Volume => {
                let top = *self.spec.m_grid.iter().max().unwrap();
                let e = ex.explore(&view, &[origin], Sign::Plus, Stop::at_volume(top), |_| {});
                for (k, &m) in self.spec.m_grid.iter().enumerate() {
                    t.successes[k] += (e.visited >= m) as u64;
                }
            }
            ExperimentKind::FourPoint => {
                let (v, v2) = (origin, b.index(&Site::unit(d, 1)).unwrap());
                let far = Site::on_axis(d, 0, n as i64);
                let wt = b.index(&far).unwrap();
                let wt2 = b.index(&far.shifted(1, 1)).unwrap();
                let hit = ex.explore(&view, &[v], Sign::Plus, Stop::at_target(wt), |_| {}).reached
                    && ex.explore(&view, &[v2], Sign::Minus, Stop::at_target(wt2), |_| {}).reached;
                t.successes[0] += hit as u64;
            }
            ExperimentKind::Captail => {
                let Some(sign) = Sign::of(w.values[origin]) else {
                    return Ok(());
                };
                w.members.clear();
                let members = &mut w.members;
                ex.explore(&view, &[origin], sign, Stop::never(), |i| members.push(i));
                let cap = cluster_capacity(b, &w.members, &self.spec.capacity, &mut w.capacities, path)?;
                for (k, &th) in self.spec.thresholds.iter().enumerate() {
                    t.successes[k] += (cap >= th) as u64;
                }
                t.values.push(cap);
            }
            ExperimentKind::Touching => {
                let field = FieldSample::new(*b, w.values.clone(), Some(path))?;
                let l = ClusterLabeling::label(&field, &open_edges(&field, path))?;
                let c = l.touching_edges(n)?;
                t.successes[0] += (c > 0) as u64;
                t.values.push(c as f64);
            }
        }
        Ok(())
    }

    fn records(&self, tally: Tally, elapsed: f64) -> Vec<EstimateRecord> {
        let spec = self.spec;
        let base = RecordParams {
            d: spec.d,
            n: self.point.n,
            inner: self.point.inner,
            chi: self.point.chi,
            box_factor: spec.box_factor,
            ..RecordParams::default()
        };
        let stream = spec.stream(&self.point);
        let rec = |params: RecordParams, k: u64| {
            let mut r = EstimateRecord::from_counts(
                spec.kind.name(),
                params,
                k,
                spec.trials,
                spec.seed_base,
                stream,
                (0, spec.trials),
            );
            r.wall_time = Some(elapsed);
            r
        };
        match spec.kind {
            ExperimentKind::OneArm => [Sign::Plus, Sign::Minus]
                .into_iter()
                .zip(&tally.successes)
                .map(|(sign, &k)| {
                    rec(
                        RecordParams {
                            sign: Some(sign),
                            ..base.clone()
                        },
                        k,
                    )
                })
                .collect(),
            ExperimentKind::Volume => spec
                .m_grid
                .iter()
                .zip(&tally.successes)
                .map(|(&m, &k)| {
                    rec(
                        RecordParams {
                            m: Some(m),
                            ..base.clone()
                        },
                        k,
                    )
                })
                .collect(),
            ExperimentKind::Captail => spec
                .thresholds
                .iter()
                .zip(&tally.successes)
                .map(|(&th, &k)| {
                    let mut r = rec(
                        RecordParams {
                            threshold: Some(th),
                            ..base.clone()
                        },
                        k,
                    );
                    r.values = ValueSummary::of(&tally.values);
                    r
                })
                .collect(),
            ExperimentKind::Touching => {
                let mut r = rec(base, tally.successes[0]);
                r.values = ValueSummary::of(&tally.values);
                vec![r]
            }
            _ => vec![rec(base, tally.successes[0])],
        }
    }
}

/// Lattice endpoints of `s.edge` joined to interior point `k` inside the
/// edge in the `sign` clusters.
pub fn chain_sources(s: &InteriorPointSample, k: usize, sign: Sign, lo: usize, hi: usize) -> Vec<usize> {
    if !sign.holds(s.values[k]) {
        return Vec::new();
    }
    let open = match sign {
        Sign::Plus => &s.open_plus,
        Sign::Minus => &s.open_minus,
    };
    let mut out = Vec::new();
    // sub-interval j joins chain positions j-1 and j (lo is -1)
    if open[..=k].iter().all(|&o| o) {
        out.push(lo);
    }
    if open[k + 1..].iter().all(|&o| o) {
        out.push(hi);
    }
    out
}

fn cluster_capacity(
    b: &BoxSpec,
    members: &[usize],
    opts: &CapacityOptions,
    cache: &mut HashMap<Vec<i64>, f64>,
    path: SeedPath,
) -> Result<f64> {
    let sites: Vec<Site> = members.iter().map(|&i| b.site(i)).collect();
    let key = (sites.len() <= CAPACITY_CACHE_SITES).then(|| {
        let d = b.dim();
        let lo: Vec<i64> = (0..d)
            .map(|a| sites.iter().map(|s| s.coords()[a]).min().unwrap())
            .collect();
        let mut shape: Vec<Vec<i64>> = sites
            .iter()
            .map(|s| s.coords().iter().zip(&lo).map(|(c, l)| c - l).collect())
            .collect();
        shape.sort();
        shape.concat()
    });
    if let Some(v) = key.as_ref().and_then(|k| cache.get(k)) {
        return Ok(*v);
    }
    let est = set_capacity(&sites, opts, &mut path.rng(Purpose::Aux))?;
    if let Some(k) = key {
        cache.insert(k, est.value);
    }
    Ok(est.value)
}

/// Runs one parameter point.
pub fn run_point(spec: &ExperimentSpec, point: &Point, exec: Execution) -> Result<Vec<EstimateRecord>> {
    let started = Instant::now();
    let plan = PointPlan::new(spec, point.clone())?;
    let batches = spec.trials.div_ceil(spec.batch_size) as usize;
    let results = exec.map_batches(batches, Worker::new, |w, k| plan.run_batch(w, k as u64));
    let mut tally = Tally {
        successes: vec![0; plan.slots],
        values: Vec::new(),
    };
    for r in results {
        tally.merge(r?);
    }
    log::info!(
        "{} point {} (N = {}): {} replicas in {:.1}s",
        spec.kind.name(),
        point.index,
        point.n,
        spec.trials,
        started.elapsed().as_secs_f64()
    );
    Ok(plan.records(tally, started.elapsed().as_secs_f64()))
}

/// Runs every parameter point in order.
pub fn run_experiment(spec: &ExperimentSpec, exec: Execution) -> Result<Vec<EstimateRecord>> {
    spec.plan(exec)?;
    let mut out = Vec::new();
    for p in spec.points() {
        out.extend(run_point(spec, &p, exec)?);
    }
    Ok(out)
}
