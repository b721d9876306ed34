//! Sign clusters of a sampled configuration and the events built on them.
//!
//! Nodes are the lattice sites of the box followed by the interior points of
//! instrumented edges. An instrumented edge is replaced by the chain of its
//! sub-intervals; its lattice-level flag is ignored. Component ids are the
//! smallest node index in the component.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::gff::{edge_flag, EdgeOpenness, FieldSample, InteriorPointSample};
use crate::greens::capacity_in_box;
use crate::lattice::{BoxSpec, Site};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn of(x: f64) -> Option<Sign> {
        if x > 0.0 {
            Some(Sign::Plus)
        } else if x < 0.0 {
            Some(Sign::Minus)
        } else {
            None
        }
    }

    #[inline]
    pub fn holds(self, x: f64) -> bool {
        match self {
            Sign::Plus => x > 0.0,
            Sign::Minus => x < 0.0,
        }
    }

    /// The matching [`EdgeOpenness`] bit.
    #[inline]
    pub fn flag(self) -> u8 {
        match self {
            Sign::Plus => EdgeOpenness::PLUS,
            Sign::Minus => EdgeOpenness::MINUS,
        }
    }

    pub fn flip(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

/// A node of a labeling: a lattice site, or interior point `point` of the
/// instrumented edge `sample`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRef {
    Site(Site),
    Interior { sample: usize, point: usize },
}

impl From<Site> for NodeRef {
    fn from(s: Site) -> Self {
        NodeRef::Site(s)
    }
}

/// Per-component summary; bounding box and reach cover lattice sites only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub root: usize,
    pub sign: Sign,
    /// Number of lattice sites.
    pub volume: usize,
    /// Coordinate bounding box, empty if the component has no lattice site.
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    /// Largest max-norm of a site, `None` without lattice sites.
    pub reach: Option<usize>,
}

impl Component {
    /// Largest side of the bounding box (coordinate units).
    pub fn diameter(&self) -> i64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .max()
            .unwrap_or(0)
    }

    /// Whether the component reaches `∂B(n)` (centered at the origin).
    pub fn touches_shell(&self, n: usize) -> bool {
        self.reach.is_some_and(|r| r >= n)
    }
}

const NONE: u32 = u32::MAX;

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        let p = parent[x as usize];
        parent[x as usize] = parent[p as usize];
        x = p;
    }
    x
}

fn union(parent: &mut [u32], a: usize, b: usize) {
    if parent[a] == NONE || parent[b] == NONE {
        return;
    }
    let ra = find(parent, a as u32);
    let rb = find(parent, b as u32);
    if ra < rb {
        parent[rb as usize] = ra;
    } else if rb < ra {
        parent[ra as usize] = rb;
    }
}

/// Connected components of the positive and negative open subgraphs.
#[derive(Clone, Debug)]
pub struct ClusterLabeling {
    boxspec: BoxSpec,
    interior: Vec<InteriorPointSample>,
    starts: Vec<usize>,
    /// Per sign, per node: index into `components`, or `NONE`.
    comp_of: [Vec<u32>; 2],
    components: [Vec<Component>; 2],
}

impl ClusterLabeling {
    pub fn label(field: &FieldSample, openness: &EdgeOpenness) -> Result<Self> {
        Self::label_with_interior(field, openness, Vec::new())
    }

    /// Labels with the given edges instrumented by interior points.
    pub fn label_with_interior(
        field: &FieldSample,
        openness: &EdgeOpenness,
        interior: Vec<InteriorPointSample>,
    ) -> Result<Self> {
        let b = *field.boxspec();
        if *openness.boxspec() != b {
            return domain("field and openness belong to different boxes");
        }
        if let (Some(p), Some(q)) = (field.seed_path(), openness.seed_path()) {
            if p != q {
                return domain("field and openness come from different replicas");
            }
        }
        let d = b.dim();
        let n_sites = b.site_count();
        let mut instrumented = HashSet::new();
        let mut starts = Vec::with_capacity(interior.len());
        let mut n_nodes = n_sites;
        for s in &interior {
            let Some(slot) = b.edge_slot(&s.edge) else {
                return domain("instrumented edge lies outside the box");
            };
            if !instrumented.insert(slot) {
                return domain("edge instrumented twice");
            }
            starts.push(n_nodes);
            n_nodes += s.offsets.len();
        }
        let value = |i: usize| -> f64 {
            if i < n_sites {
                return field.values()[i];
            }
            let k = starts.partition_point(|&s| s <= i) - 1;
            interior[k].values[i - starts[k]]
        };

        let mut comp_of = [Vec::new(), Vec::new()];
        let mut components = [Vec::new(), Vec::new()];
        for sign in [Sign::Plus, Sign::Minus] {
            let mut parent: Vec<u32> = (0..n_nodes)
                .map(|i| if sign.holds(value(i)) { i as u32 } else { NONE })
                .collect();
            for (slot, &f) in openness.flags().iter().enumerate() {
                if f & sign.flag() != 0 && !instrumented.contains(&slot) {
                    let lo = slot / d;
                    union(&mut parent, lo, lo + b.stride(slot % d));
                }
            }
            for (k, s) in interior.iter().enumerate() {
                let lo = b.index(s.edge.lo()).unwrap();
                let hi = b.index(s.edge.hi()).unwrap();
                let open = match sign {
                    Sign::Plus => &s.open_plus,
                    Sign::Minus => &s.open_minus,
                };
                let chain: Vec<usize> = std::iter::once(lo)
                    .chain(starts[k]..starts[k] + s.offsets.len())
                    .chain(std::iter::once(hi))
                    .collect();
                for (j, w) in chain.windows(2).enumerate() {
                    if open[j] {
                        union(&mut parent, w[0], w[1]);
                    }
                }
            }
            let mut ids = vec![NONE; n_nodes];
            let mut comps: Vec<Component> = Vec::new();
            let mut coords = vec![0i64; d];
            for i in 0..n_nodes {
                if parent[i] == NONE {
                    continue;
                }
                let r = find(&mut parent, i as u32) as usize;
                let id = if r == i {
                    comps.push(Component {
                        root: i,
                        sign,
                        volume: 0,
                        lo: Vec::new(),
                        hi: Vec::new(),
                        reach: None,
                    });
                    (comps.len() - 1) as u32
                } else {
                    ids[r]
                };
                ids[i] = id;
                if i < n_sites {
                    let c = &mut comps[id as usize];
                    b.coords_into(i, &mut coords);
                    c.volume += 1;
                    if c.lo.is_empty() {
                        c.lo = coords.clone();
                        c.hi = coords.clone();
                    } else {
                        for a in 0..d {
                            c.lo[a] = c.lo[a].min(coords[a]);
                            c.hi[a] = c.hi[a].max(coords[a]);
                        }
                    }
                    let m = b.max_norm_of(i);
                    c.reach = Some(c.reach.map_or(m, |r| r.max(m)));
                }
            }
            comp_of[sign.slot()] = ids;
            components[sign.slot()] = comps;
        }
        Ok(ClusterLabeling {
            boxspec: b,
            interior,
            starts,
            comp_of,
            components,
        })
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn interior(&self) -> &[InteriorPointSample] {
        &self.interior
    }

    pub fn components(&self, sign: Sign) -> &[Component] {
        &self.components[sign.slot()]
    }

    pub fn node_index(&self, v: &NodeRef) -> Result<usize> {
        match v {
            NodeRef::Site(s) => self
                .boxspec
                .index(s)
                .ok_or_else(|| crate::Error::Domain(format!("{s} lies outside the sampled box"))),
            NodeRef::Interior { sample, point } => match self.interior.get(*sample) {
                Some(s) if *point < s.offsets.len() => Ok(self.starts[*sample] + point),
                _ => domain("no such interior point"),
            },
        }
    }

    /// Component of `v` in the `sign` clusters, `None` if `v` has the
    /// other sign (or the value zero).
    pub fn component(&self, v: &NodeRef, sign: Sign) -> Result<Option<&Component>> {
        let i = self.node_index(v)?;
        let id = self.comp_of[sign.slot()][i];
        Ok((id != NONE).then(|| &self.components[sign.slot()][id as usize]))
    }

    /// Component id (smallest node index) of the node with index `i`.
    pub fn root_of(&self, i: usize, sign: Sign) -> Option<usize> {
        let id = self.comp_of[sign.slot()][i];
        (id != NONE).then(|| self.components[sign.slot()][id as usize].root)
    }

    fn check_shell(&self, n: usize) -> Result<()> {
        if n > self.boxspec.radius() {
            return domain(format!(
                "shell radius {n} exceeds the sampled box radius {}",
                self.boxspec.radius()
            ));
        }
        Ok(())
    }

    /// `v` connects to `∂B(n)` in the `sign` clusters.
    pub fn arm(&self, v: &NodeRef, sign: Sign, n: usize) -> Result<bool> {
        self.check_shell(n)?;
        Ok(self.component(v, sign)?.is_some_and(|c| c.touches_shell(n)))
    }

    /// `v ↔ ∂B(n)` in the positive clusters.
    pub fn one_arm(&self, v: &NodeRef, n: usize) -> Result<bool> {
        self.arm(v, Sign::Plus, n)
    }

    /// `v ↔ ∂B(n)` positively and `v' ↔ ∂B(n)` negatively.
    pub fn hetero_two_arm(&self, v: &NodeRef, v2: &NodeRef, n: usize) -> Result<bool> {
        if v == v2 {
            return domain("the two arms need distinct starting points");
        }
        Ok(self.arm(v, Sign::Plus, n)? && self.arm(v2, Sign::Minus, n)?)
    }

    /// `B(n) ↔ ∂B(N)` in the positive clusters.
    pub fn crossing(&self, inner: usize, outer: usize) -> Result<bool> {
        self.check_shell(outer)?;
        if inner > outer {
            return domain("inner radius exceeds outer radius");
        }
        let inner_box = BoxSpec::new(self.boxspec.dim(), inner)?;
        let mut coords = vec![0; self.boxspec.dim()];
        for k in 0..inner_box.site_count() {
            inner_box.coords_into(k, &mut coords);
            let s = Site::new(coords.clone());
            if self.arm(&NodeRef::Site(s), Sign::Plus, outer)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    /// `v` and `w` lie in one `sign` cluster.
    pub fn two_point(&self, v: &NodeRef, w: &NodeRef, sign: Sign) -> Result<bool> {
        let (i, j) = (self.node_index(v)?, self.node_index(w)?);
        let ids = &self.comp_of[sign.slot()];
        Ok(ids[i] != NONE && ids[i] == ids[j])
    }

    /// `{v ↔ w positively, v' ↔ w' negatively}`.
    pub fn four_point(&self, v: &NodeRef, w: &NodeRef, v2: &NodeRef, w2: &NodeRef) -> Result<bool> {
        Ok(self.two_point(v, w, Sign::Plus)? && self.two_point(v2, w2, Sign::Minus)?)
    }

    fn window(&self, center: &Site, m: usize) -> Result<BoxSpec> {
        let r = self.boxspec.radius() as i64;
        if center.coords().iter().any(|c| c.abs() + m as i64 > r) {
            return domain(format!("window B_{center}({m}) exceeds the sampled box"));
        }
        BoxSpec::new(self.boxspec.dim(), m)
    }

    fn center_of(&self, v: &NodeRef) -> Site {
        match v {
            NodeRef::Site(s) => s.clone(),
            NodeRef::Interior { sample, point } => {
                let s = &self.interior[*sample];
                if s.offsets[*point] <= s.edge.length() / 2.0 {
                    s.edge.lo().clone()
                } else {
                    s.edge.hi().clone()
                }
            }
        }
    }

    /// Sites of `v`'s `sign` cluster within `B_v(m)`, in index order.
    pub fn cluster_sites_in_window(&self, v: &NodeRef, m: usize, sign: Sign) -> Result<Vec<Site>> {
        let center = self.center_of(v);
        let w = self.window(&center, m)?;
        let i = self.node_index(v)?;
        let ids = &self.comp_of[sign.slot()];
        if ids[i] == NONE {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        for k in 0..w.site_count() {
            let s = w.site(k).translate(&center);
            let j = self.boxspec.index(&s).unwrap();
            if ids[j] == ids[i] {
                out.push(s);
            }
        }
        Ok(out)
    }

    /// `vol(C_v ∩ B_v(m))` for the `sign` cluster of `v`.
    pub fn cluster_volume(&self, v: &NodeRef, m: usize, sign: Sign) -> Result<usize> {
        Ok(self.cluster_sites_in_window(v, m, sign)?.len())
    }

    /// Edges inside `B(n)` joining a positive and a negative cluster that
    /// both have bounding-box diameter at least `n`.
    pub fn touching_edges(&self, n: usize) -> Result<usize> {
        self.check_shell(n)?;
        let b = self.boxspec;
        let d = b.dim();
        let big = |i: usize, sign: Sign| {
            let id = self.comp_of[sign.slot()][i];
            id != NONE && self.components[sign.slot()][id as usize].diameter() >= n as i64
        };
        let inner = BoxSpec::new(d, n)?;
        let mut count = 0;
        for k in 0..inner.site_count() {
            let s = inner.site(k);
            let i = b.index(&s).unwrap();
            for axis in 0..d {
                if s.coords()[axis] >= n as i64 {
                    continue;
                }
                let j = i + b.stride(axis);
                if (big(i, Sign::Plus) && big(j, Sign::Minus)) || (big(i, Sign::Minus) && big(j, Sign::Plus)) {
                    count += 1;
                }
            }
        }
        Ok(count)
    }

    /// Capacity of `C_v ∩ B_v(m)` (see [`set_capacity`]).
    pub fn cluster_capacity(
        &self,
        v: &NodeRef,
        m: usize,
        sign: Sign,
        opts: &CapacityOptions,
        rng: &mut impl Rng,
    ) -> Result<CapacityEstimate> {
        let sites = self.cluster_sites_in_window(v, m, sign)?;
        if sites.is_empty() {
            return domain("the cluster has no site in the window");
        }
        set_capacity(&sites, opts, rng)
    }

    /// Evaluates the requested events for one replica.
    pub fn report(&self, q: &EventQuery) -> Result<ArmEventReport> {
        let mut r = ArmEventReport::default();
        if let Some((v, n)) = &q.one_arm {
            r.one_arm = Some(self.one_arm(v, *n)?);
            r.one_arm_minus = Some(self.arm(v, Sign::Minus, *n)?);
        }
        if let Some((inner, outer)) = q.crossing {
            r.crossing = Some(self.crossing(inner, outer)?);
        }
        if let Some((v, w)) = &q.two_point {
            r.two_point = Some(self.two_point(v, w, Sign::Plus)?);
        }
        if let Some((v, v2, n)) = &q.hetero_two_arm {
            r.hetero_two_arm = Some(self.hetero_two_arm(v, v2, *n)?);
        }
        if let Some((v, w, v2, w2)) = &q.four_point {
            r.four_point = Some(self.four_point(v, w, v2, w2)?);
        }
        if let Some((v, v2, ms)) = &q.volumes {
            for &m in ms {
                r.volume_plus.push((m, self.cluster_volume(v, m, Sign::Plus)?));
                r.volume_minus.push((m, self.cluster_volume(v2, m, Sign::Minus)?));
            }
        }
        if let Some(n) = q.touching_edges {
            r.touching_edges = Some(self.touching_edges(n)?);
        }
        Ok(r)
    }
}

/// Which events [`ClusterLabeling::report`] evaluates.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EventQuery {
    pub one_arm: Option<(NodeRef, usize)>,
    pub crossing: Option<(usize, usize)>,
    pub two_point: Option<(NodeRef, NodeRef)>,
    pub hetero_two_arm: Option<(NodeRef, NodeRef, usize)>,
    pub four_point: Option<(NodeRef, NodeRef, NodeRef, NodeRef)>,
    /// `(v, v', M grid)` for `V^+_v(M)` and `V^-_{v'}(M)`.
    pub volumes: Option<(NodeRef, NodeRef, Vec<usize>)>,
    pub touching_edges: Option<usize>,
}

/// Per-replica event outcomes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmEventReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replica: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_arm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub one_arm_minus: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crossing: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub two_point: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hetero_two_arm: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub four_point: Option<bool>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub volume_plus: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub volume_minus: Vec<(usize, usize)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub touching_edges: Option<usize>,
}

impl ArmEventReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Settings for [`set_capacity`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityOptions {
    /// Grounded box radius as a multiple of the set's half-extent.
    pub box_factor: usize,
    /// Sets larger than this use the walker estimate.
    pub solve_limit: usize,
    pub walkers: usize,
}

impl Default for CapacityOptions {
    fn default() -> Self {
        CapacityOptions {
            box_factor: 4,
            solve_limit: 5000,
            walkers: 20_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityMethod {
    Solve,
    Walkers,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityEstimate {
    pub value: f64,
    /// Zero for the linear solve.
    pub std_error: f64,
    pub method: CapacityMethod,
    pub box_radius: usize,
}

/// Capacity of a set of sites relative to a grounded box of radius
/// `box_factor` times its half-extent, centered on the set: a linear solve
/// for small sets, otherwise `|∂A|` times the fraction of walkers started
/// uniformly on the inner boundary `∂A` that leave the box before returning
/// to `A`.
pub fn set_capacity(sites: &[Site], opts: &CapacityOptions, rng: &mut impl Rng) -> Result<CapacityEstimate> {
    let Some(first) = sites.first() else {
        return domain("capacity of the empty set");
    };
    let d = first.dim();
    let mut lo = first.coords().to_vec();
    let mut hi = lo.clone();
    for s in sites {
        for a in 0..d {
            lo[a] = lo[a].min(s.coords()[a]);
            hi[a] = hi[a].max(s.coords()[a]);
        }
    }
    let center = Site::new((0..d).map(|a| -(lo[a] + hi[a]).div_euclid(2)).collect());
    let shifted: Vec<Site> = sites.iter().map(|s| s.translate(&center)).collect();
    let half = (0..d).map(|a| (hi[a] - lo[a] + 1) / 2).max().unwrap() as usize + 1;
    let radius = (opts.box_factor.max(2) * half).max(half + 2);
    let b = BoxSpec::new(d, radius)?;
    if shifted.len() <= opts.solve_limit {
        let m = capacity_in_box(&b, &shifted)?;
        return Ok(CapacityEstimate {
            value: m.total,
            std_error: 0.0,
            method: CapacityMethod::Solve,
            box_radius: radius,
        });
    }
    let mut member = vec![false; b.site_count()];
    for s in &shifted {
        member[b.index(s).unwrap()] = true;
    }
    let boundary: Vec<usize> = shifted
        .iter()
        .map(|s| b.index(s).unwrap())
        .filter(|&i| {
            (0..d).any(|a| {
                let st = b.stride(a);
                !member[i + st] || !member[i - st]
            })
        })
        .collect();
    let r = radius as i64;
    let mut pos = vec![0i64; d];
    let mut escaped = 0usize;
    for _ in 0..opts.walkers {
        let start = boundary[rng.gen_range(0..boundary.len())];
        b.coords_into(start, &mut pos);
        let mut idx = start;
        loop {
            let axis = rng.gen_range(0..d);
            let step: i64 = if rng.gen::<bool>() { 1 } else { -1 };
            pos[axis] += step;
            if pos[axis].abs() > r {
                escaped += 1;
                break;
            }
            idx = if step > 0 { idx + b.stride(axis) } else { idx - b.stride(axis) };
            if member[idx] {
                break;
            }
        }
    }
    let p = escaped as f64 / opts.walkers as f64;
    let nb = boundary.len() as f64;
    Ok(CapacityEstimate {
        value: nb * p,
        std_error: nb * (p * (1.0 - p) / opts.walkers as f64).sqrt(),
        method: CapacityMethod::Walkers,
        box_radius: radius,
    })
}

/// Read-only view of one replica for [`Explorer`]: field values and the
/// edge key, so edges are opened lazily with the same outcome as
/// [`crate::gff::open_edges`].
#[derive(Clone, Copy)]
pub struct FieldView<'a> {
    pub boxspec: &'a BoxSpec,
    pub values: &'a [f64],
    pub edge_key: u64,
    /// An edge slot treated as absent (instrumented elsewhere).
    pub blocked: Option<usize>,
}

/// When an exploration may stop early.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Stop {
    /// A site of max-norm at least this was visited.
    pub reach: Option<usize>,
    /// This site index was visited.
    pub target: Option<usize>,
    /// This many sites were visited.
    pub volume: Option<usize>,
}

impl Stop {
    pub fn never() -> Self {
        Stop::default()
    }

    pub fn at_reach(n: usize) -> Self {
        Stop {
            reach: Some(n),
            ..Stop::default()
        }
    }

    pub fn at_target(i: usize) -> Self {
        Stop {
            target: Some(i),
            ..Stop::default()
        }
    }

    pub fn at_volume(m: usize) -> Self {
        Stop {
            volume: Some(m),
            ..Stop::default()
        }
    }
}

/// Outcome of one exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Exploration {
    /// A stop condition was met.
    pub reached: bool,
    /// Sites visited (the whole cluster unless stopped early).
    pub visited: usize,
}

/// Breadth-first cluster exploration with reusable buffers.
#[derive(Default)]
pub struct Explorer {
    stamp: Vec<u32>,
    generation: u32,
    queue: Vec<u32>,
}

impl Explorer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Explores the `sign` clusters of `sources` (sources of the other sign
    /// are skipped) until a `stop` condition holds; `visit` sees every
    /// visited site index.
    pub fn explore(
        &mut self,
        view: &FieldView<'_>,
        sources: &[usize],
        sign: Sign,
        stop: Stop,
        mut visit: impl FnMut(usize),
    ) -> Exploration {
        let b = view.boxspec;
        let n = b.site_count();
        let d = b.dim();
        let side = b.side();
        if self.stamp.len() != n {
            self.stamp = vec![0; n];
            self.generation = 0;
        }
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.stamp.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        let gen = self.generation;
        self.queue.clear();
        let flag = sign.flag();
        let mut visited = 0;
        for &s in sources {
            if sign.holds(view.values[s]) && self.stamp[s] != gen {
                self.stamp[s] = gen;
                self.queue.push(s as u32);
            }
        }
        let mut head = 0;
        while head < self.queue.len() {
            let i = self.queue[head] as usize;
            head += 1;
            visited += 1;
            visit(i);
            if stop.reach.is_some_and(|r| b.max_norm_of(i) >= r)
                || stop.target == Some(i)
                || stop.volume.is_some_and(|m| visited >= m)
            {
                return Exploration {
                    reached: true,
                    visited,
                };
            }
            let a = view.values[i];
            for axis in 0..d {
                let stride = b.stride(axis);
                let c = (i / stride) % side;
                if c + 1 < side {
                    let j = i + stride;
                    let slot = i * d + axis;
                    if self.stamp[j] != gen
                        && view.blocked != Some(slot)
                        && edge_flag(view.edge_key, slot, a, view.values[j], d) & flag != 0
                    {
                        self.stamp[j] = gen;
                        self.queue.push(j as u32);
                    }
                }
                if c > 0 {
                    let j = i - stride;
                    let slot = j * d + axis;
                    if self.stamp[j] != gen
                        && view.blocked != Some(slot)
                        && edge_flag(view.edge_key, slot, view.values[j], a, d) & flag != 0
                    {
                        self.stamp[j] = gen;
                        self.queue.push(j as u32);
                    }
                }
            }
        }
        Exploration {
            reached: false,
            visited,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gff::{open_edges, sample_field};
    use crate::rng::{Purpose, SeedPath};

    fn constant_field(b: BoxSpec, f: impl Fn(&Site) -> f64) -> FieldSample {
        let values = (0..b.site_count()).map(|i| f(&b.site(i))).collect();
        FieldSample::new(b, values, None).unwrap()
    }

    fn all_open(b: BoxSpec, field: &FieldSample) -> EdgeOpenness {
        let mut flags = vec![0; b.edge_slots()];
        for e in b.edges() {
            let (x, y) = (field.value(e.lo()).unwrap(), field.value(e.hi()).unwrap());
            if x > 0.0 && y > 0.0 {
                flags[b.edge_slot(&e).unwrap()] = EdgeOpenness::PLUS;
            } else if x < 0.0 && y < 0.0 {
                flags[b.edge_slot(&e).unwrap()] = EdgeOpenness::MINUS;
            }
        }
        EdgeOpenness::from_flags(b, flags, None).unwrap()
    }

    #[test]
    fn all_positive_is_one_component() {
        let b = BoxSpec::new(3, 2).unwrap();
        let f = constant_field(b, |_| 1.0);
        let l = ClusterLabeling::label(&f, &all_open(b, &f)).unwrap();
        assert_eq!(l.components(Sign::Plus).len(), 1);
        assert_eq!(l.components(Sign::Plus)[0].volume, 125);
        assert!(l.components(Sign::Minus).is_empty());
        assert_eq!(l.touching_edges(2).unwrap(), 0);
    }

    #[test]
    fn checkerboard_gives_singletons() {
        let b = BoxSpec::new(3, 2).unwrap();
        let f = constant_field(b, |s| if s.coords().iter().sum::<i64>() % 2 == 0 { 1.0 } else { -1.0 });
        let l = ClusterLabeling::label(&f, &all_open(b, &f)).unwrap();
        assert!(l.components(Sign::Plus).iter().all(|c| c.volume == 1));
        assert_eq!(l.components(Sign::Plus).len() + l.components(Sign::Minus).len(), 125);
    }

    #[test]
    fn slabs_touch_along_the_interface() {
        let b = BoxSpec::new(3, 2).unwrap();
        let f = constant_field(b, |s| if s.coords()[0] <= 0 { 1.0 } else { -1.0 });
        let l = ClusterLabeling::label(&f, &all_open(b, &f)).unwrap();
        assert_eq!(l.touching_edges(2).unwrap(), 25);
        let flipped = l.clone();
        let g = f.flipped();
        let l2 = ClusterLabeling::label(&g, &all_open(b, &g)).unwrap();
        assert_eq!(l2.touching_edges(2).unwrap(), flipped.touching_edges(2).unwrap());
    }

    #[test]
    fn arm_events_on_small_configurations() {
        let b = BoxSpec::new(3, 2).unwrap();
        let o = Site::origin(3);
        let f = constant_field(b, |s| if *s == o { 1.0 } else { -1.0 });
        let l = ClusterLabeling::label(&f, &all_open(b, &f)).unwrap();
        let v = NodeRef::Site(o.clone());
        assert!(!l.one_arm(&v, 1).unwrap());
        assert!(l.one_arm(&v, 0).unwrap());
        assert_eq!(l.cluster_volume(&v, 1, Sign::Plus).unwrap(), 1);
        assert_eq!(l.cluster_volume(&v, 1, Sign::Minus).unwrap(), 0);
        let shell = NodeRef::Site(Site::new(vec![2, 0, 0]));
        assert!(l.arm(&shell, Sign::Minus, 2).unwrap());
        assert!(l.hetero_two_arm(&v, &shell, 0).unwrap());
        assert!(l.one_arm(&v, 3).is_err());
        assert!(l.cluster_volume(&shell, 1, Sign::Minus).is_err());
    }

    #[test]
    fn explorer_agrees_with_labeling() {
        let b = BoxSpec::new(3, 4).unwrap();
        let mut ex = Explorer::new();
        for r in 0..20 {
            let p = SeedPath::new(9, 0, r);
            let f = sample_field(&b, p);
            let o = open_edges(&f, p);
            let l = ClusterLabeling::label(&f, &o).unwrap();
            let view = FieldView {
                boxspec: &b,
                values: f.values(),
                edge_key: p.key(Purpose::Edges),
                blocked: None,
            };
            for i in (0..b.site_count()).step_by(7) {
                for sign in [Sign::Plus, Sign::Minus] {
                    let mut members = vec![];
                    let e = ex.explore(&view, &[i], sign, Stop::never(), |j| members.push(j));
                    match l.root_of(i, sign) {
                        None => assert_eq!(e.visited, 0),
                        Some(root) => {
                            let vol = l.components(sign).iter().find(|c| c.root == root).unwrap().volume;
                            assert_eq!(e.visited, vol);
                            assert!(members.iter().all(|&j| l.root_of(j, sign) == Some(root)));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn point_capacity_by_both_methods() {
        let x = vec![Site::origin(3)];
        let mut rng = SeedPath::new(1, 1, 1).rng(Purpose::Aux);
        let exact = set_capacity(&x, &CapacityOptions::default(), &mut rng).unwrap();
        let opts = CapacityOptions {
            solve_limit: 0,
            walkers: 40_000,
            ..Default::default()
        };
        let mc = set_capacity(&x, &opts, &mut rng).unwrap();
        assert_eq!(mc.method, CapacityMethod::Walkers);
        assert!((mc.value - exact.value).abs() < 4.0 * mc.std_error);
    }
}
