//! Electrical network of the metric graph restricted to a box.
//!
//! Every lattice site is a node; inserted metric points split their edge
//! into segments. A segment of length `ℓ` has conductance `1/(2ℓ)`, so a
//! full lattice edge has conductance `1/(2d)` and the network Laplacian on
//! lattice sites is `I - P`. Under [`BoundaryCondition::Grounded`] each edge
//! leaving the box is a conductance `1/(2d)` to a node held at zero.

use std::collections::{HashMap, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{domain, Error, Result};
use crate::lattice::{BoxSpec, Edge, MetricPoint, Site};

/// Treatment of edges leaving the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    /// Outside sites are held at zero (killed walk, Dirichlet field).
    #[default]
    Grounded,
    /// Edges leaving the box are removed.
    Reflected,
}

/// Unknown counts up to this are solved by dense Cholesky.
pub const DENSE_LIMIT: usize = 1500;
/// Dense limit for single right-hand sides, where factorizing rarely pays.
pub const ONE_SHOT_DENSE_LIMIT: usize = 200;
const CG_RTOL: f64 = 1e-13;

pub struct MetricNetwork {
    boxspec: BoxSpec,
    offsets: Vec<usize>,
    targets: Vec<u32>,
    conductances: Vec<f64>,
    ground: Vec<f64>,
    points: Vec<MetricPoint>,
    point_nodes: HashMap<(usize, u64), usize>,
}

/// Builder for [`MetricNetwork`].
pub struct NetworkBuilder<'a> {
    boxspec: BoxSpec,
    boundary: BoundaryCondition,
    points: Vec<MetricPoint>,
    keep: Option<Box<dyn Fn(&Edge) -> bool + 'a>>,
}

impl<'a> NetworkBuilder<'a> {
    pub fn new(boxspec: BoxSpec) -> Self {
        NetworkBuilder {
            boxspec,
            boundary: BoundaryCondition::Grounded,
            points: Vec::new(),
            keep: None,
        }
    }

    pub fn boundary(mut self, bc: BoundaryCondition) -> Self {
        self.boundary = bc;
        self
    }

    /// Adds metric points as nodes; points at lattice sites are ignored.
    pub fn insert<'p>(mut self, points: impl IntoIterator<Item = &'p MetricPoint>) -> Self {
        self.points.extend(points.into_iter().cloned());
        self
    }

    /// Keeps only edges for which `keep` returns true; it is also consulted
    /// for edges leaving the box under grounded boundary conditions.
    pub fn edges(mut self, keep: impl Fn(&Edge) -> bool + 'a) -> Self {
        self.keep = Some(Box::new(keep));
        self
    }

    pub fn build(self) -> Result<MetricNetwork> {
        let b = self.boxspec;
        let d = b.dim();
        let keep = |e: &Edge| self.keep.as_ref().map_or(true, |k| k(e));
        let n_sites = b.site_count();

        let mut per_edge: HashMap<usize, Vec<f64>> = HashMap::new();
        for p in &self.points {
            if let Some(s) = p.as_site() {
                if !b.contains(s) {
                    return domain(format!("point {s} is outside the box"));
                }
                continue;
            }
            let Some(slot) = b.edge_slot(p.edge()) else {
                return domain("inserted points must lie on edges inside the box");
            };
            let offs = per_edge.entry(slot).or_default();
            if !offs.contains(&p.offset()) {
                offs.push(p.offset());
            }
        }

        let mut point_nodes = HashMap::new();
        let mut slots: Vec<usize> = per_edge.keys().copied().collect();
        slots.sort_unstable();
        let mut points = Vec::new();
        for &slot in &slots {
            let offs = per_edge.get_mut(&slot).unwrap();
            offs.sort_by(f64::total_cmp);
            let edge = b.edge_from_slot(slot).unwrap();
            for &o in offs.iter() {
                point_nodes.insert((slot, o.to_bits()), n_sites + points.len());
                points.push(MetricPoint::new(edge.clone(), o)?);
            }
        }
        let n_nodes = n_sites + points.len();

        let mut links: Vec<(u32, u32, f64)> = Vec::new();
        let mut ground = vec![0.0; n_nodes];
        let len = d as f64;
        let mut coords = vec![0i64; d];
        for site in 0..n_sites {
            b.coords_into(site, &mut coords);
            let s = Site::new(coords.clone());
            for axis in 0..d {
                if coords[axis] < b.radius() as i64 {
                    let edge = Edge::along(&s, axis);
                    if !keep(&edge) {
                        continue;
                    }
                    let slot = site * d + axis;
                    let hi = site + b.stride(axis);
                    let mut prev = (site, 0.0);
                    if let Some(offs) = per_edge.get(&slot) {
                        for &o in offs {
                            let node = point_nodes[&(slot, o.to_bits())];
                            links.push((prev.0 as u32, node as u32, 1.0 / (2.0 * (o - prev.1))));
                            prev = (node, o);
                        }
                    }
                    links.push((prev.0 as u32, hi as u32, 1.0 / (2.0 * (len - prev.1))));
                } else if self.boundary == BoundaryCondition::Grounded
                    && keep(&Edge::along(&s, axis))
                {
                    ground[site] += 1.0 / (2.0 * len);
                }
                if self.boundary == BoundaryCondition::Grounded
                    && coords[axis] == -(b.radius() as i64)
                    && keep(&Edge::along(&s.shifted(axis, -1), axis))
                {
                    ground[site] += 1.0 / (2.0 * len);
                }
            }
        }

        let mut degree = vec![0usize; n_nodes + 1];
        for &(a, c, _) in &links {
            degree[a as usize + 1] += 1;
            degree[c as usize + 1] += 1;
        }
        for i in 0..n_nodes {
            degree[i + 1] += degree[i];
        }
        let offsets = degree.clone();
        let mut fill = degree;
        let mut targets = vec![0u32; offsets[n_nodes]];
        let mut conductances = vec![0.0; offsets[n_nodes]];
        for &(a, c, g) in &links {
            for (u, v) in [(a, c), (c, a)] {
                let k = fill[u as usize];
                targets[k] = v;
                conductances[k] = g;
                fill[u as usize] += 1;
            }
        }
        Ok(MetricNetwork {
            boxspec: b,
            offsets,
            targets,
            conductances,
            ground,
            points,
            point_nodes,
        })
    }
}

impl MetricNetwork {
    /// The whole box with all lattice edges.
    pub fn lattice(boxspec: BoxSpec, bc: BoundaryCondition) -> Result<Self> {
        NetworkBuilder::new(boxspec).boundary(bc).build()
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn node_count(&self) -> usize {
        self.ground.len()
    }

    /// Node of a lattice site or inserted point.
    pub fn node_of(&self, p: &MetricPoint) -> Option<usize> {
        match p.as_site() {
            Some(s) => self.boxspec.index(s),
            None => {
                let slot = self.boxspec.edge_slot(p.edge())?;
                self.point_nodes.get(&(slot, p.offset().to_bits())).copied()
            }
        }
    }

    pub fn site_node(&self, s: &Site) -> Option<usize> {
        self.boxspec.index(s)
    }

    /// Inserted point of node `node`, if it is not a lattice site.
    pub fn point(&self, node: usize) -> Option<&MetricPoint> {
        node.checked_sub(self.boxspec.site_count())
            .and_then(|i| self.points.get(i))
    }

    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[node]..self.offsets[node + 1];
        self.targets[r.clone()]
            .iter()
            .zip(&self.conductances[r])
            .map(|(&t, &c)| (t as usize, c))
    }

    /// Conductance from `node` to the grounded exterior.
    pub fn ground(&self, node: usize) -> f64 {
        self.ground[node]
    }

    /// Total conductance at `node`, the Laplacian diagonal.
    pub fn diagonal(&self, node: usize) -> f64 {
        self.ground[node] + self.neighbors(node).map(|(_, c)| c).sum::<f64>()
    }

    /// Harmonic extension of prescribed values; the ground is at zero.
    pub fn harmonic(&self, fixed: &[(usize, f64)]) -> Result<Vec<f64>> {
        let nodes: Vec<usize> = fixed.iter().map(|f| f.0).collect();
        let sys = ReducedSystem::with_dense_limit(self, &nodes, ONE_SHOT_DENSE_LIMIT)?;
        sys.potential(fixed)
    }

    /// `P_start(τ_target < τ_absorbing)`, ground counting as absorbing.
    pub fn hitting_probability(&self, start: usize, target: &[usize], absorbing: &[usize]) -> Result<f64> {
        if target.iter().any(|t| absorbing.contains(t)) {
            return domain("target and absorbing sets intersect");
        }
        let mut fixed: Vec<(usize, f64)> = target.iter().map(|&t| (t, 1.0)).collect();
        fixed.extend(absorbing.iter().map(|&a| (a, 0.0)));
        Ok(self.harmonic(&fixed)?[start])
    }

    /// Excursion kernel between `v` and `w` avoiding `killed` and the
    /// ground: `Σ_{y~v} c_{vy} P_y(τ_w < τ_{killed ∪ {v}})`.
    pub fn excursion_kernel(&self, v: usize, w: usize, killed: &[usize]) -> Result<f64> {
        if v == w {
            return domain("kernel endpoints coincide");
        }
        let mut fixed = vec![(v, 0.0), (w, 1.0)];
        fixed.extend(killed.iter().filter(|&&k| k != v && k != w).map(|&k| (k, 0.0)));
        let h = self.harmonic(&fixed)?;
        Ok(self.neighbors(v).map(|(y, c)| c * h[y]).sum())
    }
}

enum Solver {
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Iterative {
        diag: Vec<f64>,
        offsets: Vec<usize>,
        cols: Vec<u32>,
        vals: Vec<f64>,
    },
    Empty,
}

/// The network Laplacian restricted to the nodes not held fixed, ready to
/// solve repeatedly. Free nodes in components with neither a fixed node
/// nor a ground connection are dropped and read as zero.
pub struct ReducedSystem<'a> {
    net: &'a MetricNetwork,
    free_of: Vec<u32>,
    free: Vec<usize>,
    fixed: Vec<bool>,
    solver: Solver,
}

const NONE: u32 = u32::MAX;

impl<'a> ReducedSystem<'a> {
    pub fn new(net: &'a MetricNetwork, fixed_nodes: &[usize]) -> Result<Self> {
        Self::with_dense_limit(net, fixed_nodes, DENSE_LIMIT)
    }

    /// As [`ReducedSystem::new`], factorizing densely only up to
    /// `dense_limit` free nodes.
    pub fn with_dense_limit(net: &'a MetricNetwork, fixed_nodes: &[usize], dense_limit: usize) -> Result<Self> {
        let n = net.node_count();
        let mut fixed = vec![false; n];
        for &f in fixed_nodes {
            if f >= n {
                return domain(format!("node {f} out of range"));
            }
            fixed[f] = true;
        }
        let mut anchored = vec![false; n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            if fixed[i] {
                continue;
            }
            if net.ground(i) > 0.0 || net.neighbors(i).any(|(j, _)| fixed[j]) {
                anchored[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            for (j, _) in net.neighbors(i) {
                if !fixed[j] && !anchored[j] {
                    anchored[j] = true;
                    queue.push_back(j);
                }
            }
        }
        let free: Vec<usize> = (0..n).filter(|&i| anchored[i]).collect();
        let mut free_of = vec![NONE; n];
        for (k, &i) in free.iter().enumerate() {
            free_of[i] = k as u32;
        }

        let m = free.len();
        let solver = if m == 0 {
            Solver::Empty
        } else if m <= dense_limit {
            let mut a = DMatrix::<f64>::zeros(m, m);
            for (k, &i) in free.iter().enumerate() {
                a[(k, k)] = net.diagonal(i);
                for (j, c) in net.neighbors(i) {
                    if free_of[j] != NONE {
                        a[(k, free_of[j] as usize)] -= c;
                    }
                }
            }
            Solver::Dense(
                a.cholesky()
                    .ok_or_else(|| Error::Numeric("reduced Laplacian is not positive definite".into()))?,
            )
        } else {
            let mut diag = Vec::with_capacity(m);
            let mut offsets = vec![0];
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for &i in &free {
                diag.push(net.diagonal(i));
                for (j, c) in net.neighbors(i) {
                    if free_of[j] != NONE {
                        cols.push(free_of[j]);
                        vals.push(c);
                    }
                }
                offsets.push(cols.len());
            }
            Solver::Iterative {
                diag,
                offsets,
                cols,
                vals,
            }
        };
        Ok(ReducedSystem {
            net,
            free_of,
            free,
            fixed,
            solver,
        })
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    /// Position of `node` among the free unknowns.
    pub fn free_index(&self, node: usize) -> Option<usize> {
        match self.free_of.get(node) {
            Some(&k) if k != NONE => Some(k as usize),
            _ => None,
        }
    }

    /// Solves the reduced system for a right-hand side on the free nodes.
    pub fn solve_free(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        debug_assert_eq!(rhs.len(), self.free.len());
        match &self.solver {
            Solver::Empty => Ok(Vec::new()),
            Solver::Dense(ch) => Ok(ch.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec()),
            Solver::Iterative {
                diag,
                offsets,
                cols,
                vals,
            } => {
                let apply = |x: &[f64], y: &mut [f64]| {
                    for k in 0..x.len() {
                        let mut s = diag[k] * x[k];
                        for e in offsets[k]..offsets[k + 1] {
                            s -= vals[e] * x[cols[e] as usize];
                        }
                        y[k] = s;
                    }
                };
                pcg(apply, diag, rhs)
            }
        }
    }

    /// Scatters a free-node solution onto all nodes (zero elsewhere).
    pub fn scatter(&self, free_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.net.node_count()];
        for (&i, &v) in self.free.iter().zip(free_values) {
            out[i] = v;
        }
        out
    }

    /// Potential on all nodes given the values of the fixed nodes.
    pub fn potential(&self, fixed_values: &[(usize, f64)]) -> Result<Vec<f64>> {
        let mut rhs = vec![0.0; self.free.len()];
        for &(node, value) in fixed_values {
            if !self.fixed[node] {
                return domain(format!("node {node} is not fixed in this system"));
            }
            for (j, c) in self.net.neighbors(node) {
                if let Some(k) = self.free_index(j) {
                    rhs[k] += c * value;
                }
            }
        }
        let u = self.solve_free(&rhs)?;
        let mut out = self.scatter(&u);
        for &(node, value) in fixed_values {
            out[node] = value;
        }
        Ok(out)
    }

    /// Column `G(·, node)` of the inverse reduced Laplacian, on all nodes.
    pub fn green_column(&self, node: usize) -> Result<Vec<f64>> {
        let Some(k) = self.free_index(node) else {
            return if self.fixed.get(node).copied().unwrap_or(false) {
                domain(format!("node {node} is absorbed"))
            } else {
                Err(Error::Numeric(format!("node {node} lies in a floating component")))
            };
        };
        let mut rhs = vec![0.0; self.free.len()];
        rhs[k] = 1.0;
        Ok(self.scatter(&self.solve_free(&rhs)?))
    }
}

/// Jacobi-preconditioned conjugate gradients.
fn pcg(apply: impl Fn(&[f64], &mut [f64]), diag: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let max_iter = 20 * n + 1000;
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if !(pap > 0.0) {
            return Err(Error::Numeric("conjugate gradients broke down".into()));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        let r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= CG_RTOL * b_norm {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(Error::Numeric(format!(
        "conjugate gradients did not converge in {max_iter} iterations"
    )))
}
