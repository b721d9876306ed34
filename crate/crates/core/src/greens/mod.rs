//! Potential theory on boxes of the lattice and of its metric graph.
//!
//! Green's functions are in expected-visit units of the simple random walk;
//! kernels and capacities are in conductance units with a full lattice edge
//! carrying conductance `1/(2d)`. Sets of sites are passed as slices.

mod free;
mod network;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lattice::{BoxSpec, MetricPoint, Site};

pub use free::{free_green, free_green_diff, scaled_bessel_i};
pub use network::{BoundaryCondition, MetricNetwork, NetworkBuilder, ReducedSystem, DENSE_LIMIT};

/// Largest number of live sites for which a dense [`GreenTable`] is built.
pub const TABLE_LIMIT: usize = 2500;

/// Box-Dirichlet Green's function from the sine eigenbasis of the box.
pub fn spectral_green(b: &BoxSpec, x: &Site, y: &Site) -> Result<f64> {
    let (Some(_), Some(_)) = (b.index(x), b.index(y)) else {
        return domain("spectral_green: site outside the box");
    };
    let d = b.dim();
    let n = b.side();
    let m = (n + 1) as f64;
    let r = b.radius() as i64;
    let pi = std::f64::consts::PI;
    let cosines: Vec<f64> = (1..=n).map(|k| (pi * k as f64 / m).cos()).collect();
    let factors: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let a = (x.coords()[i] + r + 1) as f64;
            let c = (y.coords()[i] + r + 1) as f64;
            (1..=n)
                .map(|k| (pi * k as f64 * a / m).sin() * (pi * k as f64 * c / m).sin())
                .collect()
        })
        .collect();
    let mut idx = vec![0usize; d];
    let mut total = 0.0;
    loop {
        let mut prod = 1.0;
        let mut cos_sum = 0.0;
        for i in 0..d {
            prod *= factors[i][idx[i]];
            cos_sum += cosines[idx[i]];
        }
        total += prod / (1.0 - cos_sum / d as f64);
        let mut axis = d;
        loop {
            if axis == 0 {
                return Ok(total * (2.0 / m).powi(d as i32));
            }
            axis -= 1;
            idx[axis] += 1;
            if idx[axis] < n {
                break;
            }
            idx[axis] = 0;
        }
    }
}

/// `G_D(x, y)` for the walk killed on `absorbing` and outside the box.
pub fn dirichlet_green(b: &BoxSpec, absorbing: &[Site], x: &Site, y: &Site) -> Result<f64> {
    if !b.contains(x) || !b.contains(y) {
        return domain(format!("{x} or {y} lies outside B({})", b.radius()));
    }
    if absorbing.contains(x) || absorbing.contains(y) {
        return domain(format!("{x} or {y} is absorbed"));
    }
    if absorbing.is_empty() {
        return spectral_green(b, x, y);
    }
    let net = MetricNetwork::lattice(*b, BoundaryCondition::Grounded)?;
    let fixed = site_nodes(b, absorbing)?;
    let sys = ReducedSystem::new(&net, &fixed)?;
    Ok(sys.green_column(b.index(y).unwrap())?[b.index(x).unwrap()])
}

fn site_nodes(b: &BoxSpec, sites: &[Site]) -> Result<Vec<usize>> {
    sites
        .iter()
        .map(|s| {
            b.index(s)
                .ok_or_else(|| Error::Domain(format!("{s} lies outside B({})", b.radius())))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct TableHeader {
    dimension: usize,
    radius: usize,
    absorbing: Vec<Site>,
    units: String,
    layout: String,
    sites: usize,
}

/// Dense `G_D` on all sites of a box; rows and columns of absorbed sites
/// are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct GreenTable {
    boxspec: BoxSpec,
    absorbing: Vec<Site>,
    values: Vec<f64>,
}

impl GreenTable {
    pub fn new(b: BoxSpec, absorbing: &[Site]) -> Result<Self> {
        let n = b.site_count();
        let fixed = site_nodes(&b, absorbing)?;
        let mut live = vec![true; n];
        for &f in &fixed {
            live[f] = false;
        }
        let sites: Vec<usize> = (0..n).filter(|&i| live[i]).collect();
        if sites.len() > TABLE_LIMIT {
            return Err(Error::Planning(format!(
                "Green table with {} live sites exceeds the limit {TABLE_LIMIT}",
                sites.len()
            )));
        }
        let mut pos = vec![usize::MAX; n];
        for (k, &i) in sites.iter().enumerate() {
            pos[i] = k;
        }
        let net = MetricNetwork::lattice(b, BoundaryCondition::Grounded)?;
        let m = sites.len();
        let mut a = DMatrix::<f64>::zeros(m, m);
        for (k, &i) in sites.iter().enumerate() {
            a[(k, k)] = net.diagonal(i);
            for (j, c) in net.neighbors(i) {
                if pos[j] != usize::MAX {
                    a[(k, pos[j])] -= c;
                }
            }
        }
        let inv = a
            .cholesky()
            .ok_or_else(|| Error::Numeric("box Laplacian is not positive definite".into()))?
            .inverse();
        let mut values = vec![0.0; n * n];
        for (k, &i) in sites.iter().enumerate() {
            for (l, &j) in sites.iter().enumerate() {
                values[i * n + j] = 0.5 * (inv[(k, l)] + inv[(l, k)]);
            }
        }
        let mut absorbing = absorbing.to_vec();
        absorbing.sort();
        absorbing.dedup();
        Ok(GreenTable {
            boxspec: b,
            absorbing,
            values,
        })
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn absorbing(&self) -> &[Site] {
        &self.absorbing
    }

    /// Entry by site indices.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.boxspec.site_count() + j]
    }

    pub fn get(&self, x: &Site, y: &Site) -> Result<f64> {
        match (self.boxspec.index(x), self.boxspec.index(y)) {
            (Some(i), Some(j)) => Ok(self.at(i, j)),
            _ => domain(format!("{x} or {y} lies outside the table's box")),
        }
    }

    /// Row-major values indexed by site index.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Correlation `G(x,y)/√(G(x,x)G(y,y))` by site indices.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.at(i, j) / (self.at(i, i) * self.at(j, j)).sqrt()
    }

    /// Writes the table: a little-endian `u64` header length, a JSON
    /// header, then the values as little-endian `f64`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let header = TableHeader {
            dimension: self.boxspec.dim(),
            radius: self.boxspec.radius(),
            absorbing: self.absorbing.clone(),
            units: "expected visits".into(),
            layout: "row-major by site index".into(),
            sites: self.boxspec.site_count(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 1 << 30 {
            return domain("Green table header is implausibly large");
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: TableHeader = serde_json::from_slice(&json)?;
        let b = BoxSpec::new(header.dimension, header.radius)?;
        if header.sites != b.site_count() {
            return domain("Green table header site count does not match its box");
        }
        let n = b.site_count();
        let mut bytes = vec![0u8; n * n * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(GreenTable {
            boxspec: b,
            absorbing: header.absorbing,
            values,
        })
    }
}

/// `G̃_D(p, q)` on the metric graph: bilinear interpolation of the lattice
/// Green's function between edge endpoints, plus the covariance
/// `2 s (T - t) / T` of the pinned bridge when `p` and `q` share an edge.
pub fn metric_green(b: &BoxSpec, absorbing: &[Site], p: &MetricPoint, q: &MetricPoint) -> Result<f64> {
    let ends = |m: &MetricPoint| -> Vec<(Site, f64)> {
        if let Some(s) = m.as_site() {
            return vec![(s.clone(), 1.0)];
        }
        let len = m.edge().length();
        let (a, c) = m.endpoint_distances();
        vec![(m.edge().lo().clone(), c / len), (m.edge().hi().clone(), a / len)]
    };
    let (pe, qe) = (ends(p), ends(q));
    for (s, _) in pe.iter().chain(&qe) {
        if !b.contains(s) {
            return domain(format!("endpoint {s} lies outside B({})", b.radius()));
        }
    }
    let net = MetricNetwork::lattice(*b, BoundaryCondition::Grounded)?;
    let sys = ReducedSystem::new(&net, &site_nodes(b, absorbing)?)?;
    let mut total = 0.0;
    for (y, wy) in &qe {
        if absorbing.contains(y) {
            continue;
        }
        let col = sys.green_column(b.index(y).unwrap())?;
        for (x, wx) in &pe {
            total += wx * wy * col[b.index(x).unwrap()];
        }
    }
    if p.as_site().is_none() && q.as_site().is_none() && p.edge() == q.edge() {
        let (s, t) = if p.offset() <= q.offset() {
            (p.offset(), q.offset())
        } else {
            (q.offset(), p.offset())
        };
        let len = p.edge().length();
        total += 2.0 * s * (len - t) / len;
    }
    Ok(total)
}

/// `G̃_D(p, q)` from the network with `p` and `q` inserted as nodes.
pub fn metric_green_network(
    b: &BoxSpec,
    absorbing: &[Site],
    p: &MetricPoint,
    q: &MetricPoint,
) -> Result<f64> {
    let net = NetworkBuilder::new(*b).insert([p, q]).build()?;
    let sys = ReducedSystem::new(&net, &site_nodes(b, absorbing)?)?;
    let (Some(i), Some(j)) = (net.node_of(p), net.node_of(q)) else {
        return domain("metric point is not a node of the network");
    };
    if sys.free_index(i).is_none() || sys.free_index(j).is_none() {
        return Ok(0.0);
    }
    Ok(sys.green_column(j)?[i])
}

fn point_nodes(net: &MetricNetwork, points: &[MetricPoint]) -> Result<Vec<usize>> {
    points
        .iter()
        .map(|p| {
            net.node_of(p)
                .ok_or_else(|| Error::Domain("metric point is outside the network".into()))
        })
        .collect()
}

/// Probability that Brownian motion on the metric graph started at `start`
/// hits `target` before `absorbing` (and, when grounded, before leaving
/// the box).
pub fn hitting_probability(
    b: &BoxSpec,
    bc: BoundaryCondition,
    start: &MetricPoint,
    target: &[MetricPoint],
    absorbing: &[MetricPoint],
) -> Result<f64> {
    let net = NetworkBuilder::new(*b)
        .boundary(bc)
        .insert(std::iter::once(start).chain(target).chain(absorbing))
        .build()?;
    let s = point_nodes(&net, std::slice::from_ref(start))?[0];
    let t = point_nodes(&net, target)?;
    let a = point_nodes(&net, absorbing)?;
    if t.contains(&s) || a.contains(&s) {
        return domain("start lies in the target or absorbing set");
    }
    net.hitting_probability(s, &t, &a)
}

/// Excursion kernel value with its provenance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelValue {
    /// Conductance units.
    pub value: f64,
    /// Radius of the box the value was computed in.
    pub truncation_radius: usize,
    /// Estimated distance to the infinite-lattice value; zero when the
    /// value is exact for its box.
    pub error_bound: f64,
}

/// `K_{D∪{v,w}}(v, w)` in a fixed box: the total conductance of excursions
/// from `v` to `w` that avoid `D`, `v`, `w` (and the exterior, if grounded).
pub fn excursion_kernel(
    b: &BoxSpec,
    bc: BoundaryCondition,
    absorbing: &[Site],
    v: &MetricPoint,
    w: &MetricPoint,
) -> Result<KernelValue> {
    if v == w {
        return domain("kernel endpoints coincide");
    }
    let net = NetworkBuilder::new(*b).boundary(bc).insert([v, w]).build()?;
    let nodes = point_nodes(&net, &[v.clone(), w.clone()])?;
    let killed = site_nodes(b, absorbing)?;
    if killed.contains(&nodes[0]) || killed.contains(&nodes[1]) {
        return domain("kernel endpoint lies in the absorbing set");
    }
    Ok(KernelValue {
        value: net.excursion_kernel(nodes[0], nodes[1], &killed)?,
        truncation_radius: b.radius(),
        error_bound: 0.0,
    })
}

/// Infinite-lattice kernel approximated in grounded boxes of radius
/// `radius` and `2 radius`; the larger-box value is returned with the
/// difference as error bound.
pub fn excursion_kernel_free(
    d: usize,
    absorbing: &[Site],
    v: &MetricPoint,
    w: &MetricPoint,
    radius: usize,
    max_error: f64,
) -> Result<KernelValue> {
    let small = excursion_kernel(&BoxSpec::new(d, radius)?, BoundaryCondition::Grounded, absorbing, v, w)?;
    let big_box = BoxSpec::new(d, 2 * radius)?;
    let big = excursion_kernel(&big_box, BoundaryCondition::Grounded, absorbing, v, w)?;
    let err = (big.value - small.value).abs();
    if err > max_error {
        return Err(Error::Convergence {
            achieved: err,
            requested: max_error,
        });
    }
    Ok(KernelValue {
        value: big.value,
        truncation_radius: 2 * radius,
        error_bound: err,
    })
}

/// Equilibrium measure of a set of sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumMeasure {
    /// Sites of the set carrying positive escape current.
    pub support: Vec<Site>,
    pub weights: Vec<f64>,
    /// Capacity, the sum of the weights.
    pub total: f64,
    /// Radius of the grounded box used.
    pub box_radius: usize,
    /// Estimated distance from `total` to the infinite-lattice capacity;
    /// zero when only the in-box value was computed.
    pub truncation_error: f64,
}

/// Capacity relative to the exterior of `b`: escape currents from `set`
/// held at potential one to the grounded exterior.
pub fn capacity_in_box(b: &BoxSpec, set: &[Site]) -> Result<EquilibriumMeasure> {
    if set.is_empty() {
        return domain("capacity of the empty set");
    }
    let mut nodes = site_nodes(b, set)?;
    nodes.sort_unstable();
    nodes.dedup();
    if nodes.iter().any(|&i| b.is_boundary_index(i)) {
        return domain("set touches the boundary of the box");
    }
    let net = MetricNetwork::lattice(*b, BoundaryCondition::Grounded)?;
    let fixed: Vec<(usize, f64)> = nodes.iter().map(|&i| (i, 1.0)).collect();
    let h = net.harmonic(&fixed)?;
    let mut support = Vec::new();
    let mut weights = Vec::new();
    for &i in &nodes {
        let current: f64 = net.neighbors(i).map(|(j, c)| c * (1.0 - h[j])).sum::<f64>() + net.ground(i);
        if current > 0.0 {
            support.push(b.site(i));
            weights.push(current);
        }
    }
    let total = weights.iter().sum();
    Ok(EquilibriumMeasure {
        support,
        weights,
        total,
        box_radius: b.radius(),
        truncation_error: 0.0,
    })
}

/// Capacity in `b` with a truncation estimate from a second grounded box
/// of half (or, if the set does not fit, double) the radius, assuming the
/// finite-box excess decays like `r^{2-d}`.
pub fn capacity(b: &BoxSpec, set: &[Site]) -> Result<EquilibriumMeasure> {
    let mut m = capacity_in_box(b, set)?;
    let extent = set.iter().map(Site::max_norm).max().unwrap_or(0) as usize;
    let half = b.radius() / 2;
    let factor = 2f64.powi(b.dim() as i32 - 2);
    let err = if half > extent + 1 {
        let other = capacity_in_box(&BoxSpec::new(b.dim(), half)?, set)?;
        (other.total - m.total).abs() / (factor - 1.0)
    } else {
        let other = capacity_in_box(&BoxSpec::new(b.dim(), 2 * b.radius())?, set)?;
        (m.total - other.total).abs() * factor / (factor - 1.0)
    };
    m.truncation_error = err;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Edge;

    #[test]
    fn single_site_box_has_unit_green() {
        let b = BoxSpec::new(3, 0).unwrap();
        let o = Site::origin(3);
        assert!((dirichlet_green(&b, &[], &o, &o).unwrap() - 1.0).abs() < 1e-14);
        let t = GreenTable::new(b, &[]).unwrap();
        assert!((t.get(&o, &o).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn spectral_matches_table() {
        let b = BoxSpec::new(3, 2).unwrap();
        let t = GreenTable::new(b, &[]).unwrap();
        let x = Site::new(vec![1, -2, 0]);
        let y = Site::new(vec![0, 1, 1]);
        let s = spectral_green(&b, &x, &y).unwrap();
        assert!((s - t.get(&x, &y).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn table_round_trips_through_file() {
        let b = BoxSpec::new(3, 1).unwrap();
        let t = GreenTable::new(b, &[Site::origin(3)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        t.write(&path).unwrap();
        assert_eq!(GreenTable::read(&path).unwrap(), t);
    }

    #[test]
    fn absorbed_points_are_rejected() {
        let b = BoxSpec::new(3, 2).unwrap();
        let o = Site::origin(3);
        assert!(dirichlet_green(&b, &[o.clone()], &o, &o).is_err());
        let e = Edge::along(&o, 0);
        let v = MetricPoint::new(e.clone(), 1.0).unwrap();
        assert!(excursion_kernel(&b, BoundaryCondition::Grounded, &[], &v, &v).is_err());
    }
}
