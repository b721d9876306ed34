//! Boxes in `Z^d`, lattice edges and points of the metric graph.
//!
//! Two length units coexist. Box radii are in coordinate units
//! (`B(N) = [-N, N]^d ∩ Z^d`), while distances between metric points are in
//! graph units, where every lattice edge is an interval of length `d`.
//! Each API states which unit it takes.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// A point of `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Site(Vec<i64>);

impl Site {
    pub fn new(coords: Vec<i64>) -> Self {
        Site(coords)
    }

    pub fn origin(dim: usize) -> Self {
        Site(vec![0; dim])
    }

    /// The unit vector `e_axis`.
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut c = vec![0; dim];
        c[axis] = 1;
        Site(c)
    }

    /// `k * e_axis`.
    pub fn on_axis(dim: usize, axis: usize, k: i64) -> Self {
        let mut c = vec![0; dim];
        c[axis] = k;
        Site(c)
    }

    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Copy of `self` moved by `delta` along `axis`.
    pub fn shifted(&self, axis: usize, delta: i64) -> Site {
        let mut c = self.0.clone();
        c[axis] += delta;
        Site(c)
    }

    pub fn translate(&self, by: &Site) -> Site {
        Site(self.0.iter().zip(&by.0).map(|(a, b)| a + b).collect())
    }

    pub fn l1_distance(&self, other: &Site) -> i64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn max_norm(&self) -> i64 {
        self.0.iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// The box `B(N) = [-N, N]^d ∩ Z^d`.
///
/// Sites are indexed row-major over coordinates shifted to `[0, 2N]`, the
/// first coordinate varying slowest. A radius of zero is accepted and gives
/// the single-site box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BoxSpec {
    dim: usize,
    radius: usize,
}

impl BoxSpec {
    pub fn new(dim: usize, radius: usize) -> Result<Self> {
        if dim < 3 {
            return domain(format!("dimension must be at least 3, got {dim}"));
        }
        let side = 2 * radius as u128 + 1;
        if side.checked_pow(dim as u32).map_or(true, |n| n > u32::MAX as u128) {
            return domain(format!("box B({radius}) in d={dim} has too many sites"));
        }
        Ok(BoxSpec { dim, radius })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius `N` in coordinate units.
    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of sites per axis, `2N + 1`.
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn site_count(&self) -> usize {
        self.side().pow(self.dim as u32)
    }

    /// Index stride of `axis` in the row-major layout.
    pub fn stride(&self, axis: usize) -> usize {
        self.side().pow((self.dim - 1 - axis) as u32)
    }

    pub fn contains(&self, site: &Site) -> bool {
        let r = self.radius as i64;
        site.dim() == self.dim && site.coords().iter().all(|c| c.abs() <= r)
    }

    pub fn index(&self, site: &Site) -> Option<usize> {
        if !self.contains(site) {
            return None;
        }
        let side = self.side();
        let r = self.radius as i64;
        Some(
            site.coords()
                .iter()
                .fold(0usize, |acc, &c| acc * side + (c + r) as usize),
        )
    }

    pub fn site(&self, index: usize) -> Site {
        let mut c = vec![0; self.dim];
        self.coords_into(index, &mut c);
        Site(c)
    }

    /// Writes the coordinates of site `index` into `out` (length `d`).
    pub fn coords_into(&self, mut index: usize, out: &mut [i64]) {
        let side = self.side();
        let r = self.radius as i64;
        for slot in out.iter_mut().rev() {
            *slot = (index % side) as i64 - r;
            index /= side;
        }
    }

    /// Max-norm of the site at `index`.
    pub fn max_norm_of(&self, mut index: usize) -> usize {
        let side = self.side();
        let mut m = 0;
        for _ in 0..self.dim {
            let c = (index % side).abs_diff(self.radius);
            m = m.max(c);
            index /= side;
        }
        m
    }

    /// Lattice neighbours of `site` inside the box, ordered by axis and,
    /// within an axis, `-1` before `+1`.
    pub fn neighbors(&self, site: &Site) -> Result<Vec<Site>> {
        if !self.contains(site) {
            return domain(format!("site {site} is outside B({})", self.radius));
        }
        let r = self.radius as i64;
        let mut out = Vec::with_capacity(2 * self.dim);
        for axis in 0..self.dim {
            let c = site.coords()[axis];
            if c > -r {
                out.push(site.shifted(axis, -1));
            }
            if c < r {
                out.push(site.shifted(axis, 1));
            }
        }
        Ok(out)
    }

    /// Whether the site at `index` has a lattice neighbour outside the box.
    pub fn is_boundary_index(&self, index: usize) -> bool {
        self.max_norm_of(index) == self.radius
    }

    /// `∂B(N)`: sites of the box with a neighbour outside it, in index order.
    pub fn boundary(&self) -> Vec<Site> {
        (0..self.site_count())
            .filter(|&i| self.is_boundary_index(i))
            .map(|i| self.site(i))
            .collect()
    }

    /// Slots of the edge array: one per (site, axis); only slots whose
    /// `+e_axis` neighbour lies in the box carry an edge.
    pub fn edge_slots(&self) -> usize {
        self.site_count() * self.dim
    }

    pub fn edge_count(&self) -> usize {
        self.dim * (self.side() - 1) * self.side().pow(self.dim as u32 - 1)
    }

    pub fn edge_slot(&self, edge: &Edge) -> Option<usize> {
        let lo = self.index(&edge.lo)?;
        if !self.contains(&edge.hi) {
            return None;
        }
        Some(lo * self.dim + edge.axis())
    }

    pub fn edge_from_slot(&self, slot: usize) -> Option<Edge> {
        let (site, axis) = (slot / self.dim, slot % self.dim);
        if site >= self.site_count() {
            return None;
        }
        let lo = self.site(site);
        if lo.coords()[axis] >= self.radius as i64 {
            return None;
        }
        let hi = lo.shifted(axis, 1);
        Some(Edge { lo, hi })
    }

    /// All edges with both endpoints in the box, in slot order.
    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        (0..self.edge_slots()).filter_map(move |s| self.edge_from_slot(s))
    }
}

/// A nearest-neighbour edge of `Z^d` with canonical orientation: the
/// lexicographically smaller endpoint comes first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    lo: Site,
    hi: Site,
}

impl Edge {
    pub fn new(a: Site, b: Site) -> Result<Self> {
        if a.dim() != b.dim() || a.l1_distance(&b) != 1 {
            return domain(format!("{a} and {b} are not lattice neighbours"));
        }
        if a < b {
            Ok(Edge { lo: a, hi: b })
        } else {
            Ok(Edge { lo: b, hi: a })
        }
    }

    /// The edge from `site` to `site + e_axis`.
    pub fn along(site: &Site, axis: usize) -> Self {
        Edge {
            lo: site.clone(),
            hi: site.shifted(axis, 1),
        }
    }

    pub fn lo(&self) -> &Site {
        &self.lo
    }

    pub fn hi(&self) -> &Site {
        &self.hi
    }

    pub fn axis(&self) -> usize {
        self.lo
            .coords()
            .iter()
            .zip(self.hi.coords())
            .position(|(a, b)| a != b)
            .expect("edge endpoints differ")
    }

    /// Interval length in graph units, equal to the dimension.
    pub fn length(&self) -> f64 {
        self.lo.dim() as f64
    }
}

/// A point of the metric graph: an edge and an offset in `[0, d]` (graph
/// units) measured from the edge's first endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    edge: Edge,
    offset: f64,
}

impl MetricPoint {
    pub fn new(edge: Edge, offset: f64) -> Result<Self> {
        let len = edge.length();
        if !(0.0..=len).contains(&offset) {
            return domain(format!("offset {offset} outside [0, {len}]"));
        }
        Ok(MetricPoint { edge, offset })
    }

    /// The lattice site itself, carried on the edge towards `+e_0`.
    pub fn at_site(site: &Site) -> Self {
        MetricPoint {
            edge: Edge::along(site, 0),
            offset: 0.0,
        }
    }

    pub fn edge(&self) -> &Edge {
        &self.edge
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// The lattice site this point coincides with, if any.
    pub fn as_site(&self) -> Option<&Site> {
        if self.offset == 0.0 {
            Some(&self.edge.lo)
        } else if self.offset == self.edge.length() {
            Some(&self.edge.hi)
        } else {
            None
        }
    }

    /// Closest lattice site; the midpoint goes to the first endpoint.
    pub fn nearest_site(&self) -> &Site {
        if self.offset <= self.edge.length() / 2.0 {
            &self.edge.lo
        } else {
            &self.edge.hi
        }
    }

    /// Distances (graph units) to the two endpoints `(lo, hi)`.
    pub fn endpoint_distances(&self) -> (f64, f64) {
        (self.offset, self.edge.length() - self.offset)
    }
}

/// Graph distance on the metric graph, edges of length `d`.
///
/// Exact for points on a common edge; otherwise the shortest route through
/// the endpoints, using that lattice geodesics have length `d` times the
/// `L^1` distance.
pub fn graph_distance(p: &MetricPoint, q: &MetricPoint) -> f64 {
    let d = p.edge.length();
    if let (Some(a), Some(b)) = (p.as_site(), q.as_site()) {
        return d * a.l1_distance(b) as f64;
    }
    let mut best = f64::INFINITY;
    if p.edge == q.edge {
        best = (p.offset - q.offset).abs();
    }
    let (p0, p1) = p.endpoint_distances();
    let (q0, q1) = q.endpoint_distances();
    for (ps, pd) in [(&p.edge.lo, p0), (&p.edge.hi, p1)] {
        for (qs, qd) in [(&q.edge.lo, q0), (&q.edge.hi, q1)] {
            best = best.min(pd + d * ps.l1_distance(qs) as f64 + qd);
        }
    }
    best
}
