//! Exact samplers for the Dirichlet Gaussian free field on a box and its
//! metric-graph sign connectivity.
//!
//! The field lives on all `(2N+1)^d` sites of `B(N)` and vanishes outside.
//! Along each edge the metric-graph field is a Brownian bridge of variance
//! 2 per unit length between the endpoint values, so an edge with endpoint
//! values `a, b` of equal sign stays of one sign with probability
//! `1 - exp(-ab/d)`; mixed-sign edges always cross zero.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dst::{DstScratch, SineTransform};
use crate::error::{domain, Error, Result};
use crate::greens::{BoundaryCondition, GreenTable, MetricNetwork, ReducedSystem};
use crate::lattice::{BoxSpec, Edge, Site};
use crate::rng::{keyed_uniform, Purpose, SeedPath};

/// Field values at every site of a box, indexed by site index.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSample {
    boxspec: BoxSpec,
    values: Vec<f64>,
    seed_path: Option<SeedPath>,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    dimension: usize,
    radius: usize,
    seed_path: Option<SeedPath>,
    sites: usize,
}

impl FieldSample {
    pub fn new(boxspec: BoxSpec, values: Vec<f64>, seed_path: Option<SeedPath>) -> Result<Self> {
        if values.len() != boxspec.site_count() {
            return domain(format!(
                "{} values for a box of {} sites",
                values.len(),
                boxspec.site_count()
            ));
        }
        Ok(FieldSample {
            boxspec,
            values,
            seed_path,
        })
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn seed_path(&self) -> Option<SeedPath> {
        self.seed_path
    }

    pub fn value(&self, site: &Site) -> Option<f64> {
        self.boxspec.index(site).map(|i| self.values[i])
    }

    /// The field with every value negated.
    pub fn flipped(&self) -> FieldSample {
        FieldSample {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }

    /// Binary dump: little-endian `u64` header length, JSON header, values
    /// as little-endian `f64`.
    pub fn write(&self, path: &Path) -> Result<()> {
        let header = DumpHeader {
            dimension: self.boxspec.dim(),
            radius: self.boxspec.radius(),
            seed_path: self.seed_path,
            sites: self.values.len(),
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
            return domain("field dump header is implausibly large");
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: DumpHeader = serde_json::from_slice(&json)?;
        let b = BoxSpec::new(header.dimension, header.radius)?;
        let mut bytes = vec![0u8; header.sites * 8];
        r.read_exact(&mut bytes)?;
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        FieldSample::new(b, values, header.seed_path)
    }
}

/// Spectral sampler: independent normals on the sine eigenmodes of the box
/// Laplacian, scaled by `λ_k^{-1/2}` and transformed back to sites.
pub struct SpectralSampler {
    boxspec: BoxSpec,
    transform: SineTransform,
    /// `Σ_i cos(π k_i / (n+1))` terms per axis, `k = 1..n`.
    cosines: Vec<f64>,
    norm: f64,
}

impl SpectralSampler {
    pub fn new(boxspec: BoxSpec) -> Self {
        let n = boxspec.side();
        let m = (n + 1) as f64;
        SpectralSampler {
            boxspec,
            transform: SineTransform::new(n),
            cosines: (1..=n)
                .map(|k| (std::f64::consts::PI * k as f64 / m).cos())
                .collect(),
            norm: (2.0 / m).powf(boxspec.dim() as f64 / 2.0),
        }
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn sample(&self, seed_path: SeedPath) -> FieldSample {
        let mut values = Vec::new();
        self.sample_into(&mut seed_path.rng(Purpose::Field), &mut values, &mut DstScratch::default());
        FieldSample {
            boxspec: self.boxspec,
            values,
            seed_path: Some(seed_path),
        }
    }

    /// Fills `out` with a sample, reusing its allocation and `scratch`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>, scratch: &mut DstScratch) {
        let d = self.boxspec.dim();
        let n = self.boxspec.side();
        out.clear();
        out.reserve(self.boxspec.site_count());
        let inv_d = 1.0 / d as f64;
        let mut idx = vec![0usize; d];
        let mut head = (d - 1) as f64 * self.cosines[0];
        // the last axis varies fastest; the cosine sum of the others is reused
        'outer: loop {
            for k in 0..n {
                let lambda = 1.0 - (head + self.cosines[k]) * inv_d;
                let xi: f64 = StandardNormal.sample(rng);
                out.push(self.norm * xi / lambda.sqrt());
            }
            let mut axis = d - 1;
            loop {
                if axis == 0 {
                    break 'outer;
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < n {
                    break;
                }
                idx[axis] = 0;
            }
            head = idx[..d - 1].iter().map(|&k| self.cosines[k]).sum();
        }
        self.transform.apply_all_axes(out, d, scratch);
    }
}

/// Reference sampler: `L ξ` with `L L^T = G_D` from a dense factorization.
pub struct CholeskySampler {
    boxspec: BoxSpec,
    factor: DMatrix<f64>,
}

impl CholeskySampler {
    pub fn new(boxspec: BoxSpec) -> Result<Self> {
        let table = GreenTable::new(boxspec, &[])?;
        let n = boxspec.site_count();
        let g = DMatrix::from_row_slice(n, n, table.values());
        let factor = g
            .cholesky()
            .ok_or_else(|| Error::Numeric("Green matrix is not positive definite".into()))?
            .l();
        Ok(CholeskySampler { boxspec, factor })
    }

    pub fn sample(&self, seed_path: SeedPath) -> FieldSample {
        let mut rng = seed_path.rng(Purpose::Field);
        let n = self.boxspec.site_count();
        let xi = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
        FieldSample {
            boxspec: self.boxspec,
            values: (&self.factor * xi).as_slice().to_vec(),
            seed_path: Some(seed_path),
        }
    }
}

/// Per-edge sign-connectivity flags, indexed by edge slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeOpenness {
    boxspec: BoxSpec,
    flags: Vec<u8>,
    seed_path: Option<SeedPath>,
}

impl EdgeOpenness {
    /// The bridge on the edge stays positive.
    pub const PLUS: u8 = 1;
    /// The bridge on the edge stays negative.
    pub const MINUS: u8 = 2;

    pub fn from_flags(boxspec: BoxSpec, flags: Vec<u8>, seed_path: Option<SeedPath>) -> Result<Self> {
        if flags.len() != boxspec.edge_slots() {
            return domain("flag vector length does not match the edge slots");
        }
        Ok(EdgeOpenness {
            boxspec,
            flags,
            seed_path,
        })
    }

    pub fn boxspec(&self) -> &BoxSpec {
        &self.boxspec
    }

    pub fn flags(&self) -> &[u8] {
        &self.flags
    }

    pub fn seed_path(&self) -> Option<SeedPath> {
        self.seed_path
    }

    pub fn plus_open(&self, edge: &Edge) -> bool {
        self.boxspec
            .edge_slot(edge)
            .is_some_and(|s| self.flags[s] & Self::PLUS != 0)
    }

    pub fn minus_open(&self, edge: &Edge) -> bool {
        self.boxspec
            .edge_slot(edge)
            .is_some_and(|s| self.flags[s] & Self::MINUS != 0)
    }

    /// The openness of the sign-flipped field.
    pub fn flipped(&self) -> EdgeOpenness {
        EdgeOpenness {
            flags: self
                .flags
                .iter()
                .map(|&f| ((f & Self::PLUS) << 1) | ((f & Self::MINUS) >> 1))
                .collect(),
            ..self.clone()
        }
    }
}

/// `1 - exp(-|ab|/d)` for equal strict signs, zero otherwise.
pub fn edge_open_probability(a: f64, b: f64, d: usize) -> f64 {
    if a * b > 0.0 {
        -(-(a * b) / d as f64).exp_m1()
    } else {
        0.0
    }
}

/// Samples edge openness for `field` from the `Edges` key of `seed_path`.
pub fn open_edges(field: &FieldSample, seed_path: SeedPath) -> EdgeOpenness {
    let mut flags = Vec::new();
    open_edges_into(field.boxspec(), field.values(), seed_path.key(Purpose::Edges), &mut flags);
    EdgeOpenness {
        boxspec: field.boxspec,
        flags,
        seed_path: Some(seed_path),
    }
}

/// Openness flag of the edge in `slot` with endpoint values `a`, `c`; the
/// uniform behind it depends only on `(key, slot)`.
#[inline]
pub fn edge_flag(key: u64, slot: usize, a: f64, c: f64, d: usize) -> u8 {
    let prod = a * c;
    if prod > 0.0 && keyed_uniform(key, slot as u64) < -(-prod / d as f64).exp_m1() {
        if a > 0.0 {
            EdgeOpenness::PLUS
        } else {
            EdgeOpenness::MINUS
        }
    } else {
        0
    }
}

/// Fills `flags` (one per edge slot) for the field `values`.
pub fn open_edges_into(b: &BoxSpec, values: &[f64], key: u64, flags: &mut Vec<u8>) {
    let d = b.dim();
    let n = b.side();
    flags.clear();
    flags.resize(b.edge_slots(), 0);
    let strides: Vec<usize> = (0..d).map(|a| b.stride(a)).collect();
    for (i, &a) in values.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        for axis in 0..d {
            let stride = strides[axis];
            if (i / stride) % n == n - 1 {
                continue;
            }
            flags[i * d + axis] = edge_flag(key, i * d + axis, a, values[i + stride], d);
        }
    }
}

/// Field values at points inside one edge and the sign connectivity of the
/// sub-intervals they cut the edge into.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InteriorPointSample {
    pub edge: Edge,
    /// Strictly increasing offsets in `(0, d)` from the edge's first endpoint.
    pub offsets: Vec<f64>,
    pub values: Vec<f64>,
    /// One flag per sub-interval, `offsets.len() + 1` in all, from the first
    /// endpoint to the second.
    pub open_plus: Vec<bool>,
    pub open_minus: Vec<bool>,
}

impl InteriorPointSample {
    /// Whether the whole edge stays of the given sign.
    pub fn edge_open(&self, plus: bool) -> bool {
        if plus {
            self.open_plus.iter().all(|&b| b)
        } else {
            self.open_minus.iter().all(|&b| b)
        }
    }
}

/// Samples the pinned bridge on `edge` at `offsets` and the openness of the
/// sub-intervals, from the `Interior` stream of `seed_path` keyed by edge.
pub fn sample_interior(
    field: &FieldSample,
    edge: &Edge,
    offsets: &[f64],
    seed_path: SeedPath,
) -> Result<InteriorPointSample> {
    let b = field.boxspec();
    let Some(slot) = b.edge_slot(edge) else {
        return domain("edge does not lie in the field's box");
    };
    let a = field.values[b.index(edge.lo()).unwrap()];
    let c = field.values[b.index(edge.hi()).unwrap()];
    let mut rng = seed_path.rng_for(Purpose::Interior, slot as u64);
    bridge_points(a, c, edge.clone(), offsets, &mut rng)
}

/// Bridge of variance 2 per unit length on `[0, d]` from `a` to `c`,
/// sampled sequentially at `offsets`, followed by the sub-interval flags.
pub fn bridge_points<R: Rng + ?Sized>(
    a: f64,
    c: f64,
    edge: Edge,
    offsets: &[f64],
    rng: &mut R,
) -> Result<InteriorPointSample> {
    let len = edge.length();
    for (k, &o) in offsets.iter().enumerate() {
        if !(o > 0.0 && o < len) {
            return domain(format!("offset {o} is not inside (0, {len})"));
        }
        if k > 0 && o <= offsets[k - 1] {
            return domain("offsets must be strictly increasing");
        }
    }
    let mut values = Vec::with_capacity(offsets.len());
    let (mut s, mut x) = (0.0, a);
    for &t in offsets {
        let rem = len - s;
        let mean = x + (t - s) / rem * (c - x);
        let var = 2.0 * (t - s) * (len - t) / rem;
        let z: f64 = StandardNormal.sample(rng);
        x = mean + var.sqrt() * z;
        s = t;
        values.push(x);
    }
    let mut pos = vec![0.0];
    pos.extend_from_slice(offsets);
    pos.push(len);
    let mut vals = vec![a];
    vals.extend_from_slice(&values);
    vals.push(c);
    let mut open_plus = Vec::with_capacity(pos.len() - 1);
    let mut open_minus = Vec::with_capacity(pos.len() - 1);
    for k in 0..pos.len() - 1 {
        let prod = vals[k] * vals[k + 1];
        let open = prod > 0.0 && {
            let e: f64 = Exp1.sample(rng);
            e < prod / (pos[k + 1] - pos[k])
        };
        open_plus.push(open && vals[k] > 0.0);
        open_minus.push(open && vals[k] < 0.0);
    }
    Ok(InteriorPointSample {
        edge,
        offsets: offsets.to_vec(),
        values,
        open_plus,
        open_minus,
    })
}

/// Samples the field conditioned on prescribed values at a few sites, by
/// correcting an unconditioned sample with the Green's function columns of
/// the pinned sites.
pub struct ConditionedSampler {
    sampler: SpectralSampler,
    pins: Vec<(usize, f64)>,
    /// `G(·, p_j)` for each pin, over all sites.
    columns: Vec<Vec<f64>>,
    /// `G_PP^{-1}`.
    inverse: DMatrix<f64>,
}

impl ConditionedSampler {
    pub fn new(boxspec: BoxSpec, pins: &[(Site, f64)]) -> Result<Self> {
        let mut idx = Vec::with_capacity(pins.len());
        for (s, v) in pins {
            let Some(i) = boxspec.index(s) else {
                return domain(format!("pinned site {s} lies outside the box"));
            };
            if idx.iter().any(|&(j, _)| j == i) {
                return domain(format!("site {s} is pinned twice"));
            }
            idx.push((i, *v));
        }
        let net = MetricNetwork::lattice(boxspec, BoundaryCondition::Grounded)?;
        let sys = ReducedSystem::new(&net, &[])?;
        let columns: Vec<Vec<f64>> = idx
            .iter()
            .map(|&(i, _)| sys.green_column(i).map(|mut c| {
                c.truncate(boxspec.site_count());
                c
            }))
            .collect::<Result<_>>()?;
        let k = idx.len();
        let gpp = DMatrix::from_fn(k, k, |a, b| columns[b][idx[a].0]);
        let inverse = gpp
            .try_inverse()
            .ok_or_else(|| Error::Numeric("pinned covariance is singular".into()))?;
        Ok(ConditionedSampler {
            sampler: SpectralSampler::new(boxspec),
            pins: idx,
            columns,
            inverse,
        })
    }

    pub fn boxspec(&self) -> &BoxSpec {
        self.sampler.boxspec()
    }

    pub fn sample(&self, seed_path: SeedPath) -> FieldSample {
        let mut values = Vec::new();
        self.sample_into(&mut seed_path.rng(Purpose::Field), &mut values, &mut DstScratch::default());
        FieldSample {
            boxspec: *self.boxspec(),
            values,
            seed_path: Some(seed_path),
        }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>, scratch: &mut DstScratch) {
        self.sampler.sample_into(rng, out, scratch);
        let k = self.pins.len();
        let resid = DVector::from_fn(k, |j, _| self.pins[j].1 - out[self.pins[j].0]);
        let coef = &self.inverse * resid;
        for (j, col) in self.columns.iter().enumerate() {
            let w = coef[j];
            for (o, g) in out.iter_mut().zip(col) {
                *o += w * g;
            }
        }
        for &(i, v) in &self.pins {
            out[i] = v;
        }
    }
}

/// One exact conditional sample given pinned site values.
pub fn conditioned_field(b: &BoxSpec, pins: &[(Site, f64)], seed_path: SeedPath) -> Result<FieldSample> {
    Ok(ConditionedSampler::new(*b, pins)?.sample(seed_path))
}

/// One exact sample of the box field.
pub fn sample_field(b: &BoxSpec, seed_path: SeedPath) -> FieldSample {
    SpectralSampler::new(*b).sample(seed_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_site_box_is_standard_normal() {
        let b = BoxSpec::new(3, 0).unwrap();
        let s = SpectralSampler::new(b);
        let n = 20000;
        let mut m2 = 0.0;
        for r in 0..n {
            let v = s.sample(SeedPath::new(1, 0, r)).values()[0];
            m2 += v * v;
        }
        assert!((m2 / n as f64 - 1.0).abs() < 4.0 * (2.0f64 / n as f64).sqrt());
    }

    #[test]
    fn sampling_is_deterministic() {
        let b = BoxSpec::new(3, 3).unwrap();
        let p = SeedPath::new(4, 2, 9);
        let x = sample_field(&b, p);
        assert_eq!(x, sample_field(&b, p));
        let o = open_edges(&x, p);
        assert_eq!(o, open_edges(&x, p));
        assert_ne!(x, sample_field(&b, p.with_replica(10)));
    }

    #[test]
    fn openness_respects_signs() {
        let b = BoxSpec::new(3, 4).unwrap();
        let x = sample_field(&b, SeedPath::new(1, 1, 1));
        let o = open_edges(&x, SeedPath::new(1, 1, 1));
        for e in b.edges() {
            let (a, c) = (x.value(e.lo()).unwrap(), x.value(e.hi()).unwrap());
            if o.plus_open(&e) {
                assert!(a > 0.0 && c > 0.0);
            }
            if o.minus_open(&e) {
                assert!(a < 0.0 && c < 0.0);
            }
        }
        assert!((edge_open_probability(3f64.sqrt(), 3f64.sqrt(), 3) - 0.6321205588).abs() < 1e-9);
        assert_eq!(edge_open_probability(1.0, -1.0, 3), 0.0);
        assert!(edge_open_probability(1e-9, 1e-9, 3) < 1e-17);
    }

    #[test]
    fn pinning_is_exact() {
        let b = BoxSpec::new(3, 2).unwrap();
        let o = Site::origin(3);
        let x = conditioned_field(&b, &[(o.clone(), 0.0)], SeedPath::new(3, 3, 3)).unwrap();
        assert_eq!(x.value(&o), Some(0.0));
        assert!(conditioned_field(&b, &[(o.clone(), 0.0), (o, 1.0)], SeedPath::new(3, 3, 3)).is_err());
    }

    #[test]
    fn interior_offsets_are_validated() {
        let b = BoxSpec::new(3, 1).unwrap();
        let x = sample_field(&b, SeedPath::new(0, 0, 0));
        let e = Edge::along(&Site::origin(3), 0);
        let p = SeedPath::new(0, 0, 0);
        assert!(sample_interior(&x, &e, &[1.0, 1.0], p).is_err());
        assert!(sample_interior(&x, &e, &[0.0], p).is_err());
        assert!(sample_interior(&x, &e, &[2.0, 1.0], p).is_err());
        let s = sample_interior(&x, &e, &[1.0, 2.0], p).unwrap();
        assert_eq!(s.open_plus.len(), 3);
    }
}
