use gff_core::greens::*;
use gff_core::lattice::{BoxSpec, Edge, MetricPoint, Site};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::gamma::gamma;

fn site(c: &[i64]) -> Site {
    Site::new(c.to_vec())
}

fn at(s: &Site) -> MetricPoint {
    MetricPoint::at_site(s)
}

fn on(edge: &Edge, offset: f64) -> MetricPoint {
    MetricPoint::new(edge.clone(), offset).unwrap()
}

/// Closed form of the return Green's function at the origin in d = 3.
fn watson() -> f64 {
    6f64.sqrt() / (32.0 * std::f64::consts::PI.powi(3))
        * gamma(1.0 / 24.0)
        * gamma(5.0 / 24.0)
        * gamma(7.0 / 24.0)
        * gamma(11.0 / 24.0)
}

/// d = 3 Green's function by integrating out the third momentum exactly
/// and doing the remaining 2D integral on a mesh graded toward the
/// integrable singularity at the origin.
fn nested_fourier(x: [i64; 3]) -> f64 {
    let pi = std::f64::consts::PI;
    let (nodes, weights) = gauss_legendre_oracle(24);
    let mut panels = vec![];
    let mut hi = pi;
    for _ in 0..45 {
        panels.push((hi / 2.0, hi));
        hi /= 2.0;
    }
    panels.push((0.0, hi));
    let mut pts = vec![];
    for &(a, b) in &panels {
        for (t, w) in nodes.iter().zip(&weights) {
            pts.push(((a + b) / 2.0 + (b - a) / 2.0 * t, (b - a) / 2.0 * w));
        }
    }
    let n = x[2].unsigned_abs() as i32;
    let mut total = 0.0;
    for &(k1, w1) in &pts {
        for &(k2, w2) in &pts {
            let a = 3.0 - k1.cos() - k2.cos();
            // a - 1 without cancellation near the origin
            let am1 = 2.0 * ((k1 / 2.0).sin().powi(2) + (k2 / 2.0).sin().powi(2));
            let root = (am1 * (a + 1.0)).sqrt();
            let z = 1.0 / (a + root);
            total += w1 * w2 * 3.0 * (k1 * x[0] as f64).cos() * (k2 * x[1] as f64).cos() * z.powi(n) / root;
        }
    }
    total / (pi * pi)
}

/// Gauss–Legendre nodes by Newton iteration, independent of the crate's rule.
fn gauss_legendre_oracle(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![];
    let mut ws = vec![];
    for i in 1..=n {
        let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..60 {
            let mut p = [1.0, x];
            for k in 2..=n {
                let next = ((2 * k - 1) as f64 * x * p[1] - (k - 1) as f64 * p[0]) / k as f64;
                p = [p[1], next];
            }
            dp = n as f64 * (p[0] - x * p[1]) / (1.0 - x * x);
            x -= p[1] / dp;
        }
        xs.push(x);
        ws.push(2.0 / ((1.0 - x * x) * dp * dp));
    }
    (xs, ws)
}

#[test]
fn free_green_matches_watson_integral() {
    let g = free_green(3, &Site::origin(3), &Site::origin(3), 1e-10).unwrap();
    assert!((g - watson()).abs() < 1e-9, "{g} vs {}", watson());
    assert!((g - 1.51639).abs() < 1e-5);
}

#[test]
fn free_green_matches_nested_fourier_oracle() {
    for x in [[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 1, 1], [0, 0, 3], [3, 2, 0]] {
        let g = free_green(3, &Site::origin(3), &site(&x), 1e-10).unwrap();
        let o = nested_fourier(x);
        assert!((g - o).abs() < 1e-8, "{x:?}: {g} vs {o}");
    }
}

#[test]
fn free_green_one_step_identity() {
    for d in [3usize, 4, 5] {
        let o = Site::origin(d);
        let g0 = free_green(d, &o, &o, 1e-10).unwrap();
        let g1 = free_green(d, &o, &Site::unit(d, 0), 1e-10).unwrap();
        assert!((g1 - (g0 - 1.0)).abs() < 1e-9, "d={d}");
    }
}

#[test]
fn free_green_decays_like_distance_power() {
    for d in [3usize, 4] {
        let o = Site::origin(d);
        let mut ratios = vec![];
        for k in [2i64, 4, 8, 16, 32] {
            let x = Site::on_axis(d, 0, k);
            let g = free_green(d, &o, &x, 1e-12).unwrap();
            ratios.push(g * ((d as i64 * k) as f64).powi(d as i32 - 2));
        }
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
        assert!(hi / lo < 1.5, "d={d}: {ratios:?}");
    }
}

#[test]
fn free_green_reports_unreachable_tolerance() {
    let r = free_green_diff(3, &[0, 0, 0], 1e-300);
    assert!(matches!(r, Err(gff_core::Error::Convergence { .. })));
}

#[test]
fn dirichlet_green_basic_properties() {
    let b = BoxSpec::new(3, 2).unwrap();
    let x = site(&[1, 0, -1]);
    let y = site(&[-1, 1, 0]);
    let gxy = dirichlet_green(&b, &[], &x, &y).unwrap();
    assert!((gxy - dirichlet_green(&b, &[], &y, &x).unwrap()).abs() < 1e-13);
    let d1 = vec![site(&[0, 0, 0])];
    let d2 = vec![site(&[0, 0, 0]), site(&[0, 1, 0]), site(&[1, 1, 1])];
    let g1 = dirichlet_green(&b, &d1, &x, &y).unwrap();
    let g2 = dirichlet_green(&b, &d2, &x, &y).unwrap();
    assert!(gxy >= g1 && g1 >= g2 && g2 > 0.0);
    assert!(dirichlet_green(&b, &d1, &site(&[0, 0, 0]), &y).is_err());
}

#[test]
fn green_table_invariants() {
    let b = BoxSpec::new(3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let mut d1: Vec<Site> = vec![];
        for _ in 0..3 {
            d1.push(b.site(rng.gen_range(0..b.site_count())));
        }
        let mut d2 = d1.clone();
        for _ in 0..4 {
            d2.push(b.site(rng.gen_range(0..b.site_count())));
        }
        let t1 = GreenTable::new(b, &d1).unwrap();
        let t2 = GreenTable::new(b, &d2).unwrap();
        let n = b.site_count();
        for i in 0..n {
            let dead1 = d1.contains(&b.site(i));
            if !dead1 {
                assert!(t1.at(i, i) >= 1.0);
            }
            for j in 0..n {
                assert_eq!(t1.at(i, j), t1.at(j, i));
                assert!(t1.at(i, j) >= 0.0);
                assert!(t1.at(i, j) + 1e-13 >= t2.at(i, j));
                if dead1 {
                    assert_eq!(t1.at(i, j), 0.0);
                }
            }
        }
    }
}

#[test]
fn optional_stopping_on_a_segment() {
    let b = BoxSpec::new(3, 2).unwrap();
    let e = Edge::along(&site(&[0, 1, 0]), 2);
    let (v, w) = (on(&e, 0.5), on(&e, 2.5));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let z = on(&e, rng.gen_range(0.51..2.49));
        let p = hitting_probability(&b, BoundaryCondition::Grounded, &z, &[v.clone()], &[w.clone()]).unwrap();
        let exact = (2.5 - z.offset()) / 2.0;
        assert!((p - exact).abs() < 1e-12);
    }
    let mid = on(&e, 1.5);
    let p = hitting_probability(&b, BoundaryCondition::Grounded, &mid, &[v.clone()], &[w.clone()]).unwrap();
    assert!((p - 0.5).abs() < 1e-12);
    // |z - w| = 3/4 |v - w|
    let z = on(&e, 1.0);
    let p = hitting_probability(&b, BoundaryCondition::Grounded, &z, &[v], &[w]).unwrap();
    assert!((p - 0.75).abs() < 1e-12);
}

#[test]
fn isolated_segment_conductance() {
    let b = BoxSpec::new(3, 1).unwrap();
    let e = Edge::along(&site(&[0, 0, 0]), 1);
    for (a, c) in [(0.0, 3.0), (0.3, 2.2), (1.0, 1.5), (0.0, 0.25)] {
        let (v, w) = (on(&e, a), on(&e, c));
        let keep = e.clone();
        let net = NetworkBuilder::new(b)
            .insert([&v, &w])
            .edges(move |x| *x == keep)
            .build()
            .unwrap();
        let (i, j) = (net.node_of(&v).unwrap(), net.node_of(&w).unwrap());
        let k = net.excursion_kernel(i, j, &[]).unwrap();
        assert!((k - 1.0 / (2.0 * (c - a))).abs() < 1e-12, "{a} {c}");
    }
}

#[test]
fn star_hitting_distribution() {
    let b = BoxSpec::new(3, 2).unwrap();
    let x = Site::origin(3);
    let edges = [
        Edge::along(&x, 0),
        Edge::new(x.clone(), x.shifted(1, -1)).unwrap(),
        Edge::along(&x, 2),
    ];
    let lengths = [0.7, 2.1, 1.3];
    let targets: Vec<MetricPoint> = edges
        .iter()
        .zip(lengths)
        .map(|(e, l)| if e.lo() == &x { on(e, l) } else { on(e, 3.0 - l) })
        .collect();
    let kept = edges.clone();
    let net = NetworkBuilder::new(b)
        .boundary(BoundaryCondition::Reflected)
        .insert(&targets)
        .edges(move |e| kept.contains(e))
        .build()
        .unwrap();
    let nodes: Vec<usize> = targets.iter().map(|t| net.node_of(t).unwrap()).collect();
    let start = net.site_node(&x).unwrap();
    let norm: f64 = lengths.iter().map(|l| 1.0 / l).sum();
    for j in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&k| k != j).map(|k| nodes[k]).collect();
        let p = net.hitting_probability(start, &[nodes[j]], &others).unwrap();
        assert!((p - (1.0 / lengths[j]) / norm).abs() < 1e-12);
    }
}

fn random_point(b: &BoxSpec, rng: &mut ChaCha8Rng) -> MetricPoint {
    loop {
        let slot = rng.gen_range(0..b.edge_slots());
        if let Some(e) = b.edge_from_slot(slot) {
            return if rng.gen_bool(0.3) {
                at(e.lo())
            } else {
                on(&e, rng.gen_range(0.05..2.95))
            };
        }
    }
}

fn random_sites(b: &BoxSpec, k: usize, rng: &mut ChaCha8Rng) -> Vec<Site> {
    let mut out: Vec<Site> = vec![];
    while out.len() < k {
        let s = b.site(rng.gen_range(0..b.site_count()));
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn touches(p: &MetricPoint, set: &[Site]) -> bool {
    p.as_site().is_some_and(|s| set.contains(s))
}

#[test]
fn green_factorizes_through_hitting_probability() {
    let b = BoxSpec::new(3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 50 {
        let dset = random_sites(&b, rng.gen_range(0..4), &mut rng);
        let v = random_point(&b, &mut rng);
        let w = random_point(&b, &mut rng);
        if v == w || touches(&v, &dset) || touches(&w, &dset) {
            continue;
        }
        let gvw = metric_green_network(&b, &dset, &v, &w).unwrap();
        let gww = metric_green_network(&b, &dset, &w, &w).unwrap();
        let absorbing: Vec<MetricPoint> = dset.iter().map(at).collect();
        let h = hitting_probability(&b, BoundaryCondition::Grounded, &v, &[w.clone()], &absorbing).unwrap();
        assert!((gvw - h * gww).abs() < 1e-10 * gww.max(1.0), "{gvw} vs {}", h * gww);
        checked += 1;
    }
}

#[test]
fn metric_green_closed_form_matches_network() {
    let b = BoxSpec::new(3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for trial in 0..30 {
        let dset = random_sites(&b, trial % 3, &mut rng);
        let p = random_point(&b, &mut rng);
        let q = if trial % 4 == 0 {
            on(p.edge(), rng.gen_range(0.05..2.95))
        } else {
            random_point(&b, &mut rng)
        };
        if touches(&p, &dset) || touches(&q, &dset) {
            continue;
        }
        let a = metric_green(&b, &dset, &p, &q).unwrap();
        let c = metric_green_network(&b, &dset, &p, &q).unwrap();
        assert!((a - c).abs() < 1e-11, "{a} vs {c}");
    }
    let x = site(&[1, 0, 0]);
    assert!(
        (metric_green(&b, &[], &at(&x), &at(&x)).unwrap() - dirichlet_green(&b, &[], &x, &x).unwrap()).abs()
            < 1e-12
    );
    let e = Edge::along(&x, 1);
    let y = site(&[0, 0, 1]);
    assert!(
        (metric_green(&b, &[], &on(&e, 0.0), &at(&y)).unwrap() - dirichlet_green(&b, &[], &x, &y).unwrap())
            .abs()
            < 1e-12
    );
    let mid = on(&e, 1.5);
    let absorbed = [e.lo().clone(), e.hi().clone()];
    assert!((metric_green(&b, &absorbed, &mid, &mid).unwrap() - 1.5).abs() < 1e-12);
    assert!((metric_green_network(&b, &absorbed, &mid, &mid).unwrap() - 1.5).abs() < 1e-12);
}

#[test]
fn last_exit_decomposition_between_nested_sets() {
    let b = BoxSpec::new(3, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut checked = 0;
    while checked < 10 {
        let d2 = random_sites(&b, 5, &mut rng);
        let d1: Vec<Site> = d2[..2].to_vec();
        let v = random_point(&b, &mut rng);
        let w = random_point(&b, &mut rng);
        if touches(&v, &d2) || touches(&w, &d2) {
            continue;
        }
        let lhs = metric_green_network(&b, &d1, &v, &w).unwrap() - metric_green_network(&b, &d2, &v, &w).unwrap();
        let mut rhs = 0.0;
        for z in &d2[2..] {
            let others: Vec<MetricPoint> = d2.iter().filter(|s| *s != z).map(at).collect();
            let p = hitting_probability(&b, BoundaryCondition::Grounded, &v, &[at(z)], &others).unwrap();
            rhs += p * metric_green_network(&b, &d1, &at(z), &w).unwrap();
        }
        assert!((lhs - rhs).abs() < 1e-11, "{lhs} vs {rhs}");
        checked += 1;
    }
}

#[test]
fn diagonal_green_comparable_to_distance_from_set() {
    let b = BoxSpec::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut lo, mut hi) = (f64::MAX, 0f64);
    for _ in 0..40 {
        let dset = random_sites(&b, rng.gen_range(1..6), &mut rng);
        let v = random_point(&b, &mut rng);
        if touches(&v, &dset) {
            continue;
        }
        let dist = dset
            .iter()
            .map(|s| gff_core::lattice::graph_distance(&v, &at(s)))
            .fold(f64::MAX, f64::min);
        let g = metric_green(&b, &dset, &v, &v).unwrap();
        let r = g / dist.min(1.0);
        lo = lo.min(r);
        hi = hi.max(r);
    }
    assert!(lo > 0.5 && hi < 5.0, "band [{lo}, {hi}]");
}

#[test]
fn neighbour_kernel_equals_escape_sum() {
    let b = BoxSpec::new(3, 4).unwrap();
    let v = Site::origin(3);
    let w = Site::unit(3, 0);
    let k = excursion_kernel(&b, BoundaryCondition::Grounded, &[], &at(&v), &at(&w)).unwrap();
    let mut sum = 0.0;
    for y in b.neighbors(&v).unwrap() {
        sum += if y == w {
            1.0
        } else {
            hitting_probability(&b, BoundaryCondition::Grounded, &at(&y), &[at(&w)], &[at(&v)]).unwrap()
        };
    }
    assert!((k.value - sum / 6.0).abs() < 1e-12);
    assert_eq!(k.error_bound, 0.0);
}

#[test]
fn kernel_decays_like_distance_power() {
    let o = Site::origin(3);
    let mut ratios = vec![];
    for k in [2i64, 3, 4, 5] {
        let w = Site::on_axis(3, 0, k);
        let kv = excursion_kernel_free(3, &[], &at(&o), &at(&w), 3 * k as usize, 1.0).unwrap();
        assert!(kv.error_bound < 0.5 * kv.value, "{kv:?}");
        ratios.push(kv.value * (3.0 * k as f64));
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 2.0, "{ratios:?}");
    let w = Site::on_axis(3, 0, 3);
    assert!(matches!(
        excursion_kernel_free(3, &[], &at(&o), &at(&w), 4, 1e-12),
        Err(gff_core::Error::Convergence { .. })
    ));
}

#[test]
fn kernel_green_hitting_ratio_is_bounded() {
    let b = BoxSpec::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let (mut lo, mut hi) = (f64::MAX, 0f64);
    let mut n = 0;
    while n < 30 {
        let dset = random_sites(&b, rng.gen_range(0..5), &mut rng);
        let v = random_point(&b, &mut rng);
        let w = random_point(&b, &mut rng);
        if touches(&v, &dset) || touches(&w, &dset) || gff_core::lattice::graph_distance(&v, &w) < 3.0 {
            continue;
        }
        let k = excursion_kernel(&b, BoundaryCondition::Grounded, &dset, &v, &w).unwrap().value;
        let gww = metric_green(&b, &dset, &w, &w).unwrap();
        let absorbing: Vec<MetricPoint> = dset.iter().map(at).collect();
        let p = hitting_probability(&b, BoundaryCondition::Grounded, &w, &[v.clone()], &absorbing).unwrap();
        if p < 1e-12 {
            continue;
        }
        let r = k * gww / p;
        lo = lo.min(r);
        hi = hi.max(r);
        n += 1;
    }
    assert!(lo > 0.05 && hi < 20.0, "band [{lo}, {hi}]");
}

#[test]
fn point_capacity_is_inverse_green() {
    let b = BoxSpec::new(3, 4).unwrap();
    let x = site(&[1, 0, 0]);
    let m = capacity_in_box(&b, std::slice::from_ref(&x)).unwrap();
    let g = dirichlet_green(&b, &[], &x, &x).unwrap();
    assert!((m.total - 1.0 / g).abs() < 1e-12);
    assert_eq!(m.support, vec![x.clone()]);
    let free = capacity(&BoxSpec::new(3, 16).unwrap(), &[Site::origin(3)]).unwrap();
    assert!((free.total - 1.0 / watson()).abs() < 2.0 * free.truncation_error + 1e-3);
}

fn ball(d: usize, n: i64) -> Vec<Site> {
    let b = BoxSpec::new(d, n as usize).unwrap();
    (0..b.site_count()).map(|i| b.site(i)).collect()
}

#[test]
fn box_capacity_scales_like_radius_power() {
    let mut ratios = vec![];
    for n in [1i64, 2, 3, 4] {
        let m = capacity(&BoxSpec::new(3, 6 * n as usize).unwrap(), &ball(3, n)).unwrap();
        assert!((m.total - m.weights.iter().sum::<f64>()).abs() < 1e-12);
        ratios.push(m.total / n as f64);
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 2.0, "{ratios:?}");
}

#[test]
fn capacity_monotone_and_subadditive() {
    let b = BoxSpec::new(3, 6).unwrap();
    let inner = BoxSpec::new(3, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..20 {
        let a = random_sites(&inner, rng.gen_range(1..6), &mut rng);
        let mut big = a.clone();
        big.extend(random_sites(&inner, 3, &mut rng));
        big.sort();
        big.dedup();
        let c = random_sites(&inner, rng.gen_range(1..6), &mut rng);
        let ca = capacity_in_box(&b, &a).unwrap().total;
        let cb = capacity_in_box(&b, &big).unwrap().total;
        assert!(ca <= cb + 1e-12);
        let mut union = a.clone();
        union.extend(c.iter().cloned());
        let cu = capacity_in_box(&b, &union).unwrap().total;
        let cc = capacity_in_box(&b, &c).unwrap().total;
        assert!(cu <= ca + cc + 1e-12);
    }
    assert!(capacity(&b, &[site(&[6, 0, 0])]).is_err());
}

#[test]
fn hitting_probability_comparable_to_capacity() {
    let mut ratios = vec![];
    for n in [1i64, 2, 3] {
        let set = ball(3, n);
        let b = BoxSpec::new(3, 8 * n as usize).unwrap();
        let cap = capacity_in_box(&b, &set).unwrap().total;
        let x = Site::on_axis(3, 0, 2 * n);
        let absorbing: Vec<MetricPoint> = set.iter().map(at).collect();
        let p = hitting_probability(&b, BoundaryCondition::Grounded, &at(&x), &absorbing, &[]).unwrap();
        ratios.push(p / (cap / n as f64));
    }
    let (lo, hi) = ratios.iter().fold((f64::MAX, 0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(hi / lo < 2.0, "{ratios:?}");
}
