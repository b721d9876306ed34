//! Green's function of the simple random walk on the infinite lattice.
//!
//! The Fourier integral `(2π)^{-d} ∫ cos(k·x) / (1 - d^{-1} Σ cos k_i) dk`
//! is evaluated by writing `1/λ = ∫_0^∞ e^{-λt} dt`, which factorizes it
//! into one-dimensional Fourier integrals `e^{-s} I_n(s)` (computed by the
//! trapezoid rule, exponentially accurate for periodic integrands) and a
//! single integral over `t`. The large-`t` tail is summed from the Hankel
//! expansion of `I_n`.

use crate::error::{Error, Result};
use crate::lattice::Site;
use crate::quad::Rule;

const MAX_ORDER: usize = 256;

/// `G(x, y)` on `Z^d` in expected-visit units, with absolute error `≤ tol`.
pub fn free_green(d: usize, x: &Site, y: &Site, tol: f64) -> Result<f64> {
    let diff: Vec<i64> = x.coords().iter().zip(y.coords()).map(|(a, b)| a - b).collect();
    free_green_diff(d, &diff, tol).map(|(g, _)| g)
}

/// `G(0, diff)` and the achieved error bound.
pub fn free_green_diff(d: usize, diff: &[i64], tol: f64) -> Result<(f64, f64)> {
    if d < 3 || diff.len() != d {
        return Err(Error::Domain(format!(
            "free Green's function needs d >= 3 and a {d}-vector"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let mut n: Vec<u64> = diff.iter().map(|c| c.unsigned_abs()).collect();
    n.sort_unstable();
    let sum_sq: f64 = n.iter().map(|&k| (k * k) as f64).sum();
    let mut t_max = (200.0 * d as f64 * (sum_sq + 1.0)).max(4000.0);
    let (mut tail, mut tail_err) = tail_integral(d, &n, t_max);
    while tail_err > tol / 4.0 && t_max < 1e12 {
        t_max *= 4.0;
        (tail, tail_err) = tail_integral(d, &n, t_max);
    }

    let mut panels = vec![(0.0, 0.5)];
    let mut a = 0.5;
    while a < t_max {
        let b = (2.0 * a).min(t_max);
        panels.push((a, b));
        a = b;
    }

    let mut order = 8;
    let mut prev = body_integral(d, &n, &panels, order);
    loop {
        order *= 2;
        let cur = body_integral(d, &n, &panels, order);
        let err = (cur - prev).abs() + tail_err;
        if err <= tol / 2.0 {
            return Ok((cur + tail, err));
        }
        if order >= MAX_ORDER {
            return Err(Error::Convergence {
                achieved: err,
                requested: tol,
            });
        }
        prev = cur;
    }
}

fn body_integral(d: usize, n: &[u64], panels: &[(f64, f64)], order: usize) -> f64 {
    let s_scale = 1.0 / d as f64;
    panels
        .iter()
        .map(|&(a, b)| {
            Rule::new(order, a, b).integrate(|t| {
                let s = t * s_scale;
                let mut prod = 1.0;
                let mut last: Option<(u64, f64)> = None;
                for &k in n {
                    let v = match last {
                        Some((lk, lv)) if lk == k => lv,
                        _ => scaled_bessel_i(k, s),
                    };
                    last = Some((k, v));
                    prod *= v;
                }
                prod
            })
        })
        .sum()
}

/// `∫_T^∞ Π_i e^{-s} I_{n_i}(s) dt` with `s = t/d`, from the first three
/// terms of the Hankel expansion; returns the value and the size of the
/// first omitted term.
fn tail_integral(d: usize, n: &[u64], t: f64) -> (f64, f64) {
    let df = d as f64;
    let mut a = 0.0;
    let mut b_single = 0.0;
    let mut pair = 0.0;
    let alphas: Vec<f64> = n
        .iter()
        .map(|&k| (4.0 * (k * k) as f64 - 1.0) / 8.0)
        .collect();
    for (i, &k) in n.iter().enumerate() {
        let mu = 4.0 * (k * k) as f64;
        a += alphas[i];
        b_single += (mu - 1.0) * (mu - 9.0) / 128.0;
        for &aj in &alphas[i + 1..] {
            pair += alphas[i] * aj;
        }
    }
    let b = b_single + pair;
    let p = df / 2.0;
    let pref = (2.0 * std::f64::consts::PI / df).powf(-p);
    let value = pref
        * (t.powf(1.0 - p) / (p - 1.0) - a * df * t.powf(-p) / p
            + b * df * df * t.powf(-p - 1.0) / (p + 1.0));
    let scale = a.abs().max(b.abs().sqrt()).max(1.0) * df;
    let err = pref * scale.powi(3) * t.powf(-p - 2.0) / (p + 2.0);
    (value, err)
}

/// `e^{-s} I_n(s) = (2π)^{-1} ∫_0^{2π} e^{-s(1 - cos θ)} cos(nθ) dθ` by the
/// trapezoid rule, with enough points that aliased terms are below `e^{-70}`.
pub fn scaled_bessel_i(n: u64, s: f64) -> f64 {
    if s == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    let m = (n as usize + (12.0 * s.sqrt()).ceil() as usize + 48).max(64);
    let h = 2.0 * std::f64::consts::PI / m as f64;
    let half = m / 2;
    // symmetric halves of the circle
    let mut acc = 1.0;
    for j in 1..=half {
        let th = h * j as f64;
        let e = s * (1.0 - th.cos());
        if e > 745.0 {
            break;
        }
        let w = if 2 * j == m { 1.0 } else { 2.0 };
        acc += w * (-e).exp() * (n as f64 * th).cos();
    }
    acc / m as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_small_argument_series() {
        // e^{-s} I_n(s) from the power series
        for &(n, s) in &[(0u64, 0.3f64), (1, 0.3), (3, 1.7), (0, 5.0), (2, 12.0)] {
            let mut term = (s / 2.0).powi(n as i32) / (1..=n).map(|k| k as f64).product::<f64>();
            let mut sum = 0.0;
            for k in 0..200 {
                sum += term;
                term *= (s / 2.0).powi(2) / ((k + 1) as f64 * (k as f64 + 1.0 + n as f64));
            }
            let exact = sum * (-s).exp();
            assert!((scaled_bessel_i(n, s) - exact).abs() < 1e-14, "n={n} s={s}");
        }
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(free_green_diff(2, &[0, 0], 1e-6).is_err());
        assert!(free_green_diff(3, &[0, 0, 0], 0.0).is_err());
    }
}
