#![allow(dead_code)]

use gff_core::lattice::{BoxSpec, Site};

/// `(I - P)^{-1}` on the live sites of a box by Gauss–Jordan elimination,
/// built directly from coordinates. Rows of absorbed sites are zero.
pub fn dense_green(b: &BoxSpec, absorbing: &[Site]) -> Vec<Vec<f64>> {
    let n = b.site_count();
    let d = b.dim() as f64;
    let live: Vec<usize> = (0..n).filter(|&i| !absorbing.contains(&b.site(i))).collect();
    let m = live.len();
    let pos = |i: usize| live.iter().position(|&j| j == i);
    let mut a = vec![vec![0.0; 2 * m]; m];
    for (r, &i) in live.iter().enumerate() {
        a[r][r] = 1.0;
        a[r][m + r] = 1.0;
        let s = b.site(i);
        for axis in 0..b.dim() {
            for delta in [-1, 1] {
                let t = s.shifted(axis, delta);
                if let Some(j) = b.index(&t) {
                    if let Some(c) = pos(j) {
                        a[r][c] -= 1.0 / (2.0 * d);
                    }
                }
            }
        }
    }
    for col in 0..m {
        let piv = (col..m)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        let pivot_row = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && row[col] != 0.0 {
                let f = row[col];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * pv;
                }
            }
        }
    }
    let mut g = vec![vec![0.0; n]; n];
    for (r, &i) in live.iter().enumerate() {
        for (c, &j) in live.iter().enumerate() {
            g[i][j] = a[r][m + c];
        }
    }
    g
}

/// `π^{-1} arcsin` of the correlation of two sites.
pub fn arcsin_connection(g: &[Vec<f64>], i: usize, j: usize) -> f64 {
    (g[i][j] / (g[i][i] * g[j][j]).sqrt()).asin() / std::f64::consts::PI
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
