use super::BinaryMask;
use crate::par;
use crate::tensor::ScalarMap;

/// Exact squared Euclidean distance from every pixel to the nearest pixel whose mask
/// value equals `target`. Pixels are `f64::INFINITY` when no such pixel exists.
///
/// Separable lower-envelope-of-parabolas transform: one pass along rows, one along
/// columns, each `O(n)` per line.
pub fn squared_distance_to(m: &BinaryMask, target: bool) -> Vec<f64> {
    let (h, w) = (m.height(), m.width());
    let mut rows = vec![f64::INFINITY; h * w];
    par::for_each_chunk_mut(&mut rows, w, |y, out| {
        let f: Vec<f64> = (0..w)
            .map(|x| {
                if m.get(y, x) == target {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        lower_envelope(&f, out);
    });

    let cols = par::map_range(w, |x| {
        let f: Vec<f64> = (0..h).map(|y| rows[y * w + x]).collect();
        let mut out = vec![f64::INFINITY; h];
        lower_envelope(&f, &mut out);
        out
    });
    let mut d = vec![0.0; h * w];
    for (x, col) in cols.into_iter().enumerate() {
        for (y, v) in col.into_iter().enumerate() {
            d[y * w + x] = v;
        }
    }
    d
}

/// `out[q] = min_p (q - p)^2 + f[p]`, ignoring sites with infinite `f`.
fn lower_envelope(f: &[f64], out: &mut [f64]) {
    let sites: Vec<usize> = (0..f.len()).filter(|&p| f[p].is_finite()).collect();
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    // v: parabola vertices on the envelope; z: boundaries between them
    let mut v: Vec<usize> = Vec::with_capacity(sites.len());
    let mut z: Vec<f64> = Vec::with_capacity(sites.len() + 1);
    v.push(sites[0]);
    z.push(f64::NEG_INFINITY);
    z.push(f64::INFINITY);
    let intersect = |q: usize, p: usize| -> f64 {
        let (qf, pf) = (q as f64, p as f64);
        ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
    };
    for &q in &sites[1..] {
        let mut s = intersect(q, v[v.len() - 1]);
        while s <= z[v.len() - 1] {
            v.pop();
            z.pop();
            s = intersect(q, v[v.len() - 1]);
        }
        v.push(q);
        *z.last_mut().expect("z is never empty") = s;
        z.push(f64::INFINITY);
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Distance from each pixel to the nearest pixel of the opposite mask value, minus one
/// and floored at zero, so pixels touching the boundary sit at `D = 0`.
///
/// A mask without both values has no boundary; every pixel is then `f64::INFINITY`.
pub fn distance_to_boundary(m: &BinaryMask) -> ScalarMap {
    let ones = m.count_ones();
    let total = m.bits().len();
    if ones == 0 || ones == total {
        return ScalarMap::from_parts(m.height(), m.width(), vec![f64::INFINITY; total]);
    }
    let to_zero = squared_distance_to(m, false);
    let to_one = squared_distance_to(m, true);
    let d = m
        .bits()
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let sq = if b { to_zero[i] } else { to_one[i] };
            (sq.sqrt() - 1.0).max(0.0)
        })
        .collect();
    ScalarMap::from_parts(m.height(), m.width(), d)
}
