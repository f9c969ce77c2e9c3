//! Reference implementations used to cross-check the library. They work on
//! plain arrays and share no code with the crate's numerical path.

#![allow(dead_code)]

use modelcmp::{Coord, ResidueMatch};

pub type P = [f64; 3];

pub fn to_arrays(c: &[Coord]) -> Vec<P> {
    c.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn sub(a: P, b: P) -> P {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dist_sq(a: P, b: P) -> f64 {
    let d = sub(a, b);
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

fn centroid(pts: &[P]) -> P {
    let n = pts.len() as f64;
    let mut c = [0.0; 3];
    for p in pts {
        for k in 0..3 {
            c[k] += p[k];
        }
    }
    [c[0] / n, c[1] / n, c[2] / n]
}

/// Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi
/// rotations. Returns eigenvalues and eigenvectors (as columns).
pub fn jacobi4(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..4)
            .flat_map(|i| (0..4).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..4).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-32 * scale {
            break;
        }
        for p in 0..3 {
            for q in p + 1..4 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

/// Rotation (row-major) and centroids from the quaternion method: the
/// optimal rotation is the unit quaternion that is the top eigenvector of
/// Horn's symmetric 4x4 matrix.
pub fn horn_fit(a: &[P], b: &[P]) -> ([[f64; 3]; 3], P, P) {
    let ca = centroid(a);
    let cb = centroid(b);
    let mut s = [[0.0; 3]; 3];
    for (pa, pb) in a.iter().zip(b) {
        let x = sub(*pa, ca);
        let y = sub(*pb, cb);
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] += x[i] * y[j];
            }
        }
    }
    let [[sxx, sxy, sxz], [syx, syy, syz], [szx, szy, szz]] = s;
    let n = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (vals, vecs) = jacobi4(n);
    let top = (0..4).max_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
    let mut q = [vecs[0][top], vecs[1][top], vecs[2][top], vecs[3][top]];
    let norm = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut q {
        *x /= norm;
    }
    let [w, x, y, z] = q;
    let r = [
        [w * w + x * x - y * y - z * z, 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
        [2.0 * (y * x + w * z), w * w - x * x + y * y - z * z, 2.0 * (y * z - w * x)],
        [2.0 * (z * x - w * y), 2.0 * (z * y + w * x), w * w - x * x - y * y + z * z],
    ];
    (r, ca, cb)
}

fn rotate(r: &[[f64; 3]; 3], p: P) -> P {
    [
        r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2],
        r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2],
        r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2],
    ]
}

/// Squared distances of every `a[i]` to `b[i]` after the given fit.
fn residuals(fit: &([[f64; 3]; 3], P, P), a: &[P], b: &[P]) -> Vec<f64> {
    let (r, ca, cb) = fit;
    a.iter()
        .zip(b)
        .map(|(pa, pb)| dist_sq(rotate(r, sub(*pa, *ca)), sub(*pb, *cb)))
        .collect()
}

/// Minimal RMSD by the quaternion method.
pub fn horn_rmsd(a: &[P], b: &[P]) -> f64 {
    let fit = horn_fit(a, b);
    let r = residuals(&fit, a, b);
    (r.iter().sum::<f64>() / r.len() as f64).sqrt()
}

/// Best per-cutoff counts over least-squares fits of every subset of at
/// least three residues. Exponential; keep `a.len()` small.
pub fn exhaustive_gdt_counts(a: &[P], b: &[P], cutoffs: &[f64; 4]) -> [usize; 4] {
    let n = a.len();
    assert!(n <= 16, "exhaustive oracle is exponential");
    let mut best = [0usize; 4];
    for mask in 1u32..(1 << n) {
        if mask.count_ones() < 3 {
            continue;
        }
        let idx: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let sa: Vec<P> = idx.iter().map(|&i| a[i]).collect();
        let sb: Vec<P> = idx.iter().map(|&i| b[i]).collect();
        let (r, ca, cb) = horn_fit(&sa, &sb);
        // apply the subset's transform to all residues
        let d = residuals(&(r, ca, cb), a, b);
        for (k, c) in cutoffs.iter().enumerate() {
            let count = d.iter().filter(|&&x| x <= c * c).count();
            best[k] = best[k].max(count);
        }
    }
    best
}

/// Q-score straight from its definition: average over all residue pairs
/// with sequence separation of at least two, then the reference scaling.
pub fn naive_q(a: &[P], b: &[P], ref_len: usize) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in 0..n {
            if i.abs_diff(j) < 2 || j < i {
                continue;
            }
            let ra = dist_sq(a[i], a[j]).sqrt();
            let rb = dist_sq(b[i], b[j]).sqrt();
            let sep = i.abs_diff(j) as f64;
            let sigma = sep.powf(0.15);
            total += (-(ra - rb).powi(2) / (2.0 * sigma * sigma)).exp();
            pairs += 1;
        }
    }
    total / pairs as f64 * n as f64 / ref_len as f64
}

/// Matched coordinate arrays of a residue match.
pub fn match_arrays(m: &ResidueMatch) -> (Vec<P>, Vec<P>) {
    (to_arrays(&m.coords_a), to_arrays(&m.coords_b))
}
