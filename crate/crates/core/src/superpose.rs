//! Least-squares rigid superposition (Kabsch) and RMSD.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::align_match::ResidueMatch;
use crate::error::{Error, Result};
use crate::model_io::Coord;

/// Proper rotation followed by a translation: `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Coord) -> Coord {
        self.rotation * p + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuperpositionResult {
    /// Maps the first coordinate set onto the second.
    pub transform: RigidTransform,
    pub rmsd: f64,
}

/// Optimal transform moving `a[i]` onto `b[i]` for the selected indices.
///
/// Centres both sets, builds the cross-covariance, and takes its SVD; the
/// smallest singular direction is flipped when needed so the result is
/// always a proper rotation.
pub(crate) fn fit<I>(a: &[Coord], b: &[Coord], indices: I) -> RigidTransform
where
    I: Iterator<Item = usize> + Clone,
{
    let mut ca = Vector3::zeros();
    let mut cb = Vector3::zeros();
    let mut n = 0usize;
    for i in indices.clone() {
        ca += a[i];
        cb += b[i];
        n += 1;
    }
    debug_assert!(n > 0);
    ca /= n as f64;
    cb /= n as f64;

    let mut h = Matrix3::zeros();
    for i in indices {
        h += (a[i] - ca) * (b[i] - cb).transpose();
    }

    let svd = h.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return translation_only(ca, cb),
    };
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let mut correction = Matrix3::identity();
    if d < 0.0 {
        let s = &svd.singular_values;
        let smallest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).unwrap_or(2);
        correction[(smallest, smallest)] = -1.0;
    }
    let rotation = v * correction * u.transpose();
    RigidTransform {
        rotation,
        translation: cb - rotation * ca,
    }
}

fn translation_only(ca: Vector3<f64>, cb: Vector3<f64>) -> RigidTransform {
    RigidTransform {
        rotation: Matrix3::identity(),
        translation: cb - ca,
    }
}

fn rmsd_after<I>(t: &RigidTransform, a: &[Coord], b: &[Coord], indices: I) -> f64
where
    I: Iterator<Item = usize>,
{
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in indices {
        sum += (t.apply(&a[i]) - b[i]).norm_squared();
        n += 1;
    }
    (sum / n as f64).sqrt()
}

/// Superposes `coords_a` onto `coords_b` minimising RMSD.
///
/// Panics if the slices differ in length or are empty.
pub fn kabsch_superpose(coords_a: &[Coord], coords_b: &[Coord]) -> SuperpositionResult {
    assert_eq!(coords_a.len(), coords_b.len(), "coordinate sets differ in length");
    assert!(!coords_a.is_empty(), "cannot superpose empty coordinate sets");
    let n = coords_a.len();
    let transform = fit(coords_a, coords_b, 0..n);
    SuperpositionResult {
        transform,
        rmsd: rmsd_after(&transform, coords_a, coords_b, 0..n),
    }
}

/// Fits only `subset` of the matched residues. The transform is meant to be
/// reused on all residues; `rmsd` covers the subset alone.
pub fn rmsd_on_subset(m: &ResidueMatch, subset: &[usize]) -> Result<SuperpositionResult> {
    let len = m.matched_len();
    if let Some(&index) = subset.iter().find(|&&i| i >= len) {
        return Err(Error::Index { index, len });
    }
    if subset.is_empty() {
        return Err(Error::Invalid("empty subset".into()));
    }
    let transform = fit(&m.coords_a, &m.coords_b, subset.iter().copied());
    Ok(SuperpositionResult {
        transform,
        rmsd: rmsd_after(&transform, &m.coords_a, &m.coords_b, subset.iter().copied()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_points(rng: &mut StdRng, n: usize) -> Vec<Coord> {
        (0..n)
            .map(|_| {
                Coord::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect()
    }

    fn random_rotation(rng: &mut StdRng) -> Matrix3<f64> {
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1)).into_inner()
    }

    fn assert_proper(r: &Matrix3<f64>) {
        assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
        assert!((r.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identity_case() {
        let mut rng = StdRng::seed_from_u64(1);
        let a = random_points(&mut rng, 12);
        let res = kabsch_superpose(&a, &a);
        assert!(res.rmsd < 1e-9);
        assert!((res.transform.rotation - Matrix3::identity()).abs().max() < 1e-9);
        assert!(res.transform.translation.norm() < 1e-9);
    }

    #[test]
    fn congruent_sets() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_points(&mut rng, 9);
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let b: Vec<Coord> = a.iter().map(|p| rz * p + Vector3::new(5.0, 0.0, 0.0)).collect();
        let res = kabsch_superpose(&a, &b);
        assert!(res.rmsd < 1e-9);
        assert!((res.transform.rotation - rz.into_inner()).abs().max() < 1e-9);
        assert_proper(&res.transform.rotation);
    }

    #[test]
    fn reflection_is_not_allowed() {
        let mut rng = StdRng::seed_from_u64(3);
        let a = random_points(&mut rng, 10);
        let b: Vec<Coord> = a.iter().map(|p| Coord::new(p.x, p.y, -p.z)).collect();
        let res = kabsch_superpose(&a, &b);
        assert_proper(&res.transform.rotation);
        assert!(res.rmsd > 1e-3);
    }

    #[test]
    fn degenerate_inputs() {
        let one = [Coord::new(1.0, 2.0, 3.0)];
        let other = [Coord::new(-4.0, 0.5, 9.0)];
        let r = kabsch_superpose(&one, &other);
        assert!(r.rmsd < 1e-12);
        assert_proper(&r.transform.rotation);

        let two_a = [Coord::new(0.0, 0.0, 0.0), Coord::new(3.8, 0.0, 0.0)];
        let two_b = [Coord::new(1.0, 1.0, 1.0), Coord::new(1.0, 4.8, 1.0)];
        let r = kabsch_superpose(&two_a, &two_b);
        assert!(r.rmsd < 1e-9);
        assert_proper(&r.transform.rotation);

        let line_a: Vec<Coord> = (0..6).map(|i| Coord::new(i as f64, 0.0, 0.0)).collect();
        let line_b: Vec<Coord> = (0..6).map(|i| Coord::new(0.0, 2.0 * i as f64, 0.0)).collect();
        let r = kabsch_superpose(&line_a, &line_b);
        assert_proper(&r.transform.rotation);
        assert!(r.rmsd.is_finite());

        let same: Vec<Coord> = vec![Coord::new(2.0, 2.0, 2.0); 4];
        let r = kabsch_superpose(&same, &same);
        assert!(r.rmsd < 1e-12);
    }

    #[test]
    fn properties_on_random_sets() {
        let mut rng = StdRng::seed_from_u64(4);
        for _ in 0..200 {
            let n = rng.random_range(3..30);
            let a = random_points(&mut rng, n);
            let b = random_points(&mut rng, n);
            let ab = kabsch_superpose(&a, &b);
            let ba = kabsch_superpose(&b, &a);
            assert_proper(&ab.transform.rotation);
            assert!((ab.rmsd - ba.rmsd).abs() < 1e-9);

            let r = random_rotation(&mut rng);
            let a_rot: Vec<Coord> = a.iter().map(|p| r * p).collect();
            assert!((kabsch_superpose(&a_rot, &b).rmsd - ab.rmsd).abs() < 1e-9);
        }
    }

    #[test]
    fn no_random_transform_beats_the_fit() {
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_points(&mut rng, 15);
        let b: Vec<Coord> = a
            .iter()
            .map(|p| p + Coord::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.3))
            .collect();
        let best = kabsch_superpose(&a, &b);
        for _ in 0..1000 {
            let t = RigidTransform {
                rotation: random_rotation(&mut rng),
                translation: Vector3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                ),
            };
            let rmsd = rmsd_after(&t, &a, &b, 0..a.len());
            assert!(rmsd >= best.rmsd - 1e-9);
        }
        // perturbations of the optimum cannot beat it either
        for _ in 0..1000 {
            let small = Rotation3::from_euler_angles(
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
                rng.random_range(-0.01..0.01),
            );
            let t = RigidTransform {
                rotation: small.into_inner() * best.transform.rotation,
                translation: best.transform.translation
                    + Vector3::new(rng.random_range(-0.01..0.01), 0.0, 0.0),
            };
            assert!(rmsd_after(&t, &a, &b, 0..a.len()) >= best.rmsd - 1e-9);
        }
    }

    fn match_of(a: Vec<Coord>, b: Vec<Coord>) -> ResidueMatch {
        let n = a.len();
        ResidueMatch {
            keys: (0..n as i32)
                .map(|i| crate::model_io::ResidueKey::new('A', i, ' '))
                .collect(),
            coords_a: a,
            coords_b: b,
            len_a: n,
            len_b: n,
            name_mismatches: vec![],
        }
    }

    #[test]
    fn subset_reductions_and_errors() {
        let mut rng = StdRng::seed_from_u64(6);
        let a = random_points(&mut rng, 8);
        let b = random_points(&mut rng, 8);
        let m = match_of(a.clone(), b.clone());
        let all: Vec<usize> = (0..8).collect();
        let sub = rmsd_on_subset(&m, &all).unwrap();
        let full = kabsch_superpose(&a, &b);
        assert!((sub.rmsd - full.rmsd).abs() < 1e-12);
        assert!((sub.transform.rotation - full.transform.rotation).abs().max() < 1e-12);

        assert_eq!(
            rmsd_on_subset(&m, &[0, 8]).unwrap_err(),
            Error::Index { index: 8, len: 8 }
        );
        assert!(rmsd_on_subset(&m, &[3]).unwrap().rmsd < 1e-12);
        // two points: the segments are laid along one line, centred
        let gap = ((a[3] - a[5]).norm() - (b[3] - b[5]).norm()).abs() / 2.0;
        assert!((rmsd_on_subset(&m, &[3, 5]).unwrap().rmsd - gap).abs() < 1e-9);
    }

    #[test]
    fn subset_fit_applied_to_the_rest() {
        // first three points are congruent to their partners under a
        // 90 degree turn about x plus a shift; the other three are displaced
        // by hand-chosen offsets after that same motion
        let a = vec![
            Coord::new(0.0, 0.0, 0.0),
            Coord::new(3.0, 0.0, 0.0),
            Coord::new(0.0, 4.0, 0.0),
            Coord::new(1.0, 1.0, 1.0),
            Coord::new(2.0, -1.0, 3.0),
            Coord::new(-2.0, 2.0, -1.0),
        ];
        // R_x(90): (x, y, z) -> (x, -z, y); shift (1, 2, 3)
        let moved = |p: &Coord| Coord::new(p.x + 1.0, -p.z + 2.0, p.y + 3.0);
        let offsets = [
            Coord::zeros(),
            Coord::zeros(),
            Coord::zeros(),
            Coord::new(0.5, 0.0, 0.0),
            Coord::new(0.0, 3.0, 4.0),
            Coord::new(1.0, 2.0, 2.0),
        ];
        let b: Vec<Coord> = a.iter().zip(&offsets).map(|(p, o)| moved(p) + o).collect();
        let m = match_of(a.clone(), b.clone());
        let res = rmsd_on_subset(&m, &[0, 1, 2]).unwrap();
        assert!(res.rmsd < 1e-9);
        let expected = [0.0, 0.0, 0.0, 0.5, 5.0, 3.0];
        for (i, want) in expected.iter().enumerate() {
            let d = (res.transform.apply(&a[i]) - b[i]).norm();
            assert!((d - want).abs() < 1e-9, "point {i}: {d} vs {want}");
        }
    }
}
