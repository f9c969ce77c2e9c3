//! Synthetic CA traces for benchmarks and tests.

use nalgebra::{Rotation3, Unit, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::model_io::{CaAtom, Coord, ResidueKey, StructureModel};

const CA_CA: f64 = 3.8;

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Chain-like random walk with 3.8 Å steps that never folds straight back.
pub fn random_chain<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<Coord> {
    let mut out = Vec::with_capacity(n);
    let mut pos = Coord::zeros();
    let mut dir = random_unit(rng);
    for _ in 0..n {
        out.push(pos);
        let mut next = random_unit(rng);
        // keep the virtual bond angle wider than ~80 degrees
        while next.dot(&dir) < -0.2 {
            next = random_unit(rng);
        }
        dir = (dir + next).normalize();
        pos += dir * CA_CA;
    }
    out
}

/// Adds isotropic Gaussian noise of standard deviation `sigma` (Å).
pub fn perturb<R: Rng + ?Sized>(rng: &mut R, coords: &[Coord], sigma: f64) -> Vec<Coord> {
    if sigma <= 0.0 {
        return coords.to_vec();
    }
    let noise = Normal::new(0.0, sigma).expect("finite sigma");
    coords
        .iter()
        .map(|p| p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng)))
        .collect()
}

/// Applies a random proper rotation and a translation of up to 20 Å.
pub fn random_motion<R: Rng + ?Sized>(rng: &mut R, coords: &[Coord]) -> Vec<Coord> {
    let axis = Unit::new_normalize(random_unit(rng));
    let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
    let shift = random_unit(rng) * rng.random_range(0.0..20.0);
    coords.iter().map(|p| rot * p + shift).collect()
}

/// Wraps coordinates as a chain-A model numbered from `first_seq`.
pub fn model_from_coords(name: &str, coords: &[Coord], first_seq: i32) -> StructureModel {
    let atoms = coords
        .iter()
        .enumerate()
        .map(|(i, p)| CaAtom {
            key: ResidueKey::new('A', first_seq + i as i32, ' '),
            residue_name: "ALA".to_string(),
            pos: *p,
        })
        .collect();
    StructureModel::new(name, atoms).expect("synthetic coordinates are finite and unique")
}

/// A target chain plus `count` decoys of it, each perturbed by a noise level
/// drawn from `[0.5, max_sigma]` and moved rigidly. The target comes first.
pub fn decoy_set<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    len: usize,
    max_sigma: f64,
) -> Vec<StructureModel> {
    let native = random_chain(rng, len);
    let mut out = vec![model_from_coords("target", &native, 1)];
    for i in 0..count {
        let sigma = rng.random_range(0.5..max_sigma.max(0.51));
        let noisy = perturb(rng, &native, sigma);
        let moved = random_motion(rng, &noisy);
        out.push(model_from_coords(&format!("decoy{:04}", i + 1), &moved, 1));
    }
    out
}
