mod common;

use modelcmp::measures::{gdt_counts, GDT_CUTOFFS};
use modelcmp::{
    compare_pair, gdt_ts, kabsch_superpose, match_residues, q_score, synth, tm_score, ComparisonMode, Coord,
    MeasureSet, ScaleMode, StructureModel,
};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn noisy_pair(rng: &mut StdRng, len: usize, sigma: f64) -> (Vec<Coord>, Vec<Coord>) {
    let a = synth::random_chain(rng, len);
    let noisy = synth::perturb(rng, &a, sigma);
    let b = synth::random_motion(rng, &noisy);
    (a, b)
}

#[test]
fn jacobi_diagonalises() {
    let m = [
        [4.0, 1.0, -2.0, 2.0],
        [1.0, 2.0, 0.0, 1.0],
        [-2.0, 0.0, 3.0, -2.0],
        [2.0, 1.0, -2.0, -1.0],
    ];
    let (vals, v) = common::jacobi4(m);
    for k in 0..4 {
        for i in 0..4 {
            let mv: f64 = (0..4).map(|j| m[i][j] * v[j][k]).sum();
            assert!((mv - vals[k] * v[i][k]).abs() < 1e-10);
        }
    }
    let trace: f64 = vals.iter().sum();
    assert!((trace - 8.0).abs() < 1e-10);
}

#[test]
fn rmsd_agrees_with_quaternion_method() {
    let mut rng = StdRng::seed_from_u64(11);
    for _ in 0..300 {
        let len = rng.random_range(5..=50);
        let sigma = rng.random_range(0.1..6.0);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let ours = kabsch_superpose(&a, &b).rmsd;
        let oracle = common::horn_rmsd(&common::to_arrays(&a), &common::to_arrays(&b));
        assert!((ours - oracle).abs() < 1e-9, "len {len}: {ours} vs {oracle}");
    }
}

#[test]
fn rmsd_of_unrelated_point_clouds() {
    // no shared shape at all: exercises reflections and flat spectra
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..200 {
        let len = rng.random_range(5..=30);
        let a: Vec<Coord> = (0..len)
            .map(|_| Coord::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let b: Vec<Coord> = (0..len)
            .map(|_| Coord::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)))
            .collect();
        let ours = kabsch_superpose(&a, &b).rmsd;
        let oracle = common::horn_rmsd(&common::to_arrays(&a), &common::to_arrays(&b));
        assert!((ours - oracle).abs() < 1e-9);
    }
}

#[test]
fn gdt_counts_bounded_by_exhaustive_search() {
    let mut rng = StdRng::seed_from_u64(13);
    for _ in 0..60 {
        let len = rng.random_range(3..=10);
        let sigma = rng.random_range(0.3..5.0);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let ma = synth::model_from_coords("a", &a, 1);
        let mb = synth::model_from_coords("b", &b, 1);
        let m = match_residues(&ma, &mb).unwrap();
        let ours = gdt_counts(&m).unwrap();
        let (pa, pb) = common::match_arrays(&m);
        let oracle = common::exhaustive_gdt_counts(&pa, &pb, &GDT_CUTOFFS);
        for k in 0..4 {
            assert!(ours[k] <= oracle[k], "cutoff {}: {} > {}", GDT_CUTOFFS[k], ours[k], oracle[k]);
            assert!(oracle[k] - ours[k] <= 1, "cutoff {}: {} vs {}", GDT_CUTOFFS[k], ours[k], oracle[k]);
        }
    }
}

#[test]
fn gdt_ts_on_rigid_copy_with_outliers() {
    // 12 residues superpose exactly; 3 are displaced by 1.5, 3 and 6 A
    let mut rng = StdRng::seed_from_u64(14);
    let a = synth::random_chain(&mut rng, 15);
    let mut b = a.clone();
    b[4].x += 1.5;
    b[9].y += 3.0;
    b[13].z += 6.0;
    let b = synth::random_motion(&mut rng, &b);
    let m = match_residues(&synth::model_from_coords("a", &a, 1), &synth::model_from_coords("b", &b, 1)).unwrap();
    // the 12 untouched residues superpose exactly, so every cutoff holds at
    // least 12, and the outliers sit within 2, 4 and 8 A of that fit
    let ours = gdt_counts(&m).unwrap();
    let (pa, pb) = common::match_arrays(&m);
    let oracle = common::exhaustive_gdt_counts(&pa, &pb, &GDT_CUTOFFS);
    for k in 0..4 {
        assert!(ours[k] >= [12, 13, 14, 15][k]);
        assert!(ours[k] <= oracle[k]);
    }
    assert_eq!(ours[3], 15);
    let expected = 100.0 * ours.iter().sum::<usize>() as f64 / 60.0;
    assert!((gdt_ts(&m, 15).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn q_score_matches_definition() {
    let mut rng = StdRng::seed_from_u64(15);
    for _ in 0..50 {
        let len = rng.random_range(3..=60);
        let sigma = rng.random_range(0.0..4.0);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let m = match_residues(&synth::model_from_coords("a", &a, 1), &synth::model_from_coords("b", &b, 1)).unwrap();
        let ref_len = len + rng.random_range(0..10);
        let (pa, pb) = common::match_arrays(&m);
        let ours = q_score(&m, ref_len).unwrap();
        let oracle = common::naive_q(&pa, &pb, ref_len);
        assert!((ours - oracle).abs() < 1e-12, "{ours} vs {oracle}");
    }
}

#[test]
fn tm_score_never_beats_best_subset_fit() {
    let mut rng = StdRng::seed_from_u64(16);
    for _ in 0..30 {
        let len = rng.random_range(3..=9);
        let sigma = rng.random_range(0.5..4.0);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let m = match_residues(&synth::model_from_coords("a", &a, 1), &synth::model_from_coords("b", &b, 1)).unwrap();
        let ours = tm_score(&m, len).unwrap();
        let (pa, pb) = common::match_arrays(&m);
        let d0 = modelcmp::measures::tm_d0(len);
        let mut best = 0.0f64;
        for mask in 1u32..(1 << len) {
            if mask.count_ones() < 3 {
                continue;
            }
            let idx: Vec<usize> = (0..len).filter(|i| mask & (1 << i) != 0).collect();
            let sa: Vec<_> = idx.iter().map(|&i| pa[i]).collect();
            let sb: Vec<_> = idx.iter().map(|&i| pb[i]).collect();
            let (r, ca, cb) = common::horn_fit(&sa, &sb);
            let mut s = 0.0;
            for (x, y) in pa.iter().zip(&pb) {
                let d: Vec<f64> = (0..3).map(|k| x[k] - ca[k]).collect();
                let rx: Vec<f64> = (0..3).map(|i| (0..3).map(|j| r[i][j] * d[j]).sum()).collect();
                let dist_sq: f64 = (0..3).map(|k| (rx[k] - (y[k] - cb[k])).powi(2)).sum();
                s += 1.0 / (1.0 + dist_sq / (d0 * d0));
            }
            best = best.max(s / len as f64);
        }
        assert!(ours <= best + 1e-12, "{ours} > {best}");
        assert!(ours >= best - 0.1, "{ours} far below {best}");
    }
}

#[test]
fn median_tm_falls_with_noise() {
    let mut rng = StdRng::seed_from_u64(17);
    let native = synth::random_chain(&mut rng, 60);
    let target = chain_model("t", &native, 1);
    let mut last = f64::INFINITY;
    for sigma in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let mut scores: Vec<f64> = (0..20)
            .map(|_| {
                let noisy = synth::perturb(&mut rng, &native, sigma);
                let m = chain_model("m", &noisy, 1);
                compare_pair(&target, &m, MeasureSet::all(), ScaleMode::MatchLength, ComparisonMode::OneVsAll, 60)
                    .unwrap()
                    .tm_score
                    .unwrap()
            })
            .collect();
        scores.sort_by(f64::total_cmp);
        let median = (scores[9] + scores[10]) / 2.0;
        assert!(median <= last, "sigma {sigma}: median {median} rose above {last}");
        last = median;
    }
}

fn chain_model(name: &str, coords: &[Coord], first: i32) -> StructureModel {
    synth::model_from_coords(name, coords, first)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn scores_ignore_rigid_motion(seed in any::<u64>(), len in 4usize..40, sigma in 0.0f64..4.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let moved = synth::random_motion(&mut rng, &b);
        let all = MeasureSet::all();
        let x = compare_pair(&chain_model("a", &a, 1), &chain_model("b", &b, 1), all, ScaleMode::MatchLength, ComparisonMode::AllVsAll, len).unwrap();
        let y = compare_pair(&chain_model("a", &a, 1), &chain_model("b", &moved, 1), all, ScaleMode::MatchLength, ComparisonMode::AllVsAll, len).unwrap();
        prop_assert!((x.rmsd.unwrap() - y.rmsd.unwrap()).abs() < 1e-9);
        prop_assert!((x.q_score.unwrap() - y.q_score.unwrap()).abs() < 1e-12);
        // GDT counts can flip on a residue sitting exactly at a cutoff
        prop_assert!((x.gdt_ts.unwrap() - y.gdt_ts.unwrap()).abs() <= 100.0 / len as f64 + 1e-9);
        prop_assert!((x.tm_score.unwrap() - y.tm_score.unwrap()).abs() < 0.05);
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>(), len in 3usize..40, sigma in 0.0f64..8.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let v = compare_pair(&chain_model("a", &a, 1), &chain_model("b", &b, 1), MeasureSet::all(), ScaleMode::MatchLength, ComparisonMode::AllVsAll, len).unwrap();
        prop_assert!(v.rmsd.unwrap() >= 0.0);
        prop_assert!((0.0..=100.0 + 1e-9).contains(&v.gdt_ts.unwrap()));
        let tm = v.tm_score.unwrap();
        prop_assert!(tm > 0.0 && tm <= 1.0 + 1e-12);
        let q = v.q_score.unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&q));
    }

    #[test]
    fn all_vs_all_scores_are_symmetric(seed in any::<u64>(), len in 3usize..30, sigma in 0.0f64..5.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        let (ma, mb) = (chain_model("a", &a, 1), chain_model("b", &b, 1));
        let all = MeasureSet::all();
        let x = compare_pair(&ma, &mb, all, ScaleMode::MatchLength, ComparisonMode::AllVsAll, len).unwrap();
        let y = compare_pair(&mb, &ma, all, ScaleMode::MatchLength, ComparisonMode::AllVsAll, len).unwrap();
        prop_assert!((x.rmsd.unwrap() - y.rmsd.unwrap()).abs() < 1e-9);
        prop_assert!((x.gdt_ts.unwrap() - y.gdt_ts.unwrap()).abs() < 1e-9);
        prop_assert!((x.tm_score.unwrap() - y.tm_score.unwrap()).abs() < 1e-9);
        prop_assert!((x.q_score.unwrap() - y.q_score.unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rmsd_is_symmetric(seed in any::<u64>(), len in 3usize..40, sigma in 0.0f64..5.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        prop_assert!((kabsch_superpose(&a, &b).rmsd - kabsch_superpose(&b, &a).rmsd).abs() < 1e-9);
    }

    #[test]
    fn total_length_scales_match_length(seed in any::<u64>(), len in 12usize..50, cut in 0usize..8, mode_nn in any::<bool>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let sigma = rng.random_range(0.3..4.0);
        let (a, b) = noisy_pair(&mut rng, len, sigma);
        // model b lacks `cut` residues at its N-terminus
        let ma = chain_model("a", &a, 1);
        let mb = chain_model("b", &b[cut..], 1 + cut as i32);
        let mode = if mode_nn { ComparisonMode::AllVsAll } else { ComparisonMode::OneVsAll };
        let all = MeasureSet::all();
        let m = compare_pair(&ma, &mb, all, ScaleMode::MatchLength, mode, len).unwrap();
        let t = compare_pair(&ma, &mb, all, ScaleMode::TotalLength, mode, len).unwrap();
        let ratio = m.matched_len as f64 / t.ref_len as f64;
        prop_assert_eq!(m.matched_len, len - cut);
        prop_assert!((t.gdt_ts.unwrap() - m.gdt_ts.unwrap() * ratio).abs() < 1e-12);
        prop_assert!((t.tm_score.unwrap() - m.tm_score.unwrap() * ratio).abs() < 1e-12);
        prop_assert!((t.q_score.unwrap() - m.q_score.unwrap() * ratio).abs() < 1e-12);
        prop_assert_eq!(t.rmsd, m.rmsd);
    }
}
