use std::time::Instant;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rground_core::annotation::{synth_scenes, AffordanceTable, SynthConfig};
use rground_core::grounding::{
    decode, decode_with_attention, featurize_scene, fit_box, ground, relevance_scores, select_queries, top_k_indices, GroundingHead,
    HeadConfig, LocEmbedding,
};
use rground_core::Box3D;

fn sort_oracle(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[test]
fn top_k_equals_full_sort_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let scene = &synth_scenes(1, 81, &AffordanceTable::builtin(), &SynthConfig::default())[0];
    let fs = featurize_scene(scene, 32, 81).unwrap();
    for trial in 0..1000 {
        let n = rng.random_range(1..400);
        // every fourth vector is coarsely quantized to force ties
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let x: f64 = rng.random_range(-3.0..3.0);
                if trial % 4 == 0 {
                    x.round()
                } else {
                    x
                }
            })
            .collect();
        let k = rng.random_range(0..n + 5);
        assert_eq!(top_k_indices(&scores, k), sort_oracle(&scores, k.min(n)));
        let m = fs.len();
        let row_scores: Vec<f64> = (0..m).map(|i| scores[i % n]).collect();
        let kq = k.max(1);
        let q = select_queries(&row_scores, &fs, kq).unwrap();
        assert_eq!(q.indices, sort_oracle(&row_scores, kq.min(m)));
        for (row, &i) in q.indices.iter().enumerate() {
            assert_eq!(q.positions[row], fs.positions[i]);
            assert_eq!(q.features.row(row), fs.features.row(i));
        }
    }
}

fn setup(d: usize, seed: u64) -> (rground_core::grounding::SceneFeatures, GroundingHead, LocEmbedding) {
    let scene = &synth_scenes(1, seed, &AffordanceTable::builtin(), &SynthConfig::default())[0];
    let fs = featurize_scene(scene, d, seed).unwrap();
    let head = GroundingHead::random(
        HeadConfig {
            k_queries: 16,
            ..HeadConfig::new(d)
        },
        seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = LocEmbedding::new(DVector::from_iterator(d, (0..d).map(|_| rng.random_range(-1.0..1.0)))).unwrap();
    (fs, head, h)
}

#[test]
fn decode_ignores_scene_row_order() {
    for seed in 0..10 {
        let (fs, head, h) = setup(32, seed);
        let scores = relevance_scores(&fs, &h, &head).unwrap();
        let q = select_queries(&scores, &fs, 16).unwrap();
        let base = decode(&q, &h, &fs, &head).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut perm: Vec<usize> = (0..fs.len()).collect();
        perm.shuffle(&mut rng);
        let moved = decode(&q, &h, &fs.permuted(&perm), &head).unwrap();
        assert!((base - moved).abs().max() < 1e-9);
    }
}

#[test]
fn decode_is_query_equivariant_and_grounding_is_row_invariant() {
    let (fs, head, h) = setup(32, 3);
    let scores = relevance_scores(&fs, &h, &head).unwrap();
    let q = select_queries(&scores, &fs, 16).unwrap();
    let base = decode(&q, &h, &fs, &head).unwrap();
    let perm: Vec<usize> = (0..q.len()).rev().collect();
    let swapped = decode(&q.permuted(&perm), &h, &fs, &head).unwrap();
    for (row, &i) in perm.iter().enumerate() {
        assert!((swapped.row(row) - base.row(i)).abs().max() < 1e-9);
    }
    let a = ground(&fs, &h, &head).unwrap();
    let mut rev: Vec<usize> = (0..fs.len()).collect();
    rev.reverse();
    let b = ground(&fs.permuted(&rev), &h, &head).unwrap();
    assert_eq!(a.len(), b.len());
}

#[test]
fn attention_rows_sum_to_one() {
    for seed in 0..10 {
        let (fs, head, h) = setup(64, seed);
        let scores = relevance_scores(&fs, &h, &head).unwrap();
        let q = select_queries(&scores, &fs, 16).unwrap();
        let dec = decode_with_attention(&q, &h, &fs, &head).unwrap();
        assert_eq!(dec.attention.len(), head.config.layers);
        for a in &dec.attention {
            assert_eq!(a.ncols(), fs.len());
            for r in a.row_iter() {
                assert!((r.sum() - 1.0).abs() < 1e-12);
                assert!(r.iter().all(|&x| x >= 0.0));
            }
        }
    }
}

#[test]
fn fit_reaches_target_from_unit_offset() {
    let target = Box3D::axis_aligned([0.0; 3], [1.0; 3]).unwrap();
    let start = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
    let t0 = Instant::now();
    let fit = fit_box(&start, &target, 500, 0.05).unwrap();
    assert!(t0.elapsed().as_secs_f64() < 5.0);
    assert!(fit.first_step_reaching(0.95).is_some_and(|s| s <= 500));
    assert_eq!(fit.losses.len(), 501);
    assert!(fit.final_loss() < fit.losses[0]);
}
