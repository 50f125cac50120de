use bbs_core::matcher::{match_cached, match_naive, Algorithm, MatcherConfig};
use bbs_core::{bbs_score, distance_matrix, FeatureGrid, Measure, PointSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::{oracle_bbs, oracle_distance};

fn random_set(rng: &mut ChaCha8Rng, n: usize, dim: usize, coarse: bool) -> PointSet {
    let value = |rng: &mut ChaCha8Rng| {
        if coarse {
            rng.random_range(0..4) as f64 * 0.5
        } else {
            rng.random::<f64>()
        }
    };
    let locations = (0..n).map(|_| [value(rng), value(rng)]).collect();
    let appearance = (0..n * dim).map(|_| value(rng)).collect();
    PointSet::new(dim, locations, appearance).unwrap()
}

#[test]
fn bbs_matches_definitional_oracle() {
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_p = rng.random_range(1..=10);
        let n_q = rng.random_range(1..=10);
        let dim = rng.random_range(1..=3);
        // coarse values force distance ties on half of the seeds
        let coarse = seed % 2 == 0;
        let p = random_set(&mut rng, n_p, dim, coarse);
        let q = random_set(&mut rng, n_q, dim, coarse);
        for (measure, similarity) in [(Measure::color(0.25), false), (Measure::similarity(1.0), true)] {
            let got = bbs_score(&distance_matrix(&p, &q, &measure).unwrap());
            let want = oracle_bbs(&p, &q, similarity, measure.lambda);
            assert_eq!(got, want, "seed {seed}, similarity {similarity}");
        }
    }
}

#[test]
fn distance_matrix_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let p = random_set(&mut rng, 7, 3, false);
    let q = random_set(&mut rng, 5, 3, false);
    let m = Measure::color(0.25);
    let d = distance_matrix(&p, &q, &m).unwrap();
    for i in 0..7 {
        for j in 0..5 {
            let want = oracle_distance((p.appearance(i), p.location(i)), (q.appearance(j), q.location(j)), false, 0.25);
            assert!((d.get(i, j) - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> FeatureGrid {
    FeatureGrid::new(h, w, 3, (0..w * h * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
}

#[test]
fn planted_template_is_found() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let image = random_image(&mut rng, 40, 36);
    let template = image.crop(12, 9, 12, 9).unwrap();
    for algorithm in [Algorithm::Naive, Algorithm::Cached] {
        let cfg = MatcherConfig::color(3).with_algorithm(algorithm);
        let map = bbs_core::matcher::match_template(&template, &image, &cfg).unwrap();
        let (r, c) = map.argmax();
        assert_eq!(map.origin(r, c), (12, 9));
        assert_eq!(map.get(r, c), 1.0);
    }
}

fn points(values: Vec<f64>, dim: usize) -> PointSet {
    PointSet::from_appearance(dim, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_in_unit_interval_and_positive(
        a in prop::collection::vec(-5.0f64..5.0, 1..12),
        b in prop::collection::vec(-5.0f64..5.0, 1..12),
    ) {
        let d = distance_matrix(&points(a, 1), &points(b, 1), &Measure::default()).unwrap();
        let s = bbs_score(&d);
        prop_assert!(s > 0.0 && s <= 1.0);
    }

    #[test]
    fn score_is_symmetric(
        a in prop::collection::vec(0u8..6, 1..10),
        b in prop::collection::vec(0u8..6, 1..10),
    ) {
        let p = points(a.iter().map(|&v| v as f64).collect(), 1);
        let q = points(b.iter().map(|&v| v as f64).collect(), 1);
        let m = Measure::default();
        prop_assert_eq!(
            bbs_score(&distance_matrix(&p, &q, &m).unwrap()),
            bbs_score(&distance_matrix(&q, &p, &m).unwrap())
        );
    }

    #[test]
    fn self_score_is_one_for_distinct_points(mut a in prop::collection::vec(-100i32..100, 1..15)) {
        a.sort();
        a.dedup();
        let p = points(a.iter().map(|&v| v as f64).collect(), 1);
        prop_assert_eq!(bbs_score(&distance_matrix(&p, &p, &Measure::default()).unwrap()), 1.0);
    }

    #[test]
    fn cached_equals_naive(
        seed in 0u64..1000,
        k in 1usize..4,
        stride in 1usize..4,
        lambda_idx in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = rng.random_range(8..20);
        let h = rng.random_range(8..20);
        let image = random_image(&mut rng, w, h);
        let tw = rng.random_range(k..=w.min(8));
        let th = rng.random_range(k..=h.min(8));
        let template = random_image(&mut rng, tw, th);
        let cfg = MatcherConfig::color(k)
            .with_stride(stride)
            .with_measure(Measure::color([0.0, 0.25][lambda_idx]));
        let a = match_naive(&template, &image, &cfg).unwrap();
        let b = match_cached(&template, &image, &cfg).unwrap();
        prop_assert_eq!(a.scores, b.scores);
    }
}
