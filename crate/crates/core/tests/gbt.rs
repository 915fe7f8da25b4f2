use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use skilog::dataset::SuperSample;
use skilog::gbt::{
    ensemble_from_json, ensemble_to_json, fit_tree, predict_margins, train, train_with_history, TrainParams, TreeNode,
};
use skilog::Label;

/// Exact-greedy reference checker: enumerates every separating threshold of
/// every feature over the node's rows and requires the trained node to take
/// a best candidate. Gains within `TIE` of the best count as equal since
/// identical partitions reached through different features sum in different
/// orders.
const TIE: f64 = 1e-9;

fn check(node: &TreeNode, rows: &[Vec<f64>], idx: &[usize], g: &[f64], h: &[f64], p: &TrainParams, depth: usize) {
    let gs: f64 = idx.iter().map(|&i| g[i]).sum();
    let hs: f64 = idx.iter().map(|&i| h[i]).sum();
    let score = |g: f64, h: f64| g * g / (h + p.lambda);
    let mut candidates: Vec<(f64, usize, f32)> = Vec::new();
    if depth < p.max_depth {
        for f in 0..rows[0].len() {
            let mut values: Vec<f64> = idx.iter().map(|&i| rows[i][f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            for w in values.windows(2) {
                let t = ((w[0] + w[1]) / 2.0) as f32;
                if !(f64::from(t) > w[0] && f64::from(t) <= w[1]) {
                    continue;
                }
                let (mut gl, mut hl) = (0.0, 0.0);
                for &i in idx {
                    if rows[i][f] < f64::from(t) {
                        gl += g[i];
                        hl += h[i];
                    }
                }
                let (gr, hr) = (gs - gl, hs - hl);
                if hl < p.min_child_weight || hr < p.min_child_weight {
                    continue;
                }
                let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(gs, hs)) - p.gamma;
                candidates.push((gain, f, t));
            }
        }
    }
    let best = candidates.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let tie = TIE * best.abs().max(1.0);
    match node {
        TreeNode::Leaf { value } => {
            assert!(best <= tie, "depth {depth}: leaf where gain {best} was available");
            let want = (-gs / (hs + p.lambda) * p.learning_rate) as f32;
            assert!((value - want).abs() <= 1e-6 * want.abs().max(1e-6), "leaf {value} vs {want}");
        }
        TreeNode::Split { feature, threshold, left, right } => {
            let taken = candidates
                .iter()
                .find(|c| c.1 == *feature && c.2 == *threshold)
                .unwrap_or_else(|| panic!("depth {depth}: f{feature} < {threshold} is not a candidate"));
            assert!(taken.0 > -tie && taken.0 >= best - tie, "depth {depth}: gain {} vs best {best}", taken.0);
            // Among equal gains the first in scan order wins, up to ties.
            let first = candidates.iter().find(|c| c.0 >= best - tie).unwrap();
            assert!(
                (first.1, first.2) == (*feature, *threshold) || (first.0 - taken.0).abs() <= tie,
                "depth {depth}: expected f{} < {}",
                first.1,
                first.2
            );
            let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| rows[i][*feature] < f64::from(*threshold));
            check(left, rows, &l, g, h, p, depth + 1);
            check(right, rows, &r, g, h, p, depth + 1);
        }
    }
}

#[test]
fn split_search_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for case in 0..200 {
        let n = rng.random_range(5..60);
        let nf = rng.random_range(1..6);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..nf).map(|_| rng.random_range(-100.0..100.0)).collect()).collect();
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.25)).collect();
        let p = TrainParams {
            max_depth: rng.random_range(1..4),
            lambda: rng.random_range(0.0..2.0),
            gamma: rng.random_range(0.0..0.05),
            min_child_weight: rng.random_range(0.0..0.5),
            ..TrainParams::default()
        };
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let got = fit_tree(&refs, &g, &h, &p).unwrap();
        let idx: Vec<usize> = (0..n).collect();
        let result = std::panic::catch_unwind(|| check(&got, &rows, &idx, &g, &h, &p, 0));
        assert!(result.is_ok(), "case {case}: {got:?}");
    }
}

#[test]
fn duplicate_values_never_split_between_equals() {
    let rows: Vec<Vec<f64>> = [1.0, 1.0, 1.0, 2.0, 2.0, 3.0].iter().map(|&v| vec![v]).collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let g = [1.0, 1.0, 1.0, -1.0, -1.0, -1.0];
    let h = [0.25; 6];
    let p = TrainParams { max_depth: 1, min_child_weight: 0.0, ..TrainParams::default() };
    match fit_tree(&refs, &g, &h, &p).unwrap() {
        TreeNode::Split { threshold, .. } => assert_eq!(threshold, 1.5),
        leaf => panic!("expected a split, got {leaf:?}"),
    }
}

fn noisy_set(seed: u64, n: usize) -> Vec<SuperSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = Label::ALL[i % 3];
            let centre = 1000.0 + 400.0 * label.index() as f64;
            let f: Vec<f64> = (0..150).map(|_| (centre + rng.random_range(-700.0..700.0)).round()).collect();
            SuperSample::new(f, label).unwrap()
        })
        .collect()
}

#[test]
fn training_is_deterministic() {
    let set = noisy_set(3, 90);
    let p = TrainParams { n_rounds: 15, ..TrainParams::default() };
    let a = ensemble_to_json(&train(&set, &p).unwrap()).unwrap();
    let b = ensemble_to_json(&train(&set, &p).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn loss_non_increasing_on_overlapping_classes() {
    let set = noisy_set(4, 120);
    let (_, history) = train_with_history(&set, &TrainParams { n_rounds: 40, ..TrainParams::default() }).unwrap();
    for (r, w) in history.logloss.windows(2).enumerate() {
        assert!(w[1] <= w[0] + 1e-9, "round {}: {} -> {}", r + 1, w[0], w[1]);
    }
}

#[test]
fn json_round_trip_preserves_predictions() {
    let set = noisy_set(5, 60);
    let e = train(&set, &TrainParams { n_rounds: 10, ..TrainParams::default() }).unwrap();
    let back = ensemble_from_json(&ensemble_to_json(&e).unwrap()).unwrap();
    for s in &set {
        assert_eq!(predict_margins(&back, s.features()), predict_margins(&e, s.features()));
    }
}
