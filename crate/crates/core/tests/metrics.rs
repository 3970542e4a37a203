use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rationale::metrics::*;

/// Confusion-matrix oracle written against plain index loops.
fn brute_f1(pred: &[Vec<bool>], gold: &[Vec<bool>]) -> f64 {
    let mut cm = [[0u32; 2]; 2];
    for i in 0..pred.len() {
        for j in 0..pred[i].len() {
            cm[pred[i][j] as usize][gold[i][j] as usize] += 1;
        }
    }
    let (tp, fp, fn_) = (cm[1][1] as f64, cm[1][0] as f64, cm[0][1] as f64);
    if tp + fp + fn_ == 0.0 {
        return 1.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

fn brute_rp(ranking: &[usize], gold: &BTreeSet<usize>) -> f64 {
    let k = gold.len();
    let mut hits = 0;
    for (pos, r) in ranking.iter().enumerate() {
        if pos < k && gold.iter().any(|g| g == r) {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

fn random_set(rng: &mut ChaCha8Rng, n: usize) -> BTreeSet<usize> {
    (0..n).filter(|_| rng.gen_bool(0.4)).collect()
}

#[test]
fn micro_f1_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let cases = rng.gen_range(1..6);
        let labels = rng.gen_range(1..5);
        let draw = |rng: &mut ChaCha8Rng| -> Vec<Vec<bool>> {
            (0..cases).map(|_| (0..labels).map(|_| rng.gen_bool(0.4)).collect()).collect()
        };
        let (p, g) = (draw(&mut rng), draw(&mut rng));
        assert_eq!(micro_f1(&p, &g), brute_f1(&p, &g));
    }
}

#[test]
fn rationale_f1_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let n = rng.gen_range(1..10);
        let (p, g) = (random_set(&mut rng, n), random_set(&mut rng, n));
        let pv: Vec<bool> = (0..n).map(|i| p.contains(&i)).collect();
        let gv: Vec<bool> = (0..n).map(|i| g.contains(&i)).collect();
        assert_eq!(rationale_f1(&p, &g), brute_f1(&[pv], &[gv]));
    }
}

#[test]
fn mean_r_precision_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let cases = rng.gen_range(1..5);
        let mut rankings = Vec::new();
        let mut golds = Vec::new();
        for _ in 0..cases {
            let n = rng.gen_range(1..10);
            let mut r: Vec<usize> = random_set(&mut rng, n).into_iter().collect();
            r.shuffle(&mut rng);
            rankings.push(r);
            golds.push(random_set(&mut rng, n));
        }
        let scored: Vec<f64> = rankings
            .iter()
            .zip(&golds)
            .filter(|(_, g)| !g.is_empty())
            .map(|(r, g)| brute_rp(r, g))
            .collect();
        let expect = if scored.is_empty() {
            None
        } else {
            Some(scored.iter().sum::<f64>() / scored.len() as f64)
        };
        assert_eq!(mean_r_precision(&rankings, &golds), expect);
    }
}

#[test]
fn f1_examples() {
    assert_eq!(micro_f1(&[vec![true, false]], &[vec![true, false]]), 1.0);
    assert_eq!(micro_f1(&[vec![true, false]], &[vec![false, true]]), 0.0);
    assert_eq!(micro_f1(&[vec![true, true, false]], &[vec![true, false, false]]), 2.0 / 3.0);
    let s = |v: &[usize]| v.iter().copied().collect::<BTreeSet<_>>();
    assert_eq!(rationale_f1(&s(&[0, 4]), &s(&[0, 4])), 1.0);
    assert_eq!(rationale_f1(&s(&[1, 2]), &s(&[2, 3])), 0.5);
    assert_eq!(rationale_f1(&s(&[]), &s(&[1])), 0.0);
    assert_eq!(rationale_f1(&s(&[]), &s(&[])), 1.0);
}

#[test]
fn faithfulness_examples() {
    assert_eq!(sufficiency(&[vec![0.9, 0.4]], &[vec![0.9, 0.4]]), 0.0);
    assert!((sufficiency(&[vec![0.9]], &[vec![0.8]]) - 0.1).abs() < 1e-12);
    assert!((comprehensiveness_metric(&[vec![0.9], vec![0.8]], &[vec![0.5], vec![0.6]]) - 0.3).abs() < 1e-12);
    // a case without positive labels contributes nothing
    assert!((sufficiency(&[vec![], vec![0.9]], &[vec![], vec![0.8]]) - 0.1).abs() < 1e-12);
}

#[test]
fn r_precision_examples() {
    let gold: BTreeSet<usize> = [1, 3].into();
    assert_eq!(r_precision(&[3, 5, 1], &gold), Some(0.5));
    assert_eq!(r_precision(&[1, 3, 0], &gold), Some(1.0));
    // under-selection is penalized: one hit out of k = 2
    assert_eq!(r_precision(&[3], &gold), Some(0.5));
    assert_eq!(r_precision(&[3], &BTreeSet::new()), None);
}

#[test]
fn ranking_uses_selected_paragraphs_by_score() {
    let soft = [0.9, 0.7, 0.2, 0.7, 0.95];
    let mask = [1.0, 1.0, 0.0, 1.0, 0.0];
    assert_eq!(rank_selected(&soft, &mask), vec![0, 1, 3]);
}

#[test]
fn aggregate_examples() {
    let a = aggregate_runs(&[0.5]).unwrap();
    assert_eq!((a.mean, a.std, a.n_runs), (0.5, 0.0, 1));
    let a = aggregate_runs(&[0.4, 0.6]).unwrap();
    assert!((a.mean - 0.5).abs() < 1e-12 && (a.std - 0.1).abs() < 1e-12);
    assert_eq!(aggregate_runs(&[0.3; 5]).unwrap().std, 0.0);
    assert!(aggregate_runs(&[]).is_err());
}

proptest! {
    #[test]
    fn r_precision_ignores_order_below_k(
        ranking in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
        gold in prop::collection::btree_set(0usize..12, 1..6),
        seed in 0u64..1000,
    ) {
        let k = gold.len();
        let mut permuted = ranking.clone();
        permuted[k..].shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(r_precision(&ranking, &gold), r_precision(&permuted, &gold));
    }

    #[test]
    fn identical_probabilities_have_no_drop(p in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..4), 0..6)) {
        prop_assert_eq!(sufficiency(&p, &p), 0.0);
        prop_assert_eq!(comprehensiveness_metric(&p, &p), 0.0);
    }

    #[test]
    fn f1_is_bounded(
        p in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 3), 1..6),
        g in prop::collection::vec(prop::collection::vec(prop::bool::ANY, 3), 1..6),
    ) {
        let n = p.len().min(g.len());
        let f = micro_f1(&p[..n], &g[..n]);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(micro_f1(&g[..n], &g[..n]), 1.0);
    }
}
