use proptest::prelude::*;
use windgrid::baselines::{Aggregator, Knn, KnnConfig, Metric};

/// Full sort of every training row by `(distance, index)`.
fn oracle(x: &[f64], y: &[f64], dim: usize, cfg: KnnConfig, q: &[f64]) -> f64 {
    let mut all: Vec<(f64, usize)> = x
        .chunks(dim)
        .enumerate()
        .map(|(i, row)| {
            let d = match cfg.metric {
                Metric::Euclidean => row.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
                Metric::Manhattan => row.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
            };
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let top = &all[..cfg.k];
    match cfg.aggregator {
        Aggregator::Mean => top.iter().map(|&(_, i)| y[i]).sum::<f64>() / cfg.k as f64,
        Aggregator::DistanceWeighted => {
            let zero: Vec<f64> = top.iter().filter(|t| t.0 == 0.0).map(|&(_, i)| y[i]).collect();
            if !zero.is_empty() {
                return zero.iter().sum::<f64>() / zero.len() as f64;
            }
            let dist = |d: f64| if cfg.metric == Metric::Euclidean { d.sqrt() } else { d };
            let num: f64 = top.iter().map(|&(d, i)| (1.0 / dist(d)) * y[i]).sum();
            let den: f64 = top.iter().map(|&(d, _)| 1.0 / dist(d)).sum();
            num / den
        }
    }
}

fn instance() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<f64>, usize, bool, bool)> {
    (1usize..=32, 1usize..=500).prop_flat_map(|(dim, n)| {
        (
            Just(dim),
            // Coarse values so exact distance ties occur.
            prop::collection::vec((-3i8..=3).prop_map(f64::from), n * dim),
            prop::collection::vec(-10.0f64..10.0, n),
            prop::collection::vec((-3i8..=3).prop_map(f64::from), dim),
            1..=n,
            any::<bool>(),
            any::<bool>(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_exhaustive_search((dim, x, y, q, k, manhattan, weighted) in instance()) {
        let cfg = KnnConfig {
            k,
            metric: if manhattan { Metric::Manhattan } else { Metric::Euclidean },
            aggregator: if weighted { Aggregator::DistanceWeighted } else { Aggregator::Mean },
        };
        let m = Knn::fit(&x, &y, dim, cfg).unwrap();
        prop_assert_eq!(m.predict(&q).to_bits(), oracle(&x, &y, dim, cfg, &q).to_bits());
    }
}

#[test]
fn k_equal_to_n_is_the_label_mean() {
    let x = [0.3, 9.0, -4.0, 2.5];
    let y = [1.0, 2.0, 3.0, 6.0];
    let m = Knn::fit(&x, &y, 1, KnnConfig { k: 4, ..Default::default() }).unwrap();
    for q in [-100.0, 0.0, 7.7] {
        assert_eq!(m.predict(&[q]), 3.0);
    }
}
