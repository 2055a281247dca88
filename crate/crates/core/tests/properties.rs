mod common;

use common::{mann_whitney, margin_case};
use nsrff::eval::{cosine_distance, roc, PairScoreSet};
use nsrff::nn::Tensor;
use nsrff::rff::{hypersphere_prob, hypersphere_project, naive_softmax_prob};
use nsrff::rng::stream;
use nsrff::signal::{generate_preamble, ComplexSignal};
use nsrff::sync::{canonical_phase, rotate, ts_estimate, ts_residual, OffsetEstimate, SearchGrid};
use proptest::prelude::*;

fn phase_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

#[test]
fn naive_softmax_grows_with_norm_for_the_argmax_class() {
    let mut rng = stream(1, "prop1");
    for trial in 0..1000 {
        let (w, z, i) = margin_case(&mut rng, 2 + trial % 6, 3 + trial % 5);
        let p = naive_softmax_prob(&z, &w).unwrap()[i];
        for lambda in [1.5, 2.0, 10.0] {
            let zl: Vec<f64> = z.iter().map(|v| lambda * v).collect();
            assert!(
                naive_softmax_prob(&zl, &w).unwrap()[i] >= p,
                "trial {trial}, lambda {lambda}"
            );
            let q = hypersphere_prob(&z, &w, 16.0).unwrap();
            let ql = hypersphere_prob(&zl, &w, 16.0).unwrap();
            assert!(q.iter().zip(&ql).all(|(a, b)| (a - b).abs() <= 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hypersphere_ignores_weight_row_scale(seed in any::<u64>(), row in 0usize..4, lambda in 0.01f64..100.0) {
        let mut rng = stream(seed, "hp");
        let (w, z, _) = margin_case(&mut rng, 4, 5);
        let mut scaled = w.data().to_vec();
        scaled[row * 5..][..5].iter_mut().for_each(|v| *v *= lambda);
        let ws = Tensor::from_vec(&[4, 5], scaled).unwrap();
        let a = hypersphere_prob(&z, &w, 3.0).unwrap();
        let b = hypersphere_prob(&z, &ws, 3.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn sphere_cosine_matches_euclidean(
        a in prop::collection::vec(-5.0f64..5.0, 8),
        b in prop::collection::vec(-5.0f64..5.0, 8),
        alpha in 0.5f64..20.0,
    ) {
        prop_assume!(a.iter().any(|v| v.abs() > 1e-3) && b.iter().any(|v| v.abs() > 1e-3));
        let za = hypersphere_project(&a, alpha).unwrap();
        let zb = hypersphere_project(&b, alpha).unwrap();
        let norm: f64 = za.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - alpha).abs() <= 1e-9 * alpha);
        let d2: f64 = za.iter().zip(&zb).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!((cosine_distance(&za, &zb).unwrap() - d2 / (2.0 * alpha * alpha)).abs() <= 1e-9);
    }

    #[test]
    fn auc_equals_pair_counting(seed in any::<u64>(), n_intra in 1usize..60, n_inter in 1usize..60, levels in 2u32..40) {
        use rand::Rng as _;
        let mut rng = stream(seed, "auc");
        // A coarse grid of values forces ties.
        let mut draw = |n: usize, shift: f64| -> Vec<f64> {
            (0..n).map(|_| ((rng.random::<f64>() + shift).min(1.0) * levels as f64).floor() / levels as f64 * 2.0).collect()
        };
        let s = PairScoreSet { intra: draw(n_intra, 0.0), inter: draw(n_inter, 0.2) };
        let r = roc(&s).unwrap();
        prop_assert!((r.auc - mann_whitney(&s.intra, &s.inter)).abs() <= 1e-12);
        for w in r.tpr.windows(2).chain(r.fpr.windows(2)) {
            prop_assert!(w[0] <= w[1]);
        }
        for w in r.thresholds.windows(2) {
            prop_assert!(w[0] < w[1]);
        }
    }

    #[test]
    fn rotation_preserves_magnitudes_and_is_linear(
        freq in -0.01f64..0.01, phase in -2.0f64..2.0, c in -3.0f64..3.0,
    ) {
        let x = generate_preamble(2, 3).unwrap();
        let y = rotate(&x, 0.002, 0.1);
        let combo = ComplexSignal::new(x.samples.iter().zip(&y.samples).map(|(a, b)| a * c + b).collect(), 1.0);
        let lhs = rotate(&combo, freq, phase);
        let (rx, ry) = (rotate(&x, freq, phase), rotate(&y, freq, phase));
        for t in 0..x.len() {
            prop_assert!((lhs.samples[t] - (rx.samples[t] * c + ry.samples[t])).norm() <= 1e-12);
            prop_assert!((rx.samples[t].norm() - x.samples[t].norm()).abs() <= 1e-12);
        }
    }

    #[test]
    fn ts_estimate_is_equivariant(
        w in -0.004f64..0.004, p in 0.0f64..1.0, dw in -0.004f64..0.004, dp in -1.0f64..1.0,
    ) {
        let x = generate_preamble(8, 5).unwrap();
        let r = rotate(&x, -w, -p);
        let grid = SearchGrid::default();
        let base = ts_estimate(&r, &x, grid).unwrap();
        let moved = ts_estimate(&rotate(&r, -dw, -dp), &x, grid).unwrap();
        prop_assert!((moved.freq_cycles_per_sample - (base.freq_cycles_per_sample + dw)).abs() <= 1e-7);
        prop_assert!(phase_gap(moved.phase_cycles, base.phase_cycles + dp) <= 1e-4);
    }
}

#[test]
fn residual_at_truth_is_minimal_over_the_grid() {
    let x = generate_preamble(8, 5).unwrap();
    let truth = OffsetEstimate {
        freq_cycles_per_sample: 0.0013,
        phase_cycles: 0.62,
    };
    let r = rotate(&x, -truth.freq_cycles_per_sample, -truth.phase_cycles);
    let at_truth = ts_residual(&r, &x, &truth).unwrap();
    let grid = SearchGrid::default();
    for k in (0..grid.points).step_by(7) {
        let f = -grid.max_freq + 2.0 * grid.max_freq * k as f64 / (grid.points - 1) as f64;
        for ph in [0.0, 0.25, 0.62, 0.9] {
            let e = OffsetEstimate {
                freq_cycles_per_sample: f,
                phase_cycles: canonical_phase(ph),
            };
            assert!(ts_residual(&r, &x, &e).unwrap() >= at_truth);
        }
    }
}
