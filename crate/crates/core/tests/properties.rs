//! Property tests for the structural invariants of the model and bound
//! layers.

use proptest::prelude::*;

use regime_iter_core::bounds::annuity;
use regime_iter_core::ctmc::{sample_switch_path, switch_tail_probability};
use regime_iter_core::model::{jump_distribution, validate_generator};
use regime_iter_core::rng::substream;
use regime_iter_core::semianalytic::blend;
use regime_iter_core::{GbmRegimeModel, GeneratorMatrix, RegimeIndex};

/// Random valid generator: nonnegative off-diagonal rates, diagonal set to
/// the negated row sum.
fn generator_strategy(max_p: usize) -> impl Strategy<Value = GeneratorMatrix> {
    (2..=max_p)
        .prop_flat_map(|p| {
            proptest::collection::vec(proptest::collection::vec(0.0..5.0_f64, p), p)
                .prop_map(move |mut rows| {
                    for (i, row) in rows.iter_mut().enumerate() {
                        row[i] = 0.0;
                        let total: f64 = row.iter().sum();
                        row[i] = -total;
                    }
                    GeneratorMatrix::constant(rows).unwrap()
                })
        })
}

proptest! {
    #[test]
    fn scaled_generators_keep_the_q_property(
        q in generator_strategy(5),
        gamma in 0.0..=1.0_f64,
    ) {
        let scaled = q.scaled(gamma).unwrap();
        let report = validate_generator(&scaled, &[]);
        prop_assert!(report.passed(), "{report}");
    }

    #[test]
    fn jump_distributions_are_probability_vectors(
        q in generator_strategy(5),
        row in 0..5_usize,
    ) {
        let p = q.regimes();
        let i = RegimeIndex::from_zero_based(row % p);
        match jump_distribution(&q, i, 0.0) {
            Err(_) => {} // absorbing row
            Ok(probs) => {
                prop_assert_eq!(probs.len(), p);
                prop_assert_eq!(probs[i.zero_based()], 0.0);
                for &v in &probs {
                    prop_assert!(v >= 0.0);
                }
                let total: f64 = probs.iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12, "sum {}", total);
            }
        }
    }

    #[test]
    fn switch_tail_probability_is_monotone(
        c in 0.0..5.0_f64,
        delta in 0.0..2.0_f64,
        m in 0..30_usize,
    ) {
        let here = switch_tail_probability(c, delta, m);
        prop_assert!((0.0..=1.0).contains(&here));
        prop_assert!(switch_tail_probability(c, delta, m + 1) >= here - 1e-15);
        prop_assert!(switch_tail_probability(c + 0.5, delta, m) <= here + 1e-15);
        prop_assert!(switch_tail_probability(c, delta + 0.5, m) <= here + 1e-15);
    }

    #[test]
    fn annuity_is_bounded_by_the_duration(
        rate in 0.0..1.0_f64,
        delta in 0.0..30.0_f64,
    ) {
        let value = annuity(rate, delta);
        prop_assert!(value >= 0.0);
        prop_assert!(value <= delta + 1e-12);
        // decreasing in the rate
        prop_assert!(annuity(rate + 0.1, delta) <= value + 1e-12);
    }

    #[test]
    fn sampled_paths_satisfy_the_switch_path_invariants(
        seed in 0..10_000_u64,
        rate in 0.1..4.0_f64,
    ) {
        let q = GeneratorMatrix::constant(vec![
            vec![-rate, rate * 0.75, rate * 0.25],
            vec![rate, -2.0 * rate, rate],
            vec![0.5 * rate, 0.5 * rate, -rate],
        ]).unwrap();
        let mut rng = substream(seed, 0);
        let path = sample_switch_path(&q, RegimeIndex::from_zero_based(0), 0.25, 1.75, &mut rng);
        let mut prev_time = 0.25;
        let mut prev_regime = RegimeIndex::from_zero_based(0);
        for e in path.events() {
            prop_assert!(e.time > prev_time && e.time <= 1.75);
            prop_assert!(e.to != prev_regime);
            prop_assert!((1..=3).contains(&e.to.get()));
            prev_time = e.time;
            prev_regime = e.to;
        }
    }

    #[test]
    fn blended_parameters_stay_inside_the_regime_ranges(
        d1 in 1e-6..1.0_f64,
        d2 in 1e-6..1.0_f64,
        d3 in 1e-6..1.0_f64,
    ) {
        let q = GeneratorMatrix::constant(vec![
            vec![-1.0, 0.5, 0.5],
            vec![0.5, -1.0, 0.5],
            vec![0.5, 0.5, -1.0],
        ]).unwrap();
        let model = GbmRegimeModel::new(
            q,
            vec![0.01, 0.05, 0.09],
            vec![0.1, 0.2, 0.3],
            vec![0.0, 0.01, 0.02],
        ).unwrap();
        let legs = [
            (RegimeIndex::from_zero_based(0), d1),
            (RegimeIndex::from_zero_based(1), d2),
            (RegimeIndex::from_zero_based(2), d3),
        ];
        let params = blend(&model, &legs);
        prop_assert!(params.rate >= 0.01 - 1e-12 && params.rate <= 0.09 + 1e-12);
        prop_assert!(params.variance >= 0.01 - 1e-12 && params.variance <= 0.09 + 1e-12);
        prop_assert!(params.adjustment >= 0.0 && params.adjustment <= 0.02 + 1e-12);
    }
}
