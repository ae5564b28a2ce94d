//! Randomized invariants over the numeric building blocks.

use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::Rng;

use realign::curation::{filter_above_average, quality_gap_filter, Provenance, PreferencePair,
    ReferenceSample, Scorer};
use realign::diffusion::{
    forward_diffuse, make_linear_schedule, Condition, Denoiser, EpsNet, NetSpec, Role, Sample,
    Shape,
};
use realign::rng::{normal_vec, rng_from};

/// Deterministic toy scorer: negative distance of the sample mean from zero.
struct MeanScorer;

impl Scorer for MeanScorer {
    fn score(&self, sample: &Sample, _condition: &Condition) -> realign::Result<f64> {
        Ok(-(sample.data.iter().sum::<f64>() / sample.data.len() as f64).abs())
    }
    fn name(&self) -> &str {
        "mean-proxy"
    }
}

fn vec_sample(data: Vec<f64>) -> Sample {
    let n = data.len();
    Sample::new(data, Shape::Vector(n)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_alpha_bars_decrease_in_unit_interval(
        t_count in 2usize..200,
        beta_start in 1e-5f64..0.05,
        spread in 0.0f64..0.4,
    ) {
        let beta_end = (beta_start + spread).min(0.999);
        let s = make_linear_schedule(t_count, beta_start, beta_end).unwrap();
        prop_assert_eq!(s.len(), t_count);
        for t in 0..t_count {
            prop_assert!(s.alpha_bars[t] > 0.0 && s.alpha_bars[t] < 1.0);
            if t > 0 {
                prop_assert!(s.alpha_bars[t] < s.alpha_bars[t - 1]);
            }
        }
    }

    #[test]
    fn forward_process_matches_closed_form(
        seed in 0u64..1000,
        t in 0usize..50,
        x0 in -3.0f64..3.0,
        eps in -3.0f64..3.0,
    ) {
        let s = make_linear_schedule(50, 1e-3, 0.2).unwrap();
        let xt = forward_diffuse(
            &vec_sample(vec![x0]),
            t,
            &vec_sample(vec![eps]),
            &s,
        ).unwrap();
        let abar = s.alpha_bars[t];
        assert_relative_eq!(
            xt.data[0],
            abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps,
            max_relative = 1e-12,
            epsilon = 1e-12
        );
        // The signal coefficient shrinks with t, so the same unit x0 with no
        // noise can never grow in magnitude.
        let pure = forward_diffuse(&vec_sample(vec![1.0]), t, &vec_sample(vec![0.0]), &s).unwrap();
        prop_assert!(pure.data[0] <= 1.0 && pure.data[0] > 0.0);
        let _ = seed;
    }

    #[test]
    fn adapter_attach_never_changes_predictions(
        net_seed in 0u64..500,
        adapter_seed in 0u64..500,
        rank in 1usize..4,
        t in 0usize..20,
    ) {
        let spec = NetSpec {
            data_shape: Shape::Vector(2),
            cond_dim: 0,
            time_dim: 4,
            hidden: vec![8],
        };
        let mut net = EpsNet::new(spec, &mut rng_from(net_seed));
        let x = vec_sample(normal_vec(&mut rng_from(net_seed + 7), 2));
        let before = Denoiser::from_net(net.clone(), Role::Trainable)
            .predict_eps(&x, &Condition::Null, t)
            .unwrap();
        net.attach_adapter(rank, 1.0, &mut rng_from(adapter_seed));
        let after = Denoiser::from_net(net, Role::Trainable)
            .predict_eps(&x, &Condition::Null, t)
            .unwrap();
        prop_assert_eq!(before.data, after.data);
    }

    #[test]
    fn colorfulness_filter_returns_strict_above_mean_subset(
        seed in 0u64..1000,
        n in 2usize..40,
    ) {
        let mut rng = rng_from(seed);
        let corpus: Vec<ReferenceSample> = (0..n)
            .map(|i| ReferenceSample {
                sample: vec_sample(vec![0.0]),
                condition: Condition::Null,
                source_id: format!("s-{i:03}"),
                colorfulness: Some(rng.gen_range(0.0..1.0)),
                quality: None,
            })
            .collect();
        let kept = filter_above_average(&corpus).unwrap();
        let mean = corpus.iter().map(|r| r.colorfulness.unwrap()).sum::<f64>() / n as f64;
        prop_assert!(kept.len() < corpus.len());
        prop_assert!(kept.iter().all(|r| r.colorfulness.unwrap() > mean));
        // Stable order: kept ids appear in their original relative order.
        let original: Vec<&str> = corpus.iter().map(|r| r.source_id.as_str()).collect();
        let mut cursor = 0;
        for r in &kept {
            let pos = original[cursor..]
                .iter()
                .position(|id| *id == r.source_id)
                .unwrap();
            cursor += pos + 1;
        }
    }

    #[test]
    fn gap_filter_keeps_exactly_the_pairs_above_tau(
        seed in 0u64..1000,
        n in 1usize..30,
        tau in 0.0f64..0.5,
    ) {
        let mut rng = rng_from(seed);
        let pairs: Vec<PreferencePair> = (0..n)
            .map(|i| PreferencePair {
                winner: vec_sample(vec![rng.gen_range(-1.0..1.0)]),
                loser: vec_sample(vec![rng.gen_range(-1.0..1.0)]),
                condition: Condition::Null,
                gap: 0.0,
                mask: vec_sample(vec![1.0]),
                provenance: Provenance::Inpainting,
                source_id: format!("p-{i:03}"),
            })
            .collect();
        let scorer = MeanScorer;
        let kept = quality_gap_filter(&pairs, &scorer, tau).unwrap();
        let expected: Vec<&str> = pairs
            .iter()
            .filter(|p| {
                scorer.score(&p.winner, &p.condition).unwrap()
                    - scorer.score(&p.loser, &p.condition).unwrap()
                    > tau
            })
            .map(|p| p.source_id.as_str())
            .collect();
        let got: Vec<&str> = kept.iter().map(|p| p.source_id.as_str()).collect();
        prop_assert_eq!(got, expected);
        prop_assert!(kept.iter().all(|p| p.gap > tau));
    }
}
