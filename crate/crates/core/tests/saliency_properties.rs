mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xattn::autograd::AttentionGradients;
use xattn::detector::{forward, random_init, AttentionRecord};
use xattn::evalharness::{perturb, Mode};
use xattn::saliency::{
    assemble, grad_cam, gradient_rollout, raw_last, raw_max, raw_mean, random_explanation, ClampOrder,
    Method, Upsample,
};
use xattn::tensor::Tensor;

use common::*;

fn instance(seed: u64) -> (AttentionRecord, AttentionGradients) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_dims(&mut rng);
    random_instance(&mut rng, d)
}

fn with_layers(seed: u64, n_layers: usize) -> (AttentionRecord, AttentionGradients) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (nc, _, nh, nq, nt) = random_dims(&mut rng);
    random_instance(&mut rng, (nc, n_layers, nh, nq, nt))
}

proptest! {
    #[test]
    fn aggregations_match_loop_oracles(seed in any::<u64>()) {
        let (rec, g) = instance(seed);
        prop_assert_eq!(raw_last(&rec).into_data(), oracle_raw_last(&rec));
        prop_assert_eq!(raw_mean(&rec).into_data(), oracle_raw_mean(&rec));
        prop_assert_eq!(raw_max(&rec).into_data(), oracle_raw_max(&rec));
        prop_assert_eq!(grad_cam(&rec, &g).unwrap().into_data(), oracle_grad_cam(&rec, &g));
    }

    #[test]
    fn rollout_matches_recurrence_oracle(seed in any::<u64>()) {
        let (rec, g) = instance(seed);
        let ours = gradient_rollout(&rec, &g).unwrap();
        for (a, b) in ours.data().iter().zip(oracle_rollout(&rec, &g)) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn every_method_is_non_negative(seed in any::<u64>()) {
        let (rec, g) = instance(seed);
        let s = rec.cross.shape().to_vec();
        let maps = [
            raw_last(&rec),
            raw_mean(&rec),
            raw_max(&rec),
            grad_cam(&rec, &g).unwrap(),
            gradient_rollout(&rec, &g).unwrap(),
            random_explanation(seed, 0.0, 1.0, s[0], s[3], s[4]).unwrap(),
        ];
        for m in &maps {
            prop_assert!(m.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn max_dominates_mean_and_last(seed in any::<u64>()) {
        let (rec, _) = instance(seed);
        let mx = raw_max(&rec);
        for other in [raw_mean(&rec), raw_last(&rec)] {
            prop_assert!(mx.data().iter().zip(other.data()).all(|(a, b)| a >= b));
        }
    }

    #[test]
    fn adding_a_layer_never_lowers_raw_max(seed in any::<u64>()) {
        let (rec, _) = instance(seed);
        let s = rec.cross.shape().to_vec();
        if s[1] < 2 {
            return Ok(());
        }
        let mut first = Vec::new();
        for c in 0..s[0] {
            for l in 0..s[1] - 1 {
                first.extend_from_slice(rec.cross.slice(&[c, l]));
            }
        }
        let fewer = AttentionRecord {
            cross: Tensor::from_vec(&[s[0], s[1] - 1, s[2], s[3], s[4]], first).unwrap(),
            self_: rec.self_.clone(),
        };
        let (more, less) = (raw_max(&rec), raw_max(&fewer));
        prop_assert!(more.data().iter().zip(less.data()).all(|(a, b)| a >= b));
    }

    #[test]
    fn single_layer_mean_equals_last(seed in any::<u64>()) {
        let (rec, _) = with_layers(seed, 1);
        prop_assert_eq!(raw_last(&rec), raw_mean(&rec));
    }

    #[test]
    fn rollout_ignores_trailing_zero_layer(seed in any::<u64>()) {
        let (rec, g) = with_layers(seed, 1);
        let s = rec.cross.shape().to_vec();
        let pad = |t: &Tensor, layer_axis: usize| {
            let shape = t.shape();
            let outer: usize = shape[..layer_axis].iter().product();
            let block: usize = shape[layer_axis + 1..].iter().product();
            let mut data = Vec::new();
            for o in 0..outer {
                data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
                data.extend(std::iter::repeat_n(0.0, block));
            }
            let mut new_shape = shape.to_vec();
            new_shape[layer_axis] = 2;
            Tensor::from_vec(&new_shape, data).unwrap()
        };
        let rec2 = AttentionRecord { cross: pad(&rec.cross, 1), self_: pad(&rec.self_, 0) };
        let g2 = AttentionGradients {
            cross_grad: pad(&g.cross_grad, 1),
            self_grad: pad(&g.self_grad, 0),
            target: g.target,
        };
        prop_assert_eq!(rec2.cross.shape(), &[s[0], 2, s[2], s[3], s[4]][..]);
        prop_assert_eq!(gradient_rollout(&rec2, &g2).unwrap(), gradient_rollout(&rec, &g).unwrap());
    }

    #[test]
    fn single_layer_raw_methods_coincide(seed in any::<u64>()) {
        let (mut rec, _) = with_layers(seed, 1);
        let s = rec.cross.shape().to_vec();
        // A single head makes the mean and the max the same reduction.
        let nc = s[0];
        let one_head: Vec<f64> = (0..nc).flat_map(|c| rec.cross.slice(&[c, 0, 0]).to_vec()).collect();
        rec.cross = Tensor::from_vec(&[nc, 1, 1, s[3], s[4]], one_head).unwrap();
        let last = raw_last(&rec);
        prop_assert_eq!(&last, &raw_mean(&rec));
        prop_assert_eq!(&last, &raw_max(&rec));
    }

    #[test]
    fn rollout_without_self_gradients_reduces_to_cross_sum(seed in any::<u64>()) {
        let (rec, mut g) = instance(seed);
        g.self_grad.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let nl = rec.n_layers();
        let cam = grad_cam(&rec, &g).unwrap();
        let roll = gradient_rollout(&rec, &g).unwrap();
        for (r, c) in roll.data().iter().zip(cam.data()) {
            prop_assert!((r - c * nl as f64).abs() <= 1e-12 * r.abs().max(1.0));
        }
    }

    #[test]
    fn clamp_orders_agree_with_one_head(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (nc, nl, _, nq, nt) = random_dims(&mut rng);
        let (rec, g) = random_instance(&mut rng, (nc, nl, 1, nq, nt));
        prop_assert_eq!(
            xattn::saliency::grad_cam_with(&rec, &g, ClampOrder::AfterHeadMean).unwrap(),
            xattn::saliency::grad_cam_with(&rec, &g, ClampOrder::BeforeHeadMean).unwrap()
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn positive_scaling_leaves_perturbation_unchanged(
        seed in 0u64..1000,
        scale in 0.01f64..100.0,
        fraction in 0.0f64..=1.0,
        negative in any::<bool>(),
    ) {
        let cfg = tiny_config();
        let w = random_init(seed, &cfg).unwrap();
        let scene = scene_for(&cfg, seed);
        let (_, rec) = forward(&w, &scene).unwrap();
        let map = assemble(Method::RawMean, &raw_mean(&rec), &[0, 1, 2, 3], &cfg, Upsample::Nearest, None).unwrap();
        let mode = if negative { Mode::Negative } else { Mode::Positive };
        prop_assert_eq!(
            perturb(&scene, &map, fraction, mode).unwrap(),
            perturb(&scene, &map.scaled(scale), fraction, mode).unwrap()
        );
    }

    #[test]
    fn masked_pixel_count_is_exact(seed in 0u64..1000, fraction in 0.0f64..=1.0) {
        let cfg = tiny_config();
        let scene = scene_for(&cfg, seed);
        let maps = random_explanation(seed, 0.0, 1.0, cfg.n_cameras, cfg.n_queries, cfg.n_tokens()).unwrap();
        let map = assemble(Method::Random, &maps, &[0, 1, 2, 3], &cfg, Upsample::Bilinear, None).unwrap();
        let out = perturb(&scene, &map, fraction, Mode::Positive).unwrap();
        let n = scene.n_cameras() * scene.height * scene.width;
        let changed = (0..scene.n_cameras())
            .flat_map(|c| (0..scene.height * scene.width).map(move |p| (c, p)))
            .filter(|&(c, p)| scene.images[c][p * 3..p * 3 + 3] != out.images[c][p * 3..p * 3 + 3])
            .count();
        prop_assert_eq!(changed, (fraction * n as f64).round() as usize);
    }
}
