mod common;

use common::networks::*;
use common::*;
use icafusion_core::discriminator::{Critic, CriticFn, CriticSpec};
use icafusion_core::{FusionError, Tensor};

fn tiny_spec(size: usize) -> CriticSpec {
    CriticSpec {
        widths: [2, 2, 2, 2],
        ..CriticSpec::for_input(size, size)
    }
}

#[test]
fn forward_matches_hand_unrolled_oracle() {
    for seed in 0..20 {
        let c = Critic::<f64>::new(tiny_spec(16), seed).unwrap();
        let x = random_tensor([3, 1, 16, 16], seed + 40);
        let s = c.scores(&x).unwrap();
        for (n, &got) in s.iter().enumerate() {
            let want = critic_oracle(&c, &vol(&x, n));
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        }
    }
}

#[test]
fn default_critic_reaches_8x8x128() {
    let s = CriticSpec::default();
    assert_eq!(s.feature_sizes()[3], [8, 8]);
    assert_eq!(s.fc_inputs(), 8 * 8 * 128);
}

#[test]
fn zero_critic_scores_zero_and_purity() {
    let z = Critic::<f64>::zeroed(tiny_spec(16)).unwrap();
    assert!(z.scores(&random_tensor([2, 1, 16, 16], 1)).unwrap().iter().all(|&s| s == 0.0));
    let c = Critic::<f64>::new(tiny_spec(16), 3).unwrap();
    let x = random_tensor([1, 1, 16, 16], 2);
    let both = Tensor::stack(&[x.clone(), x.clone()]).unwrap();
    let s = c.scores(&both).unwrap();
    assert_eq!(s[0], s[1]);
}

#[test]
fn wrong_input_size_is_rejected() {
    let c = Critic::<f64>::new(tiny_spec(16), 0).unwrap();
    assert!(matches!(
        c.scores(&random_tensor([1, 1, 32, 32], 0)),
        Err(FusionError::Dimension(_))
    ));
    assert!(CriticSpec::for_input(8, 8).validate().is_err());
}

#[test]
fn two_critics_never_share_parameters() {
    let a = Critic::<f32>::new(CriticSpec::for_input(64, 64), 1).unwrap();
    let b = Critic::<f32>::new(CriticSpec::for_input(64, 64), 2).unwrap();
    assert_eq!(a.spec, b.spec);
    assert_ne!(a.params, b.params);
}

#[test]
fn input_gradients_are_finite_and_match_differences() {
    let c = Critic::<f64>::new(tiny_spec(16), 5).unwrap();
    let x = random_tensor([1, 1, 16, 16], 6);
    let g = c.input_gradients(&x).unwrap();
    assert!(g.all_finite());
    let num = numeric_grad(&x, 1e-5, |t| c.scores(t).unwrap()[0]);
    assert!(rel_err(&g, &num, 1e-6) < 1e-3);
}
