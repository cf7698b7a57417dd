mod common;

use common::*;
use icafusion_core::attention::{
    channel_gate, compensatory_attention, dueling_softmax, interactive_attention, spatial_gate,
    AttentionParams, AttentionShape, InteractiveOptions, Stages,
};
use icafusion_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn params(c: usize, seed: u64) -> AttentionParams<f64> {
    AttentionParams::init(AttentionShape::new(c), Stages::default(), &mut rng(seed))
}

/// Random parameters with larger spread so gates are far from 0.5.
fn spread_params(c: usize, seed: u64) -> AttentionParams<f64> {
    let mut p = params(c, seed);
    let mut r = rng(seed ^ 0xabc);
    p.params = p
        .params
        .map_values(|t| Tensor::from_fn(t.shape(), |_| r.random::<f64>() * 3.0 - 1.5));
    p
}

#[test]
fn channel_gate_matches_loop_oracle() {
    for seed in 0..25 {
        let f = random_tensor([1, 4, 6, 6], seed);
        let p = spread_params(4, seed + 100);
        let got = channel_gate(&f, &p).unwrap();
        let want = common::channel_gate(&vol(&f, 0), &p.params, "");
        assert_eq!(got.shape(), [1, 4, 1, 1]);
        for (g, w) in got.data().iter().zip(&want) {
            assert!((g - w).abs() < 1e-10, "{g} vs {w}");
            assert!(*g > 0.0 && *g < 1.0);
        }
    }
}

#[test]
fn spatial_gate_matches_loop_oracle() {
    for seed in 0..25 {
        let f = random_tensor([1, 3, 5, 5], seed);
        let p = spread_params(3, seed + 7);
        let got = spatial_gate(&f, &p).unwrap();
        let want = common::spatial_gate(&vol(&f, 0), &p.params, "");
        for i in 0..5 {
            for j in 0..5 {
                assert!((got.at(0, 0, i, j) - want[i][j]).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn constant_input_gives_constant_spatial_gate() {
    // Zero padding perturbs the border, so constancy holds where the 7×7
    // window lies inside the map.
    let f = Tensor::full([1, 3, 13, 13], 0.7);
    let g = spatial_gate(&f, &params(3, 4)).unwrap();
    let c = g.at(0, 0, 6, 6);
    for i in 3..10 {
        for j in 3..10 {
            assert!((g.at(0, 0, i, j) - c).abs() < 1e-15);
        }
    }
    let zero = AttentionParams::zeros(AttentionShape::new(3), Stages::default());
    assert!(spatial_gate(&f, &zero).unwrap().data().iter().all(|&v| v == 0.5));
}

#[test]
fn softmax_examples() {
    let a = Tensor::from_vec([1, 1, 1, 2], vec![2f64.ln(), 0.3]).unwrap();
    let b = Tensor::from_vec([1, 1, 1, 2], vec![0.0, 0.3]).unwrap();
    let (wa, wb) = dueling_softmax(&a, &b).unwrap();
    assert!((wa.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((wb.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!((wa.data()[1], wb.data()[1]), (0.5, 0.5));

    let mut r = rng(3);
    let a = Tensor::from_fn([1, 2, 3, 3], |_| r.random::<f64>());
    let b = Tensor::from_fn([1, 2, 3, 3], |_| r.random::<f64>());
    let (wa, wb) = dueling_softmax(&a, &b).unwrap();
    for i in 0..a.len() {
        let (x, y) = softmax2(a.data()[i], b.data()[i]);
        assert!((wa.data()[i] - x).abs() < 1e-12 && (wb.data()[i] - y).abs() < 1e-12);
    }
    let c = Tensor::<f64>::zeros([1, 1, 2, 2]);
    assert!(dueling_softmax(&a, &c).is_err());
}

#[test]
fn interactive_matches_composed_oracle() {
    for seed in 0..25 {
        let m = random_tensor([1, 4, 6, 6], seed);
        let n = random_tensor([1, 4, 6, 6], seed + 1000);
        let pm = spread_params(4, seed + 1);
        let pn = spread_params(4, seed + 2);
        let got = interactive_attention(&m, &n, &pm, &pn, InteractiveOptions::default()).unwrap();
        let mut both = icafusion_core::params::Params::new();
        both.extend_prefixed("m", &pm.params);
        both.extend_prefixed("n", &pn.params);
        let want = to_tensor(&interactive(&vol(&m, 0), &vol(&n, 0), &both, "m.", "n.", &ALL_STAGES));
        assert_eq!(got.shape(), [1, 8, 6, 6]);
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}

#[test]
fn compensatory_matches_oracle() {
    for seed in 0..25 {
        let x = random_tensor([1, 4, 6, 6], seed);
        let p = spread_params(4, seed + 50);
        let got = compensatory_attention(&x, &p).unwrap();
        let want = to_tensor(&compensatory(&vol(&x, 0), &p.params, "", &ALL_STAGES));
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}

#[test]
fn zero_parameters_and_zero_input() {
    let z = AttentionParams::zeros(AttentionShape::new(4), Stages::default());
    let x = random_tensor([1, 4, 6, 6], 9);
    let out = compensatory_attention(&x, &z).unwrap();
    assert!(max_abs_diff(&out, &x.scale(0.25)) < 1e-15);
    let p = params(4, 1);
    let zero = Tensor::zeros([1, 4, 6, 6]);
    assert!(compensatory_attention(&zero, &p).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn identical_paths_are_quartered() {
    let x = random_tensor([1, 4, 6, 6], 5);
    let p = params(4, 6);
    let out = interactive_attention(&x, &x, &p, &p, InteractiveOptions::default()).unwrap();
    let q = x.scale(0.25);
    let want = Tensor::concat_channels(&[&q, &q]).unwrap();
    assert!(max_abs_diff(&out, &want) < 1e-15);
}

#[test]
fn literal_second_path_changes_only_the_second_half() {
    let m = random_tensor([1, 4, 6, 6], 11);
    let n = random_tensor([1, 4, 6, 6], 12);
    let (pm, pn) = (spread_params(4, 1), spread_params(4, 2));
    let fixed = interactive_attention(&m, &n, &pm, &pn, InteractiveOptions::default()).unwrap();
    let lit = interactive_attention(
        &m,
        &n,
        &pm,
        &pn,
        InteractiveOptions {
            literal_second_path: true,
        },
    )
    .unwrap();
    let a = fixed.split_channels(&[4, 4]).unwrap();
    let b = lit.split_channels(&[4, 4]).unwrap();
    assert_eq!(a[0], b[0]);
    assert!(max_abs_diff(&a[1], &b[1]) > 1e-6);
}

#[test]
fn channel_mismatch_is_a_dimension_error() {
    let p = params(4, 0);
    let f = random_tensor([1, 3, 6, 6], 0);
    assert!(matches!(
        channel_gate(&f, &p),
        Err(icafusion_core::FusionError::Dimension(_))
    ));
    let g = random_tensor([1, 4, 5, 6], 0);
    let h = random_tensor([1, 4, 6, 6], 0);
    assert!(interactive_attention(&g, &h, &p, &p, InteractiveOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gates_are_complementary_bounded_and_swap_equivariant(seed in any::<u64>(), scale in 0.1f64..4.0) {
        let m = random_tensor([1, 4, 6, 6], seed).scale(scale);
        let n = random_tensor([1, 4, 6, 6], seed.wrapping_add(1));
        let pm = spread_params(4, seed.wrapping_add(2));
        let pn = spread_params(4, seed.wrapping_add(3));

        let (am, an) = (channel_gate(&m, &pm).unwrap(), channel_gate(&n, &pn).unwrap());
        let (bm, bn) = dueling_softmax(&am, &an).unwrap();
        for i in 0..bm.len() {
            prop_assert!((bm.data()[i] + bn.data()[i] - 1.0).abs() < 1e-12);
            prop_assert!(bm.data()[i] > 0.0 && bm.data()[i] < 1.0);
        }
        let (sm, sn) = (spatial_gate(&m, &pm).unwrap(), spatial_gate(&n, &pn).unwrap());
        let (tm, tn) = dueling_softmax(&sm, &sn).unwrap();
        for i in 0..tm.len() {
            prop_assert!((tm.data()[i] + tn.data()[i] - 1.0).abs() < 1e-12);
        }

        let opts = InteractiveOptions::default();
        let ab = interactive_attention(&m, &n, &pm, &pn, opts).unwrap();
        let ba = interactive_attention(&n, &m, &pn, &pm, opts).unwrap();
        prop_assert_eq!(ab.channels(), 8);
        let x = ab.split_channels(&[4, 4]).unwrap();
        let y = ba.split_channels(&[4, 4]).unwrap();
        prop_assert_eq!(&x[0], &y[1]);
        prop_assert_eq!(&x[1], &y[0]);

        let c = compensatory_attention(&m, &pm).unwrap();
        prop_assert_eq!(c.shape(), m.shape());
    }

    #[test]
    fn single_precision_complementarity(seed in any::<u64>()) {
        let m: Tensor<f32> = random_tensor([1, 4, 6, 6], seed).scale(3.0).cast();
        let n: Tensor<f32> = random_tensor([1, 4, 6, 6], seed ^ 1).cast();
        let (bm, bn) = dueling_softmax(&m, &n).unwrap();
        for i in 0..bm.len() {
            prop_assert!((bm.data()[i] + bn.data()[i] - 1.0).abs() < 1e-6);
        }
    }
}
