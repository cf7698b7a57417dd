mod common;

use common::networks::*;
use common::*;
use icafusion_core::generator::{build_variant, Generator, GeneratorSpec, Variant, LEVELS};
use icafusion_core::tape::Tape;
use icafusion_core::{FusionError, Tensor};

fn tiny(variant: Variant) -> GeneratorSpec {
    build_variant(variant, &GeneratorSpec::with_widths([2, 2, 2, 2]))
}

#[test]
fn forward_matches_hand_unrolled_oracle_for_every_variant() {
    let mut instances = 0;
    for (k, &v) in Variant::ALL.iter().enumerate() {
        for rep in 0..3 {
            let seed = (k * 10 + rep) as u64;
            let g = Generator::<f64>::new(tiny(v), seed).unwrap();
            let ir = random_tensor([1, 1, 8, 12], seed + 500);
            let vis = random_tensor([1, 1, 8, 12], seed + 900);
            let got = g.forward(&ir, &vis).unwrap();
            let want = to_tensor(&generator_oracle(&g, &vol(&ir, 0), &vol(&vis, 0)));
            let d = max_abs_diff(&got, &want);
            assert!(d < 1e-10, "{v}: {d}");
            instances += 1;
        }
    }
    assert!(instances >= 20);
}

#[test]
fn interactive_outputs_have_four_times_the_width() {
    let g = Generator::<f64>::new(GeneratorSpec::with_widths([2, 3, 4, 5]), 3).unwrap();
    let st = g.encode(&random_tensor([1, 1, 8, 8], 1), &random_tensor([1, 1, 8, 8], 2)).unwrap();
    let c: Vec<_> = st.interactive.iter().map(|t| t.channels()).collect();
    assert_eq!(c, vec![8, 12, 16]);
}

#[test]
fn stride_arithmetic_at_128() {
    let g = Generator::<f32>::new(GeneratorSpec::with_widths([2, 2, 2, 2]), 0).unwrap();
    let x = Tensor::zeros([1, 1, 128, 128]);
    let st = g.encode(&x, &x).unwrap();
    let sizes: Vec<_> = st.cat.iter().map(|t| (t.height(), t.width())).collect();
    assert_eq!(sizes, vec![(128, 128), (128, 128), (64, 64), (32, 32)]);
}

#[test]
fn mirrored_paths_give_identical_features() {
    let mut g = Generator::<f64>::new(GeneratorSpec::with_widths([2, 2, 2, 2]), 4).unwrap();
    let names: Vec<String> = g.params.names().filter(|n| n.starts_with("enc.ir.")).cloned().collect();
    for n in names {
        let v = g.params.get(&n).unwrap().clone();
        *g.params.get_mut(&n.replacen("enc.ir.", "enc.vis.", 1)).unwrap() = v;
    }
    let x = random_tensor([1, 1, 8, 8], 5);
    let st = g.encode(&x, &x).unwrap();
    for l in 0..LEVELS {
        assert_eq!(st.ir[l], st.vis[l]);
    }
}

#[test]
fn fusion_layer_channels_and_ablated_branch() {
    assert_eq!(GeneratorSpec::default().fused_channels(), 384);
    let g = Generator::<f64>::new(tiny(Variant::OnlyIrCom), 8).unwrap();
    let st = g.encode(&random_tensor([1, 1, 8, 8], 1), &random_tensor([1, 1, 8, 8], 2)).unwrap();
    let fused = g.fuse_layer(&st).unwrap();
    assert_eq!(fused.channels(), 6);
    let parts = fused.split_channels(&[2, 2, 2]).unwrap();
    assert_eq!(parts[0], st.cat[3]);
    assert_ne!(parts[1], st.ir[3]);
    assert_eq!(parts[2], st.vis[3]);

    let mut zeroed = st.clone();
    for v in [&mut zeroed.ir[3], &mut zeroed.vis[3], &mut zeroed.cat[3]] {
        *v = v.map(|_| 0.0);
    }
    let full = Generator::<f64>::new(tiny(Variant::Full), 8).unwrap();
    assert!(full.fuse_layer(&zeroed).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn decode_of_fuse_layer_equals_forward() {
    let g = Generator::<f64>::new(tiny(Variant::Full), 2).unwrap();
    let (ir, vis) = (random_tensor([2, 1, 8, 8], 1), random_tensor([2, 1, 8, 8], 2));
    let st = g.encode(&ir, &vis).unwrap();
    let out = g.decode(&g.fuse_layer(&st).unwrap(), &st).unwrap();
    assert_eq!(out, g.forward(&ir, &vis).unwrap());
}

#[test]
fn variants_share_shapes_and_range() {
    let (ir, vis) = (random_tensor([2, 1, 16, 20], 1), random_tensor([2, 1, 16, 20], 2));
    for v in Variant::ALL {
        let g = Generator::<f64>::new(tiny(v), 1).unwrap();
        let out = g.forward(&ir, &vis).unwrap();
        assert_eq!(out.shape(), [2, 1, 16, 20]);
        assert!(out.data().iter().all(|x| (-1.0..=1.0).contains(x)));
        assert_eq!(out, g.forward(&ir, &vis).unwrap());
    }
}

#[test]
fn build_variant_round_trips_through_full() {
    let s = GeneratorSpec::with_widths([3, 4, 5, 6]);
    assert_eq!(build_variant(Variant::Full, &s), s);
    assert_eq!(build_variant(Variant::Full, &build_variant(Variant::OnlyChannel, &s)), s);
    let ov = build_variant(Variant::OnlyVisCom, &s);
    assert!(ov.attention.vis_compensation && !ov.attention.ir_compensation && ov.attention.interactive);
    let oi = build_variant(Variant::OnlyInteract, &s);
    assert!(!oi.attention.vis_compensation && !oi.attention.ir_compensation);
    assert!(matches!("bogus".parse::<Variant>(), Err(FusionError::Config(_))));
    let labels: Vec<_> = Variant::ALL.iter().map(|v| v.label()).collect();
    assert_eq!(
        labels,
        ["No_Attention", "Only_interact", "Only_VIS_Com", "Only_IR_Com", "Only_Channel", "Only_Spatial", "Ours"]
    );
}

#[test]
fn parameter_count_is_a_function_of_the_spec() {
    for v in Variant::ALL {
        let s = build_variant(v, &GeneratorSpec::with_widths([4, 8, 16, 32]));
        let n = s.parameter_count();
        assert!(n > 0);
        for seed in [0, 9] {
            assert_eq!(Generator::<f32>::new(s.clone(), seed).unwrap().params.scalar_count(), n);
        }
    }
    let full = GeneratorSpec::with_widths([4, 8, 16, 32]).parameter_count();
    let none = build_variant(Variant::NoAttention, &GeneratorSpec::with_widths([4, 8, 16, 32])).parameter_count();
    assert!(none < full);
}

#[test]
fn padding_contract() {
    let g = Generator::<f64>::new(tiny(Variant::Full), 0).unwrap();
    let (ir, vis) = (random_tensor([1, 1, 10, 13], 1), random_tensor([1, 1, 10, 13], 2));
    assert!(matches!(g.forward(&ir, &vis), Err(FusionError::Padding { h: 10, w: 13 })));
    let out = g.fuse(&ir, &vis).unwrap();
    assert_eq!(out.shape(), [1, 1, 10, 13]);
}

#[test]
fn every_parameter_receives_gradient() {
    for v in Variant::ALL {
        let g = Generator::<f64>::new(tiny(v), 21).unwrap();
        let (ir, vis) = (random_tensor([2, 1, 8, 8], 3), random_tensor([2, 1, 8, 8], 4));
        let mut tape = Tape::new();
        let bound = g.params.bind(&mut tape);
        let (a, b) = (tape.constant(ir), tape.constant(vis));
        let out = g.forward_var(&mut tape, &bound, a, b).unwrap();
        let seed = random_tensor(tape.value(out).shape(), 8);
        let mut grads = tape.backward(out, seed).unwrap();
        let gp = bound.gradients(&tape, &mut grads);
        for (name, t) in gp.iter() {
            assert!(t.all_finite());
            // A slope sees no gradient when all its preactivations are positive.
            if name.ends_with(".slope") {
                continue;
            }
            assert!(t.max_abs() > 0.0, "{v}: `{name}` has zero gradient");
        }
    }
}
