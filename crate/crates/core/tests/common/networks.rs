//! Hand-unrolled generator and critic forward passes.

use icafusion_core::discriminator::Critic;
use icafusion_core::generator::{Generator, LEVELS, STRIDES};
use icafusion_core::params::Params;

use super::*;

pub fn layer(p: &Params<f64>, name: &str, x: &Vol, stride: usize, act: bool) -> Vol {
    let y = conv(
        x,
        p.get(&format!("{name}.weight")).unwrap(),
        Some(p.get(&format!("{name}.bias")).unwrap()),
        stride,
        1,
    );
    if act {
        let a = scalar(p, &format!("{name}.slope"));
        map(&y, |v| prelu(v, a))
    } else {
        y
    }
}

/// Hand-unrolled generator forward for one image pair.
pub fn generator_oracle(g: &Generator<f64>, ir: &Vol, vis: &Vol) -> Vol {
    let p = &g.params;
    let t = g.spec.attention;
    let st = Stages {
        channel: t.stages.channel,
        spatial: t.stages.spatial,
    };
    let comp = |path: &str, on: bool, lv: usize, x: &Vol| -> Vol {
        if on {
            compensatory(x, p, &format!("ca.{path}.{lv}."), &st)
        } else {
            x.clone()
        }
    };

    let mut f_ir = Vec::new();
    let mut f_vis = Vec::new();
    let mut x_cat = cat(&[ir, vis]);
    let (mut x_ir, mut x_vis) = (ir.clone(), vis.clone());
    let mut c4 = Vec::new();
    for l in 0..LEVELS {
        let lv = l + 1;
        x_ir = layer(p, &format!("enc.ir.{lv}"), &x_ir, STRIDES[l], true);
        x_vis = layer(p, &format!("enc.vis.{lv}"), &x_vis, STRIDES[l], true);
        let c = layer(p, &format!("enc.cat.{lv}"), &x_cat, STRIDES[l], true);
        f_ir.push(x_ir.clone());
        f_vis.push(x_vis.clone());
        if l < 3 {
            let m = cat(&[&x_ir, &c]);
            let n = cat(&[&x_vis, &c]);
            x_cat = if t.interactive {
                interactive(&m, &n, p, &format!("ia.{lv}.m."), &format!("ia.{lv}.n."), &st)
            } else {
                cat(&[&m, &n])
            };
        } else {
            c4 = c;
        }
    }
    let mut x = cat(&[
        &c4,
        &comp("ir", t.ir_compensation, 4, &f_ir[3]),
        &comp("vis", t.vis_compensation, 4, &f_vis[3]),
    ]);
    for (i, lv) in [(1, 3), (2, 2)] {
        let y = upsample(&layer(p, &format!("dec.{i}"), &x, 1, true));
        x = cat(&[
            &y,
            &comp("ir", t.ir_compensation, lv, &f_ir[lv - 1]),
            &comp("vis", t.vis_compensation, lv, &f_vis[lv - 1]),
        ]);
    }
    let y = layer(p, "dec.3", &x, 1, true);
    map(&layer(p, "dec.4", &y, 1, false), f64::tanh)
}

pub fn critic_oracle(c: &Critic<f64>, x: &Vol) -> f64 {
    let p = &c.params;
    let mut a = x.clone();
    for l in 1..=4 {
        let z = conv(
            &a,
            p.get(&format!("conv.{l}.weight")).unwrap(),
            Some(p.get(&format!("conv.{l}.bias")).unwrap()),
            2,
            1,
        );
        a = map(&z, |v| if v > 0.0 { v } else { 0.2 * v });
    }
    let w = p.get("fc.weight").unwrap().data();
    let mut s = p.get("fc.bias").unwrap().data()[0];
    let mut k = 0;
    for plane in &a {
        for row in plane {
            for &v in row {
                s += w[k] * v;
                k += 1;
            }
        }
    }
    assert_eq!(k, w.len());
    s
}
