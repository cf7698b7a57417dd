//! Central finite differences over whole parameter sets.

use icafusion_core::params::Params;

use super::*;

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-3;
// Entries whose true gradient is below this are compared absolutely.
pub const FLOOR: f64 = 1e-6;

pub fn numeric_param_grad(p: &Params<f64>, mut f: impl FnMut(&Params<f64>) -> f64) -> Params<f64> {
    let mut out = p.zeros_like();
    let mut q = p.clone();
    let names: Vec<String> = p.names().cloned().collect();
    for name in names {
        let x = p.get(&name).unwrap().clone();
        let g = numeric_grad(&x, H, |t| {
            *q.get_mut(&name).unwrap() = t.clone();
            f(&q)
        });
        *q.get_mut(&name).unwrap() = x;
        *out.get_mut(&name).unwrap() = g;
    }
    out
}

pub fn params_rel_err(a: &Params<f64>, n: &Params<f64>) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, t) in a.iter() {
        let e = rel_err(t, n.get(name).unwrap(), FLOOR);
        if e > worst.0 {
            worst = (e, name.clone());
        }
    }
    worst
}
