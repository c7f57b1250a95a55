#![allow(dead_code)]

/// Max of a unimodal function on [lo, hi] by golden-section search.
/// Points where `f` returns None count as −∞.
pub fn golden_max(mut f: impl FnMut(f64) -> Option<f64>, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut val = |x: f64| f(x).unwrap_or(f64::NEG_INFINITY);
    let mut a = hi - g * (hi - lo);
    let mut b = lo + g * (hi - lo);
    let (mut fa, mut fb) = (val(a), val(b));
    for _ in 0..300 {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + g * (hi - lo);
            fb = val(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - g * (hi - lo);
            fa = val(a);
        }
    }
    [val(lo), fa, fb, val(hi)].into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Argmin of `f` over the grid lo, lo + step, ..., hi.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let x = lo + i as f64 * step;
        let y = f(x);
        if y < best.0 {
            best = (y, x);
        }
    }
    best.1
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
