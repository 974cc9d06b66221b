//! Brute-force reference implementations. They restate the definitions
//! directly and share no code with the library beyond reading its
//! parameters.

use talkfield::hash_grid::{HashGridConfig, Plane, TriplaneEncoder};
use talkfield::motion::LandmarkSet;
use talkfield::nn::ParamStore;
use talkfield::train::PerceptualMetric;

/// Row of vertex `(x, y)` at a level with `res` cells per side.
pub fn vertex_row(cfg: &HashGridConfig, res: usize, x: usize, y: usize) -> usize {
    let size = 1usize << cfg.table_size_log2();
    if (res + 1) * (res + 1) <= size {
        y * (res + 1) + x
    } else {
        let h = (x as u64) ^ (y as u64).wrapping_mul(2_654_435_761);
        (h % size as u64) as usize
    }
}

pub fn level_resolution(cfg: &HashGridConfig, level: usize) -> usize {
    let mut r = cfg.base_resolution() as f64;
    for _ in 0..level {
        r *= cfg.per_level_scale();
    }
    r.floor() as usize
}

/// Gathers the four corners of the containing cell and blends them.
pub fn triplane_oracle(enc: &TriplaneEncoder, store: &ParamStore<f32>, p: [f64; 3]) -> Vec<f64> {
    let cfg = *enc.config();
    let f = cfg.features_per_entry();
    let mut out = Vec::new();
    for (plane, grid) in [Plane::XY, Plane::YZ, Plane::XZ].into_iter().zip(enc.planes()) {
        let (u, v) = match plane {
            Plane::XY => (p[0], p[1]),
            Plane::YZ => (p[1], p[2]),
            Plane::XZ => (p[0], p[2]),
        };
        for (level, &table) in grid.tables().iter().enumerate() {
            let res = level_resolution(&cfg, level);
            let data = store.get(table);
            let su = u * res as f64;
            let sv = v * res as f64;
            let ix = (su.floor() as usize).min(res - 1);
            let iy = (sv.floor() as usize).min(res - 1);
            let (fx, fy) = (su - ix as f64, sv - iy as f64);
            for k in 0..f {
                let mut acc = 0.0;
                for (dx, dy, w) in [
                    (0, 0, (1.0 - fx) * (1.0 - fy)),
                    (1, 0, fx * (1.0 - fy)),
                    (0, 1, (1.0 - fx) * fy),
                    (1, 1, fx * fy),
                ] {
                    let row = vertex_row(&cfg, res, ix + dx, iy + dy);
                    acc += w * data[row * f + k] as f64;
                }
                out.push(acc);
            }
        }
    }
    out
}

/// Pixel colour, each weight computed from an explicit product over the
/// preceding samples.
pub fn composite_oracle(sigma: &[f64], color: &[[f64; 3]], delta: &[f64], bg: [f64; 3]) -> ([f64; 3], Vec<f64>, f64) {
    let n = sigma.len();
    let trans = |i: usize| (0..i).map(|j| (-sigma[j] * delta[j]).exp()).product::<f64>();
    let mut rgb = [0.0; 3];
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        let w = trans(i) * (1.0 - (-sigma[i] * delta[i]).exp());
        weights.push(w);
        for k in 0..3 {
            rgb[k] += w * color[i][k];
        }
    }
    let t_final = trans(n);
    for k in 0..3 {
        rgb[k] += t_final * bg[k];
    }
    (rgb, weights, t_final)
}

pub fn coarse_oracle(pred: &[[f32; 3]], gt: &[[f32; 3]]) -> f64 {
    let mut total = 0.0;
    for r in 0..pred.len() {
        for k in 0..3 {
            let d = pred[r][k] as f64 - gt[r][k] as f64;
            total += d * d;
        }
    }
    total
}

/// Patch SSE plus `lambda` times the layer-weighted mean squared feature
/// difference, with the per-layer means taken by explicit loops.
pub fn fine_oracle(pred: &[f64], gt: &[f64], size: usize, metric: &PerceptualMetric, lambda: f64) -> f64 {
    let mut sse = 0.0;
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                let i = (y * size + x) * 3 + c;
                sse += (pred[i] - gt[i]).powi(2);
            }
        }
    }
    let fa = metric.features(pred, size, size).unwrap();
    let fb = metric.features(gt, size, size).unwrap();
    let mut perceptual = 0.0;
    for (l, (a, b)) in fa.iter().zip(&fb).enumerate() {
        let mut s = 0.0;
        for c in 0..a.channels {
            for y in 0..a.height {
                for x in 0..a.width {
                    let i = (c * a.height + y) * a.width + x;
                    s += (a.data[i] - b.data[i]).powi(2);
                }
            }
        }
        perceptual += metric.layer_weights()[l] * s / (a.channels * a.height * a.width) as f64;
    }
    sse + lambda * perceptual
}

pub fn positional_oracle(pred: &[LandmarkSet], gt: &[LandmarkSet]) -> f64 {
    let mut total = 0.0;
    for f in 0..pred.len() {
        for m in 0..68 {
            for k in 0..3 {
                total += (pred[f].point(m)[k] as f64 - gt[f].point(m)[k] as f64).abs();
            }
        }
    }
    total / (68 * pred.len()) as f64
}
