mod common;

use common::oracles::composite_oracle;
use proptest::prelude::*;
use talkfield::field::FieldOutput;
use talkfield::render::{composite, render_image, render_region, segment_lengths, Camera, PixelRect, PointField, Ray, RenderSettings};

const BOX_MIN: [f64; 3] = [0.3, 0.35, 0.4];
const BOX_MAX: [f64; 3] = [0.7, 0.65, 0.6];
const BOX_COLOR: [f32; 3] = [0.9, 0.2, 0.1];
const BG: [f32; 3] = [0.1, 0.3, 0.8];

fn inside(p: [f64; 3]) -> bool {
    (0..3).all(|k| p[k] >= BOX_MIN[k] && p[k] <= BOX_MAX[k])
}

fn slab_hit(o: [f64; 3], d: [f64; 3]) -> bool {
    let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
    for k in 0..3 {
        let a = (BOX_MIN[k] - o[k]) / d[k];
        let b = (BOX_MAX[k] - o[k]) / d[k];
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    t0 < t1
}

fn oblique_camera() -> Camera {
    Camera::look_at([1.6, 1.3, 2.4], [0.5, 0.5, 0.5], [0.0, 1.0, 0.0], 70.0, 64, 64).unwrap()
}

#[test]
fn opaque_box_matches_ray_box_oracle() {
    let cam = oblique_camera();
    let field = PointField(|p: [f64; 3], _d: [f64; 3]| {
        Ok(if inside(p) {
            FieldOutput { color: BOX_COLOR, sigma: 1e4 }
        } else {
            FieldOutput { color: [0.0; 3], sigma: 0.0 }
        })
    });
    let settings = RenderSettings {
        samples: 256,
        background: BG,
        ..RenderSettings::default()
    };
    let img = render_image(&cam, &field, &settings).unwrap();
    let mut agree = 0;
    let mut box_pixels = 0;
    for py in 0..64 {
        for px in 0..64 {
            let local = [(px as f64 + 0.5 - cam.cx) / cam.fx, -(py as f64 + 0.5 - cam.cy) / cam.fy, -1.0];
            let r = &cam.rotation;
            let d: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| r[i][j] * local[j]).sum());
            let want = slab_hit(cam.translation, d);
            let c = img.pixel(px, py);
            let dist = |t: [f32; 3]| (0..3).map(|k| (c[k] - t[k]).powi(2)).sum::<f32>();
            let got = dist(BOX_COLOR) < dist(BG);
            box_pixels += want as usize;
            agree += (want == got) as usize;
        }
    }
    assert!(box_pixels > 100, "box covers {box_pixels} pixels");
    assert!(agree as f64 / 4096.0 >= 0.99, "agreement {agree}/4096");
}

#[test]
fn region_render_matches_full_frame_pixels() {
    let cam = oblique_camera();
    let field = PointField(|p: [f64; 3], d: [f64; 3]| {
        Ok(FieldOutput {
            color: [p[0] as f32, p[1] as f32, (0.5 + 0.5 * d[2]) as f32],
            sigma: (4.0 * p[2]) as f32,
        })
    });
    let settings = RenderSettings {
        samples: 32,
        jitter: true,
        seed: 9,
        ..RenderSettings::default()
    };
    let full = render_image(&cam, &field, &settings).unwrap();
    assert_eq!(full, render_image(&cam, &field, &settings).unwrap());
    let rect = PixelRect { x0: 10, y0: 20, x1: 30, y1: 27 };
    let part = render_region(&cam, &field, &settings, &rect).unwrap();
    assert_eq!(part, full.crop(&rect).unwrap());
}

/// Smooth field along a unit ray: density and colour vary with depth.
fn smooth_red(n: usize) -> f64 {
    let ray = Ray { origin: [0.5, 0.5, 0.0], direction: [0.0, 0.0, 1.0], t_near: 0.0, t_far: 1.0 };
    let t: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let outputs: Vec<FieldOutput<f64>> = t
        .iter()
        .map(|&s| FieldOutput { color: [0.2 + 0.6 * s, 0.0, 0.0], sigma: 1.0 + 3.0 * s * s })
        .collect();
    composite(&outputs, &segment_lengths(&t, ray.t_far), [0.0; 3]).unwrap().rgb[0]
}

#[test]
fn quadrature_error_is_first_order_on_a_smooth_field() {
    let reference = smooth_red(4096);
    for n in [32, 64, 128] {
        let ratio = (smooth_red(n) - reference).abs() / (smooth_red(2 * n) - reference).abs();
        assert!((1.6..=2.4).contains(&ratio), "n = {n}: ratio {ratio}");
    }
}

proptest! {
    #[test]
    fn splitting_a_segment_leaves_the_pixel_unchanged(
        sigma in prop::collection::vec(0.0f64..30.0, 2..20),
        split in 0usize..19,
        frac in 0.05f64..0.95,
    ) {
        let n = sigma.len();
        let split = split % n;
        let color: Vec<[f64; 3]> = (0..n).map(|i| [i as f64 / n as f64, 0.5, 1.0 - i as f64 / n as f64]).collect();
        let delta: Vec<f64> = (0..n).map(|i| 0.02 + 0.01 * (i % 3) as f64).collect();
        let out = |s: &[f64], c: &[[f64; 3]]| -> Vec<FieldOutput<f64>> {
            s.iter().zip(c).map(|(&sigma, &color)| FieldOutput { color, sigma }).collect()
        };
        let whole = composite(&out(&sigma, &color), &delta, [0.2, 0.4, 0.6]).unwrap();

        let mut s2 = sigma.clone();
        let mut c2 = color.clone();
        let mut d2 = delta.clone();
        s2.insert(split, sigma[split]);
        c2.insert(split, color[split]);
        d2[split] = delta[split] * frac;
        d2.insert(split + 1, delta[split] * (1.0 - frac));
        let parts = composite(&out(&s2, &c2), &d2, [0.2, 0.4, 0.6]).unwrap();
        for k in 0..3 {
            prop_assert!((whole.rgb[k] - parts.rgb[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn compositing_matches_the_product_form(
        sigma in prop::collection::vec(0.0f64..50.0, 1..40),
        seed in 0u64..1000,
    ) {
        let n = sigma.len();
        let color: Vec<[f64; 3]> = (0..n).map(|i| [((i as u64 * 7 + seed) % 11) as f64 / 10.0, 0.3, 0.9]).collect();
        let delta: Vec<f64> = (0..n).map(|i| 0.005 + ((i as u64 + seed) % 5) as f64 * 0.01).collect();
        let outputs: Vec<FieldOutput<f64>> = sigma.iter().zip(&color).map(|(&sigma, &color)| FieldOutput { color, sigma }).collect();
        let c = composite(&outputs, &delta, [0.1, 0.1, 0.1]).unwrap();
        let (rgb, weights, t_final) = composite_oracle(&sigma, &color, &delta, [0.1, 0.1, 0.1]);
        prop_assert!((c.final_transmittance - t_final).abs() < 1e-12);
        for (a, b) in c.weights.iter().zip(&weights) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        for k in 0..3 {
            prop_assert!((c.rgb[k] - rgb[k]).abs() < 1e-12);
        }
        prop_assert!(c.transmittance.windows(2).all(|w| w[1] <= w[0]));
    }
}
