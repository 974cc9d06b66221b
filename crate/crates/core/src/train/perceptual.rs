//! Frozen random-convolution feature distance used as the perceptual term
//! of the fine stage. Weights come from a seed and are never trained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::real::Real;

/// `(in channels, out channels, stride)` of each 3x3 convolution.
const LAYERS: [(usize, usize, usize); 3] = [(3, 8, 1), (8, 16, 2), (16, 16, 2)];

#[derive(Clone, Debug, PartialEq)]
struct Conv {
    cin: usize,
    cout: usize,
    stride: usize,
    /// `cout x cin x 3 x 3`
    weight: Vec<f64>,
    bias: Vec<f64>,
}

/// Channel-major feature map.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

fn out_size(n: usize, stride: usize) -> usize {
    (n - 1) / stride + 1
}

impl Conv {
    fn forward<T: Real>(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        let (h, w) = (x.height, x.width);
        let (oh, ow) = (out_size(h, self.stride), out_size(w, self.stride));
        let mut data = vec![T::zero(); self.cout * oh * ow];
        for o in 0..self.cout {
            let b = T::lit(self.bias[o]);
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b;
                    for c in 0..self.cin {
                        for ky in 0..3 {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv = self.weight[((o * self.cin + c) * 3 + ky) * 3 + kx];
                                acc += T::lit(wv) * x.data[(c * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    data[(o * oh + oy) * ow + ox] = acc.max(T::zero());
                }
            }
        }
        FeatureMap {
            channels: self.cout,
            height: oh,
            width: ow,
            data,
        }
    }

    /// Input gradient given the gradient on the post-ReLU output `y`.
    fn backward<T: Real>(&self, x: &FeatureMap<T>, y: &FeatureMap<T>, dy: &[T]) -> Vec<T> {
        let (h, w) = (x.height, x.width);
        let (oh, ow) = (y.height, y.width);
        let mut dx = vec![T::zero(); x.data.len()];
        for o in 0..self.cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let idx = (o * oh + oy) * ow + ox;
                    if y.data[idx] <= T::zero() {
                        continue;
                    }
                    let g = dy[idx];
                    for c in 0..self.cin {
                        for ky in 0..3 {
                            let iy = (oy * self.stride + ky) as isize - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let ix = (ox * self.stride + kx) as isize - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let wv = self.weight[((o * self.cin + c) * 3 + ky) * 3 + kx];
                                dx[(c * h + iy as usize) * w + ix as usize] += T::lit(wv) * g;
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Feature distance `sum_l w_l * mean((phi_l(a) - phi_l(b))^2)` where layer 0
/// is the image itself, so the distance vanishes only for identical inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualMetric {
    seed: u64,
    convs: Vec<Conv>,
    layer_weights: Vec<f64>,
}

impl PerceptualMetric {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = LAYERS
            .iter()
            .map(|&(cin, cout, stride)| {
                // He-uniform keeps activations from vanishing through ReLUs
                let bound = (6.0 / (cin * 9) as f64).sqrt();
                Conv {
                    cin,
                    cout,
                    stride,
                    weight: (0..cout * cin * 9).map(|_| rng.gen_range(-bound..bound)).collect(),
                    bias: (0..cout).map(|_| rng.gen_range(-0.05..0.05)).collect(),
                }
            })
            .collect();
        PerceptualMetric {
            seed,
            convs,
            layer_weights: vec![1.0; LAYERS.len() + 1],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn layer_weights(&self) -> &[f64] {
        &self.layer_weights
    }

    /// SHA-256 over every frozen weight, hex encoded.
    pub fn weight_hash(&self) -> String {
        let mut h = Sha256::new();
        for c in &self.convs {
            for v in c.weight.iter().chain(&c.bias) {
                h.update(v.to_le_bytes());
            }
        }
        for w in &self.layer_weights {
            h.update(w.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// All feature maps of an interleaved RGB image (`h x w x 3`), layer 0
    /// first.
    pub fn features<T: Real>(&self, rgb: &[T], width: usize, height: usize) -> Result<Vec<FeatureMap<T>>> {
        if rgb.len() != width * height * 3 {
            return Err(Error::shape("perceptual input", width * height * 3, rgb.len()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Domain("perceptual input is empty".into()));
        }
        let mut data = vec![T::zero(); rgb.len()];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * width * height + i] = px[c];
            }
        }
        let mut maps = vec![FeatureMap {
            channels: 3,
            height,
            width,
            data,
        }];
        for conv in &self.convs {
            let next = conv.forward(maps.last().expect("nonempty"));
            maps.push(next);
        }
        Ok(maps)
    }

    pub fn distance<T: Real>(&self, a: &[T], b: &[T], width: usize, height: usize) -> Result<T> {
        Ok(self.distance_and_grad(a, b, width, height, false)?.0)
    }

    /// Distance and, when requested, its gradient with respect to `a`
    /// (interleaved like the input).
    pub fn distance_and_grad<T: Real>(
        &self,
        a: &[T],
        b: &[T],
        width: usize,
        height: usize,
        want_grad: bool,
    ) -> Result<(T, Option<Vec<T>>)> {
        if a.len() != b.len() {
            return Err(Error::shape("perceptual pair", a.len(), b.len()));
        }
        let fa = self.features(a, width, height)?;
        let fb = self.features(b, width, height)?;
        let mut total = T::zero();
        let mut diffs = Vec::with_capacity(fa.len());
        for ((ma, mb), &w) in fa.iter().zip(&fb).zip(&self.layer_weights) {
            let n = T::lit(ma.data.len() as f64);
            let wl = T::lit(w);
            let d: Vec<T> = ma.data.iter().zip(&mb.data).map(|(&x, &y)| x - y).collect();
            total += wl * d.iter().map(|&v| v * v).sum::<T>() / n;
            diffs.push(d.into_iter().map(|v| T::lit(2.0) * wl * v / n).collect::<Vec<T>>());
        }
        if !want_grad {
            return Ok((total, None));
        }
        // walk back from the deepest layer, adding each layer's direct term
        let mut g = diffs.pop().expect("nonempty");
        for l in (0..self.convs.len()).rev() {
            let mut dx = self.convs[l].backward(&fa[l], &fa[l + 1], &g);
            dx.iter_mut().zip(&diffs[l]).for_each(|(a, &b)| *a += b);
            g = dx;
        }
        let plane = width * height;
        let mut out = vec![T::zero(); a.len()];
        for i in 0..plane {
            for c in 0..3 {
                out[i * 3 + c] = g[c * plane + i];
            }
        }
        Ok((total, Some(out)))
    }
}
