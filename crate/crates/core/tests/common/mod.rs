//! Finite-difference harnesses shared by the gradient tests and the
//! acceptance suite. Each returns one report per checked path.
#![allow(dead_code)]

pub mod oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talkfield::blink::{BlinkConfig, BlinkModel, BlinkTrace};
use talkfield::field::{ConditionConfig, DensityActivation, FieldConfig, FieldWorkspace, RadianceField};
use talkfield::hash_grid::HashGridConfig;
use talkfield::motion::{Dlt, DltConfig, DltTrace, Vae, VaeConfig, VaeTrace};
use talkfield::nn::gradcheck::{check_input, check_params, random_param_coords, GradCheckReport};
use talkfield::nn::{Gradients, MlpTrace, ParamId, ParamStore};
use talkfield::train::{fine_loss, PerceptualMetric};

pub const PROBES: usize = 50;
pub const TOL: f64 = 1e-3;
pub const STEP: f64 = 1e-5;

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn all_ids(store: &ParamStore<f64>) -> Vec<ParamId> {
    store.params().map(|(id, _)| id).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// DLT: a random linear functional of the landmarks, checked against
/// parameters, window inputs and the blink code.
pub fn dlt_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = DltConfig {
        window: 5,
        input_width: 4,
        model_width: 8,
        head_hidden: 12,
        blink_width: 2,
    };
    let mut store = ParamStore::<f64>::new();
    let dlt = Dlt::new(&mut store, cfg.clone(), None, &mut rng).unwrap();
    let batch = 2;
    let mut x = uniform(&mut rng, batch * 5 * 4, -1.0, 1.0);
    let mut blink = uniform(&mut rng, batch * 2, -1.0, 1.0);
    let r = uniform(&mut rng, batch * 204, -1.0, 1.0);

    let mut trace = DltTrace::new();
    dlt.forward_batch(&store, &x, &blink, batch, &mut trace).unwrap();
    let mut grads = Gradients::for_store(&store);
    let mut dx = vec![0.0; x.len()];
    let mut db = vec![0.0; blink.len()];
    dlt.backward_batch(&store, &trace, &r, &mut grads, Some(&mut dx), Some(&mut db))
        .unwrap();

    let loss = |s: &ParamStore<f64>, x: &[f64], b: &[f64]| {
        let mut t = DltTrace::new();
        dot(dlt.forward_batch(s, x, b, batch, &mut t).unwrap(), &r)
    };
    let ids = all_ids(&store);
    let coords = random_param_coords(&store, &ids, 4 * PROBES, &mut rng);
    let (x0, b0) = (x.clone(), blink.clone());
    let params = check_params(&mut store, &grads, &coords, |s| loss(s, &x0, &b0), STEP, TOL, PROBES);
    let idx: Vec<usize> = (0..4 * PROBES).map(|_| rng.gen_range(0..x.len())).collect();
    let inputs = check_input(&mut x, &dx, &idx, |v| loss(&store, v, &b0), STEP, TOL, PROBES);
    let n_blink = blink.len();
    let bidx: Vec<usize> = (0..4 * PROBES).map(|i| i % n_blink).collect();
    let blink_report = check_input(&mut blink, &db, &bidx, |v| loss(&store, &x0, v), STEP, TOL, n_blink);
    vec![("dlt params", params), ("dlt window input", inputs), ("dlt blink input", blink_report)]
}

/// VAE: the total objective, plus an external gradient on the means.
pub fn vae_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = VaeConfig {
        input_width: 6,
        hidden: 10,
        latent_width: 3,
        beta: 0.3,
    };
    let mut store = ParamStore::<f64>::new();
    let vae = Vae::new(&mut store, cfg, &mut rng).unwrap();
    let batch = 3;
    let x = uniform(&mut rng, batch * 6, -1.0, 1.0);
    let eps: Vec<f64> = vae.sample_eps(batch, &mut rng);
    let r = uniform(&mut rng, batch * 3, -1.0, 1.0);

    let mut trace = VaeTrace::new();
    vae.forward_batch(&store, &x, batch, &eps, &mut trace).unwrap();
    let mut grads = Gradients::for_store(&store);
    vae.backward_batch(&store, &trace, 1.0, &mut grads, Some(&r)).unwrap();

    let loss = |s: &ParamStore<f64>| {
        let mut t = VaeTrace::new();
        let l = vae.forward_batch(s, &x, batch, &eps, &mut t).unwrap();
        l.total + dot(&t.mu(3), &r)
    };
    let ids = all_ids(&store);
    let coords = random_param_coords(&store, &ids, 4 * PROBES, &mut rng);
    vec![("vae params", check_params(&mut store, &grads, &coords, loss, STEP, TOL, PROBES))]
}

fn unit_dir(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let d = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let n = dot(&d, &d).sqrt();
    [d[0] / n, d[1] / n, d[2] / n]
}

/// Radiance field with a mix of dense and hashed levels and tables filled
/// with O(1) values so every path carries signal.
fn small_field(rng: &mut ChaCha8Rng) -> (ParamStore<f64>, RadianceField) {
    let config = FieldConfig {
        grid: HashGridConfig::new(3, 2, 6, 4, 1.5).unwrap(),
        condition: ConditionConfig {
            code_width: 5,
            landmark_hidden: 6,
            audio_latent_width: 3,
            audio_hidden: 4,
            blink_width: 2,
        },
        hidden_width: 10,
        hidden_layers: 2,
        geo_features: 4,
        density: DensityActivation::Softplus,
    };
    let mut store = ParamStore::<f64>::new();
    let field = RadianceField::new(&mut store, config, rng).unwrap();
    for plane in field.encoder().planes() {
        for &t in plane.tables() {
            store.get_mut(t).iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        }
    }
    (store, field)
}

/// Radiance field: a random linear functional of density and color over a
/// batch of points, checked against hash-table entries (only rows the
/// batch touches), decoder weights and the per-row condition.
pub fn field_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut store, field) = small_field(&mut rng);
    let rows = 8;
    let cw = field.cond_width();
    let pos: Vec<[f64; 3]> = (0..rows)
        .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
        .collect();
    let dirs: Vec<[f64; 3]> = (0..rows).map(|_| unit_dir(&mut rng)).collect();
    let mut cond = uniform(&mut rng, rows * cw, -1.0, 1.0);
    let rs = uniform(&mut rng, rows, -1.0, 1.0);
    let rc = uniform(&mut rng, rows * 3, -1.0, 1.0);

    let mut ws = FieldWorkspace::new();
    field.forward_batch(&store, &pos, &dirs, &cond, &mut ws).unwrap();
    let d_color: Vec<[f64; 3]> = rc.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let mut grads = Gradients::for_store(&store);
    let mut d_cond = vec![0.0; cond.len()];
    field
        .backward_batch(&store, &ws, &rs, &d_color, &mut grads, Some(&mut d_cond))
        .unwrap();

    let loss = |s: &ParamStore<f64>, c: &[f64]| {
        let mut ws = FieldWorkspace::new();
        let out = field.forward_batch(s, &pos, &dirs, c, &mut ws).unwrap();
        out.iter()
            .enumerate()
            .map(|(r, o)| rs[r] * o.sigma + (0..3).map(|k| rc[r * 3 + k] * o.color[k]).sum::<f64>())
            .sum::<f64>()
    };

    let tables: Vec<ParamId> = field.encoder().planes().iter().flat_map(|p| p.tables().to_vec()).collect();
    let mut touched: Vec<(ParamId, usize)> = tables
        .iter()
        .flat_map(|&t| {
            let g = grads.slot(t);
            (0..g.len()).filter(|&i| g[i] != 0.0).map(move |i| (t, i)).collect::<Vec<_>>()
        })
        .collect();
    // interleave planes and levels before truncating
    let stride = (touched.len() / (4 * PROBES)).max(1);
    touched = touched.into_iter().step_by(stride).collect();
    let c0 = cond.clone();
    let hash = check_params(&mut store, &grads, &touched, |s| loss(s, &c0), STEP, TOL, PROBES);

    let decoders: Vec<ParamId> = field
        .sigma_net()
        .layers()
        .iter()
        .chain(field.color_net().layers())
        .flat_map(|l| [l.weight, l.bias])
        .collect();
    let coords = random_param_coords(&store, &decoders, 4 * PROBES, &mut rng);
    let dec = check_params(&mut store, &grads, &coords, |s| loss(s, &c0), STEP, TOL, PROBES);

    let idx: Vec<usize> = (0..4 * PROBES).map(|i| i % cond.len()).collect();
    let cin = check_input(&mut cond, &d_cond, &idx, |c| loss(&store, c), STEP, TOL, PROBES);
    vec![("hash tables", hash), ("field decoders", dec), ("field condition", cin)]
}

/// Blink mapping + readout under a functional of openness and embedding,
/// and the next-state predictor.
pub fn blink_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = BlinkConfig {
        au_window: 3,
        hidden: 9,
        embedding_width: 3,
        history: 2,
    };
    let mut store = ParamStore::<f64>::new();
    let blink = BlinkModel::new(&mut store, cfg.clone(), &mut rng).unwrap();
    let batch = 4;
    let x = uniform(&mut rng, batch * cfg.mapping_input_width(), -1.0, 1.0);
    let ro = uniform(&mut rng, batch, -1.0, 1.0);
    let re = uniform(&mut rng, batch * cfg.embedding_width, -1.0, 1.0);

    let mut trace = BlinkTrace::default();
    blink.forward_batch(&store, &x, batch, &mut trace).unwrap();
    let mut grads = Gradients::for_store(&store);
    blink.backward_batch(&store, &trace, &ro, Some(&re), &mut grads).unwrap();
    let loss = |s: &ParamStore<f64>| {
        let mut t = BlinkTrace::default();
        blink.forward_batch(s, &x, batch, &mut t).unwrap();
        dot(t.readout.output(), &ro) + dot(t.mapping.output(), &re)
    };
    let ids: Vec<ParamId> = blink
        .mapping()
        .layers()
        .iter()
        .chain(blink.readout().layers())
        .flat_map(|l| [l.weight, l.bias])
        .collect();
    let coords = random_param_coords(&store, &ids, 4 * PROBES, &mut rng);
    let mapping = check_params(&mut store, &grads, &coords, loss, STEP, TOL, PROBES);

    let px = uniform(&mut rng, batch * cfg.predictor_input_width(), -1.0, 1.0);
    let rp = uniform(&mut rng, batch, -1.0, 1.0);
    let mut pt = MlpTrace::new();
    blink.predictor().forward_batch(&store, &px, batch, &mut pt).unwrap();
    let mut pgrads = Gradients::for_store(&store);
    blink.predictor().backward_batch(&store, &pt, &rp, &mut pgrads, None).unwrap();
    let ploss = |s: &ParamStore<f64>| {
        let mut t = MlpTrace::new();
        dot(blink.predictor().forward_batch(s, &px, batch, &mut t).unwrap(), &rp)
    };
    let pids: Vec<ParamId> = blink.predictor().layers().iter().flat_map(|l| [l.weight, l.bias]).collect();
    let pcoords = random_param_coords(&store, &pids, 4 * PROBES, &mut rng);
    let predictor = check_params(&mut store, &pgrads, &pcoords, ploss, STEP, TOL, PROBES);
    vec![("blink mapping+readout", mapping), ("blink predictor", predictor)]
}

/// Fine loss w.r.t. the predicted patch, at the training weight and at a
/// weight that lets the perceptual term dominate.
pub fn fine_loss_reports(seed: u64) -> Vec<(&'static str, GradCheckReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let metric = PerceptualMetric::new(seed ^ 0x5eed);
    let size = 8;
    let n = size * size * 3;
    let gt = uniform(&mut rng, n, 0.0, 1.0);
    let mut out = Vec::new();
    for (name, lambda) in [("fine_loss lambda=0.001", 0.001), ("fine_loss lambda=100", 100.0)] {
        let mut pred = uniform(&mut rng, n, 0.0, 1.0);
        let mut g = vec![0.0; n];
        fine_loss(&pred, &gt, size, &metric, lambda, Some(&mut g)).unwrap();
        let idx: Vec<usize> = (0..4 * PROBES).map(|_| rng.gen_range(0..n)).collect();
        let report = check_input(
            &mut pred,
            &g,
            &idx,
            |p| fine_loss(p, &gt, size, &metric, lambda, None).unwrap().total,
            STEP,
            TOL,
            PROBES,
        );
        out.push((name, report));
    }
    out
}
