use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talkfield::nn::gradcheck::{check_input, check_params, random_param_coords};
use talkfield::nn::{Gradients, Mlp, MlpTrace, ParamStore};
use talkfield::pipeline::{ModelConfig, TalkingHead};
use talkfield::train::TrainConfig;

const PROBES: usize = 100;

/// Every perceptron of the default model, rebuilt at the same widths and
/// output activation in double precision.
fn default_topologies() -> Vec<(&'static str, Mlp)> {
    let train = TrainConfig::default();
    let cfg = ModelConfig::new(29, train.filter_half_width, train.latent_input);
    let mut store = ParamStore::new();
    let head = TalkingHead::new(&mut store, cfg, None, 1).unwrap();
    let cond = head.field.condition();
    vec![
        ("vae.enc", head.vae.encoder().clone()),
        ("vae.dec", head.vae.decoder().clone()),
        ("dlt.head", head.dlt.head().clone()),
        ("blink.mapping", head.blink.mapping().clone()),
        ("blink.readout", head.blink.readout().clone()),
        ("blink.predictor", head.blink.predictor().clone()),
        ("cond.lm", cond.landmark_net().clone()),
        ("cond.audio", cond.audio_net().clone()),
        ("field.sigma", head.field.sigma_net().clone()),
        ("field.color", head.field.color_net().clone()),
    ]
}

#[test]
fn every_default_perceptron_passes_the_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, template) in default_topologies() {
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, name, &template.widths(), template.output_activation(), &mut rng).unwrap();
        let batch = 3;
        let x0: Vec<f64> = (0..batch * mlp.input_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..batch * mlp.output_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore<f64>, x: &[f64]| -> f64 {
            let mut t = MlpTrace::new();
            let y = mlp.forward_batch(s, x, batch, &mut t).unwrap();
            y.iter().zip(&r).map(|(a, b)| a * b).sum()
        };

        let mut trace = MlpTrace::new();
        mlp.forward_batch(&store, &x0, batch, &mut trace).unwrap();
        let mut grads = Gradients::for_store(&store);
        let mut dx = vec![0.0; x0.len()];
        mlp.backward_batch(&store, &trace, &r, &mut grads, Some(&mut dx)).unwrap();

        let ids: Vec<_> = store.params().map(|(id, _)| id).collect();
        let coords = random_param_coords(&store, &ids, 4 * PROBES, &mut rng);
        let params = check_params(&mut store, &grads, &coords, |s| loss(s, &x0), 1e-5, 1e-3, PROBES);
        assert!(params.passed(PROBES), "{name} params: {params:?}");

        let idx: Vec<usize> = (0..4 * PROBES).map(|_| rng.gen_range(0..x0.len())).collect();
        let mut x = x0.clone();
        let inputs = check_input(&mut x, &dx, &idx, |v| loss(&store, v), 1e-5, 1e-3, PROBES);
        assert!(inputs.passed(PROBES), "{name} input: {inputs:?}");
    }
}
