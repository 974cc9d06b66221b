//! Finite-difference check of the perceptron backward pass in double
//! precision, parameters and inputs.
//!
//!     cargo run --release --example gradient_check

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talkfield::nn::gradcheck::{check_input, check_params, random_param_coords};
use talkfield::nn::{Gradients, Mlp, MlpTrace, OutputActivation, ParamStore};

fn main() -> talkfield::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (widths, act) in [
        (vec![12, 32, 32, 4], OutputActivation::Identity),
        (vec![8, 16, 1], OutputActivation::Sigmoid),
        (vec![6, 24, 3], OutputActivation::Softplus),
    ] {
        let mut store = ParamStore::<f64>::new();
        let mlp = Mlp::new(&mut store, "net", &widths, act, &mut rng)?;
        let batch = 4;
        let x0: Vec<f64> = (0..batch * widths[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..batch * mlp.output_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |s: &ParamStore<f64>, x: &[f64]| {
            let mut t = MlpTrace::new();
            let y = mlp.forward_batch(s, x, batch, &mut t).expect("shapes match");
            y.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
        };

        let mut trace = MlpTrace::new();
        mlp.forward_batch(&store, &x0, batch, &mut trace)?;
        let mut grads = Gradients::for_store(&store);
        let mut dx = vec![0.0; x0.len()];
        mlp.backward_batch(&store, &trace, &r, &mut grads, Some(&mut dx))?;

        let ids: Vec<_> = store.params().map(|(id, _)| id).collect();
        let coords = random_param_coords(&store, &ids, 400, &mut rng);
        let p = check_params(&mut store, &grads, &coords, |s| loss(s, &x0), 1e-5, 1e-3, 100);
        let idx: Vec<usize> = (0..400).map(|_| rng.gen_range(0..x0.len())).collect();
        let mut x = x0.clone();
        let i = check_input(&mut x, &dx, &idx, |v| loss(&store, v), 1e-5, 1e-3, 100);
        println!(
            "{widths:?} {act:?}: params {} probes max rel {:.1e} ({} kinks skipped), inputs {} probes max rel {:.1e}",
            p.probes, p.max_rel_error, p.kinks_skipped, i.probes, i.max_rel_error
        );
    }
    Ok(())
}
