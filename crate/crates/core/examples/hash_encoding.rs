//! Prints the level layout of the triplane hash encoding and encodes a few
//! points, showing that the three planes see different 2D projections.
//!
//!     cargo run --release --example hash_encoding

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use talkfield::hash_grid::{HashGridConfig, TriplaneEncoder};
use talkfield::nn::ParamStore;

fn main() -> talkfield::Result<()> {
    for (name, cfg) in [
        ("default", HashGridConfig::default()),
        ("hashed", HashGridConfig::new(8, 2, 12, 16, 1.5)?),
    ] {
        println!("{name}: T = 2^{}, F = {}", cfg.table_size_log2(), cfg.features_per_entry());
        for l in 0..cfg.levels() {
            let kind = if cfg.is_dense(l) { "dense" } else { "hashed" };
            println!("  level {l}: resolution {:4}  {kind}", cfg.resolution(l));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let enc = TriplaneEncoder::new(&mut store, HashGridConfig::default(), &mut rng)?;
    println!("encoder output width {} ({} tables)", enc.output_width(), store.params().count());
    for p in [[0.2f32, 0.5, 0.8], [0.2, 0.5, 0.1], [0.9, 0.5, 0.8]] {
        let e = enc.encode(&store, p)?;
        let head: Vec<String> = e.iter().take(6).map(|v| format!("{v:+.2e}")).collect();
        println!("{p:?} -> [{} ...]", head.join(", "));
    }
    Ok(())
}
