//! Compare the tape gradients with central finite differences on a random
//! batch, and show the loss anchor of a zero-head model.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vap_engine::codebook::StateIndex;
use vap_engine::model::{batch_loss, grad_check, FrameBatch, FrameTarget, ModelConfig, Parameters};

fn main() -> vap_engine::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let frames = 12;
    let mut feats = || Array2::from_shape_simple_fn((frames, 40), || rng.random_range(-20.0..2.0));
    let (a, b) = (feats(), feats());
    let targets = (0..frames)
        .map(|i| {
            Some(FrameTarget {
                state: StateIndex::new((i * 37) % 256).expect("in range"),
                vad: [i % 3 != 0, i % 2 == 0],
            })
        })
        .collect();
    let batch = FrameBatch {
        features_a: a,
        features_b: b,
        targets,
    };

    let mut p = Parameters::init(&ModelConfig::default())?;
    println!("{} tensors, {} scalars", p.names().len(), p.num_scalars());
    p.zero_heads();
    println!("zero heads: L_vap {:.6} (ln 256 = {:.6})", batch_loss(&p, &batch)?.vap, 256f64.ln());

    let p = Parameters::init(&ModelConfig::default())?;
    let report = grad_check(&p, &batch, 30, 2)?;
    for c in report.coordinates.iter().take(10) {
        println!("{c:?}");
    }
    println!("max relative error over {} coordinates: {:.2e}", report.coordinates.len(), report.max_rel_error);
    Ok(())
}
