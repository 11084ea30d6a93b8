//! Stream a WAV file through the online predictor one 100 ms chunk at a
//! time and print a JSON line per prediction.
//!
//! `cargo run --release --example stream_wav -- user.wav [checkpoint.json]`
//! Without arguments a synthetic dialogue and an untrained model are used.

use std::sync::Arc;

use vap_engine::audio::load_wav;
use vap_engine::model::{load_checkpoint, ModelConfig, Parameters};
use vap_engine::sim::{generate_dialogue, DialogueScript};
use vap_engine::streaming::{real_time_factor, StreamContext};

fn main() -> vap_engine::Result<()> {
    let mut args = std::env::args().skip(1);
    let user = match args.next() {
        Some(path) => load_wav(path)?,
        None => generate_dialogue(&DialogueScript::default())?.channel_a,
    };
    let params = match args.next() {
        Some(path) => load_checkpoint(path)?.0,
        None => Parameters::init(&ModelConfig::default())?,
    };

    let mut ctx = StreamContext::with_model(Arc::new(params));
    let mut results = Vec::new();
    for chunk in user.samples().chunks(1600) {
        // no robot audio: the robot channel is silent
        ctx.push_audio(chunk, None)?;
        while let Some(r) = ctx.tick()? {
            println!("{}", serde_json::to_string(&r)?);
            results.push(r);
        }
    }
    eprintln!(
        "{} predictions for {:.2} s of audio, real-time factor {:.3}",
        results.len(),
        user.duration_s(),
        real_time_factor(&results)
    );
    Ok(())
}
