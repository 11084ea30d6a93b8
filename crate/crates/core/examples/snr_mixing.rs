//! Mix a synthetic dialogue with each noise type at the training SNRs and
//! report the SNR measured from the residual. Pass a directory to also get
//! the mixtures as WAV files.

use vap_engine::audio::{rms_power, save_wav, Waveform};
use vap_engine::noise::{mix_at_snr, NoiseBank, TRAINING_SNRS_DB};
use vap_engine::sim::{generate_dialogue, DialogueScript};

fn main() -> vap_engine::Result<()> {
    let out_dir = std::env::args().nth(1).map(std::path::PathBuf::from);
    let d = generate_dialogue(&DialogueScript::default())?;
    let speech = &d.channel_a;
    let bank = NoiseBank::synthetic(7, 10.0);
    for clip in bank.entries() {
        for snr in TRAINING_SNRS_DB {
            let m = mix_at_snr(speech, &clip.waveform, snr)?;
            let residual: Vec<f32> = m.waveform.samples().iter().zip(speech.samples()).map(|(x, s)| x - s).collect();
            let measured = 10.0 * (rms_power(speech)? / rms_power(&Waveform::new(residual))?).log10();
            println!(
                "{:<8} target {snr:>4.1} dB  measured {measured:>7.3} dB  gain {:.4}  clipped {}",
                clip.name, m.gain, m.clipped
            );
            if let Some(dir) = &out_dir {
                std::fs::create_dir_all(dir)?;
                save_wav(&m.waveform, dir.join(format!("{}_{snr}db.wav", clip.name)))?;
            }
        }
    }
    Ok(())
}
