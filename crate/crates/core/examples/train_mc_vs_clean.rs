//! Train a clean and a multi-condition model on a small synthetic corpus
//! and print their test loss at every noise level.
//!
//! `cargo run --release --example train_mc_vs_clean -- 60 15` trains on 60
//! dialogues for 15 epochs.

use vap_engine::model::{eval_per_snr, fit, Augmentation, DatasetItem, ModelConfig, TrainConfig};
use vap_engine::noise::{MultiCondition, NoiseBank, SnrLevel};
use vap_engine::sim::{generate_dialogue, DialogueScript};

fn main() -> vap_engine::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("expected a number"));
    let n = args.next().unwrap_or(40);
    let epochs = args.next().unwrap_or(10);

    let items = (0..n)
        .map(|i| {
            let script = DialogueScript {
                n_turns: 2,
                ..DialogueScript::default().with_seed(1000 + i as u64)
            };
            Ok(DatasetItem {
                id: format!("dlg{i:04}"),
                dialogue: generate_dialogue(&script)?,
            })
        })
        .collect::<vap_engine::Result<Vec<_>>>()?;
    let (train, rest) = items.split_at(n * 8 / 10);
    let (valid, test) = rest.split_at(rest.len() / 2);

    let bank = NoiseBank::synthetic(3, 10.0);
    let model = ModelConfig::default();
    let cfg = TrainConfig {
        epochs,
        ..Default::default()
    };
    let levels = SnrLevel::evaluation_levels();
    let mut tables = Vec::new();
    for aug in [
        Augmentation::Clean,
        Augmentation::MultiCondition {
            bank: bank.clone(),
            policy: MultiCondition::default(),
        },
    ] {
        let t = std::time::Instant::now();
        let trained = fit(train, valid, &model, &cfg, &aug)?;
        let first = trained.history.initial().expect("epoch 0 is always recorded");
        let last = trained.history.last().expect("epoch 0 is always recorded");
        println!(
            "{:<5} train L_vap {:.3} -> {:.3}, valid {:.3} -> {:.3}, best epoch {} ({:.1?})",
            aug.name(),
            first.train.vap,
            last.train.vap,
            first.valid.vap,
            last.valid.vap,
            trained.best_epoch,
            t.elapsed()
        );
        tables.push((aug.name(), eval_per_snr(&trained.params, test, &levels, &bank, 0)?));
    }

    println!("\nlevel   clean     mc");
    for level in &levels {
        println!(
            "{:<6} {:>6.3} {:>6.3}",
            level.to_string(),
            tables[0].1.get(*level).unwrap_or(f64::NAN),
            tables[1].1.get(*level).unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
