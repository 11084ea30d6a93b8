//! Compare STT-only, hybrid and VAP-only endpointing on simulated
//! dialogues. With a checkpoint the model streams the user channel;
//! without one an oracle built from the labels stands in for it.

use std::sync::Arc;

use vap_engine::model::load_checkpoint;
use vap_engine::sim::{
    compare_sessions, generate_dialogue, oracle_frames, run_session, score_session, session_stats, DialogueScript, Policy,
    SessionConfig, SessionOutcome,
};

fn main() -> vap_engine::Result<()> {
    let params = std::env::args().nth(1).map(load_checkpoint).transpose()?.map(|(p, _)| Arc::new(p));
    let cfg = SessionConfig::default();
    let policies = [Policy::SttOnly, Policy::Hybrid, Policy::VapOnly];
    let mut outcomes: Vec<SessionOutcome> = policies.iter().map(|_| SessionOutcome::default()).collect();
    for i in 0..20 {
        let id = format!("sim{i:04}");
        let d = generate_dialogue(&DialogueScript::default().with_seed(500 + i))?;
        let oracle = oracle_frames(&d);
        for (policy, out) in policies.iter().zip(&mut outcomes) {
            let o = match &params {
                Some(p) => run_session(&id, &d, *policy, Some(p.clone()), &cfg)?,
                None => score_session(&id, &d, Some(&oracle), *policy, &cfg)?,
            };
            out.extend(o);
        }
    }
    for (policy, out) in policies.iter().zip(&outcomes) {
        let s = session_stats(*policy, out);
        match s.robot_response {
            Some(r) => println!(
                "{:<9} {} turns, mean {:.3} s, median {:.3} s, sd {:.3}, vap share {:.2}, missed {}",
                policy.name(),
                r.n,
                r.mean,
                r.median,
                r.stddev,
                s.vap_source_fraction,
                s.missed_turns
            ),
            None => println!("{:<9} answered no turn", policy.name()),
        }
    }
    let test = compare_sessions(&outcomes[0], &outcomes[1])?;
    println!("stt-only vs hybrid: U {:.1}, p {:.2e}", test.u, test.p_value);
    Ok(())
}
