//! Encode a labelled future into a codebook state and read p_now back out
//! of a few hand-made distributions.

use vap_engine::codebook::{decode_state, encode_state, p_now, window_from_labels, BinConfig, VapDistribution, ROBOT, USER};

fn main() -> vap_engine::Result<()> {
    let bins = BinConfig::default();
    // 2 s of 100 Hz labels: the user keeps talking for 0.5 s, the robot
    // starts after 1 s
    let user: Vec<bool> = (0..200).map(|f| f < 50).collect();
    let robot: Vec<bool> = (0..200).map(|f| f >= 100).collect();
    let window = window_from_labels(&user, &robot, &bins)?;
    let state = encode_state(&window);
    println!("bins (ms): {:?}", bins.frame_ranges().map(|(a, b)| (a * 10, b * 10)));
    println!("user  {:?}", window.bits[USER]);
    println!("robot {:?}", window.bits[ROBOT]);
    println!("state {} (decodes back: {})", state.value(), decode_state(state.value())? == window);

    let one_hot = VapDistribution::one_hot(state);
    println!("one-hot: p_now user {:.3}, robot {:.3}", p_now(&one_hot, USER), p_now(&one_hot, ROBOT));
    let uniform = VapDistribution::uniform();
    println!(
        "uniform: p_now user {:.3}, entropy {:.3} nats",
        p_now(&uniform, USER),
        uniform.entropy()
    );

    // half the mass on "user holds", half on "robot takes over"
    let mut probs = vec![0.0; 256];
    probs[state.value()] = 0.5;
    probs[state.swap_speakers().value()] = 0.5;
    let mixed = VapDistribution::new(probs)?;
    println!("mixed:   p_now user {:.3}, robot {:.3}", p_now(&mixed, USER), p_now(&mixed, ROBOT));
    Ok(())
}
