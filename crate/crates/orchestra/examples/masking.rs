//! Remove one expert at inference time and measure the collapse it causes:
//! the routing matrix reacts far more to losing the most intrinsically
//! important expert than to losing a random peripheral one.
//!
//! Run with: cargo run --example masking

use orchestra::config::RunConfig;
use orchestra::probes::{self, MaskingStrategy, ProbeSettings};
use orchestra::training;

fn main() -> orchestra::Result<()> {
    let mut cfg = RunConfig::default();
    cfg.seed = 17;
    cfg.train.seed = 17;
    cfg.num_prompts = 120;
    cfg.probe.prompts = 32;

    let consortium = cfg.consortium()?;
    let outcome = training::train(
        &cfg.train,
        &consortium,
        &cfg.training_prompts(),
        &cfg.rollout,
        "example",
    )?;
    let ck = outcome.checkpoints.last().unwrap();
    let orch = ck.orchestrator();
    let inputs = probes::probe_inputs(&consortium, &cfg.probe_prompts(), cfg.seed)?;
    let settings = ProbeSettings {
        probe_seed: cfg.seed,
        gumbel_temp: ck.gumbel_temp,
        k: ck.active_k(),
        ..ProbeSettings::default()
    };

    println!(" strategy        masked expert   KL(sequence)   KL(routing)");
    for strategy in [
        MaskingStrategy::TopIntrinsic,
        MaskingStrategy::TopFrequent,
        MaskingStrategy::RandomNontop,
    ] {
        let outcome = probes::masking_analysis(&orch, &inputs, strategy, &settings, cfg.seed)?;
        println!(
            " {:<14}      {:>2}            {:.4}         {:.4}",
            outcome.strategy.name(),
            outcome.expert + 1,
            outcome.kl_sequence,
            outcome.kl_routing
        );
    }
    println!("\nmasking is a view: the underlying parameters never change");
    Ok(())
}
