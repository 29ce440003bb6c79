//! Damage prompts in four targeted ways (remove numbers, mask numbers,
//! shuffle sentences, remove reasoning cues) and measure how much the
//! routing distribution moves. A model trained on arithmetic reacts to
//! number removal far more than to sentence shuffling.
//!
//! Run with: cargo run --example perturbations

use orchestra::config::RunConfig;
use orchestra::probes::{self, PerturbationKind, PerturbationSpec, ProbeSettings};
use orchestra::training;

fn main() -> orchestra::Result<()> {
    // show the raw text transforms first
    let sample = "Mia has 12 apples and buys 7 more. Let's think step by step.";
    println!("original: {sample}");
    for kind in PerturbationKind::all() {
        let out = probes::perturb_prompt(sample, &PerturbationSpec { kind, seed: 3 });
        println!("{:<18} -> {}", kind.name(), out.text);
    }

    let mut cfg = RunConfig::default();
    cfg.seed = 13;
    cfg.train.seed = 13;
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
    let settings = ProbeSettings {
        probe_seed: cfg.seed,
        gumbel_temp: ck.gumbel_temp,
        k: ck.active_k(),
        ..ProbeSettings::default()
    };

    println!("\nsensitivity on an arithmetic-trained model:");
    println!(" perturbation        KL(sequence)   dEntropy   KL(routing)");
    let prompts = cfg.probe_prompts();
    for kind in PerturbationKind::all() {
        let sens = probes::perturbation_sensitivity(
            &orch,
            &consortium,
            &prompts,
            &PerturbationSpec {
                kind,
                seed: cfg.probe.perturbation_seed,
            },
            &settings,
            cfg.seed,
        )?;
        println!(
            " {:<18}   {:.4}       {:+.4}     {:.4}",
            kind.name(),
            sens.kl_sequence,
            sens.delta_entropy,
            sens.kl_routing
        );
    }
    Ok(())
}
