//! The trace file is also the ingestion contract: embeddings produced by a
//! real consortium elsewhere can be analyzed by the same probes. This
//! example writes a small embedding trace, reads it back, and probes it.
//!
//! Run with: cargo run --example ingest_trace

use orchestra::experts::{self, format_chain_prompt, TaskTag};
use orchestra::orchestrator::{Dims, Orchestrator, OrchestratorParams, RolloutOptions};
use orchestra::probes::{self, ProbeInput, ProbeSettings};
use orchestra::rng::{lane, stream};
use orchestra::trace::{write_trace, ExpertEmbeddingRecord, TraceRecord};

fn main() -> orchestra::Result<()> {
    let dir = std::env::temp_dir().join("orchestra-ingest-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("external_run.jsonl");
    let d = 32;

    // pretend these embeddings came from a real consortium elsewhere
    let consortium = experts::Consortium::homogeneous(d);
    let mut task_rng = stream(23, &[lane::TASK]);
    let mut records = Vec::new();
    for _ in 0..8 {
        let prompt = experts::generate_task(TaskTag::Code, &mut task_rng, d);
        let outputs = consortium.respond_all(&prompt, 23)?;
        let mut rec = TraceRecord::new(&prompt.id, 0);
        rec.text = Some(prompt.text.clone());
        rec.task_tag = Some(prompt.task_tag);
        rec.target = Some(prompt.target.clone());
        rec.oracle = Some(experts::oracle_respond(&prompt).embedding);
        rec.experts = Some(
            outputs
                .iter()
                .map(|o| ExpertEmbeddingRecord {
                    expert_id: o.expert_id,
                    h: o.embedding.clone(),
                    token_entropy: o.token_entropy,
                })
                .collect(),
        );
        records.push(rec);
    }
    write_trace(&path, &records)?;
    println!(
        "wrote {} embedding records to {}",
        records.len(),
        path.display()
    );

    // ingest and probe with an untrained controller
    let ingested = experts::ingest_embeddings(&path, d)?;
    println!("ingested {} records", ingested.len());

    let params = OrchestratorParams::init(Dims::new(consortium.len(), d), 1);
    let orch = Orchestrator::new(params, RolloutOptions::default());
    let inputs: Vec<ProbeInput> = ingested
        .iter()
        .map(|p| ProbeInput {
            prompt_emb: experts::encode_prompt(&p.prompt.text, d).unwrap(),
            outputs: p.outputs.iter().map(|o| o.embedding.clone()).collect(),
            token_entropies: p.outputs.iter().map(|o| o.token_entropy).collect(),
            prompt: p.prompt.clone(),
        })
        .collect();
    let settings = ProbeSettings::default();
    let mut collab_entropy = 0.0;
    for input in &inputs {
        let c = orch.interaction_matrix(&input.outputs)?;
        collab_entropy += probes::collab_entropy(&c) / inputs.len() as f64;
    }
    println!("mean collaboration entropy over ingested prompts: {collab_entropy:.4}");
    let s = probes::sequence_distribution(&orch, &inputs[0], &settings)?;
    println!("first-selection distribution on record 0: {s:?}");

    // the chaining template these records would be queried with
    let chained = format_chain_prompt(
        &[(3, "partial draft of the function")],
        &inputs[0].prompt.text,
    );
    println!(
        "\nchain prompt preview:\n{}",
        &chained[..chained.len().min(400)]
    );

    std::fs::remove_dir_all(&dir).ok();
    Ok(())
}
