//! Run orchestration behind the CLI: `train`, `probe`, `perturb`, `mask`,
//! `cascade`, `report`. Each command reads and writes a run directory:
//!
//! ```text
//! <run>/
//!   config.toml          resolved configuration (canonical for the run)
//!   config_hash.txt      sha-256 of the document above
//!   checkpoints/epoch_XXX.json
//!   metrics.jsonl        one record per epoch
//!   trace.jsonl          per-prompt orchestration records (+ embedding
//!                        payload at the final epoch)
//!   probes/              per-epoch probe and attribution reports
//!   perturbation.json, masking.json, cascade.json
//!   reports/             consolidated CSV tables + heatmaps + summary
//! ```

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experts::{oracle_respond, Consortium, PromptInstance};
use crate::orchestrator::cascade_order;
use crate::probes::{
    self, AttributionMode, AttributionReport, MaskingStrategy, PerturbationKind, PerturbationSpec,
    ProbeReport, ProbeSettings,
};
use crate::report::{
    fmt_sig6, save_json, AttributionRow, CsvTable, HeatmapExport, MaskingComparison,
    MaskingEpochRow, MaskingReport, MaskingSummary, PerturbationEpochRow, PerturbationReport,
    RunSummary,
};
use crate::stats;
use crate::trace::{ExpertEmbeddingRecord, TraceRecord};
use crate::training::{self, Checkpoint};

pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        RunPaths {
            root: root.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn config_hash(&self) -> PathBuf {
        self.root.join("config_hash.txt")
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints_dir()
            .join(format!("epoch_{epoch:03}.json"))
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }
    pub fn trace(&self) -> PathBuf {
        self.root.join("trace.jsonl")
    }
    pub fn probes_dir(&self) -> PathBuf {
        self.root.join("probes")
    }
    pub fn probe_report(&self, epoch: usize) -> PathBuf {
        self.probes_dir()
            .join(format!("probe_epoch_{epoch:03}.json"))
    }
    pub fn attribution_report(&self, mode: &str, epoch: usize) -> PathBuf {
        self.probes_dir()
            .join(format!("attribution_{mode}_epoch_{epoch:03}.json"))
    }
    pub fn perturbation(&self) -> PathBuf {
        self.root.join("perturbation.json")
    }
    pub fn masking(&self) -> PathBuf {
        self.root.join("masking.json")
    }
    pub fn cascade(&self) -> PathBuf {
        self.root.join("cascade.json")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// What a completed training run left on disk.
#[derive(Debug, Clone)]
pub struct RunArtifact {
    pub config_hash: String,
    pub run_dir: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: PathBuf,
    pub trace: PathBuf,
}

fn probe_settings(cfg: &RunConfig, ck: &Checkpoint) -> ProbeSettings {
    ProbeSettings {
        mc_draws: cfg.probe.mc_draws,
        epsilon: cfg.probe.epsilon,
        closed_form: cfg.probe.closed_form,
        probe_seed: cfg.seed,
        gumbel_temp: ck.gumbel_temp,
        k: ck.active_k(),
    }
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<RunArtifact> {
    cfg.validate()?;
    let hash = cfg.hash()?;
    let paths = RunPaths::new(out_dir);
    std::fs::create_dir_all(paths.checkpoints_dir())?;
    std::fs::create_dir_all(paths.probes_dir())?;
    std::fs::write(paths.config(), cfg.to_toml()?)?;
    std::fs::write(paths.config_hash(), &hash)?;

    let consortium = cfg.consortium()?;
    let prompts = cfg.training_prompts();
    let outcome = training::train(&cfg.train, &consortium, &prompts, &cfg.rollout, &hash)?;

    let mut checkpoint_paths = Vec::new();
    for ck in &outcome.checkpoints {
        let path = paths.checkpoint(ck.epoch);
        ck.save(&path)?;
        checkpoint_paths.push(path);
    }

    // metrics log: one JSON record per epoch, append order = epoch order
    {
        let mut f = std::fs::File::create(paths.metrics())?;
        for m in &outcome.metrics {
            let line = serde_json::to_string(m).map_err(|e| Error::Schema {
                line: 0,
                msg: e.to_string(),
            })?;
            writeln!(f, "{line}")?;
        }
    }

    // traces over the probe corpus, one record per prompt per epoch
    let probe_prompts = cfg.probe_prompts();
    let inputs = probes::probe_inputs(&consortium, &probe_prompts, cfg.seed)?;
    let mut records = Vec::new();
    let last_epoch = outcome.checkpoints.last().map(|c| c.epoch).unwrap_or(0);
    for ck in outcome.checkpoints.iter().filter(|c| c.epoch > 0) {
        let orch = ck.orchestrator();
        let settings = probe_settings(cfg, ck);
        for input in &inputs {
            let collab = orch.interaction_matrix(&input.outputs)?;
            let s = probes::sequence_distribution(&orch, input, &settings)?;
            let mut rng = crate::rng::stream(
                cfg.seed,
                &[
                    crate::rng::lane::PROBE,
                    crate::rng::fnv1a(input.prompt.id.as_bytes()),
                    ck.epoch as u64,
                ],
            );
            let roll = orch.rollout(
                &input.prompt.id,
                &input.prompt_emb,
                &input.outputs,
                settings.k,
                ck.gumbel_temp,
                &mut rng,
            )?;
            let mut rec = TraceRecord::new(&input.prompt.id, ck.epoch);
            rec.c = Some(collab.c.clone());
            rec.s = Some(s);
            rec.sequence = Some(
                roll.sequence
                    .iter()
                    .map(|&pos| consortium.profiles[pos].expert_id)
                    .collect(),
            );
            rec.entropies = Some(
                consortium
                    .profiles
                    .iter()
                    .zip(&input.token_entropies)
                    .map(|(p, &h)| (p.expert_id.to_string(), h))
                    .collect(),
            );
            if ck.epoch == last_epoch {
                rec.text = Some(input.prompt.text.clone());
                rec.task_tag = Some(input.prompt.task_tag);
                rec.target = Some(input.prompt.target.clone());
                rec.oracle = Some(oracle_respond(&input.prompt).embedding);
                rec.experts = Some(
                    consortium
                        .profiles
                        .iter()
                        .zip(input.outputs.iter().zip(&input.token_entropies))
                        .map(|(p, (h, &ent))| ExpertEmbeddingRecord {
                            expert_id: p.expert_id,
                            h: h.clone(),
                            token_entropy: ent,
                        })
                        .collect(),
                );
            }
            records.push(rec);
        }
    }
    crate::trace::write_trace(&paths.trace(), &records)?;

    Ok(RunArtifact {
        config_hash: hash,
        run_dir: out_dir.to_path_buf(),
        checkpoints: checkpoint_paths,
        metrics: paths.metrics(),
        trace: paths.trace(),
    })
}

// ---------------------------------------------------------------------------
// run loading
// ---------------------------------------------------------------------------

pub struct LoadedRun {
    pub cfg: RunConfig,
    pub hash: String,
    pub checkpoints: Vec<Checkpoint>,
    pub consortium: Consortium,
    pub probe_prompts: Vec<PromptInstance>,
}

pub fn load_run(run_dir: &Path) -> Result<LoadedRun> {
    let paths = RunPaths::new(run_dir);
    if !paths.config().exists() {
        return Err(Error::Config(format!(
            "no run at {}: missing config.toml",
            run_dir.display()
        )));
    }
    let text = std::fs::read_to_string(paths.config())?;
    let cfg = RunConfig::from_toml(&text)?;
    let hash = cfg.hash()?;
    let mut checkpoints = Vec::new();
    for epoch in 0..=cfg.train.epochs {
        let path = paths.checkpoint(epoch);
        if path.exists() {
            let ck = Checkpoint::load(&path)?;
            ck.ensure_config(&hash)?;
            checkpoints.push(ck);
        }
    }
    if checkpoints.is_empty() {
        return Err(Error::Config(format!(
            "no checkpoints under {}",
            paths.checkpoints_dir().display()
        )));
    }
    let consortium = cfg.consortium()?;
    let probe_prompts = cfg.probe_prompts();
    Ok(LoadedRun {
        cfg,
        hash,
        checkpoints,
        consortium,
        probe_prompts,
    })
}

fn trained_checkpoints(run: &LoadedRun) -> Vec<&Checkpoint> {
    run.checkpoints.iter().filter(|c| c.epoch > 0).collect()
}

// ---------------------------------------------------------------------------
// probe
// ---------------------------------------------------------------------------

pub fn cmd_probe(run_dir: &Path, epoch: Option<usize>) -> Result<Vec<ProbeReport>> {
    let run = load_run(run_dir)?;
    let paths = RunPaths::new(run_dir);
    std::fs::create_dir_all(paths.probes_dir())?;
    let inputs = probes::probe_inputs(&run.consortium, &run.probe_prompts, run.cfg.seed)?;
    let n = run.consortium.len();

    let selected: Vec<&Checkpoint> = run
        .checkpoints
        .iter()
        .filter(|c| epoch.map_or(true, |e| c.epoch == e))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!("no checkpoint for epoch {epoch:?}")));
    }

    let mut reports = Vec::new();
    for ck in selected {
        let orch = ck.orchestrator();
        let settings = probe_settings(&run.cfg, ck);
        let intrinsic_self =
            probes::intrinsic_importance(&orch, &inputs, AttributionMode::SelfProb, &settings)?;
        let intrinsic_selected =
            probes::intrinsic_importance(&orch, &inputs, AttributionMode::Selected, &settings)?;
        let mut mean_u = vec![0.0f64; n];
        let mut mean_s = vec![0.0f64; n];
        let mut collab_ent = 0.0;
        for input in &inputs {
            let c = orch.interaction_matrix(&input.outputs)?;
            collab_ent += probes::collab_entropy(&c) / inputs.len() as f64;
            for (j, u) in probes::relational_importance(&c).iter().enumerate() {
                mean_u[j] += u / inputs.len() as f64;
            }
            let s = probes::sequence_distribution(&orch, input, &settings)?;
            for (j, v) in s.iter().enumerate() {
                mean_s[j] += v / inputs.len() as f64;
            }
        }
        let alignment_self = probes::alignment_report(&intrinsic_self, &mean_u)?;

        for (mode, vec) in [("self", &intrinsic_self), ("selected", &intrinsic_selected)] {
            let rep = AttributionReport {
                epoch: ck.epoch,
                intrinsic: vec.clone(),
                relational: mean_u.clone(),
                sample_count: inputs.len(),
                mode: if mode == "self" {
                    AttributionMode::SelfProb
                } else {
                    AttributionMode::Selected
                },
            };
            save_json(&paths.attribution_report(mode, ck.epoch), &rep)?;
        }

        let report = ProbeReport {
            epoch: ck.epoch,
            collab_entropy: collab_ent,
            ordering_entropy: probes::dist_entropy(&mean_s),
            gini: probes::gini(&mean_u)?,
            intrinsic_self,
            intrinsic_selected,
            relational: mean_u,
            alignment_self,
            perturbations: Vec::new(),
            maskings: Vec::new(),
        };
        report.validate(n)?;
        save_json(&paths.probe_report(ck.epoch), &report)?;
        reports.push(report);
    }
    Ok(reports)
}

// ---------------------------------------------------------------------------
// perturb
// ---------------------------------------------------------------------------

pub fn cmd_perturb(run_dir: &Path, kinds: &[PerturbationKind]) -> Result<PerturbationReport> {
    let run = load_run(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let mut rows = Vec::new();
    for ck in trained_checkpoints(&run) {
        let orch = ck.orchestrator();
        let settings = probe_settings(&run.cfg, ck);
        for &kind in kinds {
            let spec = PerturbationSpec {
                kind,
                seed: run.cfg.probe.perturbation_seed,
            };
            let sens = probes::perturbation_sensitivity(
                &orch,
                &run.consortium,
                &run.probe_prompts,
                &spec,
                &settings,
                run.cfg.seed,
            )?;
            rows.push(PerturbationEpochRow {
                epoch: ck.epoch,
                kind,
                kl_sequence: sens.kl_sequence,
                delta_entropy: sens.delta_entropy,
                kl_routing: sens.kl_routing,
                changed_fraction: sens.changed_fraction,
            });
        }
    }
    let report = PerturbationReport { rows };
    save_json(&paths.perturbation(), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// mask
// ---------------------------------------------------------------------------

pub fn cmd_mask(run_dir: &Path, strategies: &[MaskingStrategy]) -> Result<MaskingReport> {
    let run = load_run(run_dir)?;
    let paths = RunPaths::new(run_dir);
    let inputs = probes::probe_inputs(&run.consortium, &run.probe_prompts, run.cfg.seed)?;

    // Attribution-based targets are shared across strategies and random
    // seeds, so compute them once per checkpoint; each distinct masked
    // expert is evaluated once.
    let mut rows_by_strategy: BTreeMap<&'static str, Vec<MaskingEpochRow>> = BTreeMap::new();
    for ck in trained_checkpoints(&run) {
        let orch = ck.orchestrator();
        let settings = probe_settings(&run.cfg, ck);
        let targets = probes::mask_targets(&orch, &inputs, &settings)?;
        let mut effect_cache: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
        let mut effect = |target: usize| -> Result<(f64, f64)> {
            if let Some(&hit) = effect_cache.get(&target) {
                return Ok(hit);
            }
            let out = probes::masking_effect(&orch, &inputs, target, &settings)?;
            effect_cache.insert(target, out);
            Ok(out)
        };
        for &strategy in strategies {
            let row = if strategy == MaskingStrategy::RandomNontop {
                let seeds = run.cfg.probe.nontop_seeds.max(1);
                let mut acc_seq = 0.0;
                let mut acc_rout = 0.0;
                let mut first_expert = None;
                for s in 0..seeds {
                    let target = targets.choose(strategy, run.cfg.seed ^ (0xa5a5 + s as u64))?;
                    first_expert.get_or_insert(target);
                    let (kl_seq, kl_rout) = effect(target)?;
                    acc_seq += kl_seq / seeds as f64;
                    acc_rout += kl_rout / seeds as f64;
                }
                MaskingEpochRow {
                    epoch: ck.epoch,
                    expert: first_expert.unwrap(),
                    kl_sequence: acc_seq,
                    kl_routing: acc_rout,
                }
            } else {
                let target = targets.choose(strategy, run.cfg.seed)?;
                let (kl_sequence, kl_routing) = effect(target)?;
                MaskingEpochRow {
                    epoch: ck.epoch,
                    expert: target,
                    kl_sequence,
                    kl_routing,
                }
            };
            rows_by_strategy
                .entry(strategy.name())
                .or_default()
                .push(row);
        }
    }

    let mut summaries = Vec::new();
    for &strategy in strategies {
        let rows = rows_by_strategy.remove(strategy.name()).unwrap_or_default();
        summaries.push(MaskingSummary::from_rows(strategy, rows)?);
    }

    // paired comparisons on per-epoch routing KLs
    let mut comparisons = Vec::new();
    let find = |s: MaskingStrategy| summaries.iter().find(|m| m.strategy == s);
    if let (Some(a), Some(b)) = (
        find(MaskingStrategy::TopIntrinsic),
        find(MaskingStrategy::TopFrequent),
    ) {
        let diffs: Vec<f64> = a
            .per_epoch
            .iter()
            .zip(&b.per_epoch)
            .map(|(x, y)| x.kl_routing - y.kl_routing)
            .collect();
        comparisons.push(MaskingComparison {
            baseline: MaskingStrategy::TopIntrinsic,
            against: MaskingStrategy::TopFrequent,
            wilcoxon: stats::wilcoxon_signed_rank(&diffs).ok(),
            paired_t: stats::paired_t(&diffs).ok(),
        });
    }
    if let (Some(a), Some(b)) = (
        find(MaskingStrategy::TopIntrinsic),
        find(MaskingStrategy::RandomNontop),
    ) {
        let diffs: Vec<f64> = a
            .per_epoch
            .iter()
            .zip(&b.per_epoch)
            .map(|(x, y)| x.kl_routing - y.kl_routing)
            .collect();
        comparisons.push(MaskingComparison {
            baseline: MaskingStrategy::TopIntrinsic,
            against: MaskingStrategy::RandomNontop,
            wilcoxon: stats::wilcoxon_signed_rank(&diffs).ok(),
            paired_t: stats::paired_t(&diffs).ok(),
        });
    }

    let report = MaskingReport {
        summaries,
        comparisons,
    };
    save_json(&paths.masking(), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// cascade
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CascadeReport {
    pub threshold: f64,
    pub beta: f64,
    /// Hard stopping frequency per cascade position.
    pub stop_frequency: Vec<f64>,
    /// Mean soft stopping distribution.
    pub mean_stop_probs: Vec<f64>,
    /// Mean |d p_stop(i) / d H_i| per position.
    pub sensitivity: Vec<f64>,
    /// KL collapse of the stopping distribution when each expert is
    /// skipped (restricted to survivors, baseline renormalized).
    pub skip_kl: Vec<f64>,
}

pub fn cmd_cascade(cfg: &RunConfig, out_dir: &Path) -> Result<CascadeReport> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let consortium = cfg.consortium()?;
    let ordered = cascade_order(&consortium);
    let n = ordered.len();
    let prompts = cfg.probe_prompts();
    let threshold = cfg.cascade.threshold;
    let beta = cfg.cascade.beta;

    let mut stop_counts = vec![0.0f64; n];
    let mut mean_probs = vec![0.0f64; n];
    let mut entropy_sets = Vec::with_capacity(prompts.len());
    for p in &prompts {
        let rec = crate::orchestrator::cascade_run(&consortium, threshold, p, beta, cfg.seed)?;
        stop_counts[rec.stopping_index] += 1.0;
        for (i, pr) in rec.stop_probs.iter().enumerate() {
            mean_probs[i] += pr / prompts.len() as f64;
        }
        entropy_sets.push(rec.entropies);
    }
    for c in stop_counts.iter_mut() {
        *c /= prompts.len() as f64;
    }
    let sensitivity = probes::cascade_sensitivity(&entropy_sets, threshold, beta)?;

    // masking intervention: skip one expert, compare stopping distributions
    let mut skip_kl = vec![0.0f64; n];
    for skip in 0..n {
        let mut acc = 0.0;
        for hs in &entropy_sets {
            let baseline = crate::orchestrator::stop_probs(hs, threshold, beta);
            let survivors: Vec<usize> = (0..n).filter(|&i| i != skip).collect();
            let reduced_h: Vec<f64> = survivors.iter().map(|&i| hs[i]).collect();
            let reduced = crate::orchestrator::stop_probs(&reduced_h, threshold, beta);
            let mut base_rest: Vec<f64> = survivors.iter().map(|&i| baseline[i]).collect();
            let sum: f64 = base_rest.iter().sum();
            if sum > 0.0 {
                for x in base_rest.iter_mut() {
                    *x /= sum;
                }
            }
            acc += probes::kl_divergence(&base_rest, &reduced, cfg.probe.epsilon);
        }
        skip_kl[skip] = acc / entropy_sets.len() as f64;
    }

    let report = CascadeReport {
        threshold,
        beta,
        stop_frequency: stop_counts,
        mean_stop_probs: mean_probs,
        sensitivity,
        skip_kl,
    };
    save_json(&RunPaths::new(out_dir).cascade(), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

pub fn cmd_report(run_dir: &Path) -> Result<RunSummary> {
    let run = load_run(run_dir)?;
    let paths = RunPaths::new(run_dir);
    if !paths.metrics().exists() {
        return Err(Error::Config(format!(
            "run {} has no metrics log",
            run_dir.display()
        )));
    }
    std::fs::create_dir_all(paths.reports_dir())?;

    // metrics.jsonl -> metrics.csv
    let metrics_text = std::fs::read_to_string(paths.metrics())?;
    let mut metrics: Vec<training::EpochMetrics> = Vec::new();
    for (i, line) in metrics_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        metrics.push(serde_json::from_str(line).map_err(|e| Error::Schema {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    let mut table = CsvTable::new(&[
        "epoch",
        "utility",
        "distill",
        "symm",
        "spar",
        "oracle",
        "diver",
        "sel",
        "len",
        "total",
        "diver_literal",
        "diver_intent",
        "collab_entropy",
        "ordering_entropy",
        "gini",
        "k",
        "gumbel_temp",
        "learning_rate",
    ]);
    for m in &metrics {
        table.push(vec![
            m.epoch.to_string(),
            fmt_sig6(m.loss.utility),
            fmt_sig6(m.loss.distill),
            fmt_sig6(m.loss.symm),
            fmt_sig6(m.loss.spar),
            fmt_sig6(m.loss.oracle),
            fmt_sig6(m.loss.diver),
            fmt_sig6(m.loss.sel),
            fmt_sig6(m.loss.len),
            fmt_sig6(m.loss.total),
            fmt_sig6(m.diver_literal),
            fmt_sig6(m.diver_intent),
            fmt_sig6(m.collab_entropy),
            fmt_sig6(m.ordering_entropy),
            fmt_sig6(m.gini),
            m.k.to_string(),
            fmt_sig6(m.gumbel_temp),
            fmt_sig6(m.learning_rate),
        ]);
    }
    table.write(&paths.reports_dir().join("metrics.csv"))?;

    // probe reports -> attribution.csv + alignment.csv + summary sections
    let mut alignment_by_epoch = BTreeMap::new();
    let mut attribution = CsvTable::new(&[
        "epoch",
        "expert",
        "intrinsic_self",
        "intrinsic_selected",
        "relational",
    ]);
    let mut intrinsic_by_epoch = BTreeMap::new();
    let mut relational_by_epoch = BTreeMap::new();
    let mut final_probe: Option<ProbeReport> = None;
    for epoch in 0..=run.cfg.train.epochs {
        let path = paths.probe_report(epoch);
        if !path.exists() {
            continue;
        }
        let rep: ProbeReport = crate::report::load_json(&path)?;
        for e in 0..rep.intrinsic_self.len() {
            let row = AttributionRow {
                epoch,
                expert: e + 1,
                intrinsic_self: rep.intrinsic_self[e],
                intrinsic_selected: rep.intrinsic_selected[e],
                relational: rep.relational[e],
            };
            attribution.push(vec![
                row.epoch.to_string(),
                row.expert.to_string(),
                fmt_sig6(row.intrinsic_self),
                fmt_sig6(row.intrinsic_selected),
                fmt_sig6(row.relational),
            ]);
        }
        alignment_by_epoch.insert(epoch, rep.alignment_self.clone());
        intrinsic_by_epoch.insert(epoch, rep.intrinsic_self.clone());
        relational_by_epoch.insert(epoch, rep.relational.clone());
        final_probe = Some(rep);
    }
    if !attribution.rows.is_empty() {
        attribution.write(&paths.reports_dir().join("attribution.csv"))?;
        let mut alignment = CsvTable::new(&[
            "epoch",
            "spearman_rho",
            "spearman_p",
            "spearman_p_exact",
            "kendall_tau",
            "kendall_p",
        ]);
        for (epoch, a) in &alignment_by_epoch {
            alignment.push(vec![
                epoch.to_string(),
                fmt_sig6(a.spearman_rho),
                fmt_sig6(a.spearman_p),
                a.spearman_p_exact.map(fmt_sig6).unwrap_or_default(),
                fmt_sig6(a.kendall_tau),
                fmt_sig6(a.kendall_p),
            ]);
        }
        alignment.write(&paths.reports_dir().join("alignment.csv"))?;
    }

    // perturbation.json -> perturbation.csv
    let perturbation: Option<PerturbationReport> = if paths.perturbation().exists() {
        let rep: PerturbationReport = crate::report::load_json(&paths.perturbation())?;
        let mut t = CsvTable::new(&[
            "epoch",
            "kind",
            "kl_sequence",
            "delta_entropy",
            "kl_routing",
            "changed_fraction",
        ]);
        for r in &rep.rows {
            t.push(vec![
                r.epoch.to_string(),
                r.kind.name().to_string(),
                fmt_sig6(r.kl_sequence),
                fmt_sig6(r.delta_entropy),
                fmt_sig6(r.kl_routing),
                fmt_sig6(r.changed_fraction),
            ]);
        }
        t.write(&paths.reports_dir().join("perturbation.csv"))?;
        Some(rep)
    } else {
        None
    };

    // masking.json -> masking.csv with the derived-ratio column
    let masking: Option<MaskingReport> = if paths.masking().exists() {
        let rep: MaskingReport = crate::report::load_json(&paths.masking())?;
        let mut t = CsvTable::new(&[
            "strategy",
            "kl_sequence_mean",
            "kl_sequence_ci95",
            "kl_routing_mean",
            "kl_routing_ci95",
            "routing_to_sequence_ratio",
        ]);
        for s in &rep.summaries {
            t.push(vec![
                s.strategy.name().to_string(),
                fmt_sig6(s.kl_sequence_mean),
                fmt_sig6(s.kl_sequence_ci95),
                fmt_sig6(s.kl_routing_mean),
                fmt_sig6(s.kl_routing_ci95),
                fmt_sig6(s.routing_to_sequence_ratio),
            ]);
        }
        t.write(&paths.reports_dir().join("masking.csv"))?;
        Some(rep)
    } else {
        None
    };

    // heatmaps: mean interaction matrix per epoch from traces
    if paths.trace().exists() {
        let records = crate::trace::read_trace(&paths.trace())?;
        let n = run.consortium.len();
        let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
        for r in &records {
            if let Some(c) = &r.c {
                let entry = sums.entry(r.epoch).or_insert((vec![0.0; n * n], 0));
                for (i, v) in c.iter().enumerate() {
                    entry.0[i] += v;
                }
                entry.1 += 1;
            }
        }
        let collab_by_epoch: BTreeMap<usize, Vec<f64>> = sums
            .into_iter()
            .map(|(e, (sum, count))| (e, sum.into_iter().map(|x| x / count as f64).collect()))
            .collect();
        let export = HeatmapExport {
            n,
            labels: run
                .consortium
                .profiles
                .iter()
                .map(|p| format!("expert_{}", p.expert_id))
                .collect(),
            collab_by_epoch,
            intrinsic_by_epoch,
            relational_by_epoch,
        };
        save_json(&paths.reports_dir().join("heatmaps.json"), &export)?;
    }

    let last_metrics = metrics
        .last()
        .ok_or_else(|| Error::Config("empty metrics log".into()))?;
    let summary = RunSummary {
        config_hash: run.hash.clone(),
        epochs: run.cfg.train.epochs,
        final_collab_entropy: final_probe
            .as_ref()
            .map(|p| p.collab_entropy)
            .unwrap_or(last_metrics.collab_entropy),
        final_ordering_entropy: final_probe
            .as_ref()
            .map(|p| p.ordering_entropy)
            .unwrap_or(last_metrics.ordering_entropy),
        final_gini: final_probe
            .as_ref()
            .map(|p| p.gini)
            .unwrap_or(last_metrics.gini),
        alignment_by_epoch,
        masking,
        perturbation,
    };
    save_json(&paths.reports_dir().join("summary.json"), &summary)?;
    Ok(summary)
}
