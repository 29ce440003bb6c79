//! The measurement suite. Each probe reads a frozen controller and reports
//! one facet of its behavior:
//!
//! * [`relational_importance`] — incoming routing mass per expert,
//! * [`intrinsic_importance`] — gradient-norm sensitivity of selection
//!   log-probabilities to expert representations,
//! * [`collab_entropy`] / [`dist_entropy`] / [`gini`] — confidence and
//!   centralization summaries,
//! * [`perturbation_sensitivity`] — KL shifts under targeted prompt damage,
//! * [`masking_analysis`] — routing collapse when an expert is removed,
//! * [`alignment_report`] — rank agreement between the two importance views,
//! * [`cascade_sensitivity`] — stopping-probability derivatives in cascade
//!   mode.
//!
//! All probes are read-only and prompt-parallel in principle; results are
//! reduced in fixed prompt order so reports are reproducible.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{log_softmax_at, softmax_masked, Real, Tape, Var, MASK_SENTINEL};
use crate::error::{Error, Result};
use crate::experts::{encode_prompt, Consortium, PromptInstance};
use crate::orchestrator::{rollout_core, CollabMatrix, Driver, Orchestrator};
use crate::rng::{self, lane};
use crate::stats;

// ---------------------------------------------------------------------------
// Scalar metrics
// ---------------------------------------------------------------------------

/// Incoming routing mass per expert: u_j = sum_{i != j} C_ij.
pub fn relational_importance(c: &CollabMatrix) -> Vec<f64> {
    let n = c.n;
    (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..n {
                if i != j {
                    acc += c.at(i, j);
                }
            }
            acc
        })
        .collect()
}

/// Shannon entropy in nats; 0 log 0 = 0.
pub fn dist_entropy(p: &[f64]) -> f64 {
    p.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

/// Mean row entropy of the interaction matrix (rows with zero mass --
/// masked experts -- are excluded from the mean).
pub fn collab_entropy(c: &CollabMatrix) -> f64 {
    let mut total = 0.0;
    let mut rows = 0usize;
    for i in 0..c.n {
        let row = c.row(i);
        if row.iter().sum::<f64>() > 0.0 {
            total += dist_entropy(row);
            rows += 1;
        }
    }
    if rows == 0 {
        0.0
    } else {
        total / rows as f64
    }
}

/// Gini coefficient of a nonnegative mass vector:
/// G = sum_ij |u_i - u_j| / (2 n sum_k u_k). Scale invariant, in [0, 1-1/n].
pub fn gini(u: &[f64]) -> Result<f64> {
    if u.iter().any(|&x| x < 0.0) {
        return Err(Error::NonFinite("gini input sign"));
    }
    let total: f64 = u.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroMass);
    }
    let n = u.len() as f64;
    let mut acc = 0.0;
    for &a in u {
        for &b in u {
            acc += (a - b).abs();
        }
    }
    Ok(acc / (2.0 * n * total))
}

/// Smoothed KL divergence: both vectors are shifted by epsilon and
/// renormalized before sum(p * ln(p/q)). KL(p, p) is exactly 0.
pub fn kl_divergence(p: &[f64], q: &[f64], epsilon: f64) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let ps: f64 = p.iter().map(|x| x + epsilon).sum();
    let qs: f64 = q.iter().map(|x| x + epsilon).sum();
    let mut acc = 0.0;
    for i in 0..p.len() {
        let pi = (p[i] + epsilon) / ps;
        let qi = (q[i] + epsilon) / qs;
        acc += pi * (pi / qi).ln();
    }
    acc
}

// ---------------------------------------------------------------------------
// Probe inputs and settings
// ---------------------------------------------------------------------------

/// Everything a probe needs about one prompt.
#[derive(Debug, Clone)]
pub struct ProbeInput {
    pub prompt: PromptInstance,
    pub prompt_emb: Vec<f64>,
    pub outputs: Vec<Vec<f64>>,
    pub token_entropies: Vec<f64>,
}

/// Materialize probe inputs for a prompt set (expert streams derive from
/// the run seed, so probes see the same consortium behavior as training).
pub fn probe_inputs(
    consortium: &Consortium,
    prompts: &[PromptInstance],
    run_seed: u64,
) -> Result<Vec<ProbeInput>> {
    prompts
        .iter()
        .map(|p| {
            let outputs = consortium.respond_all(p, run_seed)?;
            Ok(ProbeInput {
                prompt_emb: encode_prompt(&p.text, consortium.dim)?,
                token_entropies: outputs.iter().map(|o| o.token_entropy).collect(),
                outputs: outputs.into_iter().map(|o| o.embedding).collect(),
                prompt: p.clone(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeSettings {
    /// Monte-Carlo draws for the sampled first-selection distribution.
    pub mc_draws: usize,
    /// KL smoothing epsilon.
    pub epsilon: f64,
    /// Use the closed-form softmax(logits / temperature) instead of draws.
    pub closed_form: bool,
    /// Seed for probe-side noise (draws, random masking choices).
    pub probe_seed: u64,
    /// Gumbel temperature at which the system samples (the final annealed
    /// value of a trained checkpoint).
    pub gumbel_temp: f64,
    /// Steps per rollout when a realized sequence is needed.
    pub k: usize,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            mc_draws: 64,
            epsilon: 1e-10,
            closed_form: false,
            probe_seed: 0,
            gumbel_temp: 1.0,
            k: 1,
        }
    }
}

// ---------------------------------------------------------------------------
// Sequence distribution s(x)
// ---------------------------------------------------------------------------

/// First-selection distribution s(x).
///
/// By default this is the empirical frequency of the hard Gumbel draw over
/// `mc_draws` fixed-seed samples -- the sampling distribution the system
/// actually uses -- with per-slot noise aligned across runs so that masked
/// or perturbed variants share draws. `closed_form` switches to
/// softmax(logits / temperature).
pub fn sequence_distribution(
    orch: &Orchestrator,
    input: &ProbeInput,
    settings: &ProbeSettings,
) -> Result<Vec<f64>> {
    let n = orch.params.dims.n;
    let available: BTreeSet<usize> = (0..n).filter(|i| !orch.masked().contains(i)).collect();
    if available.is_empty() {
        return Err(Error::AllMasked);
    }
    let collab = orch.interaction_matrix(&input.outputs)?;
    let logits = orch.selection_logits(&input.prompt_emb, &collab, 0, &available)?;
    let tau = settings.gumbel_temp;
    if settings.closed_form {
        let scaled: Vec<f64> = logits
            .iter()
            .map(|&l| {
                if l > MASK_SENTINEL / 2.0 {
                    l / tau
                } else {
                    MASK_SENTINEL
                }
            })
            .collect();
        return Ok(softmax_masked(&scaled));
    }
    let mut counts = vec![0.0f64; n];
    let pid = rng::fnv1a(input.prompt.id.as_bytes());
    for draw in 0..settings.mc_draws {
        let mut r = rng::stream(settings.probe_seed, &[lane::PROBE, pid, draw as u64]);
        // per-slot noise for all n experts keeps draws aligned across
        // masked/perturbed variants
        let noise: Vec<f64> = (0..n).map(|_| rng::gumbel(&mut r)).collect();
        let pick = available
            .iter()
            .copied()
            .max_by(|&a, &b| (logits[a] / tau + noise[a]).total_cmp(&(logits[b] / tau + noise[b])))
            .unwrap();
        counts[pick] += 1.0;
    }
    let total = settings.mc_draws as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

// ---------------------------------------------------------------------------
// Intrinsic importance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    /// ||grad_{h_i} log P(E_i | x)||_2 per expert (the displayed formula).
    SelfProb,
    /// ||grad_{h_i} log P(E_sel | x)||_2 at each step's realized selection.
    Selected,
}

/// Per-expert intrinsic importance and relational mass for one epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub epoch: usize,
    pub intrinsic: Vec<f64>,
    pub relational: Vec<f64>,
    pub sample_count: usize,
    pub mode: AttributionMode,
}

/// Gradient-norm attribution of selection log-probabilities to expert
/// representations, averaged across steps and prompts.
///
/// The selection law is the closed-form hard-draw distribution
/// P(. | x) = softmax(logits / temperature); realized sequences come from a
/// seeded rollout and are held fixed while differentiating.
pub fn intrinsic_importance(
    orch: &Orchestrator,
    inputs: &[ProbeInput],
    mode: AttributionMode,
    settings: &ProbeSettings,
) -> Result<Vec<f64>> {
    let n = orch.params.dims.n;
    let d = orch.params.dims.d;
    let mut acc = vec![0.0f64; n];
    let mut counts = vec![0usize; n];

    for input in inputs {
        // realized sequence at fixed probe seed
        let pid = rng::fnv1a(input.prompt.id.as_bytes());
        let mut r = rng::stream(settings.probe_seed, &[lane::PROBE, pid, u64::MAX]);
        let sampled = orch.rollout(
            &input.prompt.id,
            &input.prompt_emb,
            &input.outputs,
            settings.k,
            settings.gumbel_temp,
            &mut r,
        )?;

        // replay on a tape with expert embeddings as the differentiable
        // inputs and parameters as constants
        let tape = Tape::new();
        let h_vars: Vec<Vec<Var>> = input.outputs.iter().map(|h| tape.vars(h)).collect();
        let flat = orch.params.flatten();
        let consts: Vec<Var> = flat.iter().map(|&v| tape.constant(v)).collect();
        let lifted = crate::orchestrator::LiftedParams::from_slice(orch.params.dims, &consts);
        let x_consts: Vec<Var> = input.prompt_emb.iter().map(|&v| tape.constant(v)).collect();
        let core = rollout_core(
            &lifted,
            &h_vars,
            &x_consts,
            &orch.opts,
            orch.masked(),
            settings.k,
            settings.gumbel_temp,
            &mut Driver::Replay {
                transcript: &sampled.transcript,
            },
        )?;

        let tau = settings.gumbel_temp;
        for (t, step) in core.steps.iter().enumerate() {
            let avail: BTreeSet<usize> = sampled.steps[t].available.iter().copied().collect();
            let scaled: Vec<Var> = step
                .logits
                .iter()
                .map(|&l| l.mul_const(1.0 / tau))
                .collect();
            match mode {
                AttributionMode::Selected => {
                    let chosen = sampled.steps[t].chosen;
                    let logp = log_softmax_at(&scaled, chosen);
                    if !logp.value().is_finite() {
                        return Err(Error::NonFiniteGradient(input.prompt.id.clone()));
                    }
                    let grads = logp.backward();
                    for i in 0..n {
                        let norm = grad_norm(&grads, &h_vars[i], d);
                        acc[i] += norm;
                        counts[i] += 1;
                    }
                }
                AttributionMode::SelfProb => {
                    for i in avail.iter().copied() {
                        let logp = log_softmax_at(&scaled, i);
                        if !logp.value().is_finite() {
                            return Err(Error::NonFiniteGradient(input.prompt.id.clone()));
                        }
                        let grads = logp.backward();
                        acc[i] += grad_norm(&grads, &h_vars[i], d);
                        counts[i] += 1;
                    }
                }
            }
        }
    }
    Ok((0..n)
        .map(|i| {
            if counts[i] == 0 {
                0.0
            } else {
                acc[i] / counts[i] as f64
            }
        })
        .collect())
}

fn grad_norm(grads: &crate::diff::Grads, h: &[Var], d: usize) -> f64 {
    let mut acc = 0.0;
    for v in h.iter().take(d) {
        let g = grads.wrt(*v);
        acc += g * g;
    }
    acc.sqrt()
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    RemoveNumbers,
    MaskNumbers,
    ShuffleSentences,
    RemoveReasoning,
}

impl PerturbationKind {
    pub fn all() -> [PerturbationKind; 4] {
        [
            PerturbationKind::RemoveNumbers,
            PerturbationKind::MaskNumbers,
            PerturbationKind::ShuffleSentences,
            PerturbationKind::RemoveReasoning,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            PerturbationKind::RemoveNumbers => "remove_numbers",
            PerturbationKind::MaskNumbers => "mask_numbers",
            PerturbationKind::ShuffleSentences => "shuffle_sentences",
            PerturbationKind::RemoveReasoning => "remove_reasoning",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedText {
    pub text: String,
    /// False when the perturbation had nothing to act on.
    pub changed: bool,
}

/// The versioned reasoning-cue lexicon.
pub const REASONING_CUES: [&str; 8] = [
    "because",
    "therefore",
    "so",
    "step by step",
    "let's think",
    "first,",
    "then,",
    "thus",
];

fn number_regex() -> regex::Regex {
    // maximal digit runs with interior decimal points; trailing sentence
    // punctuation stays
    regex::Regex::new(r"[0-9]+(\.[0-9]+)*").unwrap()
}

/// Deterministic text perturbation of the requested class.
pub fn perturb_prompt(text: &str, spec: &PerturbationSpec) -> PerturbedText {
    let out = match spec.kind {
        PerturbationKind::RemoveNumbers => number_regex().replace_all(text, "").into_owned(),
        PerturbationKind::MaskNumbers => number_regex().replace_all(text, "[NUM]").into_owned(),
        PerturbationKind::ShuffleSentences => shuffle_sentences(text, spec.seed),
        PerturbationKind::RemoveReasoning => remove_reasoning(text),
    };
    PerturbedText {
        changed: out != text,
        text: out,
    }
}

fn shuffle_sentences(text: &str, seed: u64) -> String {
    // split into sentence segments, each keeping its terminator
    let mut segments: Vec<String> = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if matches!(ch, '.' | '?' | '!') {
            let trimmed = current.trim();
            if !trimmed.is_empty() {
                segments.push(trimmed.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        segments.push(tail.to_string());
    }
    if segments.len() <= 1 {
        return text.to_string();
    }
    let mut order: Vec<usize> = (0..segments.len()).collect();
    let mut r = rng::stream(seed, &[lane::PERTURB]);
    for i in (1..order.len()).rev() {
        let j = (rng::uniform(&mut r) * (i + 1) as f64) as usize;
        order.swap(i, j.min(i));
    }
    order
        .into_iter()
        .map(|i| segments[i].clone())
        .collect::<Vec<_>>()
        .join(" ")
}

fn remove_reasoning(text: &str) -> String {
    let mut out = text.to_string();
    for cue in REASONING_CUES {
        let escaped = regex::escape(cue);
        let trailing_word = cue
            .chars()
            .last()
            .map(|c| c.is_alphanumeric())
            .unwrap_or(false);
        let pattern = if trailing_word {
            format!(r"(?i)\b{escaped}\b")
        } else {
            format!(r"(?i)\b{escaped}")
        };
        out = regex::Regex::new(&pattern)
            .unwrap()
            .replace_all(&out, "")
            .into_owned();
    }
    out
}

/// Mean sensitivity of routing to one perturbation class over a prompt set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationSensitivity {
    pub kind: PerturbationKind,
    /// Mean KL between baseline and perturbed first-selection distributions.
    pub kl_sequence: f64,
    /// Mean entropy shift (perturbed minus baseline).
    pub delta_entropy: f64,
    /// Mean per-row KL between baseline and perturbed interaction matrices.
    pub kl_routing: f64,
    /// Fraction of prompts the perturbation actually changed.
    pub changed_fraction: f64,
}

/// Compare routing before and after perturbing each prompt's text. Expert
/// streams are keyed by prompt id, so differences come only from the text.
pub fn perturbation_sensitivity(
    orch: &Orchestrator,
    consortium: &Consortium,
    prompts: &[PromptInstance],
    spec: &PerturbationSpec,
    settings: &ProbeSettings,
    run_seed: u64,
) -> Result<PerturbationSensitivity> {
    let baseline = probe_inputs(consortium, prompts, run_seed)?;
    let perturbed_prompts: Vec<(PromptInstance, bool)> = prompts
        .iter()
        .map(|p| {
            let pt = perturb_prompt(&p.text, spec);
            (
                PromptInstance {
                    id: p.id.clone(),
                    text: pt.text,
                    target: p.target.clone(),
                    task_tag: p.task_tag,
                },
                pt.changed,
            )
        })
        .collect();
    let perturbed = probe_inputs(
        consortium,
        &perturbed_prompts
            .iter()
            .map(|(p, _)| p.clone())
            .collect::<Vec<_>>(),
        run_seed,
    )?;

    let mut kl_seq = 0.0;
    let mut d_ent = 0.0;
    let mut kl_rout = 0.0;
    let mut changed = 0usize;
    for (b, (p, was_changed)) in baseline.iter().zip(
        perturbed
            .iter()
            .zip(perturbed_prompts.iter().map(|(_, c)| *c)),
    ) {
        let s_base = sequence_distribution(orch, b, settings)?;
        let s_pert = sequence_distribution(orch, p, settings)?;
        kl_seq += kl_divergence(&s_base, &s_pert, settings.epsilon);
        d_ent += dist_entropy(&s_pert) - dist_entropy(&s_base);
        let c_base = orch.interaction_matrix(&b.outputs)?;
        let c_pert = orch.interaction_matrix(&p.outputs)?;
        let mut row_acc = 0.0;
        for i in 0..c_base.n {
            row_acc += kl_divergence(c_base.row(i), c_pert.row(i), settings.epsilon);
        }
        kl_rout += row_acc / c_base.n as f64;
        if was_changed {
            changed += 1;
        }
    }
    let m = prompts.len() as f64;
    Ok(PerturbationSensitivity {
        kind: spec.kind,
        kl_sequence: kl_seq / m,
        delta_entropy: d_ent / m,
        kl_routing: kl_rout / m,
        changed_fraction: changed as f64 / m,
    })
}

// ---------------------------------------------------------------------------
// Masking analysis
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskingStrategy {
    /// Mask the expert with the highest intrinsic importance.
    TopIntrinsic,
    /// Mask the expert with the highest incoming routing mass.
    TopFrequent,
    /// Mask a random expert that is neither of the two above.
    RandomNontop,
}

impl MaskingStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MaskingStrategy::TopIntrinsic => "top_intrinsic",
            MaskingStrategy::TopFrequent => "top_frequent",
            MaskingStrategy::RandomNontop => "random_nontop",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingOutcome {
    pub strategy: MaskingStrategy,
    /// Which expert was masked (0-based position).
    pub expert: usize,
    /// Mean KL between baseline and masked first-selection distributions.
    pub kl_sequence: f64,
    /// Mean per-row KL between baseline and masked interaction matrices,
    /// restricted to surviving experts and renormalized.
    pub kl_routing: f64,
}

fn argmax_lowest_id(v: &[f64]) -> usize {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

/// Pick the masked expert for a strategy. `nontop_seed` drives the random
/// choice for [`MaskingStrategy::RandomNontop`].
pub fn select_mask_target(
    orch: &Orchestrator,
    inputs: &[ProbeInput],
    strategy: MaskingStrategy,
    settings: &ProbeSettings,
    nontop_seed: u64,
) -> Result<usize> {
    mask_targets(orch, inputs, settings)?.choose(strategy, nontop_seed)
}

fn r_next(r: &mut ChaCha8Rng) -> u64 {
    use rand_core::RngCore;
    r.next_u64()
}

/// Strategy-independent masking targets for one checkpoint, so repeated
/// analyses do not recompute attribution.
#[derive(Debug, Clone)]
pub struct MaskTargets {
    pub top_intrinsic: usize,
    pub top_frequent: usize,
    /// Experts that are neither of the two above.
    pub nontop: Vec<usize>,
}

pub fn mask_targets(
    orch: &Orchestrator,
    inputs: &[ProbeInput],
    settings: &ProbeSettings,
) -> Result<MaskTargets> {
    let n = orch.params.dims.n;
    let intrinsic = intrinsic_importance(orch, inputs, AttributionMode::SelfProb, settings)?;
    let mut mean_u = vec![0.0f64; n];
    for input in inputs {
        let c = orch.interaction_matrix(&input.outputs)?;
        for (j, u) in relational_importance(&c).iter().enumerate() {
            mean_u[j] += u / inputs.len() as f64;
        }
    }
    let top_intrinsic = argmax_lowest_id(&intrinsic);
    let top_frequent = argmax_lowest_id(&mean_u);
    Ok(MaskTargets {
        top_intrinsic,
        top_frequent,
        nontop: (0..n)
            .filter(|&i| i != top_intrinsic && i != top_frequent)
            .collect(),
    })
}

impl MaskTargets {
    /// The expert a strategy masks; `nontop_seed` drives the random pick.
    pub fn choose(&self, strategy: MaskingStrategy, nontop_seed: u64) -> Result<usize> {
        Ok(match strategy {
            MaskingStrategy::TopIntrinsic => self.top_intrinsic,
            MaskingStrategy::TopFrequent => self.top_frequent,
            MaskingStrategy::RandomNontop => {
                if self.nontop.is_empty() {
                    return Err(Error::TooFewExperts(2));
                }
                let mut r = rng::stream(nontop_seed, &[lane::PROBE, 0x6d61736b]);
                self.nontop[(r_next(&mut r) % self.nontop.len() as u64) as usize]
            }
        })
    }
}

/// Mask a specific expert and measure the induced change: KL between
/// baseline and masked first-selection distributions, and the mean
/// per-surviving-row KL between baseline and masked interaction rows.
///
/// Rows are compared over the full expert support with epsilon smoothing
/// (the masked column is exactly 0 in the masked matrix); restricting both
/// sides to survivors and renormalizing would cancel identically for
/// row-softmax matrices and measure nothing.
pub fn masking_effect(
    orch: &Orchestrator,
    inputs: &[ProbeInput],
    target: usize,
    settings: &ProbeSettings,
) -> Result<(f64, f64)> {
    let n = orch.params.dims.n;
    let masked = orch.mask_expert(target)?;
    let mut kl_seq = 0.0;
    let mut kl_rout = 0.0;
    for input in inputs {
        let s_base = sequence_distribution(orch, input, settings)?;
        let s_mask = sequence_distribution(&masked, input, settings)?;
        kl_seq += kl_divergence(&s_base, &s_mask, settings.epsilon);

        let c_base = orch.interaction_matrix(&input.outputs)?;
        let c_mask = masked.interaction_matrix(&input.outputs)?;
        let mut row_acc = 0.0;
        let mut rows = 0usize;
        for i in 0..n {
            if i == target || orch.masked().contains(&i) {
                continue;
            }
            row_acc += kl_divergence(c_base.row(i), c_mask.row(i), settings.epsilon);
            rows += 1;
        }
        kl_rout += row_acc / rows as f64;
    }
    let m = inputs.len() as f64;
    Ok((kl_seq / m, kl_rout / m))
}

/// Mask one expert per the strategy and measure the induced change in the
/// first-selection distribution and the surviving interaction rows.
pub fn masking_analysis(
    orch: &Orchestrator,
    inputs: &[ProbeInput],
    strategy: MaskingStrategy,
    settings: &ProbeSettings,
    nontop_seed: u64,
) -> Result<MaskingOutcome> {
    let n = orch.params.dims.n;
    if n - orch.masked().len() < 3 {
        return Err(Error::TooFewExperts(n));
    }
    let target = mask_targets(orch, inputs, settings)?.choose(strategy, nontop_seed)?;
    let (kl_sequence, kl_routing) = masking_effect(orch, inputs, target, settings)?;
    Ok(MaskingOutcome {
        strategy,
        expert: target,
        kl_sequence,
        kl_routing,
    })
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

/// Rank agreement between intrinsic and relational importance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentStats {
    pub spearman_rho: f64,
    pub spearman_p: f64,
    /// Exact permutation p (n <= 10), reported alongside the t-approximation.
    pub spearman_p_exact: Option<f64>,
    pub kendall_tau: f64,
    pub kendall_p: f64,
    pub n: usize,
}

pub fn alignment_report(intrinsic: &[f64], relational: &[f64]) -> Result<AlignmentStats> {
    let sp = stats::spearman(intrinsic, relational)?;
    let kd = stats::kendall(intrinsic, relational)?;
    let exact = if intrinsic.len() <= 10 {
        Some(stats::spearman_permutation_p(intrinsic, relational)?.p_value)
    } else {
        None
    };
    Ok(AlignmentStats {
        spearman_rho: sp.statistic,
        spearman_p: sp.p_value,
        spearman_p_exact: exact,
        kendall_tau: kd.statistic,
        kendall_p: kd.p_value,
        n: sp.n,
    })
}

// ---------------------------------------------------------------------------
// Cascade sensitivity
// ---------------------------------------------------------------------------

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Full Jacobian d p_stop(i) / d H_m of the sequential-gate composition.
/// The last expert absorbs the remainder, so its own entropy never enters
/// (its column is zero).
pub fn stop_prob_jacobian(entropies: &[f64], threshold: f64, beta: f64) -> Vec<Vec<f64>> {
    let n = entropies.len();
    let gates: Vec<f64> = entropies
        .iter()
        .map(|&h| sigmoid(beta * (threshold - h)))
        .collect();
    // dg_m / dH_m
    let dgate: Vec<f64> = gates.iter().map(|&g| -beta * g * (1.0 - g)).collect();
    let mut jac = vec![vec![0.0; n]; n];
    for i in 0..n {
        for m in 0..n {
            if m >= n - 1 && i < n - 1 && m > i {
                continue;
            }
            if i < n - 1 {
                if m > i {
                    continue;
                }
                // p_i = g_i * prod_{j<i} (1 - g_j)
                let mut dp = if m == i {
                    dgate[i]
                } else {
                    -dgate[m] * gates[i]
                };
                for j in 0..i {
                    if j != m {
                        dp *= 1.0 - gates[j];
                    } else if m != i {
                        // the (1 - g_m) factor was differentiated away
                    }
                }
                jac[i][m] = dp;
            } else {
                // p_last = prod_{j < n-1} (1 - g_j); column n-1 stays zero
                if m == n - 1 {
                    continue;
                }
                let mut dp = -dgate[m];
                for j in 0..n - 1 {
                    if j != m {
                        dp *= 1.0 - gates[j];
                    }
                }
                jac[i][m] = dp;
            }
        }
    }
    jac
}

/// Per-expert stopping sensitivity: mean over prompts of
/// |d p_stop(i) / d H_i|. Saturated gates contribute ~0.
pub fn cascade_sensitivity(
    entropy_sets: &[Vec<f64>],
    threshold: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    if entropy_sets.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    let n = entropy_sets[0].len();
    let mut acc = vec![0.0f64; n];
    for hs in entropy_sets {
        if hs.len() != n {
            return Err(Error::DimensionMismatch {
                what: "cascade entropy vector",
                expected: n,
                got: hs.len(),
            });
        }
        let jac = stop_prob_jacobian(hs, threshold, beta);
        for i in 0..n {
            acc[i] += jac[i][i].abs();
        }
    }
    Ok(acc
        .into_iter()
        .map(|a| a / entropy_sets.len() as f64)
        .collect())
}

// ---------------------------------------------------------------------------
// Consolidated report record
// ---------------------------------------------------------------------------

/// One epoch's probe summary (sections fill in as commands run).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeReport {
    pub epoch: usize,
    pub collab_entropy: f64,
    pub ordering_entropy: f64,
    pub gini: f64,
    pub intrinsic_self: Vec<f64>,
    pub intrinsic_selected: Vec<f64>,
    pub relational: Vec<f64>,
    pub alignment_self: AlignmentStats,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub perturbations: Vec<PerturbationSensitivity>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub maskings: Vec<MaskingOutcome>,
}

impl ProbeReport {
    /// Entropy bounds, nonnegative KLs, gini range.
    pub fn validate(&self, n: usize) -> Result<()> {
        let ln_n = (n as f64).ln();
        let bounded = |x: f64| x >= -1e-9 && x <= ln_n + 1e-9;
        if !bounded(self.collab_entropy) || !bounded(self.ordering_entropy) {
            return Err(Error::NonFinite("probe report entropy bounds"));
        }
        if !(0.0..1.0).contains(&self.gini) {
            return Err(Error::NonFinite("probe report gini range"));
        }
        for p in &self.perturbations {
            if p.kl_sequence < -1e-9 || p.kl_routing < -1e-9 {
                return Err(Error::NonFinite("probe report perturbation kl"));
            }
        }
        for m in &self.maskings {
            if m.kl_sequence < -1e-9 || m.kl_routing < -1e-9 {
                return Err(Error::NonFinite("probe report masking kl"));
            }
        }
        Ok(())
    }
}
