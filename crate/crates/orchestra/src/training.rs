//! Composite training objective (eight terms), Adam with warmup-then-cosine
//! learning rate, per-step Gumbel temperature annealing, the adaptive top-k
//! schedule, the epoch loop, and versioned checkpoints.
//!
//! The straight-through rollout makes every term differentiable with
//! respect to the controller parameters; gradients come off the tape and
//! are clipped to a global norm before the optimizer step. All reductions
//! run in fixed prompt order so a seeded run reproduces its metrics log
//! bit-exactly.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{norm2, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::experts::{oracle_respond, Consortium, PromptInstance};
use crate::orchestrator::{
    adaptive_k, rollout_core, CollabMatrix, CoreRollout, Dims, Driver, Orchestrator,
    OrchestratorParams, RolloutOptions, Transcript,
};
use crate::probes::{self, ProbeSettings};
use crate::rng::{self, lane};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub utility: f64,
    pub distill: f64,
    pub symm: f64,
    pub spar: f64,
    pub oracle: f64,
    pub diver: f64,
    pub sel: f64,
    pub len: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            utility: 0.5,
            distill: 0.5,
            symm: 0.05,
            spar: 0.1,
            oracle: 0.5,
            diver: 0.1,
            sel: 1.0,
            len: 0.5,
        }
    }
}

/// The literal selection-entropy term -(1/M) sum_i pi_i is constant on a
/// normalized distribution; the selected-mass variant realizes the stated
/// decisiveness pressure. Both ship.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelLossMode {
    #[default]
    SelectedMass,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UtilityMode {
    /// Squared embedding error against the target.
    #[default]
    Regression,
    /// Logistic surrogate on the cosine to the target (knowledge-task
    /// classification head stand-in).
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_ratio: f64,
    pub grad_clip_norm: f64,
    pub gumbel_temp_init: f64,
    pub gumbel_temp_min: f64,
    pub gumbel_temp_decay: f64,
    pub weights: LossWeights,
    /// Per-call length cost.
    pub alpha: f64,
    pub seed: u64,
    pub sel_loss_mode: SelLossMode,
    /// -1.0 keeps the diversity formula exactly as written
    /// (-(1/M) var); +1.0 is the balance-encouraging variant.
    pub diversity_sign: f64,
    pub utility_mode: UtilityMode,
    /// Anneal the Gumbel temperature once per epoch instead of per step.
    pub temp_decay_per_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            epochs: 5,
            warmup_ratio: 0.1,
            grad_clip_norm: 15.0,
            gumbel_temp_init: 1.0,
            gumbel_temp_min: 0.5,
            gumbel_temp_decay: 0.999,
            weights: LossWeights::default(),
            alpha: 1.0,
            seed: 0,
            sel_loss_mode: SelLossMode::default(),
            diversity_sign: -1.0,
            utility_mode: UtilityMode::default(),
            temp_decay_per_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let weights = [
            w.utility, w.distill, w.symm, w.spar, w.oracle, w.diver, w.sel, w.len,
        ];
        if weights.iter().any(|x| *x < 0.0 || !x.is_finite()) {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        if self.gumbel_temp_min > self.gumbel_temp_init {
            return Err(Error::Config(
                "gumbel_temp_min exceeds gumbel_temp_init".into(),
            ));
        }
        if !(0.0 < self.gumbel_temp_decay && self.gumbel_temp_decay <= 1.0) {
            return Err(Error::Config("gumbel_temp_decay must be in (0, 1]".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.diversity_sign != -1.0 && self.diversity_sign != 1.0 {
            return Err(Error::Config("diversity_sign must be -1 or +1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Loss terms
// ---------------------------------------------------------------------------

/// ||C - C^T||_F^2.
pub fn symmetry_loss(c: &CollabMatrix) -> f64 {
    symmetry_core(&c.c, c.n)
}

pub fn symmetry_core<S: Real>(c: &[S], n: usize) -> S {
    let mut terms: Vec<S> = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            terms.push((c[i * n + j] - c[j * n + i]).sq());
        }
    }
    S::sum(&terms)
}

/// Mean row entropy of C, 0 log 0 = 0. In [0, ln N]; 0 iff rows one-hot.
pub fn sparsity_loss(c: &CollabMatrix) -> f64 {
    sparsity_core(&c.c, c.n)
}

pub fn sparsity_core<S: Real>(c: &[S], n: usize) -> S {
    let mut row_entropies: Vec<S> = Vec::with_capacity(n);
    for i in 0..n {
        let mut terms: Vec<S> = Vec::new();
        for j in 0..n {
            let p = c[i * n + j];
            if p.val() > 0.0 {
                terms.push(p * p.ln());
            }
        }
        if terms.is_empty() {
            row_entropies.push(c[0].lift(0.0));
        } else {
            row_entropies.push(-S::sum(&terms));
        }
    }
    S::sum(&row_entropies).mul_const(1.0 / n as f64)
}

fn cosine_with_const<S: Real>(v: &[S], o: &[f64]) -> S {
    let dot_terms: Vec<S> = v.iter().zip(o).map(|(x, &c)| x.mul_const(c)).collect();
    let dot = S::sum(&dot_terms);
    let norm_o: f64 = o.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / norm2(v).mul_const(norm_o)
}

/// Reference matrix and first-step preferences from oracle geometry:
/// C^o_ij = cos((o_i + o_j)/2, o) for i != j (diagonal 0, excluded from the
/// mean), pi^o_i = cos(o_i, o).
pub fn oracle_targets(expert_outputs: &[Vec<f64>], oracle: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = expert_outputs.len();
    let norm_o: f64 = oracle.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_o == 0.0 {
        return Err(Error::ZeroVector("oracle embedding"));
    }
    for h in expert_outputs {
        if h.iter().map(|x| x * x).sum::<f64>() == 0.0 {
            return Err(Error::ZeroVector("expert output"));
        }
    }
    let mut c_or = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mid: Vec<f64> = (0..oracle.len())
                .map(|dim| 0.5 * (expert_outputs[i][dim] + expert_outputs[j][dim]))
                .collect();
            c_or[i * n + j] = crate::diff::cosine_sim(&mid, oracle)?;
        }
    }
    let pi_or: Vec<f64> = expert_outputs
        .iter()
        .map(|h| crate::diff::cosine_sim(h, oracle))
        .collect::<Result<_>>()?;
    Ok((c_or, pi_or))
}

/// Mean-squared pull of (C, pi) toward the oracle-implied protocol:
/// (1/(M(M-1))) sum_{i!=j} (C_ij - C^o_ij)^2 + (1/M) sum_i (pi_i - pi^o_i)^2.
pub fn oracle_alignment_loss(
    c: &CollabMatrix,
    pi: &[f64],
    expert_outputs: &[Vec<f64>],
    oracle: &[f64],
) -> Result<f64> {
    let h: Vec<Vec<f64>> = expert_outputs.to_vec();
    Ok(oracle_core(&c.c, c.n, pi, &h, oracle)?)
}

pub fn oracle_core<S: Real>(
    c: &[S],
    n: usize,
    pi: &[S],
    h: &[Vec<S>],
    oracle: &[f64],
) -> Result<S> {
    let norm_o: f64 = oracle.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_o == 0.0 {
        return Err(Error::ZeroVector("oracle embedding"));
    }
    let mut pair_terms: Vec<S> = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let mid: Vec<S> = (0..oracle.len())
                .map(|dim| (h[i][dim] + h[j][dim]).mul_const(0.5))
                .collect();
            let c_or = cosine_with_const(&mid, oracle);
            pair_terms.push((c[i * n + j] - c_or).sq());
        }
    }
    let pair = S::sum(&pair_terms).mul_const(1.0 / (n * (n - 1)) as f64);
    let pi_terms: Vec<S> = (0..n)
        .map(|i| (pi[i] - cosine_with_const(&h[i], oracle)).sq())
        .collect();
    let first = S::sum(&pi_terms).mul_const(1.0 / n as f64);
    Ok(pair + first)
}

/// Top-k index set of a distribution, ties broken toward lower index.
pub fn top_k_indices(pi: &[f64], k: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.sort_by(|&a, &b| pi[b].total_cmp(&pi[a]).then(a.cmp(&b)));
    order.into_iter().take(k).collect()
}

/// -(1/M) var(s) with s_i = pi_i 1[i in topk] (population variance).
pub fn diversity_loss(pi: &[f64], topk: &BTreeSet<usize>) -> f64 {
    diversity_core(pi, topk)
}

pub fn diversity_core<S: Real>(pi: &[S], topk: &BTreeSet<usize>) -> S {
    let m = pi.len() as f64;
    let masked: Vec<S> = (0..pi.len())
        .map(|i| {
            if topk.contains(&i) {
                pi[i]
            } else {
                pi[i].lift(0.0)
            }
        })
        .collect();
    let mean = S::sum(&masked).mul_const(1.0 / m);
    let sq_terms: Vec<S> = masked.iter().map(|&s| (s - mean).sq()).collect();
    let var = S::sum(&sq_terms).mul_const(1.0 / m);
    -var.mul_const(1.0 / m)
}

fn selection_core<S: Real>(pi: &[S], topk: &BTreeSet<usize>, mode: SelLossMode) -> S {
    match mode {
        SelLossMode::SelectedMass => {
            let picked: Vec<S> = topk.iter().map(|&i| pi[i]).collect();
            -S::sum(&picked).mul_const(1.0 / topk.len() as f64)
        }
        SelLossMode::Literal => -S::sum(pi).mul_const(1.0 / pi.len() as f64),
    }
}

/// Per-term values plus the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub utility: f64,
    pub distill: f64,
    pub symm: f64,
    pub spar: f64,
    pub oracle: f64,
    pub diver: f64,
    pub sel: f64,
    pub len: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn validate(&self, w: &LossWeights) -> Result<()> {
        let expect = w.utility * self.utility
            + w.distill * self.distill
            + w.symm * self.symm
            + w.spar * self.spar
            + w.oracle * self.oracle
            + w.diver * self.diver
            + w.sel * self.sel
            + w.len * self.len;
        if (expect - self.total).abs() > 1e-9 {
            return Err(Error::NonFiniteLoss {
                term: "total",
                context: format!("total {} != weighted sum {}", self.total, expect),
            });
        }
        Ok(())
    }
}

/// Everything the objective needs about one rollout.
pub struct LossInputs<'a, S> {
    pub core: &'a CoreRollout<S>,
    pub expert_outputs: &'a [Vec<S>],
    pub oracle: &'a [f64],
    pub target: &'a [f64],
    pub k: usize,
}

/// The eight-term objective. Returns the per-term values and the total as
/// a differentiable scalar. A non-finite term aborts with its name.
pub fn loss_total_core<'a, S: Real>(
    inp: &LossInputs<'a, S>,
    cfg: &TrainConfig,
    context: &str,
) -> Result<(LossBreakdown, S)> {
    let n = inp.expert_outputs.len();
    let chain = &inp.core.chain_output;
    let pi0 = &inp.core.steps[0].pi;

    let utility = match cfg.utility_mode {
        UtilityMode::Regression => {
            let terms: Vec<S> = chain
                .iter()
                .zip(inp.target)
                .map(|(c, &t)| c.add_const(-t).sq())
                .collect();
            S::sum(&terms)
        }
        UtilityMode::Classification => {
            let cos = cosine_with_const(chain, inp.target);
            (cos.mul_const(-5.0).exp().add_const(1.0)).ln()
        }
    };
    let distill = {
        let terms: Vec<S> = chain
            .iter()
            .zip(inp.oracle)
            .map(|(c, &o)| c.add_const(-o).sq())
            .collect();
        S::sum(&terms)
    };
    let symm = symmetry_core(&inp.core.collab, n);
    let spar = sparsity_core(&inp.core.collab, n);
    let pi0_vals: Vec<f64> = pi0.iter().map(|p| p.val()).collect();
    let topk = top_k_indices(&pi0_vals, inp.k.min(n));
    let oracle = oracle_core(&inp.core.collab, n, pi0, inp.expert_outputs, inp.oracle)?;
    let diver_literal = diversity_core(pi0, &topk);
    let diver = if cfg.diversity_sign > 0.0 {
        -diver_literal
    } else {
        diver_literal
    };
    let sel = selection_core(pi0, &topk, cfg.sel_loss_mode);
    let len_value = inp.core.steps.len() as f64 * cfg.alpha;
    let len = utility.lift(len_value);

    let w = &cfg.weights;
    let total = utility.mul_const(w.utility)
        + distill.mul_const(w.distill)
        + symm.mul_const(w.symm)
        + spar.mul_const(w.spar)
        + oracle.mul_const(w.oracle)
        + diver.mul_const(w.diver)
        + sel.mul_const(w.sel)
        + len.mul_const(w.len);

    let breakdown = LossBreakdown {
        utility: utility.val(),
        distill: distill.val(),
        symm: symm.val(),
        spar: spar.val(),
        oracle: oracle.val(),
        diver: diver.val(),
        sel: sel.val(),
        len: len.val(),
        total: total.val(),
    };
    for (name, v) in [
        ("utility", breakdown.utility),
        ("distill", breakdown.distill),
        ("symm", breakdown.symm),
        ("spar", breakdown.spar),
        ("oracle", breakdown.oracle),
        ("diver", breakdown.diver),
        ("sel", breakdown.sel),
        ("len", breakdown.len),
        ("total", breakdown.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                term: match name {
                    "utility" => "utility",
                    "distill" => "distill",
                    "symm" => "symm",
                    "spar" => "spar",
                    "oracle" => "oracle",
                    "diver" => "diver",
                    "sel" => "sel",
                    "len" => "len",
                    _ => "total",
                },
                context: context.to_string(),
            });
        }
    }
    Ok((breakdown, total))
}

// ---------------------------------------------------------------------------
// Optimizer and schedules
// ---------------------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: usize,
    pub current_lr: f64,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState {
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
            current_lr: 0.0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        self.current_lr = lr;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
        }
    }
}

/// Linear warmup to the base rate over `warmup_ratio` of the run, then
/// cosine decay reaching exactly 0 at the final step.
pub fn lr_at(step: usize, total_steps: usize, base_lr: f64, warmup_ratio: f64) -> f64 {
    if total_steps <= 1 {
        return base_lr;
    }
    let warmup = ((total_steps as f64 * warmup_ratio).round() as usize).max(1);
    if step <= warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let last = total_steps - 1;
    if step >= last {
        return 0.0;
    }
    let progress = (step - warmup) as f64 / (last - warmup) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scale the gradient so its global norm is at most `max_norm`; returns the
/// pre-clip norm. Direction is preserved.
pub fn clip_gradient(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Checkpoints and metrics
// ---------------------------------------------------------------------------

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub epoch: usize,
    pub params: OrchestratorParams,
    pub opts: RolloutOptions,
    pub optimizer: AdamState,
    pub confidence_ema: f64,
    pub gumbel_temp: f64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = std::fs::read_to_string(path)?;
        let ck: Checkpoint =
            serde_json::from_str(&data).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {})",
                ck.version, CHECKPOINT_VERSION
            )));
        }
        Ok(ck)
    }

    /// Resuming or probing against a different configuration is refused.
    pub fn ensure_config(&self, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs run {}",
                self.config_hash, config_hash
            )));
        }
        Ok(())
    }

    pub fn orchestrator(&self) -> Orchestrator {
        Orchestrator::new(self.params.clone(), self.opts.clone())
    }

    /// The expert budget this checkpoint would use at inference.
    pub fn active_k(&self) -> usize {
        adaptive_k(self.confidence_ema, self.params.dims.n)
    }
}

/// One epoch's record in the metrics log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// The diversity formula exactly as written (-(1/M) var).
    pub diver_literal: f64,
    /// The balance-encouraging variant (+(1/M) var).
    pub diver_intent: f64,
    pub collab_entropy: f64,
    pub ordering_entropy: f64,
    pub gini: f64,
    pub k: usize,
    pub gumbel_temp: f64,
    pub learning_rate: f64,
}

pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    pub metrics: Vec<EpochMetrics>,
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

const CONFIDENCE_EMA_DECAY: f64 = 0.9;
/// Prompts probed for per-epoch metrics.
const METRICS_PROBE_LIMIT: usize = 64;

/// Train the controller on a fixed prompt set. Emits one checkpoint per
/// epoch (plus the untrained epoch-0 snapshot) and per-epoch metrics.
pub fn train(
    cfg: &TrainConfig,
    consortium: &Consortium,
    prompts: &[PromptInstance],
    opts: &RolloutOptions,
    config_hash: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if prompts.is_empty() {
        return Err(Error::Config("training prompt set is empty".into()));
    }
    let n = consortium.len();
    let dims = Dims::new(n, consortium.dim);

    // freeze the world: expert responses, oracles, targets
    let bundles = probes::probe_inputs(consortium, prompts, cfg.seed)?;
    let oracles: Vec<Vec<f64>> = prompts
        .iter()
        .map(|p| oracle_respond(p).embedding)
        .collect();

    let mut params = OrchestratorParams::init(dims, cfg.seed);
    let mut adam = AdamState::new(params.param_count());
    let mut tau = cfg.gumbel_temp_init;
    let mut ema = 0.0f64;
    let mut step = 0usize;
    let steps_per_epoch = prompts.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    let snapshot = |params: &OrchestratorParams, adam: &AdamState, epoch, ema, tau| Checkpoint {
        version: CHECKPOINT_VERSION,
        config_hash: config_hash.to_string(),
        epoch,
        params: params.clone(),
        opts: opts.clone(),
        optimizer: adam.clone(),
        confidence_ema: ema,
        gumbel_temp: tau,
    };

    let mut checkpoints = vec![snapshot(&params, &adam, 0, ema, tau)];
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let empty_mask = BTreeSet::new();

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss_sum = LossBreakdown::default();
        let mut epoch_prompts = 0usize;
        let mut diver_literal_sum = 0.0;
        let mut last_lr = adam.current_lr;
        let mut last_k = adaptive_k(ema, n);

        for (batch_idx, batch) in (0..prompts.len())
            .collect::<Vec<_>>()
            .chunks(cfg.batch_size)
            .enumerate()
        {
            let k = adaptive_k(ema, n);
            last_k = k;
            let lr = lr_at(step, total_steps, cfg.learning_rate, cfg.warmup_ratio);
            last_lr = lr;
            let mut grad_accum = vec![0.0f64; params.param_count()];
            let mut conf_accum = 0.0;

            for &pidx in batch.iter() {
                let bundle = &bundles[pidx];
                let tape = Tape::new();
                let lifted = params.lift(&tape);
                let h: Vec<Vec<Var>> = bundle
                    .outputs
                    .iter()
                    .map(|row| row.iter().map(|&v| tape.constant(v)).collect())
                    .collect();
                let x: Vec<Var> = bundle
                    .prompt_emb
                    .iter()
                    .map(|&v| tape.constant(v))
                    .collect();
                let mut rng = rng::stream(
                    cfg.seed,
                    &[lane::GUMBEL, epoch as u64, batch_idx as u64, pidx as u64],
                );
                let mut transcript = Transcript::default();
                let core = rollout_core(
                    &lifted,
                    &h,
                    &x,
                    opts,
                    &empty_mask,
                    k,
                    tau,
                    &mut Driver::Sample {
                        rng: &mut rng,
                        out: &mut transcript,
                    },
                )?;
                let (breakdown, total) = loss_total_core(
                    &LossInputs {
                        core: &core,
                        expert_outputs: &h,
                        oracle: &oracles[pidx],
                        target: &bundle.prompt.target,
                        k,
                    },
                    cfg,
                    &bundle.prompt.id,
                )?;
                let grads = total.backward().input_grads();
                for (g, acc) in grads.iter().zip(grad_accum.iter_mut()) {
                    *acc += g;
                }
                conf_accum += core.steps[0]
                    .pi
                    .iter()
                    .map(|p| p.val())
                    .fold(f64::NEG_INFINITY, f64::max);
                accumulate(&mut epoch_loss_sum, &breakdown);
                diver_literal_sum += if cfg.diversity_sign > 0.0 {
                    -breakdown.diver
                } else {
                    breakdown.diver
                };
                epoch_prompts += 1;
            }

            let batch_len = batch.len() as f64;
            for g in grad_accum.iter_mut() {
                *g /= batch_len;
            }
            if grad_accum.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(format!(
                    "epoch {epoch} batch {batch_idx}"
                )));
            }
            clip_gradient(&mut grad_accum, cfg.grad_clip_norm);
            let mut flat = params.flatten();
            adam.apply(&mut flat, &grad_accum, lr);
            params = OrchestratorParams::from_flat(dims, &flat)?;
            step += 1;
            if !cfg.temp_decay_per_epoch {
                tau = (tau * cfg.gumbel_temp_decay).max(cfg.gumbel_temp_min);
            }
            ema = CONFIDENCE_EMA_DECAY * ema
                + (1.0 - CONFIDENCE_EMA_DECAY) * (conf_accum / batch_len);
        }

        if cfg.temp_decay_per_epoch {
            tau = (tau * cfg.gumbel_temp_decay).max(cfg.gumbel_temp_min);
        }

        // probe metrics on the leading slice of the prompt set
        let probe_slice = &bundles[..bundles.len().min(METRICS_PROBE_LIMIT)];
        let orch = Orchestrator::new(params.clone(), opts.clone());
        let settings = ProbeSettings {
            probe_seed: cfg.seed,
            gumbel_temp: tau,
            k: 1,
            ..ProbeSettings::default()
        };
        let mut collab_ent = 0.0;
        let mut mean_u = vec![0.0f64; n];
        let mut mean_s = vec![0.0f64; n];
        for bundle in probe_slice {
            let c = orch.interaction_matrix(&bundle.outputs)?;
            collab_ent += probes::collab_entropy(&c);
            for (j, u) in probes::relational_importance(&c).iter().enumerate() {
                mean_u[j] += u / probe_slice.len() as f64;
            }
            let s = probes::sequence_distribution(&orch, bundle, &settings)?;
            for (j, v) in s.iter().enumerate() {
                mean_s[j] += v / probe_slice.len() as f64;
            }
        }
        collab_ent /= probe_slice.len() as f64;

        let inv = 1.0 / epoch_prompts as f64;
        let mean_loss = scale(&epoch_loss_sum, inv);
        let diver_literal = diver_literal_sum * inv;
        metrics.push(EpochMetrics {
            epoch,
            loss: mean_loss,
            diver_literal,
            diver_intent: -diver_literal,
            collab_entropy: collab_ent,
            ordering_entropy: probes::dist_entropy(&mean_s),
            gini: probes::gini(&mean_u)?,
            k: last_k,
            gumbel_temp: tau,
            learning_rate: last_lr,
        });
        checkpoints.push(snapshot(&params, &adam, epoch, ema, tau));
    }

    Ok(TrainOutcome {
        checkpoints,
        metrics,
    })
}

fn accumulate(acc: &mut LossBreakdown, x: &LossBreakdown) {
    acc.utility += x.utility;
    acc.distill += x.distill;
    acc.symm += x.symm;
    acc.spar += x.spar;
    acc.oracle += x.oracle;
    acc.diver += x.diver;
    acc.sel += x.sel;
    acc.len += x.len;
    acc.total += x.total;
}

fn scale(acc: &LossBreakdown, by: f64) -> LossBreakdown {
    LossBreakdown {
        utility: acc.utility * by,
        distill: acc.distill * by,
        symm: acc.symm * by,
        spar: acc.spar * by,
        oracle: acc.oracle * by,
        diver: acc.diver * by,
        sel: acc.sel * by,
        len: acc.len * by,
        total: acc.total * by,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::{generate_task, TaskTag};
    use crate::orchestrator::DiagonalPolicy;
    use crate::orchestrator::LiftedParams;
    use crate::rng::stream;

    fn toy_collab(n: usize, c: Vec<f64>) -> CollabMatrix {
        CollabMatrix {
            n,
            c,
            diagonal_policy: DiagonalPolicy::Free,
        }
    }

    #[test]
    fn symmetry_loss_examples() {
        let sym = toy_collab(2, vec![0.3, 0.7, 0.7, 0.3]);
        assert_eq!(symmetry_loss(&sym), 0.0);
        let asym = toy_collab(2, vec![0.0, 1.0, 0.0, 0.0]);
        assert!((symmetry_loss(&asym) - 2.0).abs() < 1e-12);
    }

    /// Element-wise double-sum oracle on a random 5x5 matrix.
    #[test]
    fn symmetry_loss_matches_double_sum_oracle() {
        let mut r = stream(3, &[lane::INIT]);
        let c: Vec<f64> = (0..25).map(|_| rng::uniform(&mut r)).collect();
        let engine = symmetry_loss(&toy_collab(5, c.clone()));
        let mut oracle = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let d = c[i * 5 + j] - c[j * 5 + i];
                oracle += d * d;
            }
        }
        assert!((engine - oracle).abs() < 1e-12);
    }

    #[test]
    fn sparsity_loss_examples() {
        // one-hot rows
        let onehot = toy_collab(3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(sparsity_loss(&onehot), 0.0);
        // uniform rows, N = 10
        let uniform = toy_collab(10, vec![0.1; 100]);
        assert!((sparsity_loss(&uniform) - 10f64.ln()).abs() < 1e-12);
        // half-half rows
        let mut c = vec![0.0; 16];
        for i in 0..4 {
            c[i * 4] = 0.5;
            c[i * 4 + 1] = 0.5;
        }
        assert!((sparsity_loss(&toy_collab(4, c)) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn oracle_alignment_zero_at_oracle_protocol() {
        // all experts equal to the oracle: C^o off-diagonal all 1, pi^o all 1
        let d = 4;
        let o = vec![0.5, 0.5, 0.5, 0.5];
        let outputs = vec![o.clone(), o.clone(), o.clone()];
        let (c_or, pi_or) = oracle_targets(&outputs, &o).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert!((c_or[i * 3 + j] - 1.0).abs() < 1e-12);
                }
            }
            assert!((pi_or[i] - 1.0).abs() < 1e-12);
        }
        let _ = d;
        // feeding the oracle protocol back gives zero loss
        let c = toy_collab(3, c_or.clone());
        let loss = oracle_alignment_loss(&c, &pi_or, &outputs, &o).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    /// Hand-rolled double-loop oracle for 3 random experts.
    #[test]
    fn oracle_alignment_matches_double_loop_oracle() {
        let mut r = stream(9, &[lane::INIT]);
        let d = 5;
        let norm = |v: Vec<f64>| {
            let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let outputs: Vec<Vec<f64>> = (0..3)
            .map(|_| norm((0..d).map(|_| crate::rng::std_normal(&mut r)).collect()))
            .collect();
        let oracle: Vec<f64> = norm((0..d).map(|_| crate::rng::std_normal(&mut r)).collect());
        let c: Vec<f64> = {
            let mut m = vec![0.0; 9];
            for i in 0..3 {
                let row: Vec<f64> = (0..3).map(|_| rng::uniform(&mut r)).collect();
                let s: f64 = row.iter().sum();
                for j in 0..3 {
                    m[i * 3 + j] = row[j] / s;
                }
            }
            m
        };
        let pi = vec![0.2, 0.5, 0.3];
        let engine =
            oracle_alignment_loss(&toy_collab(3, c.clone()), &pi, &outputs, &oracle).unwrap();

        // independent oracle
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut pair = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let mid: Vec<f64> = (0..d)
                    .map(|k| 0.5 * (outputs[i][k] + outputs[j][k]))
                    .collect();
                let diff = c[i * 3 + j] - cos(&mid, &oracle);
                pair += diff * diff;
            }
        }
        pair /= 6.0;
        let mut first = 0.0;
        for i in 0..3 {
            let diff = pi[i] - cos(&outputs[i], &oracle);
            first += diff * diff;
        }
        first /= 3.0;
        assert!((engine - (pair + first)).abs() < 1e-12);
    }

    #[test]
    fn diversity_loss_examples() {
        // uniform pi, topk = everything: variance 0
        let pi = vec![0.1; 10];
        let topk: BTreeSet<usize> = (0..10).collect();
        assert!(diversity_loss(&pi, &topk).abs() < 1e-30);
        // one-hot pi, top-1
        let mut onehot = vec![0.0; 10];
        onehot[3] = 1.0;
        let topk = top_k_indices(&onehot, 1);
        let loss = diversity_loss(&onehot, &topk);
        assert!((loss - (-0.009)).abs() < 1e-12, "loss={loss}");
    }

    /// Brute-force variance oracle for a random pi, k = 3.
    #[test]
    fn diversity_loss_matches_variance_oracle() {
        let mut r = stream(10, &[lane::INIT]);
        let raw: Vec<f64> = (0..8).map(|_| rng::uniform(&mut r)).collect();
        let s: f64 = raw.iter().sum();
        let pi: Vec<f64> = raw.iter().map(|x| x / s).collect();
        let topk = top_k_indices(&pi, 3);
        let engine = diversity_loss(&pi, &topk);
        let masked: Vec<f64> = (0..8)
            .map(|i| if topk.contains(&i) { pi[i] } else { 0.0 })
            .collect();
        let mean: f64 = masked.iter().sum::<f64>() / 8.0;
        let var: f64 = masked.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 8.0;
        assert!((engine - (-var / 8.0)).abs() < 1e-12);
    }

    #[test]
    fn lr_schedule_endpoints() {
        let total = 500;
        let base = 1e-3;
        assert_eq!(lr_at(0, total, base, 0.1), 0.0);
        let warmup = (total as f64 * 0.1).round() as usize;
        assert!((lr_at(warmup, total, base, 0.1) - base).abs() < 1e-15);
        assert_eq!(lr_at(total - 1, total, base, 0.1), 0.0);
        // monotone rise through warmup
        for s in 1..warmup {
            assert!(lr_at(s, total, base, 0.1) > lr_at(s - 1, total, base, 0.1));
        }
        // decay after warmup
        for s in (warmup + 1)..total {
            assert!(lr_at(s, total, base, 0.1) <= lr_at(s - 1, total, base, 0.1));
        }
    }

    #[test]
    fn gradient_clip_norm_and_direction() {
        let mut g = vec![3.0, 4.0];
        let pre = clip_gradient(&mut g, 2.5);
        assert!((pre - 5.0).abs() < 1e-12);
        let post: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(post <= 2.5 + 1e-9);
        assert!((g[0] / g[1] - 3.0 / 4.0).abs() < 1e-12);
        // unclipped gradients are untouched
        let mut g2 = vec![0.3, 0.4];
        clip_gradient(&mut g2, 15.0);
        assert_eq!(g2, vec![0.3, 0.4]);
    }

    fn tiny_setup(seed: u64) -> (TrainConfig, Consortium, Vec<PromptInstance>) {
        let d = 16;
        let consortium = Consortium::homogeneous(d);
        let mut r = stream(seed, &[lane::TASK]);
        let prompts: Vec<PromptInstance> = (0..12)
            .map(|_| generate_task(TaskTag::Arith, &mut r, d))
            .collect();
        let cfg = TrainConfig {
            epochs: 2,
            seed,
            ..TrainConfig::default()
        };
        (cfg, consortium, prompts)
    }

    #[test]
    fn utility_and_distill_vanish_at_the_target() {
        // a rollout whose chain output equals the target and oracle
        let (cfg, consortium, prompts) = tiny_setup(3);
        let bundle = probes::probe_inputs(&consortium, &prompts[..1], cfg.seed).unwrap();
        let b = &bundle[0];
        let params = OrchestratorParams::init(Dims::new(consortium.len(), consortium.dim), 1);
        let orch = Orchestrator::new(params, RolloutOptions::default());
        let mut r = stream(1, &[lane::GUMBEL]);
        let roll = orch
            .rollout(&b.prompt.id, &b.prompt_emb, &b.outputs, 2, 1.0, &mut r)
            .unwrap();
        // fake a world where the final expert hit the target exactly
        let target = roll.chain_output.clone();
        let oracle = roll.chain_output.clone();
        let tape = Tape::new();
        let lifted = orch.params.lift(&tape);
        let h: Vec<Vec<Var>> = b
            .outputs
            .iter()
            .map(|row| row.iter().map(|&v| tape.constant(v)).collect())
            .collect();
        let x: Vec<Var> = b.prompt_emb.iter().map(|&v| tape.constant(v)).collect();
        let core = rollout_core(
            &lifted,
            &h,
            &x,
            &orch.opts,
            &BTreeSet::new(),
            2,
            1.0,
            &mut Driver::Replay {
                transcript: &roll.transcript,
            },
        )
        .unwrap();
        let (breakdown, _) = loss_total_core(
            &LossInputs {
                core: &core,
                expert_outputs: &h,
                oracle: &oracle,
                target: &target,
                k: 2,
            },
            &cfg,
            "test",
        )
        .unwrap();
        assert!(breakdown.utility.abs() < 1e-18);
        assert!(breakdown.distill.abs() < 1e-18);
        // k = 2, alpha = 1 -> len = 2; weighted contribution 1.0
        assert_eq!(breakdown.len, 2.0);
        breakdown.validate(&cfg.weights).unwrap();
    }

    #[test]
    fn training_runs_and_metrics_are_finite() {
        let (cfg, consortium, prompts) = tiny_setup(5);
        let outcome = train(
            &cfg,
            &consortium,
            &prompts,
            &RolloutOptions::default(),
            "testhash",
        )
        .unwrap();
        assert_eq!(outcome.checkpoints.len(), cfg.epochs + 1);
        assert_eq!(outcome.metrics.len(), cfg.epochs);
        assert_eq!(outcome.checkpoints[0].epoch, 0);
        for m in &outcome.metrics {
            assert!(m.loss.total.is_finite());
            assert!(m.collab_entropy.is_finite());
            assert!((0.0..1.0).contains(&m.gini));
            m.loss.validate(&cfg.weights).unwrap();
        }
        // temperature anneals downward but not below the floor
        let last = outcome.checkpoints.last().unwrap();
        assert!(last.gumbel_temp < cfg.gumbel_temp_init);
        assert!(last.gumbel_temp >= cfg.gumbel_temp_min);
        assert!(last.params.is_finite());
    }

    #[test]
    fn literal_selection_loss_is_constant() {
        // on a normalized distribution the literal form is exactly -1/M
        let pi = vec![0.4, 0.3, 0.2, 0.1];
        let topk = top_k_indices(&pi, 2);
        let lit = selection_core(&pi, &topk, SelLossMode::Literal);
        assert!((lit - (-0.25)).abs() < 1e-12);
        // the selected-mass variant actually responds to concentration
        let sharp = vec![0.97, 0.01, 0.01, 0.01];
        let topk_sharp = top_k_indices(&sharp, 2);
        let a = selection_core(&pi, &topk, SelLossMode::SelectedMass);
        let b = selection_core(&sharp, &topk_sharp, SelLossMode::SelectedMass);
        assert!(
            b < a,
            "selected-mass should reward decisiveness: {a} vs {b}"
        );
    }

    #[test]
    fn classification_utility_decreases_with_alignment() {
        let chain_aligned = vec![0.6, 0.8, 0.0];
        let chain_opposed = vec![-0.6, -0.8, 0.0];
        let target = [0.6, 0.8, 0.0];
        let softplus = |v: &Vec<f64>| {
            let cos = cosine_with_const(v, &target);
            (cos.mul_const(-5.0).exp().add_const(1.0)).ln()
        };
        let good = softplus(&chain_aligned);
        let bad = softplus(&chain_opposed);
        assert!(good < bad);
        assert!(good > 0.0 && bad.is_finite());
    }

    #[test]
    fn per_epoch_temperature_decay_flag() {
        let (mut cfg, consortium, prompts) = tiny_setup(21);
        cfg.temp_decay_per_epoch = true;
        cfg.epochs = 2;
        let outcome = train(&cfg, &consortium, &prompts, &RolloutOptions::default(), "h").unwrap();
        let expected =
            (cfg.gumbel_temp_init * cfg.gumbel_temp_decay.powi(2)).max(cfg.gumbel_temp_min);
        let last = outcome.checkpoints.last().unwrap();
        assert!((last.gumbel_temp - expected).abs() < 1e-12);
    }

    /// k = 3, alpha = 1, weight 0.5: the length term contributes 1.5.
    #[test]
    fn length_penalty_arithmetic() {
        let (cfg, consortium, prompts) = tiny_setup(23);
        let bundle = probes::probe_inputs(&consortium, &prompts[..1], cfg.seed).unwrap();
        let b = &bundle[0];
        let params = OrchestratorParams::init(Dims::new(consortium.len(), consortium.dim), 2);
        let orch = Orchestrator::new(params, RolloutOptions::default());
        let mut r = stream(2, &[lane::GUMBEL]);
        let roll = orch
            .rollout(&b.prompt.id, &b.prompt_emb, &b.outputs, 3, 1.0, &mut r)
            .unwrap();
        let tape = Tape::new();
        let lifted = orch.params.lift(&tape);
        let h: Vec<Vec<Var>> = b
            .outputs
            .iter()
            .map(|row| row.iter().map(|&v| tape.constant(v)).collect())
            .collect();
        let x: Vec<Var> = b.prompt_emb.iter().map(|&v| tape.constant(v)).collect();
        let core = rollout_core(
            &lifted,
            &h,
            &x,
            &orch.opts,
            &BTreeSet::new(),
            3,
            1.0,
            &mut Driver::Replay {
                transcript: &roll.transcript,
            },
        )
        .unwrap();
        let oracle = crate::experts::oracle_respond(&b.prompt).embedding;
        let (breakdown, _) = loss_total_core(
            &LossInputs {
                core: &core,
                expert_outputs: &h,
                oracle: &oracle,
                target: &b.prompt.target,
                k: 3,
            },
            &cfg,
            "len",
        )
        .unwrap();
        assert_eq!(breakdown.len, 3.0);
        assert_eq!(cfg.weights.len * breakdown.len, 1.5);
    }

    /// Determinism oracle: run twice, compare serialized metrics.
    #[test]
    fn training_is_bit_reproducible() {
        let (cfg, consortium, prompts) = tiny_setup(7);
        let run = || {
            let out = train(&cfg, &consortium, &prompts, &RolloutOptions::default(), "h").unwrap();
            serde_json::to_string(&out.metrics).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn checkpoint_round_trip_and_config_guard() {
        let (cfg, consortium, prompts) = tiny_setup(9);
        let outcome = train(
            &cfg,
            &consortium,
            &prompts,
            &RolloutOptions::default(),
            "confighash",
        )
        .unwrap();
        let dir = std::env::temp_dir().join(format!("orchestra-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ck.json");
        let ck = &outcome.checkpoints[1];
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.epoch, ck.epoch);
        assert_eq!(loaded.params.flatten(), ck.params.flatten());
        loaded.ensure_config("confighash").unwrap();
        assert!(loaded.ensure_config("other").is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    /// Gradients of the full objective match finite differences on a small
    /// instance (params and expert embeddings jointly).
    #[test]
    fn loss_gradient_matches_finite_differences() {
        let n = 3;
        let d = 4;
        let dims = Dims::new(n, d);
        let mut r = stream(40, &[lane::INIT]);
        let norm = |v: Vec<f64>| {
            let nn: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / nn).collect::<Vec<f64>>()
        };
        let outputs: Vec<Vec<f64>> = (0..n)
            .map(|_| norm((0..d).map(|_| crate::rng::std_normal(&mut r)).collect()))
            .collect();
        let x = norm((0..d).map(|_| crate::rng::std_normal(&mut r)).collect());
        let target = norm((0..d).map(|_| crate::rng::std_normal(&mut r)).collect());
        let oracle = target.clone();

        let mut params = OrchestratorParams::init(dims, 4);
        // healthy parameter magnitudes keep finite differences clean
        for v in params
            .adapter
            .iter_mut()
            .chain(params.query.iter_mut())
            .chain(params.key.iter_mut())
            .chain(params.input_heads.iter_mut())
        {
            *v = crate::rng::std_normal(&mut r) * 0.4;
        }
        let opts = RolloutOptions::default();
        let orch = Orchestrator::new(params.clone(), opts.clone());
        let mut rr = stream(41, &[lane::GUMBEL]);
        let sampled = orch.rollout("p", &x, &outputs, 2, 0.9, &mut rr).unwrap();

        let cfg = TrainConfig::default();
        let n_params = params.param_count();
        let mut point = params.flatten();
        for h in &outputs {
            point.extend_from_slice(h);
        }
        let transcript = sampled.transcript.clone();
        let x2 = x.clone();
        let err = crate::diff::grad_check(
            move |tape, vars| {
                let lifted = LiftedParams::from_slice(dims, &vars[..n_params]);
                let h: Vec<Vec<Var>> = (0..n)
                    .map(|i| vars[n_params + i * d..n_params + (i + 1) * d].to_vec())
                    .collect();
                let xs: Vec<Var> = x2.iter().map(|&v| tape.constant(v)).collect();
                let core = rollout_core(
                    &lifted,
                    &h,
                    &xs,
                    &opts,
                    &BTreeSet::new(),
                    2,
                    0.9,
                    &mut Driver::Replay {
                        transcript: &transcript,
                    },
                )
                .unwrap();
                let (_, total) = loss_total_core(
                    &LossInputs {
                        core: &core,
                        expert_outputs: &h,
                        oracle: &oracle,
                        target: &target,
                        k: 2,
                    },
                    &cfg,
                    "gradcheck",
                )
                .unwrap();
                total
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }
}
