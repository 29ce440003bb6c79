//! The learned controller: an interaction module producing the
//! expert-to-expert transition matrix, a selection module sampling execution
//! sequences via straight-through Gumbel-Softmax, sequential rollout with
//! chain conditioning, adaptive top-k, masking views, and cascade mode.
//!
//! Forward computation is written once, generic over [`Real`], so the plain
//! f64 path (inference, probes) and the taped path (training, attribution)
//! share one definition.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{cosine, matvec, softmax_masked, Real, Tape, Var, MASK_SENTINEL};
use crate::error::{Error, Result};
use crate::experts::{Consortium, ExpertProfile, PromptInstance};
use crate::rng;

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Expert count.
    pub n: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Routing-space dimension (defaults to d at desk scale).
    pub d_r: usize,
}

impl Dims {
    pub fn new(n: usize, d: usize) -> Self {
        Dims { n, d, d_r: d }
    }
}

/// Trainable controller state. The flattened vector (order: adapter, query,
/// key, lambda, input heads, quality scalars) is the sole mutable training
/// state; everything else about the controller lives in [`RolloutOptions`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrchestratorParams {
    pub dims: Dims,
    /// Routing adapter, d_r x d row-major.
    pub adapter: Vec<f64>,
    /// Query map, d_r x d_r.
    pub query: Vec<f64>,
    /// Key map, d_r x d_r.
    pub key: Vec<f64>,
    /// Semantic-prior scale.
    pub lambda: f64,
    /// Per-expert input-projection heads, n x d: head_i(x) = w_i . x.
    pub input_heads: Vec<f64>,
    /// Per-expert quality scalars.
    pub quality: Vec<f64>,
}

const INIT_STD: f64 = 0.05;
const LAMBDA_INIT: f64 = 0.5;

impl OrchestratorParams {
    /// Small random init; the interaction matrix starts near-uniform so
    /// early routing is diffuse.
    pub fn init(dims: Dims, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::lane::INIT]);
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| rng::std_normal(&mut r) * INIT_STD)
                .collect()
        };
        OrchestratorParams {
            dims,
            adapter: draw(dims.d_r * dims.d),
            query: draw(dims.d_r * dims.d_r),
            key: draw(dims.d_r * dims.d_r),
            lambda: LAMBDA_INIT,
            input_heads: draw(dims.n * dims.d),
            quality: vec![0.0; dims.n],
        }
    }

    pub fn param_count(&self) -> usize {
        self.adapter.len()
            + self.query.len()
            + self.key.len()
            + 1
            + self.input_heads.len()
            + self.quality.len()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.adapter);
        v.extend_from_slice(&self.query);
        v.extend_from_slice(&self.key);
        v.push(self.lambda);
        v.extend_from_slice(&self.input_heads);
        v.extend_from_slice(&self.quality);
        v
    }

    pub fn from_flat(dims: Dims, flat: &[f64]) -> Result<Self> {
        let mut p = OrchestratorParams::init(dims, 0);
        let expected = p.param_count();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "parameter vector",
                expected,
                got: flat.len(),
            });
        }
        let mut at = 0usize;
        let segment = |len: usize, at: &mut usize| {
            let s = flat[*at..*at + len].to_vec();
            *at += len;
            s
        };
        p.adapter = segment(dims.d_r * dims.d, &mut at);
        p.query = segment(dims.d_r * dims.d_r, &mut at);
        p.key = segment(dims.d_r * dims.d_r, &mut at);
        p.lambda = flat[at];
        at += 1;
        p.input_heads = segment(dims.n * dims.d, &mut at);
        p.quality = segment(dims.n, &mut at);
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|x| x.is_finite())
    }

    /// Lift onto a tape as registered inputs (gradients flow to every
    /// parameter), in flatten order.
    pub fn lift<'t>(&self, tape: &'t Tape) -> LiftedParams<Var<'t>> {
        let flat = self.flatten();
        let vars = tape.vars(&flat);
        LiftedParams::from_slice(self.dims, &vars)
    }

    pub fn as_values(&self) -> LiftedParams<f64> {
        LiftedParams::from_slice(self.dims, &self.flatten())
    }
}

/// Parameter views over any scalar type, in flatten order.
pub struct LiftedParams<S> {
    pub dims: Dims,
    pub adapter: Vec<S>,
    pub query: Vec<S>,
    pub key: Vec<S>,
    pub lambda: S,
    pub input_heads: Vec<S>,
    pub quality: Vec<S>,
}

impl<S: Copy> LiftedParams<S> {
    /// Rebuild the structured view from a flat slice (flatten order). Used
    /// by training (over Var) and by gradient checks over (params, h).
    pub fn from_slice(dims: Dims, flat: &[S]) -> Self {
        let mut at = 0usize;
        let segment = |len: usize, at: &mut usize| {
            let s = flat[*at..*at + len].to_vec();
            *at += len;
            s
        };
        let adapter = segment(dims.d_r * dims.d, &mut at);
        let query = segment(dims.d_r * dims.d_r, &mut at);
        let key = segment(dims.d_r * dims.d_r, &mut at);
        let lambda = flat[at];
        at += 1;
        let input_heads = segment(dims.n * dims.d, &mut at);
        let quality = segment(dims.n, &mut at);
        LiftedParams {
            dims,
            adapter,
            query,
            key,
            lambda,
            input_heads,
            quality,
        }
    }
}

// ---------------------------------------------------------------------------
// Options and matrix type
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiagonalPolicy {
    /// No self-transitions: C_ii = 0 exactly (default; incoming-mass probes
    /// sum over i != j, so self-loops carry no probe meaning).
    Masked,
    /// Free diagonal.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RolloutOptions {
    /// Position penalty (fixed, not learned).
    pub gamma: f64,
    pub diagonal: DiagonalPolicy,
    /// Blend weight pulling the selection context toward the most recent
    /// chosen expert's output.
    pub chain_blend: f64,
    /// Selection without replacement across steps.
    pub without_replacement: bool,
    /// Recompute the interaction matrix at each step over the surviving
    /// available support instead of freezing it once per prompt.
    pub recompute_collab_per_step: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            gamma: 0.1,
            diagonal: DiagonalPolicy::Masked,
            chain_blend: 0.5,
            without_replacement: true,
            recompute_collab_per_step: false,
        }
    }
}

/// Input-conditioned row-stochastic transition matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollabMatrix {
    pub n: usize,
    /// Row-major n x n entries.
    pub c: Vec<f64>,
    pub diagonal_policy: DiagonalPolicy,
}

impl CollabMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.c[i * self.n..(i + 1) * self.n]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.c[i * self.n + j]
    }

    /// Row sums are 1 within 1e-9 for every live (non-masked) row.
    pub fn validate(&self, masked: &BTreeSet<usize>) -> Result<()> {
        for i in 0..self.n {
            if masked.contains(&i) {
                continue;
            }
            let s: f64 = self.row(i).iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::NonFinite("collab matrix row sum"));
            }
            if self
                .row(i)
                .iter()
                .any(|&x| !(0.0..=1.0 + 1e-12).contains(&x))
            {
                return Err(Error::NonFinite("collab matrix entry range"));
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Generic forward core
// ---------------------------------------------------------------------------

/// Interaction scores and row softmax:
/// C_ij = row-softmax_j( <Q(A h_i), K(A h_j)> / sqrt(d_r) + lambda * cos(h_i, h_j) ).
/// Masked experts contribute zero rows and are removed from every row's
/// support (support removal and row renormalization coincide for softmax).
pub fn collab_core<S: Real>(
    p: &LiftedParams<S>,
    h: &[Vec<S>],
    diagonal: DiagonalPolicy,
    masked: &BTreeSet<usize>,
    support: Option<&BTreeSet<usize>>,
) -> Vec<S> {
    let n = h.len();
    let dims = p.dims;
    let proj: Vec<Vec<S>> = h
        .iter()
        .map(|hi| matvec(&p.adapter, dims.d_r, dims.d, hi))
        .collect();
    let queries: Vec<Vec<S>> = proj
        .iter()
        .map(|a| matvec(&p.query, dims.d_r, dims.d_r, a))
        .collect();
    let keys: Vec<Vec<S>> = proj
        .iter()
        .map(|a| matvec(&p.key, dims.d_r, dims.d_r, a))
        .collect();
    let inv_sqrt = 1.0 / (dims.d_r as f64).sqrt();

    let in_support =
        |i: usize| -> bool { !masked.contains(&i) && support.map_or(true, |s| s.contains(&i)) };

    let mut c: Vec<S> = Vec::with_capacity(n * n);
    for i in 0..n {
        if !in_support(i) {
            for _ in 0..n {
                c.push(p.lambda.lift(0.0));
            }
            continue;
        }
        let mut scores: Vec<S> = Vec::with_capacity(n);
        for j in 0..n {
            let dead = !in_support(j) || (diagonal == DiagonalPolicy::Masked && i == j);
            if dead {
                scores.push(p.lambda.lift(MASK_SENTINEL));
            } else {
                let attn = S::dot(&queries[i], &keys[j]).mul_const(inv_sqrt);
                let prior = p.lambda * cosine(&h[i], &h[j]);
                scores.push(attn + prior);
            }
        }
        c.extend(softmax_masked(&scores));
    }
    c
}

/// Symmetric participation mass per expert: 0.5 * (row sum + column sum).
pub fn connectivity<S: Real>(c: &[S], n: usize) -> Vec<S> {
    (0..n)
        .map(|i| {
            let row = S::sum(&c[i * n..(i + 1) * n]);
            let col_entries: Vec<S> = (0..n).map(|r| c[r * n + i]).collect();
            (row + S::sum(&col_entries)).mul_const(0.5)
        })
        .collect()
}

/// One step's record in generic form.
pub struct CoreStep<S> {
    pub logits: Vec<S>,
    pub pi: Vec<S>,
    pub z: Vec<S>,
    pub chosen: usize,
    pub available: Vec<usize>,
}

pub struct CoreRollout<S> {
    pub collab: Vec<S>,
    pub steps: Vec<CoreStep<S>>,
    pub chain_output: Vec<S>,
}

/// Recorded sampling decisions so a rollout can be replayed as the smooth
/// straight-through surrogate (for finite differences and attribution).
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Transcript {
    pub steps: Vec<TranscriptStep>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranscriptStep {
    pub gumbels: Vec<f64>,
    pub chosen: usize,
    pub st_offset: Vec<f64>,
}

pub enum Driver<'a> {
    /// Draw fresh Gumbel noise, pick hard argmax, record the transcript.
    Sample {
        rng: &'a mut ChaCha8Rng,
        out: &'a mut Transcript,
    },
    /// Replay a transcript: fixed noise, fixed choices, fixed ST offsets.
    Replay { transcript: &'a Transcript },
}

/// Sequential selection without replacement. `k` steps; each step removes
/// the chosen expert from the available set, blends the selection context
/// toward its output, and records the straight-through sample.
#[allow(clippy::too_many_arguments)]
pub fn rollout_core<S: Real>(
    p: &LiftedParams<S>,
    h: &[Vec<S>],
    x: &[S],
    opts: &RolloutOptions,
    masked: &BTreeSet<usize>,
    k: usize,
    gumbel_temp: f64,
    driver: &mut Driver<'_>,
) -> Result<CoreRollout<S>> {
    let n = h.len();
    let mut available: BTreeSet<usize> = (0..n).filter(|i| !masked.contains(i)).collect();
    if available.len() < 2 {
        return Err(Error::TooFewExperts(n));
    }
    if k < 1 || k > available.len() {
        return Err(Error::Config(format!(
            "rollout k={k} out of range 1..={}",
            available.len()
        )));
    }
    if gumbel_temp <= 0.0 {
        return Err(Error::NonPositiveTemperature(gumbel_temp));
    }

    let collab = collab_core(p, h, opts.diagonal, masked, None);
    let conn_full = connectivity(&collab, n);

    let mut context: Vec<S> = x.to_vec();
    let mut steps: Vec<CoreStep<S>> = Vec::with_capacity(k);

    for t in 0..k {
        let (c_step, conn) = if opts.recompute_collab_per_step && t > 0 {
            let support: BTreeSet<usize> = available.clone();
            let c = collab_core(p, h, opts.diagonal, masked, Some(&support));
            let conn = connectivity(&c, n);
            (Some(c), conn)
        } else {
            (None, conn_full.clone())
        };
        let _ = c_step; // step-local matrix only feeds the logits

        // logits with the position penalty applied outside the generic core
        let d = p.dims.d;
        let logits: Vec<S> = (0..n)
            .map(|i| {
                if available.contains(&i) {
                    let head = S::dot(&p.input_heads[i * d..(i + 1) * d], &context);
                    (head + p.quality[i] + conn[i]).add_const(-(opts.gamma * t as f64))
                } else {
                    p.lambda.lift(MASK_SENTINEL)
                }
            })
            .collect();

        // Gumbel-Softmax: perturbed = logits / tau + g
        let (gumbels, chosen, st_offset) = match driver {
            Driver::Sample { rng, .. } => {
                let mut g = vec![0.0f64; n];
                for i in available.iter() {
                    g[*i] = rng::gumbel(rng);
                }
                let chosen = available
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        (logits[a].val() / gumbel_temp + g[a])
                            .total_cmp(&(logits[b].val() / gumbel_temp + g[b]))
                    })
                    .unwrap();
                (g, chosen, None)
            }
            Driver::Replay { transcript } => {
                let step = &transcript.steps[t];
                (
                    step.gumbels.clone(),
                    step.chosen,
                    Some(step.st_offset.clone()),
                )
            }
        };

        let perturbed: Vec<S> = (0..n)
            .map(|i| {
                if available.contains(&i) {
                    logits[i].mul_const(1.0 / gumbel_temp).add_const(gumbels[i])
                } else {
                    p.lambda.lift(MASK_SENTINEL)
                }
            })
            .collect();
        let pi = softmax_masked(&perturbed);

        // straight-through: value is the hard one-hot, gradient is soft
        let offsets: Vec<f64> = match &st_offset {
            Some(c) => c.clone(),
            None => (0..n)
                .map(|i| (if i == chosen { 1.0 } else { 0.0 }) - pi[i].val())
                .collect(),
        };
        let z: Vec<S> = (0..n).map(|i| pi[i].add_const(offsets[i])).collect();

        if let Driver::Sample { out, .. } = driver {
            out.steps.push(TranscriptStep {
                gumbels: gumbels.clone(),
                chosen,
                st_offset: offsets.clone(),
            });
        }

        // chain conditioning: blend the original prompt toward the chosen
        // expert's output for the next step's input projection
        let blended: Vec<S> = (0..p.dims.d)
            .map(|dim| {
                let picked: Vec<S> = (0..n).map(|i| z[i] * h[i][dim]).collect();
                x[dim].mul_const(1.0 - opts.chain_blend)
                    + S::sum(&picked).mul_const(opts.chain_blend)
            })
            .collect();
        context = blended;

        if opts.without_replacement {
            available.remove(&chosen);
        }
        steps.push(CoreStep {
            logits,
            pi,
            z,
            chosen,
            available: if opts.without_replacement {
                let mut avail = available.clone();
                avail.insert(chosen);
                avail.into_iter().collect()
            } else {
                available.iter().copied().collect()
            },
        });
    }

    // chain output: straight-through pick of the final step's expert
    let z_last = &steps.last().unwrap().z;
    let chain_output: Vec<S> = (0..p.dims.d)
        .map(|dim| {
            let picked: Vec<S> = (0..n).map(|i| z_last[i] * h[i][dim]).collect();
            S::sum(&picked)
        })
        .collect();

    Ok(CoreRollout {
        collab,
        steps,
        chain_output,
    })
}

// ---------------------------------------------------------------------------
// Public f64 orchestrator
// ---------------------------------------------------------------------------

/// One step of a realized rollout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionStep {
    pub step_index: usize,
    pub logits: Vec<f64>,
    /// Soft Gumbel distribution over the available set.
    pub pi: Vec<f64>,
    pub chosen: usize,
    pub available: Vec<usize>,
}

/// One orchestrated inference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RolloutResult {
    pub prompt_id: String,
    pub collab: CollabMatrix,
    pub steps: Vec<SelectionStep>,
    /// Chosen expert positions (0-based), without repeats.
    pub sequence: Vec<usize>,
    /// The final chosen expert's (chain-conditioned) output embedding.
    pub chain_output: Vec<f64>,
    /// steps[0].pi.
    pub first_choice_dist: Vec<f64>,
    /// Replayable sampling record for the smooth surrogate.
    pub transcript: Transcript,
}

/// Immutable controller view: parameters, options and a masked-expert set.
/// Masking is a view operation; the underlying parameters never change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Orchestrator {
    pub params: OrchestratorParams,
    pub opts: RolloutOptions,
    masked: BTreeSet<usize>,
}

impl Orchestrator {
    pub fn new(params: OrchestratorParams, opts: RolloutOptions) -> Self {
        Orchestrator {
            params,
            opts,
            masked: BTreeSet::new(),
        }
    }

    pub fn masked(&self) -> &BTreeSet<usize> {
        &self.masked
    }

    pub fn live_experts(&self) -> usize {
        self.params.dims.n - self.masked.len()
    }

    /// Masked view: the expert's selection logit is forced to the sentinel
    /// at every step and its row/column leave the matrix support. Masking
    /// the same expert twice is the same view (idempotent).
    pub fn mask_expert(&self, expert: usize) -> Result<Orchestrator> {
        if expert >= self.params.dims.n {
            return Err(Error::DimensionMismatch {
                what: "mask_expert index",
                expected: self.params.dims.n,
                got: expert,
            });
        }
        let mut masked = self.masked.clone();
        masked.insert(expert);
        if self.params.dims.n - masked.len() < 2 {
            return Err(Error::TooFewExperts(expert));
        }
        Ok(Orchestrator {
            params: self.params.clone(),
            opts: self.opts.clone(),
            masked,
        })
    }

    /// The interaction matrix over the current (possibly masked) support.
    pub fn interaction_matrix(&self, outputs: &[Vec<f64>]) -> Result<CollabMatrix> {
        self.check_outputs(outputs)?;
        let p = self.params.as_values();
        let c = collab_core(&p, outputs, self.opts.diagonal, &self.masked, None);
        let m = CollabMatrix {
            n: outputs.len(),
            c,
            diagonal_policy: self.opts.diagonal,
        };
        m.validate(&self.masked)?;
        Ok(m)
    }

    /// Deterministic selection logits for an explicit step and support.
    pub fn selection_logits(
        &self,
        context: &[f64],
        collab: &CollabMatrix,
        t: usize,
        available: &BTreeSet<usize>,
    ) -> Result<Vec<f64>> {
        if available.is_empty() {
            return Err(Error::AllMasked);
        }
        let p = self.params.as_values();
        let conn = connectivity(&collab.c, collab.n);
        let d = p.dims.d;
        Ok((0..collab.n)
            .map(|i| {
                if available.contains(&i) && !self.masked.contains(&i) {
                    f64::dot(&p.input_heads[i * d..(i + 1) * d], context) + p.quality[i] + conn[i]
                        - self.opts.gamma * t as f64
                } else {
                    MASK_SENTINEL
                }
            })
            .collect())
    }

    /// Sample a k-step rollout.
    pub fn rollout(
        &self,
        prompt_id: &str,
        prompt_emb: &[f64],
        outputs: &[Vec<f64>],
        k: usize,
        gumbel_temp: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<RolloutResult> {
        self.check_outputs(outputs)?;
        let p = self.params.as_values();
        let mut transcript = Transcript::default();
        let core = rollout_core(
            &p,
            outputs,
            prompt_emb,
            &self.opts,
            &self.masked,
            k,
            gumbel_temp,
            &mut Driver::Sample {
                rng,
                out: &mut transcript,
            },
        )?;
        Ok(self.finish(prompt_id, core, transcript))
    }

    /// Replay a recorded rollout (same choices and noise) at the current
    /// parameters.
    pub fn replay(
        &self,
        prompt_id: &str,
        prompt_emb: &[f64],
        outputs: &[Vec<f64>],
        k: usize,
        gumbel_temp: f64,
        transcript: &Transcript,
    ) -> Result<RolloutResult> {
        self.check_outputs(outputs)?;
        let p = self.params.as_values();
        let core = rollout_core(
            &p,
            outputs,
            prompt_emb,
            &self.opts,
            &self.masked,
            k,
            gumbel_temp,
            &mut Driver::Replay { transcript },
        )?;
        Ok(self.finish(prompt_id, core, transcript.clone()))
    }

    fn finish(
        &self,
        prompt_id: &str,
        core: CoreRollout<f64>,
        transcript: Transcript,
    ) -> RolloutResult {
        let n = self.params.dims.n;
        let steps: Vec<SelectionStep> = core
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| SelectionStep {
                step_index: t,
                logits: s.logits.clone(),
                pi: s.pi.clone(),
                chosen: s.chosen,
                available: s.available.clone(),
            })
            .collect();
        let sequence: Vec<usize> = steps.iter().map(|s| s.chosen).collect();
        let first_choice_dist = steps[0].pi.clone();
        RolloutResult {
            prompt_id: prompt_id.to_string(),
            collab: CollabMatrix {
                n,
                c: core.collab,
                diagonal_policy: self.opts.diagonal,
            },
            steps,
            sequence,
            chain_output: core.chain_output,
            first_choice_dist,
            transcript,
        }
    }

    fn check_outputs(&self, outputs: &[Vec<f64>]) -> Result<()> {
        if outputs.len() != self.params.dims.n {
            return Err(Error::DimensionMismatch {
                what: "expert outputs",
                expected: self.params.dims.n,
                got: outputs.len(),
            });
        }
        for h in outputs {
            if h.len() != self.params.dims.d {
                return Err(Error::DimensionMismatch {
                    what: "expert embedding",
                    expected: self.params.dims.d,
                    got: h.len(),
                });
            }
            let norm: f64 = h.iter().map(|x| x * x).sum::<f64>();
            if norm == 0.0 {
                return Err(Error::ZeroVector("expert embedding"));
            }
        }
        Ok(())
    }
}

/// Active expert budget from the selection-confidence moving average:
/// k = clamp(ceil(N * (1 - ema)), 1, N); monotone non-increasing in ema.
pub fn adaptive_k(confidence_ema: f64, n: usize) -> usize {
    let ema = confidence_ema.clamp(0.0, 1.0);
    let k = (n as f64 * (1.0 - ema)).ceil() as usize;
    k.clamp(1, n)
}

// ---------------------------------------------------------------------------
// Cascade mode
// ---------------------------------------------------------------------------

/// One fixed-order confidence cascade pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CascadeRecord {
    pub prompt_id: String,
    /// Token-level predictive entropy per expert, in cascade order.
    pub entropies: Vec<f64>,
    /// First expert whose entropy falls below the threshold (hard rule),
    /// else the last expert.
    pub stopping_index: usize,
    /// Soft stopping distribution from sequential sigmoid gates.
    pub stop_probs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Soft stopping distribution: gate_i = sigmoid(beta * (threshold - H_i)),
/// p_stop(i) = gate_i * prod_{j<i} (1 - gate_j); the last expert absorbs
/// the remaining mass (its own gate is unused).
pub fn stop_probs(entropies: &[f64], threshold: f64, beta: f64) -> Vec<f64> {
    let n = entropies.len();
    let mut probs = vec![0.0; n];
    let mut carry = 1.0;
    for i in 0..n {
        if i + 1 == n {
            probs[i] = carry;
        } else {
            let gate = sigmoid(beta * (threshold - entropies[i]));
            probs[i] = gate * carry;
            carry *= 1.0 - gate;
        }
    }
    probs
}

/// Run the cascade: experts respond in profile order; inference stops at
/// the first confident expert (entropy below threshold).
pub fn cascade_run(
    consortium: &Consortium,
    threshold: f64,
    prompt: &PromptInstance,
    beta: f64,
    run_seed: u64,
) -> Result<CascadeRecord> {
    if consortium.is_empty() {
        return Err(Error::TooFewExperts(0));
    }
    if beta <= 0.0 {
        return Err(Error::Config(format!(
            "cascade beta must be > 0, got {beta}"
        )));
    }
    let outputs = consortium.respond_all(prompt, run_seed)?;
    let entropies: Vec<f64> = outputs.iter().map(|o| o.token_entropy).collect();
    let stopping_index = entropies
        .iter()
        .position(|&h| h < threshold)
        .unwrap_or(entropies.len() - 1);
    Ok(CascadeRecord {
        prompt_id: prompt.id.clone(),
        stop_probs: stop_probs(&entropies, threshold, beta),
        entropies,
        stopping_index,
    })
}

/// Cascade order helper: profiles sorted by expert_id (the fixed order).
pub fn cascade_order(consortium: &Consortium) -> Vec<&ExpertProfile> {
    let mut v: Vec<&ExpertProfile> = consortium.profiles.iter().collect();
    v.sort_by_key(|p| p.expert_id);
    v
}
