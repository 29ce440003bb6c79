//! Simulated expert consortium: a deterministic prompt encoder stand-in, a
//! family of noisy expert responders, a privileged oracle, and a synthetic
//! task generator.
//!
//! Experts are defined entirely by `(profile, prompt, seed)`, so a whole
//! consortium replays bit-exactly. Oracle outputs exist for the training
//! objective only; no inference-path function in this crate accepts an
//! [`OracleOutput`].

use rand_chacha::ChaCha8Rng;
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, lane};

/// Task flavors mirroring the arithmetic / code / knowledge benchmark roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskTag {
    Arith,
    Code,
    Knowledge,
}

impl TaskTag {
    pub fn all() -> [TaskTag; 3] {
        [TaskTag::Arith, TaskTag::Code, TaskTag::Knowledge]
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskTag::Arith => "arith",
            TaskTag::Code => "code",
            TaskTag::Knowledge => "knowledge",
        }
    }
}

/// One synthetic task: text plus the unit-norm embedding of its ideal answer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptInstance {
    pub id: String,
    pub text: String,
    pub target: Vec<f64>,
    pub task_tag: TaskTag,
}

/// A simulated expert's identity. `capability` stands in for parameter
/// scale, `temperature` for decoding temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub expert_id: usize,
    pub family_seed: u64,
    pub temperature: f64,
    pub capability: f64,
}

/// An expert's response: unit-norm output embedding plus the token-level
/// predictive entropy consumed by cascade mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertOutput {
    pub expert_id: usize,
    pub embedding: Vec<f64>,
    pub token_entropy: f64,
}

/// Privileged teacher signal. Only the training objective may consume it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleOutput {
    pub embedding: Vec<f64>,
}

/// The fixed expert pool plus the embedding dimension it operates in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Consortium {
    pub profiles: Vec<ExpertProfile>,
    pub dim: usize,
}

/// Decoding-temperature ladder shared by both reference consortia
/// (per-expert values as published for the ten-expert pools).
pub const TEMPERATURE_LADDER: [f64; 10] = [8e-6, 0.2, 0.5, 0.5, 8e-6, 1.0, 8e-6, 1.5, 2.0, 8e-6];

/// Capability tiers for the 1B / 3B / 7B mixed-capacity pool.
pub const HETERO_CAPABILITIES: [f64; 3] = [0.3, 0.6, 1.0];

impl Consortium {
    /// Ten equal-capability experts from three families, distinguished only
    /// by decoding temperature.
    pub fn homogeneous(dim: usize) -> Self {
        let profiles = (0..10)
            .map(|i| ExpertProfile {
                expert_id: i + 1,
                family_seed: (i % 3) as u64 + 1,
                temperature: TEMPERATURE_LADDER[i],
                capability: 1.0,
            })
            .collect();
        Consortium { profiles, dim }
    }

    /// Ten mixed-capacity experts; the same temperature ladder, with
    /// capability following the 1B / 3B / 7B tier of each family.
    pub fn heterogeneous(dim: usize) -> Self {
        let profiles = (0..10)
            .map(|i| ExpertProfile {
                expert_id: i + 1,
                family_seed: (i % 3) as u64 + 11,
                temperature: TEMPERATURE_LADDER[i],
                capability: HETERO_CAPABILITIES[i % 3],
            })
            .collect();
        Consortium { profiles, dim }
    }

    pub fn custom(profiles: Vec<ExpertProfile>, dim: usize) -> Result<Self> {
        if profiles.len() < 2 {
            return Err(Error::TooFewExperts(profiles.len()));
        }
        let mut ids: Vec<usize> = profiles.iter().map(|p| p.expert_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != profiles.len() {
            return Err(Error::Config("duplicate expert ids in consortium".into()));
        }
        Ok(Consortium { profiles, dim })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// All expert responses to one prompt, with per-(prompt, expert) streams
    /// derived from `hash(run_seed, prompt_id, expert_id)`.
    pub fn respond_all(&self, prompt: &PromptInstance, run_seed: u64) -> Result<Vec<ExpertOutput>> {
        let prompt_emb = encode_prompt(&prompt.text, self.dim)?;
        self.profiles
            .iter()
            .map(|p| {
                let mut r = rng::stream(
                    run_seed,
                    &[
                        lane::EXPERT,
                        rng::fnv1a(prompt.id.as_bytes()),
                        p.expert_id as u64,
                    ],
                );
                expert_respond(p, &prompt_emb, &mut r)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Encoder stand-in
// ---------------------------------------------------------------------------

const SIGN_SALT: &[u8] = b"sign:";
const BIGRAM_SALT: &[u8] = b"bigram:";
const ANSWER_MAP_SEED: u64 = 0x414e_5357; // fixed world constant

fn hash_token(salt: &[u8], token: &str) -> u64 {
    let mut bytes = Vec::with_capacity(salt.len() + token.len());
    bytes.extend_from_slice(salt);
    bytes.extend_from_slice(token.as_bytes());
    rng::fnv1a(&bytes)
}

/// Deterministic bag-of-words embedding.
///
/// Whitespace tokens hash into `d - d/4` buckets with signed counts; a
/// secondary hashed-bigram channel occupies the final `d/4` dimensions so
/// that token order is detectable. The result is L2-normalized.
pub fn encode_prompt(text: &str, d: usize) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let d_bigram = d / 4;
    let d_unigram = d - d_bigram;
    let tokens: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
    let mut v = vec![0.0f64; d];
    for t in &tokens {
        let bucket = (hash_token(b"", t) % d_unigram as u64) as usize;
        let sign = if hash_token(SIGN_SALT, t) & 1 == 0 {
            1.0
        } else {
            -1.0
        };
        v[bucket] += sign;
    }
    if d_bigram > 0 {
        for pair in tokens.windows(2) {
            let joined = format!("{} {}", pair[0], pair[1]);
            let bucket = d_unigram + (hash_token(BIGRAM_SALT, &joined) % d_bigram as u64) as usize;
            let sign = if hash_token(SIGN_SALT, &joined) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            v[bucket] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // signed counts cancelled; fall back to a deterministic unit vector
        let bucket = (rng::fnv1a(text.as_bytes()) % d as u64) as usize;
        v[bucket] = 1.0;
        return Ok(v);
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Row-major d x d map with N(0, 1/d) entries from a fixed seed.
fn seeded_map(seed: u64, d: usize) -> Vec<f64> {
    let mut r = rng::stream(seed, &[lane::MAP, d as u64]);
    let scale = 1.0 / (d as f64).sqrt();
    (0..d * d)
        .map(|_| rng::std_normal(&mut r) * scale)
        .collect()
}

/// The shared "ideal answer" direction map: targets and high-capability
/// expert responses both point along `answer_map * prompt_emb`.
pub fn answer_map(d: usize) -> Vec<f64> {
    seeded_map(ANSWER_MAP_SEED, d)
}

/// Family-specific mixing map; low-capability experts drift toward this
/// idiosyncratic direction instead of the answer direction.
pub fn mixing_map(family_seed: u64, d: usize) -> Vec<f64> {
    seeded_map(family_seed.wrapping_add(0x5eed_0000), d)
}

fn apply_map(m: &[f64], v: &[f64]) -> Vec<f64> {
    let d = v.len();
    (0..d)
        .map(|r| {
            let mut acc = 0.0;
            for c in 0..d {
                acc += m[r * d + c] * v[c];
            }
            acc
        })
        .collect()
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    v
}

/// Simulated expert response.
///
/// `h = normalize(capability * answer_map * x + (1 - capability) *
/// mixing_map * x + temperature * eps)`: capability interpolates between the
/// shared answer direction and the family's idiosyncratic direction, and
/// decoding temperature scales Gaussian output noise. Token entropy is
/// `base_entropy(capability) + temperature-scaled noise`, clamped at zero,
/// with `base_entropy(c) = 1.5 * (1 - c) + 0.2`.
pub fn expert_respond(
    profile: &ExpertProfile,
    prompt_emb: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<ExpertOutput> {
    let norm: f64 = prompt_emb.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroVector("expert_respond prompt embedding"));
    }
    let d = prompt_emb.len();
    let cap = profile.capability;
    let answer = apply_map(&answer_map(d), prompt_emb);
    let mixed = apply_map(&mixing_map(profile.family_seed, d), prompt_emb);
    let mut h: Vec<f64> = (0..d)
        .map(|i| cap * answer[i] + (1.0 - cap) * mixed[i])
        .collect();
    for x in h.iter_mut() {
        *x += profile.temperature * rng::std_normal(rng);
    }
    let h = normalize(h);
    let base = 1.5 * (1.0 - cap) + 0.2;
    let token_entropy = (base + profile.temperature * rng::std_normal(rng)).max(0.0);
    Ok(ExpertOutput {
        expert_id: profile.expert_id,
        embedding: h,
        token_entropy,
    })
}

/// The oracle returns the prompt's ideal answer direction, noise-free.
pub fn oracle_respond(prompt: &PromptInstance) -> OracleOutput {
    OracleOutput {
        embedding: prompt.target.clone(),
    }
}

// ---------------------------------------------------------------------------
// Synthetic tasks
// ---------------------------------------------------------------------------

const NAMES: [&str; 8] = ["Ava", "Ben", "Chloe", "Dev", "Mia", "Noah", "Priya", "Sam"];
const ITEMS: [&str; 6] = ["apples", "books", "coins", "marbles", "pens", "shells"];
const PLACES: [&str; 6] = [
    "Aldova",
    "Brinmar",
    "Corvel",
    "Drayen",
    "Elmsworth",
    "Farrow",
];
const CITIES: [&str; 6] = ["Weston", "Kariol", "Lumen", "Marrow", "Nordia", "Opaline"];
const FEATURES: [&str; 5] = [
    "silver river",
    "old harbor",
    "granite hills",
    "cedar forest",
    "salt flats",
];
const QUALITIES: [&str; 5] = [
    "quiet markets",
    "winding streets",
    "stone bridges",
    "open squares",
    "long promenades",
];
const VERBS: [&str; 5] = ["reverses", "deduplicates", "sorts", "flattens", "merges"];
const THINGS: [&str; 5] = ["strings", "records", "intervals", "pairs", "timestamps"];

fn pick<'a>(options: &'a [&'a str], rng: &mut ChaCha8Rng) -> &'a str {
    options[(rng.next_u64() % options.len() as u64) as usize]
}

/// Deterministic synthetic task of the requested flavor.
///
/// Arithmetic prompts carry at least two numeric tokens and a reasoning cue;
/// knowledge prompts have at least three sentences and no digits; code
/// prompts open with an imperative specification sentence. The target is
/// the unit answer direction derived from the prompt itself.
pub fn generate_task(task_tag: TaskTag, rng: &mut ChaCha8Rng, d: usize) -> PromptInstance {
    let uid = rng.next_u64();
    let text = match task_tag {
        TaskTag::Arith => {
            let name = pick(&NAMES, rng);
            let item = pick(&ITEMS, rng);
            let a = 3 + rng.next_u64() % 95;
            let b = 2 + rng.next_u64() % 95;
            format!(
                "{name} has {a} {item} and buys {b} more. \
                 Let's think step by step about how many {item} {name} holds now."
            )
        }
        TaskTag::Knowledge => {
            let place = pick(&PLACES, rng);
            let city = pick(&CITIES, rng);
            let feature = pick(&FEATURES, rng);
            let quality = pick(&QUALITIES, rng);
            format!(
                "The capital of {place} is {city}. The city sits beside the {feature}. \
                 Therefore travelers praise its {quality}. \
                 Local guides describe the region at length."
            )
        }
        TaskTag::Code => {
            let verb = pick(&VERBS, rng);
            let thing = pick(&THINGS, rng);
            format!(
                "Write a function that {verb} a list of {thing} and returns the result. \
                 The input can be large, so keep the routine efficient. \
                 Then, add a short docstring."
            )
        }
    };
    let emb = encode_prompt(&text, d).expect("generated text is never empty");
    let target = normalize(apply_map(&answer_map(d), &emb));
    PromptInstance {
        id: format!("{}-{uid:016x}", task_tag.name()),
        text,
        target,
        task_tag,
    }
}

// ---------------------------------------------------------------------------
// Ingestion of externally produced embeddings
// ---------------------------------------------------------------------------

/// One externally produced prompt: instance, per-expert outputs, oracle.
#[derive(Debug, Clone)]
pub struct IngestedPrompt {
    pub prompt: PromptInstance,
    pub outputs: Vec<ExpertOutput>,
    pub oracle: OracleOutput,
}

fn renorm_checked(v: &[f64], d: usize, line: usize, what: &'static str) -> Result<Vec<f64>> {
    if v.len() != d {
        return Err(Error::DimensionMismatch {
            what,
            expected: d,
            got: v.len(),
        });
    }
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Schema {
            line,
            msg: format!("{what}: zero or non-finite norm"),
        });
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Read a trace file produced elsewhere (real-LLM runs included) and turn
/// its embedding payloads into analyzable prompts. Records without any
/// payload fields (pure orchestration traces) are skipped; a partial
/// payload is a schema error with its line number. All embeddings are
/// renormalized to unit norm.
pub fn ingest_embeddings(path: &std::path::Path, d: usize) -> Result<Vec<IngestedPrompt>> {
    let records = crate::trace::read_trace_numbered(path)?;
    let mut out = Vec::new();
    for (line, rec) in records {
        if rec.text.is_none()
            && rec.target.is_none()
            && rec.oracle.is_none()
            && rec.experts.is_none()
        {
            continue;
        }
        let missing = |field: &str| Error::Schema {
            line,
            msg: format!("embedding payload missing '{field}'"),
        };
        let text = rec.text.ok_or_else(|| missing("text"))?;
        if text.trim().is_empty() {
            return Err(Error::Schema {
                line,
                msg: "text is empty".into(),
            });
        }
        let task_tag = rec.task_tag.ok_or_else(|| missing("task_tag"))?;
        let target = rec.target.ok_or_else(|| missing("target"))?;
        let oracle = rec.oracle.ok_or_else(|| missing("oracle"))?;
        let experts = rec.experts.ok_or_else(|| missing("experts"))?;
        if experts.len() < 2 {
            return Err(Error::Schema {
                line,
                msg: "fewer than two expert embeddings".into(),
            });
        }
        let outputs = experts
            .iter()
            .map(|e| {
                Ok(ExpertOutput {
                    expert_id: e.expert_id,
                    embedding: renorm_checked(&e.h, d, line, "expert embedding")?,
                    token_entropy: if e.token_entropy.is_finite() && e.token_entropy >= 0.0 {
                        e.token_entropy
                    } else {
                        return Err(Error::Schema {
                            line,
                            msg: format!("expert {}: bad token_entropy", e.expert_id),
                        });
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(IngestedPrompt {
            prompt: PromptInstance {
                id: rec.prompt_id,
                text,
                target: renorm_checked(&target, d, line, "target embedding")?,
                task_tag,
            },
            outputs,
            oracle: OracleOutput {
                embedding: renorm_checked(&oracle, d, line, "oracle embedding")?,
            },
        });
    }
    if out.is_empty() {
        return Err(Error::Schema {
            line: 0,
            msg: "no embedding payloads found".into(),
        });
    }
    Ok(out)
}

/// The chaining template: the most recent expert output at the top,
/// coordination instructions, then the task instance.
pub fn format_chain_prompt(history: &[(usize, &str)], task_instance: &str) -> String {
    let mut out = String::new();
    for (expert_id, response) in history.iter().rev() {
        out.push_str(&format!("Expert {expert_id}'s Response: {response}\n\n"));
    }
    out.push_str(
        "Above is the conversation history, with the most recent model output at the top. \
         Each model should carefully read *all previous outputs* and decide how to contribute next. \
         Your role is to coordinate with earlier outputs by either:\n\
         1. Building upon correct reasoning.\n\
         2. Correcting or refining mistakes.\n\
         3. Adding missing details.\n\
         4. Passing an intermediate or final answer if complete.\n\n\
         Always state explicitly what you are doing and why. Avoid repeating identical \
         reasoning unless you are clarifying or improving it. /no_think\n\n",
    );
    out.push_str(task_instance);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::cosine_sim;
    use crate::rng::stream;
    use regex::Regex;

    #[test]
    fn encoder_is_deterministic() {
        let a = encode_prompt("seven green bottles", 32).unwrap();
        let b = encode_prompt("seven green bottles", 32).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encoder_unigram_channel_is_order_free() {
        // one-token window produces no bigrams, so "a b" vs "b a" differ
        // only in the bigram channel; the unigram slice must match exactly
        let d = 32;
        let a = encode_prompt("a b", d).unwrap();
        let b = encode_prompt("b a", d).unwrap();
        let d_unigram = d - d / 4;
        let na = norm_of("a b", d);
        let nb = norm_of("b a", d);
        for i in 0..d_unigram {
            assert!((a[i] * na - b[i] * nb).abs() < 1e-12, "bucket {i}");
        }
    }

    fn norm_of(text: &str, d: usize) -> f64 {
        oracle_encode(text, d)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Independent hash-count re-implementation of the encoder (the oracle
    /// builds explicit count maps instead of streaming accumulation).
    fn oracle_encode(text: &str, d: usize) -> Vec<f64> {
        use std::collections::BTreeMap;
        let d_bigram = d / 4;
        let d_unigram = d - d_bigram;
        let toks: Vec<String> = text.split_whitespace().map(|t| t.to_lowercase()).collect();
        let mut uni: BTreeMap<String, i64> = BTreeMap::new();
        for t in &toks {
            *uni.entry(t.clone()).or_default() += 1;
        }
        let mut v = vec![0.0; d];
        for (t, c) in uni {
            let bucket = (hash_token(b"", &t) % d_unigram as u64) as usize;
            let sign = if hash_token(SIGN_SALT, &t) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            v[bucket] += sign * c as f64;
        }
        if d_bigram > 0 {
            let mut bi: BTreeMap<String, i64> = BTreeMap::new();
            for w in toks.windows(2) {
                *bi.entry(format!("{} {}", w[0], w[1])).or_default() += 1;
            }
            for (t, c) in bi {
                let bucket = d_unigram + (hash_token(BIGRAM_SALT, &t) % d_bigram as u64) as usize;
                let sign = if hash_token(SIGN_SALT, &t) & 1 == 0 {
                    1.0
                } else {
                    -1.0
                };
                v[bucket] += sign * c as f64;
            }
        }
        v
    }

    /// Cosine between disjoint-vocabulary texts matches the independent
    /// re-implementation within 1e-9.
    #[test]
    fn encoder_matches_independent_oracle() {
        let d = 32;
        let t1 = "red kites climb over warm coastal air";
        let t2 = "nine delegates signed the winter accord quickly";
        let a = encode_prompt(t1, d).unwrap();
        let b = encode_prompt(t2, d).unwrap();
        let engine_cos = cosine_sim(&a, &b).unwrap();
        let oa = oracle_encode(t1, d);
        let ob = oracle_encode(t2, d);
        let oracle_cos = cosine_sim(&oa, &ob).unwrap();
        assert!((engine_cos - oracle_cos).abs() < 1e-9);
    }

    #[test]
    fn encoder_rejects_empty_text() {
        assert!(matches!(encode_prompt("   ", 16), Err(Error::EmptyText)));
    }

    #[test]
    fn encoder_output_is_unit_norm() {
        let v = encode_prompt("count the boats on the silver river", 32).unwrap();
        let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn expert_zero_temperature_is_deterministic() {
        let profile = ExpertProfile {
            expert_id: 1,
            family_seed: 2,
            temperature: 0.0,
            capability: 0.7,
        };
        let x = encode_prompt("a quiet harbor town", 32).unwrap();
        let mut r1 = stream(5, &[lane::EXPERT, 0, 1]);
        let mut r2 = stream(99, &[lane::EXPERT, 7, 3]); // different stream
        let h1 = expert_respond(&profile, &x, &mut r1).unwrap();
        let h2 = expert_respond(&profile, &x, &mut r2).unwrap();
        assert_eq!(h1.embedding, h2.embedding);
    }

    /// Monte-Carlo over draws: hotter decoding disperses outputs more,
    /// strictly across the published temperature ladder.
    #[test]
    fn temperature_increases_dispersion_monotonically() {
        let d = 32;
        let x = encode_prompt("summarize the treaty in plain words", d).unwrap();
        let ladder = [8e-6, 0.2, 0.5, 1.0, 1.5, 2.0];
        let mut dispersions = Vec::new();
        for (ti, &tau) in ladder.iter().enumerate() {
            let profile = ExpertProfile {
                expert_id: 1,
                family_seed: 1,
                temperature: tau,
                capability: 1.0,
            };
            let mut r = stream(17, &[lane::EXPERT, ti as u64]);
            let draws: Vec<Vec<f64>> = (0..100)
                .map(|_| expert_respond(&profile, &x, &mut r).unwrap().embedding)
                .collect();
            let mut total = 0.0;
            let mut pairs = 0.0;
            for i in 0..draws.len() {
                for j in (i + 1)..draws.len() {
                    total += 1.0 - cosine_sim(&draws[i], &draws[j]).unwrap();
                    pairs += 1.0;
                }
            }
            dispersions.push(total / pairs);
        }
        for w in dispersions.windows(2) {
            assert!(w[1] > w[0], "dispersion not monotone: {dispersions:?}");
        }
    }

    /// Monte-Carlo oracle: capability raises expected alignment with the
    /// oracle, at matched noise.
    #[test]
    fn capability_improves_oracle_alignment() {
        let d = 32;
        let mut task_rng = stream(3, &[lane::TASK]);
        let mut acc = [0.0f64; 2];
        for trial in 0..100 {
            let prompt = generate_task(TaskTag::Arith, &mut task_rng, d);
            let o = oracle_respond(&prompt);
            let x = encode_prompt(&prompt.text, d).unwrap();
            for (slot, cap) in [(0usize, 1.0), (1usize, 0.2)] {
                let profile = ExpertProfile {
                    expert_id: 1,
                    family_seed: 2,
                    temperature: 0.5,
                    capability: cap,
                };
                let mut r = stream(21, &[lane::EXPERT, trial, slot as u64]);
                let h = expert_respond(&profile, &x, &mut r).unwrap();
                acc[slot] += cosine_sim(&h.embedding, &o.embedding).unwrap();
            }
        }
        assert!(
            acc[0] > acc[1],
            "capability 1.0 mean cos {} <= capability 0.2 mean cos {}",
            acc[0] / 100.0,
            acc[1] / 100.0
        );
    }

    /// At zero temperature the capability ordering still holds on average.
    #[test]
    fn oracle_alignment_at_zero_temperature() {
        let d = 32;
        let mut task_rng = stream(4, &[lane::TASK]);
        let mut hi = 0.0;
        let mut lo = 0.0;
        for _ in 0..50 {
            let prompt = generate_task(TaskTag::Knowledge, &mut task_rng, d);
            let o = oracle_respond(&prompt);
            let x = encode_prompt(&prompt.text, d).unwrap();
            for (cap, acc) in [(1.0, &mut hi), (0.1, &mut lo)] {
                let profile = ExpertProfile {
                    expert_id: 1,
                    family_seed: 2,
                    temperature: 0.0,
                    capability: cap,
                };
                let mut r = stream(0, &[lane::EXPERT]);
                let h = expert_respond(&profile, &x, &mut r).unwrap();
                *acc += cosine_sim(&h.embedding, &o.embedding).unwrap();
            }
        }
        assert!(hi > lo, "hi {hi} lo {lo}");
    }

    #[test]
    fn oracle_is_the_target_exactly() {
        let mut r = stream(10, &[lane::TASK]);
        let prompt = generate_task(TaskTag::Code, &mut r, 32);
        let o = oracle_respond(&prompt);
        assert_eq!(o.embedding, prompt.target);
        let n: f64 = o.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
    }

    #[test]
    fn arith_tasks_have_numbers_and_cues() {
        let re = Regex::new(r"[0-9]+").unwrap();
        let mut r = stream(6, &[lane::TASK]);
        for _ in 0..50 {
            let p = generate_task(TaskTag::Arith, &mut r, 32);
            assert!(re.find_iter(&p.text).count() >= 2, "{}", p.text);
            assert!(p.text.to_lowercase().contains("step by step"));
        }
    }

    #[test]
    fn knowledge_tasks_have_three_sentences_and_no_digits() {
        let mut r = stream(7, &[lane::TASK]);
        for _ in 0..50 {
            let p = generate_task(TaskTag::Knowledge, &mut r, 32);
            let sentences = p
                .text
                .split(['.', '?', '!'])
                .filter(|s| !s.trim().is_empty())
                .count();
            assert!(sentences >= 3, "{}", p.text);
            assert!(!p.text.chars().any(|c| c.is_ascii_digit()), "{}", p.text);
        }
    }

    #[test]
    fn code_tasks_open_with_imperative_spec() {
        let mut r = stream(8, &[lane::TASK]);
        let p = generate_task(TaskTag::Code, &mut r, 32);
        assert!(p.text.starts_with("Write a function that"));
    }

    #[test]
    fn same_seed_reproduces_task() {
        let mut a = stream(12, &[lane::TASK, 3]);
        let mut b = stream(12, &[lane::TASK, 3]);
        let p = generate_task(TaskTag::Arith, &mut a, 32);
        let q = generate_task(TaskTag::Arith, &mut b, 32);
        assert_eq!(p.id, q.id);
        assert_eq!(p.text, q.text);
        assert_eq!(p.target, q.target);
    }

    #[test]
    fn consortium_outputs_reproduce_bit_exactly() {
        let c = Consortium::homogeneous(32);
        let mut r = stream(13, &[lane::TASK]);
        let prompt = generate_task(TaskTag::Arith, &mut r, 32);
        let a = c.respond_all(&prompt, 7).unwrap();
        let b = c.respond_all(&prompt, 7).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.embedding, y.embedding);
            assert_eq!(x.token_entropy, y.token_entropy);
        }
    }

    #[test]
    fn homogeneous_profile_matches_published_ladder() {
        let c = Consortium::homogeneous(32);
        assert_eq!(c.len(), 10);
        for (i, p) in c.profiles.iter().enumerate() {
            assert_eq!(p.expert_id, i + 1);
            assert_eq!(p.temperature, TEMPERATURE_LADDER[i]);
            assert_eq!(p.capability, 1.0);
        }
    }

    #[test]
    fn ingest_round_trips_and_renormalizes() {
        use crate::trace::{write_trace, ExpertEmbeddingRecord, TraceRecord};
        let dir = std::env::temp_dir().join(format!("orchestra-ingest-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("embeddings.jsonl");
        let d = 8;
        let mut rec = TraceRecord::new("ext-1", 0);
        rec.text = Some("externally produced run".into());
        rec.task_tag = Some(TaskTag::Knowledge);
        rec.target = Some(vec![2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        rec.oracle = Some(vec![0.0, 3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        rec.experts = Some(
            (1..=3)
                .map(|i| ExpertEmbeddingRecord {
                    expert_id: i,
                    h: vec![i as f64; d],
                    token_entropy: 0.5,
                })
                .collect(),
        );
        write_trace(&path, &[rec]).unwrap();
        let ingested = ingest_embeddings(&path, d).unwrap();
        assert_eq!(ingested.len(), 1);
        let p = &ingested[0];
        assert_eq!(p.prompt.id, "ext-1");
        let n: f64 = p.prompt.target.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        for o in &p.outputs {
            let n: f64 = o.embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-9);
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ingest_reports_dimension_mismatch() {
        use crate::trace::{write_trace, ExpertEmbeddingRecord, TraceRecord};
        let dir = std::env::temp_dir().join(format!("orchestra-ingest2-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.jsonl");
        let mut rec = TraceRecord::new("ext-2", 0);
        rec.text = Some("short".into());
        rec.task_tag = Some(TaskTag::Arith);
        rec.target = Some(vec![1.0; 4]); // wrong dimension
        rec.oracle = Some(vec![1.0; 8]);
        rec.experts = Some(
            (1..=2)
                .map(|i| ExpertEmbeddingRecord {
                    expert_id: i,
                    h: vec![1.0; 8],
                    token_entropy: 0.1,
                })
                .collect(),
        );
        write_trace(&path, &[rec]).unwrap();
        assert!(matches!(
            ingest_embeddings(&path, 8),
            Err(Error::DimensionMismatch { .. })
        ));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn chain_template_puts_latest_response_first() {
        let s = format_chain_prompt(&[(1, "first"), (3, "latest")], "solve it");
        let i1 = s.find("Expert 3's Response: latest").unwrap();
        let i2 = s.find("Expert 1's Response: first").unwrap();
        assert!(i1 < i2);
        assert!(s.ends_with("solve it"));
    }
}
