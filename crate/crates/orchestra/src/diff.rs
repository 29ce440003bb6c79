//! Differentiable numeric primitives: forward values plus exact reverse-mode
//! gradients, checked against central finite differences.
//!
//! The controller is small and has fixed topology, so a Wengert tape over
//! scalars is enough. Nodes may have any number of parents (dot products and
//! sums are recorded as single fused nodes), which keeps tapes short. Code
//! that must run both with and without gradients is written once, generic
//! over [`Real`], and instantiated with `f64` (plain forward) or [`Var`]
//! (taped forward).

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Logit value used for masked slots. exp(sentinel - max) underflows to an
/// exact 0.0, so masked probabilities are exactly zero and carry no gradient.
pub const MASK_SENTINEL: f64 = -1e9;

/// Threshold under which a logit is treated as masked.
pub const MASK_THRESHOLD: f64 = MASK_SENTINEL / 2.0;

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Node {
    pstart: u32,
    plen: u32,
}

/// Recorded forward pass. Single-owner: not `Sync`, never shared.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    parents: RefCell<Vec<(u32, f64)>>,
    inputs: RefCell<Vec<u32>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of registered differentiable inputs.
    pub fn num_inputs(&self) -> usize {
        self.inputs.borrow().len()
    }

    fn push(&self, parents: &[(u32, f64)], val: f64) -> Var<'_> {
        let mut ps = self.parents.borrow_mut();
        let pstart = ps.len() as u32;
        ps.extend_from_slice(parents);
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len() as u32;
        nodes.push(Node {
            pstart,
            plen: parents.len() as u32,
        });
        Var {
            tape: self,
            idx,
            val,
        }
    }

    /// Register a differentiable input (a parameter or a probed embedding
    /// coordinate). Gradients are reported for inputs in registration order.
    pub fn var(&self, val: f64) -> Var<'_> {
        let v = self.push(&[], val);
        self.inputs.borrow_mut().push(v.idx);
        v
    }

    /// A recorded constant: participates in values, never in gradients.
    pub fn constant(&self, val: f64) -> Var<'_> {
        self.push(&[], val)
    }

    /// Lift a slice of plain values to input variables.
    pub fn vars(&self, vals: &[f64]) -> Vec<Var<'_>> {
        vals.iter().map(|&v| self.var(v)).collect()
    }
}

/// A value recorded on a tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: u32,
    val: f64,
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.val
    }

    /// Reverse sweep seeded at this node. Returns one adjoint per tape node;
    /// inputs that do not influence this node keep an exact 0.
    pub fn backward(self) -> Grads {
        let nodes = self.tape.nodes.borrow();
        let parents = self.tape.parents.borrow();
        let mut adj = vec![0.0f64; nodes.len()];
        adj[self.idx as usize] = 1.0;
        for i in (0..=self.idx as usize).rev() {
            let a = adj[i];
            if a == 0.0 {
                continue;
            }
            let n = nodes[i];
            let s = n.pstart as usize;
            for &(p, w) in &parents[s..s + n.plen as usize] {
                adj[p as usize] += a * w;
            }
        }
        Grads {
            adj,
            inputs: self.tape.inputs.borrow().clone(),
        }
    }
}

/// Accumulated gradients from one backward sweep.
pub struct Grads {
    adj: Vec<f64>,
    inputs: Vec<u32>,
}

impl Grads {
    /// Gradient with respect to a specific variable.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adj[v.idx as usize]
    }

    /// Gradients of all registered inputs, in registration order.
    pub fn input_grads(&self) -> Vec<f64> {
        self.inputs.iter().map(|&i| self.adj[i as usize]).collect()
    }
}

macro_rules! binop {
    ($trait:ident, $fn:ident, $val:expr, $dl:expr, $dr:expr) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $fn(self, o: Var<'t>) -> Var<'t> {
                let (l, r) = (self.val, o.val);
                let _ = (l, r);
                self.tape
                    .push(&[(self.idx, $dl(l, r)), (o.idx, $dr(l, r))], $val(l, r))
            }
        }
    };
}

binop!(Add, add, |l, r| l + r, |_, _| 1.0, |_, _| 1.0);
binop!(Sub, sub, |l, r| l - r, |_, _| 1.0, |_, _| -1.0);
binop!(Mul, mul, |l: f64, r: f64| l * r, |_, r| r, |l, _| l);
binop!(
    Div,
    div,
    |l: f64, r: f64| l / r,
    |_, r: f64| 1.0 / r,
    |l: f64, r: f64| -l / (r * r)
);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.tape.push(&[(self.idx, -1.0)], -self.val)
    }
}

// ---------------------------------------------------------------------------
// Real: one forward implementation for both plain and taped arithmetic
// ---------------------------------------------------------------------------

/// Scalar abstraction over `f64` and [`Var`].
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn val(self) -> f64;
    fn add_const(self, c: f64) -> Self;
    fn mul_const(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    /// Fused dot product (one node on the tape).
    fn dot(a: &[Self], b: &[Self]) -> Self;
    /// Fused sum (one node on the tape).
    fn sum(xs: &[Self]) -> Self;
    /// A constant with the same tape context as `self`.
    fn lift(self, c: f64) -> Self {
        self.mul_const(0.0).add_const(c)
    }
    fn sq(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    fn val(self) -> f64 {
        self
    }
    fn add_const(self, c: f64) -> Self {
        self + c
    }
    fn mul_const(self, c: f64) -> Self {
        self * c
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = 0.0;
        for i in 0..a.len() {
            acc += a[i] * b[i];
        }
        acc
    }
    fn sum(xs: &[Self]) -> Self {
        xs.iter().sum()
    }
    fn lift(self, c: f64) -> Self {
        c
    }
}

impl<'t> Real for Var<'t> {
    fn val(self) -> f64 {
        self.val
    }
    fn add_const(self, c: f64) -> Self {
        self.tape.push(&[(self.idx, 1.0)], self.val + c)
    }
    fn mul_const(self, c: f64) -> Self {
        self.tape.push(&[(self.idx, c)], self.val * c)
    }
    fn exp(self) -> Self {
        let e = self.val.exp();
        self.tape.push(&[(self.idx, e)], e)
    }
    fn ln(self) -> Self {
        self.tape.push(&[(self.idx, 1.0 / self.val)], self.val.ln())
    }
    fn sqrt(self) -> Self {
        let s = self.val.sqrt();
        self.tape.push(&[(self.idx, 0.5 / s)], s)
    }
    fn dot(a: &[Self], b: &[Self]) -> Self {
        debug_assert_eq!(a.len(), b.len());
        debug_assert!(!a.is_empty());
        let tape = a[0].tape;
        let mut parents = Vec::with_capacity(2 * a.len());
        let mut acc = 0.0;
        for i in 0..a.len() {
            parents.push((a[i].idx, b[i].val));
            parents.push((b[i].idx, a[i].val));
            acc += a[i].val * b[i].val;
        }
        tape.push(&parents, acc)
    }
    fn sum(xs: &[Self]) -> Self {
        debug_assert!(!xs.is_empty());
        let tape = xs[0].tape;
        let parents: Vec<(u32, f64)> = xs.iter().map(|x| (x.idx, 1.0)).collect();
        let acc = xs.iter().map(|x| x.val).sum();
        tape.push(&parents, acc)
    }
}

// ---------------------------------------------------------------------------
// Generic vector helpers
// ---------------------------------------------------------------------------

/// Row-major matrix-vector product built from fused dots.
pub fn matvec<S: Real>(m: &[S], rows: usize, cols: usize, v: &[S]) -> Vec<S> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(v.len(), cols);
    (0..rows)
        .map(|r| S::dot(&m[r * cols..(r + 1) * cols], v))
        .collect()
}

pub fn norm2<S: Real>(v: &[S]) -> S {
    S::dot(v, v).sqrt()
}

/// Cosine similarity. Callers must guarantee nonzero norms; the public f64
/// entry point [`cosine_sim`] performs that validation.
pub fn cosine<S: Real>(a: &[S], b: &[S]) -> S {
    S::dot(a, b) / (norm2(a) * norm2(b))
}

/// Softmax over a slice in which masked slots hold [`MASK_SENTINEL`].
/// Masked outputs are exactly 0.0 and detached from the gradient.
/// At least one live slot is the caller's responsibility.
pub fn softmax_masked<S: Real>(xs: &[S]) -> Vec<S> {
    let m = xs
        .iter()
        .map(|x| x.val())
        .filter(|v| *v > MASK_THRESHOLD)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<S> = xs.iter().map(|&x| x.add_const(-m).exp()).collect();
    let z = S::sum(&exps);
    exps.into_iter().map(|e| e / z).collect()
}

/// log softmax(xs)[i] with the same masking convention.
pub fn log_softmax_at<S: Real>(xs: &[S], i: usize) -> S {
    let m = xs
        .iter()
        .map(|x| x.val())
        .filter(|v| *v > MASK_THRESHOLD)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<S> = xs.iter().map(|&x| x.add_const(-m).exp()).collect();
    let lse = S::sum(&exps).ln().add_const(m);
    xs[i] - lse
}

// ---------------------------------------------------------------------------
// Public f64 operations with validation
// ---------------------------------------------------------------------------

/// Row softmax with an explicit index mask.
///
/// The output sums to 1 (masked entries are exactly 0). Errors with
/// `AllMasked` when no index survives and `NonFinite` on NaN/Inf input.
pub fn softmax_row(v: &[f64], masked: &[usize]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("softmax_row input"));
    }
    if masked.iter().any(|&i| i >= v.len()) {
        return Err(Error::DimensionMismatch {
            what: "softmax_row mask index",
            expected: v.len(),
            got: *masked.iter().max().unwrap(),
        });
    }
    let mut slots: Vec<f64> = v.to_vec();
    for &i in masked {
        slots[i] = MASK_SENTINEL;
    }
    if slots.iter().all(|&x| x <= MASK_THRESHOLD) {
        return Err(Error::AllMasked);
    }
    Ok(softmax_masked(&slots))
}

/// Cosine similarity in [-1, 1]. No silent epsilon: a zero-norm input is an
/// error.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "cosine_sim",
            expected: a.len(),
            got: b.len(),
        });
    }
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("cosine_sim"));
    }
    Ok(f64::dot(a, b) / (na * nb))
}

/// Differentiable categorical sampling.
///
/// Perturbed logits are `logits / temperature + g` with standard Gumbel
/// noise `g`; the soft output is their softmax and the hard output their
/// argmax, so hard draws follow `softmax(logits / temperature)` and sharpen
/// as the temperature anneals. Slots at or below the mask sentinel receive
/// no noise and cannot be selected.
pub fn gumbel_softmax(
    logits: &[f64],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f64>, usize)> {
    if temperature <= 0.0 {
        return Err(Error::NonPositiveTemperature(temperature));
    }
    if logits
        .iter()
        .any(|x| !x.is_finite() && *x != f64::NEG_INFINITY)
    {
        return Err(Error::NonFinite("gumbel_softmax logits"));
    }
    let live: Vec<usize> = (0..logits.len())
        .filter(|&i| logits[i] > MASK_THRESHOLD)
        .collect();
    if live.is_empty() {
        return Err(Error::AllMasked);
    }
    let mut perturbed = vec![MASK_SENTINEL; logits.len()];
    for &i in &live {
        perturbed[i] = logits[i] / temperature + rng::gumbel(rng);
    }
    let hard = live
        .iter()
        .copied()
        .max_by(|&a, &b| perturbed[a].total_cmp(&perturbed[b]))
        .unwrap();
    let soft = softmax_masked(&perturbed);
    Ok((soft, hard))
}

/// Max relative error between the tape gradient of `f` and central finite
/// differences at `point`.
///
/// Relative error per coordinate: |analytic - fd| / max(|analytic|, 1e-8).
/// The finite-difference side re-evaluates `f` on fresh tapes, so it stays
/// independent of the recorded gradient it is checking.
pub fn grad_check<F>(f: F, point: &[f64], step: f64) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let eval = |xs: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let vars = tape.vars(xs);
        let y = f(&tape, &vars).value();
        if !y.is_finite() {
            return Err(Error::NonFinite("grad_check function value"));
        }
        Ok(y)
    };

    let tape = Tape::new();
    let vars = tape.vars(point);
    let out = f(&tape, &vars);
    if !out.value().is_finite() {
        return Err(Error::NonFinite("grad_check function value"));
    }
    let analytic = out.backward().input_grads();

    let mut max_rel = 0.0f64;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        let orig = probe[i];
        probe[i] = orig + step;
        let fp = eval(&probe)?;
        probe[i] = orig - step;
        let fm = eval(&probe)?;
        probe[i] = orig;
        let fd = (fp - fm) / (2.0 * step);
        let rel = (analytic[i] - fd).abs() / analytic[i].abs().max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{lane, stream};

    #[test]
    fn softmax_symmetry() {
        let p = softmax_row(&[0.0, 0.0, 0.0], &[]).unwrap();
        for &x in &p {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax_row(&[(2.0f64).ln(), 0.0], &[]).unwrap();
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_masked_entries_exactly_zero() {
        let p = softmax_row(&[1.0, 2.0, 3.0, 4.0], &[1, 3]).unwrap();
        assert_eq!(p[1], 0.0);
        assert_eq!(p[3], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn softmax_all_masked_errors() {
        assert!(matches!(
            softmax_row(&[1.0, 2.0], &[0, 1]),
            Err(Error::AllMasked)
        ));
    }

    #[test]
    fn softmax_non_finite_errors() {
        assert!(matches!(
            softmax_row(&[f64::NAN, 0.0], &[]),
            Err(Error::NonFinite(_))
        ));
    }

    /// Jacobian of softmax against central differences (derived oracle).
    #[test]
    fn softmax_jacobian_matches_finite_differences() {
        let mut r = stream(5, &[lane::INIT]);
        let v: Vec<f64> = (0..5).map(|_| crate::rng::std_normal(&mut r)).collect();
        let h = 1e-6;
        for out in 0..5 {
            // analytic row of the Jacobian via the tape
            let tape = Tape::new();
            let xs = tape.vars(&v);
            let p = softmax_masked(&xs);
            let grads = p[out].backward();
            for inp in 0..5 {
                let mut vp = v.clone();
                vp[inp] += h;
                let pp = softmax_row(&vp, &[]).unwrap()[out];
                vp[inp] -= 2.0 * h;
                let pm = softmax_row(&vp, &[]).unwrap()[out];
                let fd = (pp - pm) / (2.0 * h);
                let an = grads.wrt(xs[inp]);
                let rel = (an - fd).abs() / an.abs().max(1e-8);
                assert!(rel < 1e-6, "J[{out}][{inp}] rel {rel}");
            }
        }
    }

    #[test]
    fn cosine_identity_orthogonal_closed_form() {
        let a = [0.3, -1.2, 0.5];
        assert!((cosine_sim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap().abs() < 1e-12);
        let c = cosine_sim(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - 1.0 / 2.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn cosine_scale_invariant_and_zero_errors() {
        let a = [0.2, 0.9, -0.4];
        let b = [1.0, -0.3, 0.8];
        let c1 = cosine_sim(&a, &b).unwrap();
        let scaled: Vec<f64> = a.iter().map(|x| x * 7.5).collect();
        let c2 = cosine_sim(&scaled, &b).unwrap();
        assert!((c1 - c2).abs() < 1e-12);
        assert!(matches!(
            cosine_sim(&[0.0, 0.0, 0.0], &b),
            Err(Error::ZeroVector(_))
        ));
    }

    /// Monte-Carlo oracle: equal logits over 10 arms are sampled uniformly.
    #[test]
    fn gumbel_uniform_frequencies() {
        let mut r = stream(42, &[lane::GUMBEL]);
        let logits = vec![0.0; 10];
        let mut counts = [0usize; 10];
        for _ in 0..10_000 {
            let (soft, hard) = gumbel_softmax(&logits, 1.0, &mut r).unwrap();
            counts[hard] += 1;
            let s: f64 = soft.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
        for &c in &counts {
            let f = c as f64 / 10_000.0;
            assert!((f - 0.1).abs() <= 0.01, "freq {f}");
        }
    }

    #[test]
    fn gumbel_low_temperature_limit() {
        let mut r = stream(9, &[lane::GUMBEL]);
        let logits = [5.0, 0.0, 0.0];
        let mut hits = 0;
        for _ in 0..10_000 {
            let (_, hard) = gumbel_softmax(&logits, 0.01, &mut r).unwrap();
            if hard == 0 {
                hits += 1;
            }
        }
        assert!(hits >= 9_900, "hits {hits}");
    }

    #[test]
    fn gumbel_rejects_bad_temperature() {
        let mut r = stream(1, &[lane::GUMBEL]);
        assert!(matches!(
            gumbel_softmax(&[0.0, 1.0], 0.0, &mut r),
            Err(Error::NonPositiveTemperature(_))
        ));
    }

    #[test]
    fn gumbel_deterministic_under_seed() {
        let draw = || {
            let mut r = stream(123, &[lane::GUMBEL, 4]);
            gumbel_softmax(&[0.3, -0.2, 1.1], 0.7, &mut r).unwrap()
        };
        let (s1, h1) = draw();
        let (s2, h2) = draw();
        assert_eq!(h1, h2);
        assert_eq!(s1, s2); // bit-identical
    }

    #[test]
    fn grad_check_quadratic() {
        let mut r = stream(2, &[lane::INIT]);
        let x: Vec<f64> = (0..6).map(|_| crate::rng::std_normal(&mut r)).collect();
        // f = 0.5 * ||x||^2, gradient x
        let err = grad_check(|_, xs| S_half_sq(xs), &x, 1e-5).unwrap();
        assert!(err < 1e-6, "err {err}");
    }

    #[allow(non_snake_case)]
    fn S_half_sq<'t>(xs: &[Var<'t>]) -> Var<'t> {
        Var::dot(xs, xs).mul_const(0.5)
    }

    #[test]
    fn grad_check_log_softmax_component() {
        let mut r = stream(3, &[lane::INIT]);
        let x: Vec<f64> = (0..6).map(|_| crate::rng::std_normal(&mut r)).collect();
        let err = grad_check(|_, xs| log_softmax_at(xs, 2), &x, 1e-5).unwrap();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn unused_coordinate_has_exactly_zero_gradient() {
        let tape = Tape::new();
        let xs = tape.vars(&[1.0, 2.0, 3.0]);
        // only coordinates 0 and 2 are used
        let y = xs[0] * xs[2];
        let g = y.backward();
        assert_eq!(g.wrt(xs[1]), 0.0);
        assert_eq!(g.input_grads().len(), 3);
    }

    /// Every registered primitive passes grad_check at 20 random points with
    /// step 1e-5 and relative error < 1e-4.
    #[test]
    fn all_primitives_pass_grad_check() {
        let cases: Vec<(
            &str,
            usize,
            Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>>,
        )> = vec![
            ("add", 2, Box::new(|_, x| x[0] + x[1])),
            ("sub", 2, Box::new(|_, x| x[0] - x[1])),
            ("mul", 2, Box::new(|_, x| x[0] * x[1])),
            ("div", 2, Box::new(|_, x| x[0] / x[1].sq().add_const(1.0))),
            ("neg", 1, Box::new(|_, x| -x[0])),
            ("exp", 1, Box::new(|_, x| x[0].exp())),
            ("ln", 1, Box::new(|_, x| x[0].sq().add_const(1.0).ln())),
            ("sqrt", 1, Box::new(|_, x| x[0].sq().add_const(1.0).sqrt())),
            ("add_const", 1, Box::new(|_, x| x[0].add_const(2.5))),
            ("mul_const", 1, Box::new(|_, x| x[0].mul_const(-1.7))),
            ("dot", 8, Box::new(|_, x| Var::dot(&x[..4], &x[4..]))),
            ("sum", 5, Box::new(|_, x| Var::sum(x))),
            (
                "softmax_component",
                5,
                Box::new(|_, x| softmax_masked(x)[1]),
            ),
            ("log_softmax", 5, Box::new(|_, x| log_softmax_at(x, 0))),
            ("cosine", 8, Box::new(|_, x| cosine(&x[..4], &x[4..]))),
            (
                "matvec_component",
                12,
                Box::new(|_, x| matvec(&x[..8], 2, 4, &x[8..])[1]),
            ),
        ];
        let mut r = stream(77, &[lane::INIT]);
        for (name, arity, f) in &cases {
            for trial in 0..20 {
                let x: Vec<f64> = (0..*arity)
                    .map(|_| crate::rng::std_normal(&mut r) * 0.8 + 0.1)
                    .collect();
                let err = grad_check(f, &x, 1e-5).unwrap();
                assert!(err < 1e-4, "{name} trial {trial}: rel err {err}");
            }
        }
    }

    #[test]
    fn distribution_outputs_sum_to_one() {
        let mut r = stream(8, &[lane::INIT]);
        for _ in 0..200 {
            let v: Vec<f64> = (0..7)
                .map(|_| crate::rng::std_normal(&mut r) * 3.0)
                .collect();
            let p = softmax_row(&v, &[2]).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&x| x >= 0.0));
        }
    }
}
