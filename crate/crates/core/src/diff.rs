//! Reverse-mode differentiation over a recorded scalar graph.
//!
//! A [`Tape`] records nodes in creation order; each node stores the local
//! partial derivative with respect to each of its parents. Parents always
//! precede children, so one reverse sweep over the recording accumulates
//! every adjoint. Nodes may have any number of parents, which lets callers
//! record a whole sub-computation as one node when they can supply its
//! local gradient analytically (see [`Scalar::fused`]).
//!
//! Numeric code is written once against the [`Scalar`] trait and runs
//! either on plain `f64` (no recording) or on [`Var`] (recorded).

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::decisions::ContinuousDecisions;
use crate::error::{Error, Result};

const CONSTANT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Edge {
    parent: u32,
    partial: f64,
}

/// Maps the adjoints of a block of outputs to adjoints of its inputs.
pub type VectorJacobian = Box<dyn Fn(&[f64]) -> Vec<f64>>;

struct Block {
    first_output: u32,
    outputs: u32,
    inputs: Vec<u32>,
    vjp: VectorJacobian,
}

#[derive(Default)]
struct Recording {
    // node i owns edges[starts[i]..starts[i + 1]]
    starts: Vec<usize>,
    edges: Vec<Edge>,
    // multi-output nodes, in recording order
    blocks: Vec<Block>,
}

/// An append-only recording of one computation.
pub struct Tape {
    rec: RefCell<Recording>,
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rec = self.rec.borrow();
        f.debug_struct("Tape")
            .field("nodes", &(rec.starts.len() - 1))
            .field("edges", &rec.edges.len())
            .field("blocks", &rec.blocks.len())
            .finish()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { rec: RefCell::new(Recording { starts: vec![0], ..Default::default() }) }
    }

    /// Registers an independent input.
    pub fn var(&self, value: f64) -> Var<'_> {
        let index = self.push(std::iter::empty());
        Var { tape: Some(self), index, value }
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.rec.borrow().starts.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded parent edges.
    pub fn edge_count(&self) -> usize {
        self.rec.borrow().edges.len()
    }

    fn push(&self, edges: impl Iterator<Item = Edge>) -> u32 {
        let mut rec = self.rec.borrow_mut();
        rec.edges.extend(edges);
        let end = rec.edges.len();
        rec.starts.push(end);
        let index = rec.starts.len() - 2;
        u32::try_from(index).ok().filter(|&i| i != CONSTANT).expect("tape exceeds u32 nodes")
    }

    /// Adjoints of every recorded node with respect to `output`.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<f64> {
        let rec = self.rec.borrow();
        let n = rec.starts.len() - 1;
        let mut adj = vec![0.0; n];
        if output.index == CONSTANT {
            return adj;
        }
        assert!(
            output.tape.is_some_and(|t| std::ptr::eq(t, self)),
            "output was recorded on a different tape"
        );
        adj[output.index as usize] = 1.0;
        let mut blocks = rec.blocks.iter().rev().skip_while(|b| b.first_output > output.index).peekable();
        for node in (0..=output.index as usize).rev() {
            let a = adj[node];
            if a != 0.0 {
                for e in &rec.edges[rec.starts[node]..rec.starts[node + 1]] {
                    adj[e.parent as usize] += a * e.partial;
                }
            }
            // every consumer of a block's outputs comes after the block
            while let Some(b) = blocks.next_if(|b| b.first_output as usize == node) {
                let first = b.first_output as usize;
                let out_adj = &adj[first..first + b.outputs as usize];
                if out_adj.iter().all(|&v| v == 0.0) {
                    continue;
                }
                let in_adj = (b.vjp)(out_adj);
                for (&input, g) in b.inputs.iter().zip(in_adj) {
                    if input != CONSTANT {
                        adj[input as usize] += g;
                    }
                }
            }
        }
        adj
    }

    /// Number of recorded multi-output blocks.
    pub fn block_count(&self) -> usize {
        self.rec.borrow().blocks.len()
    }
}

/// Gradient of `output` with respect to `inputs`, in input order.
///
/// Inputs that do not reach `output` (and constants) get a zero partial.
pub fn backward(output: Var<'_>, inputs: &[Var<'_>]) -> Vec<f64> {
    let Some(tape) = output.tape.or_else(|| inputs.iter().find_map(|v| v.tape)) else {
        return vec![0.0; inputs.len()];
    };
    let adj = tape.adjoints(output);
    inputs
        .iter()
        .map(|v| if v.index == CONSTANT { 0.0 } else { adj[v.index as usize] })
        .collect()
}

/// A value recorded on a [`Tape`], or a constant that carries no tape.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    index: u32,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.index == CONSTANT {
            write!(f, "Var(const {})", self.value)
        } else {
            write!(f, "Var(#{} = {})", self.index, self.value)
        }
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_constant(&self) -> bool {
        self.index == CONSTANT
    }

    fn record(value: f64, parents: &[(Var<'t>, f64)]) -> Var<'t> {
        let Some(tape) = parents.iter().find_map(|(p, _)| p.tape) else {
            return Var { tape: None, index: CONSTANT, value };
        };
        let edges = parents
            .iter()
            .filter(|(p, _)| p.index != CONSTANT)
            .map(|&(p, partial)| {
                debug_assert!(p.tape.is_some_and(|t| std::ptr::eq(t, tape)), "mixed tapes");
                Edge { parent: p.index, partial }
            });
        let index = tape.push(edges);
        Var { tape: Some(tape), index, value }
    }

    fn unary(self, value: f64, partial: f64) -> Var<'t> {
        if self.index == CONSTANT {
            return Var { tape: None, index: CONSTANT, value };
        }
        Var::record(value, &[(self, partial)])
    }
}

/// Arithmetic shared by plain and recorded evaluation.
pub trait Scalar:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    /// Whether operations are recorded for differentiation.
    const RECORDS: bool;

    fn constant(c: f64) -> Self;
    fn value(self) -> f64;
    fn exp(self) -> Self;
    /// Standard logistic `1 / (1 + e^-x)`.
    fn logistic(self) -> Self;
    /// `self^exponent` for a constant exponent.
    fn powf(self, exponent: f64) -> Self;
    fn checked_div(self, rhs: Self) -> Result<Self>;
    fn checked_ln(self) -> Result<Self>;
    /// A node with the given value whose local partials with respect to
    /// `terms[i].0` are `terms[i].1`.
    fn fused(value: f64, terms: &[(Self, f64)]) -> Self;

    /// `c - self`.
    fn rsub(self, c: f64) -> Self {
        -self + c
    }

    /// Several outputs of `inputs` recorded as one block. When the result
    /// is differentiated, `vjp` receives the output adjoints and must
    /// return one adjoint per input. Plain evaluation never calls `vjp`,
    /// so callers should only build it when [`Scalar::RECORDS`] is set.
    fn block(values: &[f64], inputs: &[Self], vjp: Option<VectorJacobian>) -> Vec<Self>;

    /// `constant + Σ coef_i · x_i` as a single node.
    fn linear(constant: f64, terms: &[(Self, f64)]) -> Self {
        let value = terms.iter().fold(constant, |acc, (x, c)| acc + c * x.value());
        Self::fused(value, terms)
    }

    fn sum(xs: &[Self]) -> Self {
        let terms: Vec<(Self, f64)> = xs.iter().map(|&x| (x, 1.0)).collect();
        Self::linear(0.0, &terms)
    }
}

fn logistic_f64(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Scalar for f64 {
    const RECORDS: bool = false;

    fn constant(c: f64) -> Self {
        c
    }
    fn value(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn logistic(self) -> Self {
        logistic_f64(self)
    }
    fn powf(self, exponent: f64) -> Self {
        f64::powf(self, exponent)
    }
    fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs == 0.0 {
            return Err(Error::Domain { op: "divide", value: rhs });
        }
        Ok(self / rhs)
    }
    fn checked_ln(self) -> Result<Self> {
        if self <= 0.0 || self.is_nan() {
            return Err(Error::Domain { op: "ln", value: self });
        }
        Ok(self.ln())
    }
    fn fused(value: f64, _terms: &[(Self, f64)]) -> Self {
        value
    }
    fn block(values: &[f64], _inputs: &[Self], _vjp: Option<VectorJacobian>) -> Vec<Self> {
        values.to_vec()
    }
}

impl<'t> Scalar for Var<'t> {
    const RECORDS: bool = true;

    fn constant(c: f64) -> Self {
        Var { tape: None, index: CONSTANT, value: c }
    }
    fn value(self) -> f64 {
        self.value
    }
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.unary(e, e)
    }
    fn logistic(self) -> Self {
        let s = logistic_f64(self.value);
        self.unary(s, s * (1.0 - s))
    }
    fn powf(self, exponent: f64) -> Self {
        let y = self.value.powf(exponent);
        let d = if exponent == 0.0 { 0.0 } else { exponent * self.value.powf(exponent - 1.0) };
        self.unary(y, d)
    }
    fn checked_div(self, rhs: Self) -> Result<Self> {
        if rhs.value == 0.0 {
            return Err(Error::Domain { op: "divide", value: rhs.value });
        }
        let q = self.value / rhs.value;
        Ok(Var::record(q, &[(self, 1.0 / rhs.value), (rhs, -q / rhs.value)]))
    }
    fn checked_ln(self) -> Result<Self> {
        if self.value <= 0.0 || self.value.is_nan() {
            return Err(Error::Domain { op: "ln", value: self.value });
        }
        Ok(self.unary(self.value.ln(), 1.0 / self.value))
    }
    fn fused(value: f64, terms: &[(Self, f64)]) -> Self {
        Var::record(value, terms)
    }
    fn block(values: &[f64], inputs: &[Self], vjp: Option<VectorJacobian>) -> Vec<Self> {
        let Some(tape) = inputs.iter().find_map(|v| v.tape) else {
            return values.iter().map(|&v| Var::constant(v)).collect();
        };
        let vjp = vjp.expect("a recorded block needs its vector-Jacobian product");
        let outputs: Vec<Var<'t>> = values.iter().map(|&v| tape.var(v)).collect();
        if let Some(first) = outputs.first() {
            tape.rec.borrow_mut().blocks.push(Block {
                first_output: first.index,
                outputs: outputs.len() as u32,
                inputs: inputs.iter().map(|v| v.index).collect(),
                vjp,
            });
        }
        outputs
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(self.value + rhs.value, &[(self, 1.0), (rhs, 1.0)])
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(self.value - rhs.value, &[(self, 1.0), (rhs, -1.0)])
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        Var::record(self.value * rhs.value, &[(self, rhs.value), (rhs, self.value)])
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Var<'t> {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Var<'t> {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Var<'t> {
        self.unary(self.value * rhs, rhs)
    }
}

/// Temperature softmax with the maximum scaled score subtracted first.
///
/// `w_i = exp(s_i/τ − m) / Σ_j exp(s_j/τ − m)`, `m = max_j s_j/τ`. The
/// shift is a constant, which leaves the gradient unchanged.
pub fn stable_softmax<S: Scalar>(scores: &[S], tau: f64) -> Result<Vec<S>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param("temperature", format!("{tau} is not a positive finite number")));
    }
    if scores.is_empty() {
        return Err(Error::param("scores", "softmax of an empty vector"));
    }
    let inv_tau = 1.0 / tau;
    let m = scores.iter().map(|s| s.value() * inv_tau).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(Error::param("scores", format!("non-finite maximum scaled score {m}")));
    }
    let exps: Vec<S> = scores.iter().map(|&s| (s * inv_tau - m).exp()).collect();
    let total = S::sum(&exps);
    let inv_total = S::constant(1.0).checked_div(total)?;
    Ok(exps.into_iter().map(|e| e * inv_total).collect())
}

/// Largest coordinate-wise relative error between the recorded gradient of
/// `f` at `x` and central differences with step `h`.
///
/// The relative error of one coordinate is `|a − b| / max(1, |a|, |b|)`.
/// Every coordinate of `x` must satisfy `h < x_i < 1 − h`.
pub fn grad_check<F>(f: F, x: &ContinuousDecisions, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    if !(h > 0.0 && h < 0.5) {
        return Err(Error::param("h", format!("step {h} not in (0, 0.5)")));
    }
    let xs = x.as_slice();
    if let Some((i, &v)) = xs.iter().enumerate().find(|(_, &v)| !(v > h && v < 1.0 - h)) {
        return Err(Error::param("x", format!("entry {i} = {v} is within {h} of the boundary")));
    }
    let analytic = {
        let tape = Tape::new();
        let inputs = tape.vars(xs);
        let out = f(&inputs)?;
        backward(out, &inputs)
    };
    let eval = |point: &[f64]| -> Result<f64> {
        let tape = Tape::new();
        let inputs = tape.vars(point);
        Ok(f(&inputs)?.value())
    };
    let mut worst: f64 = 0.0;
    let mut point = xs.to_vec();
    for i in 0..xs.len() {
        point[i] = xs[i] + h;
        let up = eval(&point)?;
        point[i] = xs[i] - h;
        let down = eval(&point)?;
        point[i] = xs[i];
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i];
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(err);
    }
    Ok(worst)
}
