//! Scalar reverse-mode automatic differentiation on an append-only tape.
//!
//! Each recorded node stores its operand indices together with the local
//! partial derivatives, precomputed during the forward pass (a Wengert
//! list). The backward pass is then a single reverse sweep that touches
//! every node exactly once and needs no per-operation dispatch.
//!
//! Subgradient conventions at kinks are fixed and total:
//! `d|x|/dx := 0` at `x = 0`, and the derivative of `max(x, c)` /
//! `min(x, c)` is 0 exactly at `x = c`. No finite forward value produces a
//! NaN partial.
//!
//! The tape also tracks how close any recorded kink or branch argument came
//! to its switching point ([`Tape::min_branch_gap`]); gradient checks
//! against finite differences are only meaningful when this gap is larger
//! than the differencing step.

use crate::scalar::Scalar;

/// Index of a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub(crate) u32);

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
struct Node<T> {
    val: T,
    a: u32,
    b: u32,
    da: T,
    db: T,
}

/// Append-only record of a scalar computation.
#[derive(Debug, Clone)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    min_branch_gap: T,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), min_branch_gap: T::infinity() }
    }

    pub fn with_capacity(n: usize) -> Self {
        Tape { nodes: Vec::with_capacity(n), min_branch_gap: T::infinity() }
    }

    /// Number of recorded nodes.
    #[inline]
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Removes all nodes, keeping capacity, and resets the branch-gap
    /// statistic.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.min_branch_gap = T::infinity();
    }

    /// Drops every node past `len`. Leaves recorded before `len` stay valid;
    /// the branch-gap statistic is kept.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    /// Forward value of a recorded node.
    #[inline]
    pub fn val(&self, x: VarId) -> T {
        self.nodes[x.0 as usize].val
    }

    /// Smallest distance-to-kink observed over all recorded kinked
    /// operations and externally noted branch decisions since the last
    /// [`clear`](Self::clear).
    #[inline]
    pub fn min_branch_gap(&self) -> T {
        self.min_branch_gap
    }

    /// Records the margin of a value-level branch decision taken outside
    /// the tape (the recorded graph is only piecewise-valid within this
    /// margin).
    #[inline]
    pub fn note_branch_gap(&mut self, gap: T) {
        if gap < self.min_branch_gap {
            self.min_branch_gap = gap;
        }
    }

    #[inline]
    fn push(&mut self, val: T, a: u32, b: u32, da: T, db: T) -> VarId {
        let id = self.nodes.len();
        debug_assert!(id < NONE as usize, "tape overflow");
        self.nodes.push(Node { val, a, b, da, db });
        VarId(id as u32)
    }

    /// Records an input (parameter or data) node.
    #[inline]
    pub fn leaf(&mut self, v: T) -> VarId {
        self.push(v, NONE, NONE, T::zero(), T::zero())
    }

    /// Records a constant; identical to a leaf, named for intent.
    #[inline]
    pub fn constant(&mut self, v: T) -> VarId {
        self.leaf(v)
    }

    /// Records leaves for every element of `vs`; returns the index of the
    /// first one (the rest follow contiguously).
    pub fn leaves(&mut self, vs: &[T]) -> u32 {
        let base = self.nodes.len() as u32;
        self.nodes.reserve(vs.len());
        for &v in vs {
            self.leaf(v);
        }
        base
    }

    #[inline]
    pub fn add(&mut self, x: VarId, y: VarId) -> VarId {
        let v = self.val(x) + self.val(y);
        self.push(v, x.0, y.0, T::one(), T::one())
    }

    #[inline]
    pub fn sub(&mut self, x: VarId, y: VarId) -> VarId {
        let v = self.val(x) - self.val(y);
        self.push(v, x.0, y.0, T::one(), -T::one())
    }

    #[inline]
    pub fn mul(&mut self, x: VarId, y: VarId) -> VarId {
        let (vx, vy) = (self.val(x), self.val(y));
        self.push(vx * vy, x.0, y.0, vy, vx)
    }

    #[inline]
    pub fn div(&mut self, x: VarId, y: VarId) -> VarId {
        let (vx, vy) = (self.val(x), self.val(y));
        debug_assert!(vy != T::zero(), "division by zero on tape");
        let v = vx / vy;
        self.push(v, x.0, y.0, T::one() / vy, -vx / (vy * vy))
    }

    #[inline]
    pub fn neg(&mut self, x: VarId) -> VarId {
        let v = -self.val(x);
        self.push(v, x.0, NONE, -T::one(), T::zero())
    }

    #[inline]
    pub fn add_const(&mut self, x: VarId, c: T) -> VarId {
        let v = self.val(x) + c;
        self.push(v, x.0, NONE, T::one(), T::zero())
    }

    /// `c - x`.
    #[inline]
    pub fn sub_from_const(&mut self, c: T, x: VarId) -> VarId {
        let v = c - self.val(x);
        self.push(v, x.0, NONE, -T::one(), T::zero())
    }

    #[inline]
    pub fn mul_const(&mut self, x: VarId, c: T) -> VarId {
        let v = self.val(x) * c;
        self.push(v, x.0, NONE, c, T::zero())
    }

    #[inline]
    pub fn exp(&mut self, x: VarId) -> VarId {
        let v = self.val(x).exp();
        self.push(v, x.0, NONE, v, T::zero())
    }

    /// Natural logarithm; the argument must be strictly positive (usage
    /// error otherwise).
    #[inline]
    pub fn ln(&mut self, x: VarId) -> VarId {
        let vx = self.val(x);
        debug_assert!(vx > T::zero(), "ln of non-positive value {} on tape", vx);
        self.push(vx.ln(), x.0, NONE, T::one() / vx, T::zero())
    }

    /// Absolute value with subgradient 0 at the kink.
    #[inline]
    pub fn abs(&mut self, x: VarId) -> VarId {
        let vx = self.val(x);
        self.note_branch_gap(vx.abs());
        let da = if vx > T::zero() {
            T::one()
        } else if vx < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        self.push(vx.abs(), x.0, NONE, da, T::zero())
    }

    /// `max(x, c)` with derivative 0 for `x <= c`.
    #[inline]
    pub fn max_const(&mut self, x: VarId, c: T) -> VarId {
        let vx = self.val(x);
        self.note_branch_gap((vx - c).abs());
        let (v, da) = if vx > c { (vx, T::one()) } else { (c, T::zero()) };
        self.push(v, x.0, NONE, da, T::zero())
    }

    /// `min(x, c)` with derivative 0 for `x >= c`.
    #[inline]
    pub fn min_const(&mut self, x: VarId, c: T) -> VarId {
        let vx = self.val(x);
        self.note_branch_gap((vx - c).abs());
        let (v, da) = if vx < c { (vx, T::one()) } else { (c, T::zero()) };
        self.push(v, x.0, NONE, da, T::zero())
    }

    /// `max(x, 0)`.
    #[inline]
    pub fn relu(&mut self, x: VarId) -> VarId {
        self.max_const(x, T::zero())
    }

    /// Reverse sweep seeding `d output / d output = 1`; returns the adjoint
    /// of every node up to and including `output`.
    pub fn backward(&self, output: VarId) -> Gradients<T> {
        let mut adj = Vec::new();
        let visited = self.backward_into(output, &mut adj);
        Gradients { adj, visited }
    }

    /// Buffer-reusing variant of [`backward`](Self::backward); returns the
    /// number of nodes visited (always `output index + 1`).
    pub fn backward_into(&self, output: VarId, adj: &mut Vec<T>) -> usize {
        let out = output.0 as usize;
        assert!(out < self.nodes.len(), "output node not on tape");
        adj.clear();
        adj.resize(out + 1, T::zero());
        adj[out] = T::one();
        let mut visited = 0usize;
        for idx in (0..=out).rev() {
            visited += 1;
            let g = adj[idx];
            if g == T::zero() {
                continue;
            }
            let node = &self.nodes[idx];
            if node.a != NONE {
                adj[node.a as usize] += g * node.da;
            }
            if node.b != NONE {
                adj[node.b as usize] += g * node.db;
            }
        }
        visited
    }
}

/// Adjoints produced by a backward pass.
pub struct Gradients<T> {
    adj: Vec<T>,
    /// Number of nodes the sweep touched.
    pub visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the backward output with respect to node `x`.
    #[inline]
    pub fn wrt(&self, x: VarId) -> T {
        self.adj.get(x.0 as usize).copied().unwrap_or_else(T::zero)
    }

    /// Adjoints of the first `n` nodes (the leaf prefix, in push order).
    #[inline]
    pub fn leaf_slice(&self, n: usize) -> &[T] {
        &self.adj[..n]
    }
}
