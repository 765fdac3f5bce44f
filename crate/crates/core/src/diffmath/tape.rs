//! Wengert-list reverse-mode differentiation.
//!
//! Every operation on a [`Var`] pushes one node onto its [`Tape`] holding
//! the indices of (at most two) parents and the local partial derivatives
//! with respect to them. [`Tape::backward`] sweeps the list once in reverse
//! and returns the adjoint of every recorded node.
//!
//! A `Var` with no tape is a constant: operations between two constants are
//! evaluated without recording anything.

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

const NO_PARENT: u32 = u32::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// Recording of one scalar computation.
///
/// A tape is confined to the thread that records on it. Build one tape per
/// computation; distinct tapes are independent.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    /// Registers an independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        let idx = self.push(Node {
            parents: [NO_PARENT; 2],
            partials: [0.0; 2],
        });
        Var {
            tape: Some(self),
            idx,
            val: value,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        assert!(idx < NO_PARENT as usize, "tape overflow");
        nodes.push(node);
        idx as u32
    }

    /// Propagates adjoints from `output` back to every node recorded before it.
    pub fn backward(&self, output: Var<'_>) -> Adjoints {
        let Some(tape) = output.tape else {
            return Adjoints {
                adj: Vec::new(),
                live: Vec::new(),
            };
        };
        assert!(std::ptr::eq(tape, self), "output recorded on a different tape");
        let nodes = self.nodes.borrow();
        let end = output.idx as usize + 1;
        let mut adj = vec![0.0; end];
        let mut live = vec![false; end];
        adj[end - 1] = 1.0;
        live[end - 1] = true;
        for i in (0..end).rev() {
            if !live[i] {
                continue;
            }
            let a = adj[i];
            let node = nodes[i];
            for j in 0..2 {
                let p = node.parents[j];
                if p != NO_PARENT {
                    adj[p as usize] += node.partials[j] * a;
                    live[p as usize] = true;
                }
            }
        }
        Adjoints { adj, live }
    }
}

/// Adjoints produced by one backward sweep.
#[derive(Debug, Clone)]
pub struct Adjoints {
    adj: Vec<f64>,
    live: Vec<bool>,
}

impl Adjoints {
    /// Whether `v` lies on some path into the swept output.
    pub fn reaches(&self, v: Var<'_>) -> bool {
        v.tape.is_some() && self.live.get(v.idx as usize).copied().unwrap_or(false)
    }

    /// Partial derivative of the swept output with respect to `v`.
    /// Constants and nodes recorded after the output have derivative zero.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        if v.tape.is_none() {
            return 0.0;
        }
        self.adj.get(v.idx as usize).copied().unwrap_or(0.0)
    }
}

/// A scalar that may participate in a recorded computation.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: Option<&'t Tape>,
    idx: u32,
    val: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(_) => write!(f, "Var({} @ {})", self.val, self.idx),
            None => write!(f, "Const({})", self.val),
        }
    }
}

impl<'t> Var<'t> {
    /// An untracked constant.
    pub fn constant(value: f64) -> Self {
        Var {
            tape: None,
            idx: 0,
            val: value,
        }
    }

    pub fn value(&self) -> f64 {
        self.val
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    pub(crate) fn unary(self, val: f64, d: f64) -> Self {
        match self.tape {
            None => Var::constant(val),
            Some(t) => {
                let idx = t.push(Node {
                    parents: [self.idx, NO_PARENT],
                    partials: [d, 0.0],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
        }
    }

    pub(crate) fn binary(self, other: Self, val: f64, da: f64, db: f64) -> Self {
        match (self.tape, other.tape) {
            (None, None) => Var::constant(val),
            (Some(_), None) => self.unary(val, da),
            (None, Some(_)) => other.unary(val, db),
            (Some(t), Some(u)) => {
                debug_assert!(std::ptr::eq(t, u), "mixing vars from different tapes");
                let idx = t.push(Node {
                    parents: [self.idx, other.idx],
                    partials: [da, db],
                });
                Var {
                    tape: Some(t),
                    idx,
                    val,
                }
            }
        }
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.val + rhs.val, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.val - rhs.val, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.val * rhs.val, rhs.val, self.val)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Self) -> Self {
        let q = self.val / rhs.val;
        self.binary(rhs, q, 1.0 / rhs.val, -q / rhs.val)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Self {
        self.unary(-self.val, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.val + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.val - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.val * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.val / rhs, 1.0 / rhs)
    }
}
