use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Named group of differentiable scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBlock {
    pub name: String,
    pub values: Vec<f64>,
    pub trainable: bool,
}

impl ParameterBlock {
    pub fn new(name: impl Into<String>, values: Vec<f64>, trainable: bool) -> Self {
        Self {
            name: name.into(),
            values,
            trainable,
        }
    }
}

/// Read access to blocks of scalars by name.
pub trait BlockSource<T> {
    /// Panics when the block is missing.
    fn block(&self, name: &str) -> &[T];
}

/// Ordered set of uniquely named parameter blocks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    blocks: Vec<ParameterBlock>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, block: ParameterBlock) -> Result<()> {
        if self.get(&block.name).is_some() {
            return Err(Error::Contract(format!(
                "duplicate parameter block `{}`",
                block.name
            )));
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ParameterBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParameterBlock> {
        self.blocks.iter_mut().find(|b| b.name == name)
    }

    pub fn blocks(&self) -> &[ParameterBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParameterBlock] {
        &mut self.blocks
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) {
        if let Some(b) = self.get_mut(name) {
            b.trainable = trainable;
        }
    }

    /// Total count of trainable scalars.
    pub fn trainable_len(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.trainable)
            .map(|b| b.values.len())
            .sum()
    }
}

impl BlockSource<f64> for ParamSet {
    fn block(&self, name: &str) -> &[f64] {
        match self.get(name) {
            Some(b) => &b.values,
            None => panic!("missing parameter block `{name}`"),
        }
    }
}

/// Parameter blocks registered on a tape. Trainable blocks become tape
/// variables; the rest are constants.
pub struct Lifted<'t> {
    blocks: Vec<(String, bool, Vec<Var<'t>>)>,
}

impl<'t> Lifted<'t> {
    pub fn new(tape: &'t Tape, params: &ParamSet) -> Self {
        let blocks = params
            .blocks
            .iter()
            .map(|b| {
                let vars = b
                    .values
                    .iter()
                    .map(|&v| {
                        if b.trainable {
                            tape.var(v)
                        } else {
                            Var::constant(v)
                        }
                    })
                    .collect();
                (b.name.clone(), b.trainable, vars)
            })
            .collect();
        Self { blocks }
    }

    fn report(&self, tape: &Tape, output: Var<'t>) -> GradReport {
        let adj = tape.backward(output);
        let mut report = GradReport::default();
        for (name, trainable, vars) in &self.blocks {
            if !trainable || !vars.iter().any(|&v| adj.reaches(v)) {
                continue;
            }
            report.insert(name, vars.iter().map(|&v| adj.wrt(v)).collect());
        }
        report
    }
}

impl<'t> BlockSource<Var<'t>> for Lifted<'t> {
    fn block(&self, name: &str) -> &[Var<'t>] {
        match self.blocks.iter().find(|(n, _, _)| n == name) {
            Some((_, _, v)) => v,
            None => panic!("missing parameter block `{name}`"),
        }
    }
}

/// Per-block partial derivatives, aligned index-for-index with the block
/// values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    blocks: Vec<(String, Vec<f64>)>,
}

impl GradReport {
    pub fn insert(&mut self, name: &str, grad: Vec<f64>) {
        match self.blocks.iter_mut().find(|(n, _)| n == name) {
            Some((_, g)) => *g = grad,
            None => self.blocks.push((name.to_string(), grad)),
        }
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.blocks.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.blocks.iter().map(|(n, g)| (n.as_str(), g.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Zeros for every trainable block of `params`, in registration order.
    pub fn zeros(params: &ParamSet) -> GradReport {
        GradReport {
            blocks: params
                .blocks
                .iter()
                .filter(|b| b.trainable)
                .map(|b| (b.name.clone(), vec![0.0; b.values.len()]))
                .collect(),
        }
    }

    /// Keeps only the blocks whose names satisfy `keep`.
    pub fn retain(&mut self, mut keep: impl FnMut(&str) -> bool) {
        self.blocks.retain(|(n, _)| keep(n));
    }

    /// `self += scale * other`, adding any blocks missing from `self`.
    pub fn add_scaled(&mut self, other: &GradReport, scale: f64) {
        for (name, g) in &other.blocks {
            match self.blocks.iter_mut().find(|(n, _)| n == name) {
                Some((_, acc)) => {
                    assert_eq!(acc.len(), g.len(), "block `{name}` length changed");
                    for (a, b) in acc.iter_mut().zip(g) {
                        *a += scale * b;
                    }
                }
                None => self
                    .blocks
                    .push((name.clone(), g.iter().map(|b| scale * b).collect())),
            }
        }
    }

    pub fn scaled(&self, scale: f64) -> GradReport {
        let mut out = GradReport::default();
        out.add_scaled(self, scale);
        out
    }

    /// Elementwise map over every coordinate.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> GradReport {
        GradReport {
            blocks: self
                .blocks
                .iter()
                .map(|(n, g)| (n.clone(), g.iter().map(|&x| f(x)).collect()))
                .collect(),
        }
    }

    /// All coordinates in block order.
    pub fn flatten(&self) -> Vec<f64> {
        self.blocks.iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }

    /// `(block, index)` labels matching [`GradReport::flatten`].
    pub fn labels(&self) -> Vec<(String, usize)> {
        self.blocks
            .iter()
            .flat_map(|(n, g)| (0..g.len()).map(move |i| (n.clone(), i)))
            .collect()
    }

    /// Largest [`rel_err`] over the union of both block sets; a block missing
    /// on one side counts as zeros.
    pub fn max_rel_err(&self, other: &GradReport) -> f64 {
        let mut worst: f64 = 0.0;
        let mut visit = |a: &GradReport, b: &GradReport| {
            for (name, ga) in &a.blocks {
                match b.get(name) {
                    Some(gb) => {
                        for (x, y) in ga.iter().zip(gb) {
                            worst = worst.max(rel_err(*x, *y));
                        }
                    }
                    None => {
                        for x in ga {
                            worst = worst.max(rel_err(*x, 0.0));
                        }
                    }
                }
            }
        };
        visit(self, other);
        visit(other, self);
        worst
    }
}

/// `|a - b| / max(|a|, |b|, 1)`: relative for magnitudes above one, absolute
/// below.
pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Records `f` on a fresh tape and returns its value and the reverse-mode
/// gradient with respect to every trainable block it touches.
pub fn differentiate<F>(params: &ParamSet, f: F) -> (f64, GradReport)
where
    F: for<'t> FnOnce(&Lifted<'t>) -> Var<'t>,
{
    let (mut outs, ()) = differentiate_with(params, |lifted| (vec![f(lifted)], ()));
    outs.pop().expect("one output")
}

/// Like [`differentiate`] for several scalar outputs of one recording, plus
/// arbitrary plain data extracted during recording.
pub fn differentiate_with<F, R>(params: &ParamSet, f: F) -> (Vec<(f64, GradReport)>, R)
where
    F: for<'t> FnOnce(&Lifted<'t>) -> (Vec<Var<'t>>, R),
{
    let tape = Tape::with_capacity(1024);
    let lifted = Lifted::new(&tape, params);
    let (outputs, extra) = f(&lifted);
    let reports = outputs
        .into_iter()
        .map(|out| (out.value(), lifted.report(&tape, out)))
        .collect();
    (reports, extra)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` over every
/// coordinate of every trainable block.
pub fn finite_diff_grad<F>(params: &ParamSet, h: f64, mut f: F) -> Result<GradReport>
where
    F: FnMut(&ParamSet) -> Result<f64>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::Domain(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut work = params.clone();
    let mut report = GradReport::default();
    for (bi, block) in params.blocks.iter().enumerate() {
        if !block.trainable {
            continue;
        }
        let mut g = Vec::with_capacity(block.values.len());
        for i in 0..block.values.len() {
            let x = block.values[i];
            work.blocks[bi].values[i] = x + h;
            let up = f(&work)?;
            work.blocks[bi].values[i] = x - h;
            let down = f(&work)?;
            work.blocks[bi].values[i] = x;
            g.push((up - down) / (2.0 * h));
        }
        report.insert(&block.name, g);
    }
    Ok(report)
}

/// Convenience for single-block scalar functions in tests and examples.
pub fn single_block(name: &str, values: Vec<f64>) -> ParamSet {
    let mut p = ParamSet::new();
    p.push(ParameterBlock::new(name, values, true))
        .expect("fresh set");
    p
}

/// Helper used by generic code that only needs a value of the right type.
pub fn lift_slice<T: Real>(xs: &[f64]) -> Vec<T> {
    xs.iter().map(|&x| T::cst(x)).collect()
}
