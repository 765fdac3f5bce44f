//! Differentiable numerics: a reverse-mode tape, scalar arithmetic shared by
//! plain and recorded evaluation, Gaussian log-densities, and a central
//! finite-difference oracle.

mod gaussian;
mod params;
mod real;
mod tape;

pub use gaussian::{
    diag_normal_logpdf, gaussian_logpdf, iso_normal_logpdf, std_normal_logpdf, DiagGaussian,
    Variance, LN_2PI,
};
pub use params::{
    differentiate, differentiate_with, finite_diff_grad, lift_slice, rel_err, single_block,
    BlockSource, GradReport, Lifted, ParamSet, ParameterBlock,
};
pub use real::{cumsum, dot, log_mean_exp, log_sum_exp, softmax, sum, Real};
pub use tape::{Adjoints, Tape, Var};
