//! Lie algebroid paths, comorphism lifting, flat-connection holonomy and
//! Poisson completeness probes, all on a single global chart.

// `!(x > 0.0)` is used on purpose so that NaN fails the test; index loops
// mirror the tensor formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod expr;
pub mod numkernel;
pub mod sampling;
pub mod algebroid;
pub mod apath;
pub mod comorph;
pub mod poisson;
pub mod ehresmann;
