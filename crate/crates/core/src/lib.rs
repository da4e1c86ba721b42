//! Scoring and meta-evaluation toolkit for conversational search.
//!
//! The crate covers three layers:
//!
//! * single-response metrics over a response and its ground truth
//!   ([`overlap`], [`embedding`]),
//! * list and session metrics that consume single-response scores as
//!   relevance ([`ranking`], [`session`]),
//! * meta-evaluation of any of the above: discriminative power with the
//!   randomized Tukey HSD test, predictive power over human preference
//!   pairs, and concordance against gold-standard scores ([`metaeval`]).
//!
//! [`corpus`] loads conversations and system runs; [`job`] wires everything
//! into the batch pipeline used by the command-line front end.

pub mod corpus;
pub mod embedding;
mod error;
pub mod job;
pub mod metaeval;
pub mod metric;
pub mod overlap;
pub mod ranking;
pub mod report;
pub mod session;
pub mod textprep;

pub use error::{Error, ErrorKind, Result};

#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

