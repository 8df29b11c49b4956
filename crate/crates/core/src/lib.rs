//! Deep-learning recipes for platoon intelligence.
//!
//! Two independent toolkits share the dense numerics in [`numcore`]:
//!
//! * [`auction`] and [`mechanisms`]: a trainable neural Myerson auction
//!   for one item, classical first/second-price and analytic Myerson
//!   baselines, and a Monte Carlo audit of revenue, incentive
//!   compatibility and individual rationality.
//! * [`commnet`] and [`envs`]: a CommNet policy with mean-of-others
//!   communication, trained centrally by REINFORCE and executed per agent,
//!   plus two small cooperative environments with brute-force oracles.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod auction;
pub mod mechanisms;
pub mod numcore;
pub mod commnet;
pub mod envs;
pub mod cost;
pub mod checkpoint;
