//! Adaptive allocation of decoding compute across a batch of queries.
//!
//! The numeric core ([`domain`], [`estimation`], [`allocator`]) is generic
//! over a [`Scalar`] (`f32` or `f64`); the aliases below fix it to `f64`,
//! which is what the data, training and evaluation layers use.
//!
//! ```
//! use adacompute::allocator::{allocate_greedy, MonotoneMode};
//! use adacompute::domain::{marginal_curve_analytic, BudgetSpec, SuccessProb};
//!
//! let curves: Vec<_> = [0.9, 0.2, 0.0]
//!     .iter()
//!     .map(|&l| marginal_curve_analytic(SuccessProb::new(l).unwrap(), 8))
//!     .collect();
//! let budget = BudgetSpec::new(3.0, 8, 0).unwrap();
//! let alloc = allocate_greedy(&curves, &budget, MonotoneMode::Envelope).unwrap();
//! assert_eq!(alloc.budgets.iter().sum::<usize>(), 9);
//! assert_eq!(alloc.budgets[2], 0);
//! ```

pub mod allocator;
pub mod cli;
pub mod dataset;
pub mod domain;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod predictor;
pub mod rng;
pub mod scalar;
pub mod workload;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SuccessProb = domain::SuccessProb<f64>;
pub type QualityCurve = domain::QualityCurve<f64>;
pub type MarginalRewardCurve = domain::MarginalRewardCurve<f64>;
pub type OutcomePool = domain::OutcomePool<f64>;
pub type Allocation = allocator::Allocation<f64>;
pub type CurveEstimate = estimation::CurveEstimate<f64>;
pub type PreferenceProb = estimation::PreferenceProb<f64>;

pub type SuccessProb32 = domain::SuccessProb<f32>;
pub type QualityCurve32 = domain::QualityCurve<f32>;
pub type MarginalRewardCurve32 = domain::MarginalRewardCurve<f32>;
pub type OutcomePool32 = domain::OutcomePool<f32>;
pub type Allocation32 = allocator::Allocation<f32>;
