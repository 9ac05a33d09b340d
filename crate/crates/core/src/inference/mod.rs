//! The variational E-step: coordinate updates for every posterior block and
//! the evidence lower bound they ascend.

mod affinity;
mod closed_form;
mod doc;
mod elbo;
mod estep;

use serde::{Deserialize, Serialize};

use crate::error::{JnetError, Result};
use crate::model::PairStrategy;
use crate::scalar::Real;

pub use affinity::{affinity_gradient, affinity_objective, optimize_affinity, update_affinity, PairContext};
pub use closed_form::{
    topic_covariance, topic_mean, update_topic_embedding, update_topics, update_user_embedding, update_users,
    UserSufficientStats,
};
pub use doc::{
    assign_words, doc_gradient, doc_objective, optimize_doc_topic, update_doc_topic, update_word_assignments,
    DocContext,
};
pub use elbo::{compute_elbo, elbo_terms, ElboTerms};
pub use estep::{e_step, write_trace, SweepRecord};

/// Inner-optimizer and sweep settings for the E-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EStepConfig<T> {
    /// gradient-ascent iterations per document or pair
    pub inner_steps: usize,
    /// initial (preconditioned) step size before backtracking
    pub step_size: T,
    /// step shrink factor on a rejected step
    pub backtrack: T,
    /// inner convergence threshold on the gradient max-norm
    pub tolerance: T,
    pub max_sweeps: usize,
    /// relative ELBO change that ends the E-step early
    pub elbo_tolerance: T,
    /// θ/η alternations per document within one sweep
    pub doc_rounds: usize,
    pub pair_strategy: PairStrategy,
    /// seed for non-edge sampling under `PairStrategy::Sampled`
    pub seed: u64,
}

impl<T: Real> Default for EStepConfig<T> {
    fn default() -> Self {
        Self {
            inner_steps: 50,
            step_size: T::one(),
            backtrack: T::lit(0.5),
            tolerance: T::lit(1e-6),
            max_sweeps: 1,
            elbo_tolerance: T::lit(1e-6),
            doc_rounds: 2,
            pair_strategy: PairStrategy::AllPairs,
            seed: 0,
        }
    }
}

impl<T: Real> EStepConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(JnetError::Invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("step size", self.step_size)?;
        positive("tolerance", self.tolerance)?;
        positive("elbo tolerance", self.elbo_tolerance)?;
        if !(self.backtrack > T::zero() && self.backtrack < T::one()) {
            return Err(JnetError::Invalid(format!("backtracking factor must lie in (0, 1), got {}", self.backtrack)));
        }
        if self.doc_rounds == 0 {
            return Err(JnetError::Invalid("doc_rounds must be at least 1".into()));
        }
        if let PairStrategy::Sampled { ratio } = self.pair_strategy {
            if !(ratio >= 1.0) {
                return Err(JnetError::Invalid(format!("sampling ratio must be >= 1, got {ratio}")));
            }
        }
        Ok(())
    }
}

/// Smallest step tried before an inner optimizer gives up on a point.
const MIN_STEP: f64 = 1e-14;
