//! Built-in benchmark problems: data generators, problem builders and
//! independent reference oracles.
//!
//! Four families are covered: non-negative least squares, the dual SVM,
//! joint probability distributions with entropy or Gaussian regularization,
//! and fairness-constrained logistic regression. Builders produce
//! [`crate::auglag::ConstrainedProblem`] instances (or a bare objective plus
//! box for NNLS) directly, bypassing the modeling language, so solver tests
//! do not depend on the parser.
//!
//! Every generator is a pure function of its parameters and seed: identical
//! inputs give bit-identical instances.

mod fairness;
mod joint_prob;
mod nnls;
mod oracles;
mod serialize;
mod svm;

pub use fairness::{
    build_fair_logreg, gen_fairness, load_fairness_csv, ConstraintLoss, FairnessInstance,
};
pub use joint_prob::{
    build_joint_prob, gaussian_mixture_marginals, gen_joint_dataset1, gen_joint_dataset2,
    outer_product_cost, JointProbInstance, Regularizer,
};
pub use nnls::{build_nnls, gen_nnls, NnlsInstance, NnlsKind, NnlsObjective};
pub use oracles::{projected_gradient, sinkhorn, svm_reference_solve, StepRule};
pub use serialize::{load_instance_manifest, save_instance, Instance};
pub use svm::{build_dual_svm, build_dual_svm_from_instance, gen_svm_blobs, rbf_kernel, SvmInstance};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one RNG used by all generators.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
