//! Density estimation from weighted samples with a mixture-prior VAE, and the
//! two adaptive importance-sampling drivers built on top of it: AIS for
//! sampling from unnormalized targets and multi-level cross entropy for
//! rare-event probability estimation.

pub mod algos;
pub mod autodiff;
pub mod dists;
pub mod error;
pub mod metrics;
pub mod nets;
pub mod problems;
pub mod rng;
pub mod vae;

pub use algos::{ais_run, ce_run, ess, is_estimate, quantile};
pub use algos::{AisResult, CeResult, Proposal, ProposalFamily};
pub use autodiff::{Tape, Tensor};
pub use dists::{DiagGaussian, FullGaussian, GaussianMixture, UnnormalizedTarget};
pub use error::{Error, Result};
pub use metrics::{bimodal_success, cov_of, knn_kl, nu_mc, ModeCoverage, ReplicationSummary};
pub use nets::{Adam, MlpParams};
pub use problems::{DuffingProblem, FourBranches, PerformanceProblem};
pub use vae::{build_proposal, train_vae, FiniteMixtureProposal, TrainConfig, VaeModel, WeightedDataset};
