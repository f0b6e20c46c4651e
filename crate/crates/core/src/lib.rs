//! Policy-guided demonstration selection for multimodal sarcasm
//! understanding: retrieval, a learned selection policy trained with
//! REINFORCE, prompt construction, model backends and task metrics.

pub mod backend;
pub mod curation;
pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod hashing;
pub mod metrics;
pub mod parse;
pub mod policy;
pub mod prompt;
pub mod reward;
pub mod trainer;

pub use backend::{BackendError, Capabilities, ModelBackend};
pub use data::{DatasetSplit, ParsedResponse, Sample, SplitName};
pub use embed::{EmbeddingStore, EmbeddingVector};
pub use error::{Error, Result};
pub use policy::{PolicyParams, SelectedSet, SelectionDistribution};
pub use prompt::{Language, PromptBundle};
pub use reward::{RewardBreakdown, RewardWeights};
pub use trainer::{TrainerConfig, TrainerState};
