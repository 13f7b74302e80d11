//! Retrieval-based landmark recognition.
//!
//! Global kNN search with class voting, local-feature geometric
//! verification, inlier-driven re-ranking of the submission, distractor
//! reweighting, submission merging and GAP evaluation, plus the descriptor
//! math and training-set cleaning that feed them.

pub mod cleaning;
pub mod csvio;
pub mod descriptor;
pub mod error;
pub mod eval;
pub mod features;
pub mod model;
pub mod rerank;
pub mod search;
pub mod seed;
pub mod store;
pub mod svm;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
pub use model::{ClassLabel, Guess, ImageId, LabelTable, Prediction, Submission};
