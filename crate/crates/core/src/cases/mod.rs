//! Built-in decision models and proposed studies.

pub mod ades;
pub mod design;
pub mod registry;
pub mod toys;

pub use ades::{AdesStudies, AdesTree};
pub use design::{
    generate_future_data, BoundData, BoundDesign, DataModel, Dataset, PosteriorRecipe, Scale,
    StudyDesign,
};
pub use registry::{build_case, Case, MODEL_NAMES};
pub use toys::{linear_nuisance, normal_gain, AnalyticPreposterior, ConjugateToy};
