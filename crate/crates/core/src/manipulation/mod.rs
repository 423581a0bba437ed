//! Neuron-path testing, training-feature manipulation and the shadow model.

mod path;
mod pipeline;
mod plan;
mod shadow;

pub use path::{trace_neuron_path, trace_paths, NeuronPath};
pub use pipeline::{distil_shadow, na2_pipeline, Na2Run};
pub use plan::{
    build_manipulation_plan, feature_budget, modal_path, rewrite_to_row_max, rfa_manipulate, sfa_manipulate,
    top_features, ManipulationPlan, PathCount, PlanGroup,
};
pub use shadow::{
    argmax_agreement, build_shadow, mse_loss, softmax_backward, ShadowConfig, ShadowLoss, ShadowModel, ShadowPass,
};
