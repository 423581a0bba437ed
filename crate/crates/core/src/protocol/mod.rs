//! The vertical federated training protocol: clients with private feature
//! slices, a server MLP over concatenated embeddings, query accounting and
//! server-side defenses.

mod defense;
mod federation;

pub use defense::{apply_dp, foolsgold_weights, sample_laplace, Defense};
pub use federation::{
    train_vfgl, ClientState, EpochRecord, Federation, ManipulationKind, ManipulationRecord, ServerState,
    TrainConfig, SERVER_HIDDEN,
};
