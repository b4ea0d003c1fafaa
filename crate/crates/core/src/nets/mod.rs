//! Point-cloud classifiers assembled from a declarative [`NetworkSpec`]:
//! set-abstraction blocks, the four architecture modules, training and
//! checkpoints.

mod checkpoint;
mod desk;
mod model;
mod spec;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use desk::{
    desk_network, identity_network, linear_network, pointwise_network, Arch1Placement, Arch2Placement,
    Arch3Placement, Arch4Placement, ArchToggles, DeskConfig, SaBlock,
};
pub use model::{argmax, Classifier, Output};
pub use spec::{arch3_scale_prefix, Flow, LayerOp, LayerSpec, NetworkSpec, ParamShapes, SpecLayout};
pub use train::{accuracy, train, EpochLog, TrainConfig};
