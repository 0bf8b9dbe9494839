pub mod layers;
pub mod loss;
pub mod model;

pub use layers::{ConvLayer, DenseLayer, PoolIndices};
pub use loss::{cross_entropy_loss, softmax};
pub use model::{CnnModel, ForwardTrace, Gradients, Layers, PARAM_NAMES, TOTAL_PARAMS};
