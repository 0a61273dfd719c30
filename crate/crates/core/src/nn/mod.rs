//! Layers, parameter storage, initialization and the Adam optimizer.

mod layers;
mod params;

pub use layers::{forward_layer, forward_stack, init_params, init_params_into, propagate_shapes, Activation, LayerKind, LayerSpec};
pub use params::{Adam, BoundParams, ParamEntry, ParamStore};
