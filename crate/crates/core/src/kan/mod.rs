//! B-spline bases and Kolmogorov-Arnold layers.

pub mod layer;
pub mod spline;

pub use layer::{
    kan_layer_forward, kan_stack_forward, mlp_layer_forward, KanLayer, KanLayerParams, KanLayerVars, MlpLayer,
};
pub use spline::{bspline_basis, bspline_basis_tensor, BasisEvaluator, SplineSpec};
