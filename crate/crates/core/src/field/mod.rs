//! Learnable fields and their composition into the multi-object sdf.
//!
//! Per category `j`: a template field `T_j` (sine MLP), a hyper-network that
//! maps the code `α_j` to the weights of the deformation network `D_j`, and
//! `D_j` itself, emitting a screw `(r, t)`, an offset `Δp`, a correction `Δs`
//! and the feature `γ` (its penultimate activation). A shared refinement
//! network maps the concatenated features to a residual sdf vector.
//!
//! `s'_j(p) = T_j(exp(r, t) p + Δp) + Δs`, `s = s' + U(γ_0, .., γ_{m-1})`.

pub mod checkpoint;
pub mod dual;
mod model;
mod network;
pub mod screw;

pub use model::{HiddenSpec, LayerIdx, Layout, ModelConfig, ModelState, DEFORM_OUT};
pub use network::{
    deform_points, evaluate, generate_deform, hypernet_weights, model_forward, refine_forward, subfunction_forward,
    template_forward, template_values, Bound, CategoryAux, ForwardOptions, ForwardOut, SubfunctionWeights, EVAL_CHUNK,
};
