//! Layer-wise diagonal Hessian backpropagation for feed-forward networks.
//!
//! The crate provides a small dense network engine ([`net`]), loss heads
//! returning exact last-layer curvature ([`loss`]), the diagonal curvature
//! recurrences HesScale, HesScaleGN and BL89 ([`curvature`]), reference and
//! stochastic estimators for comparison ([`oracles`]), and first- and
//! second-order optimizers with trust-region step-size scaling ([`optim`]).

pub mod curvature;
pub mod error;
pub mod loss;
pub mod net;
pub mod optim;
pub mod oracles;
pub mod par;
pub mod tensor;

pub use curvature::{
    bl89_backward, curvature_backward, hesscale_backward, hesscale_conv_backward, hesscale_gn_backward,
    CurvatureMethod, FlopCounter,
};
pub use error::{Error, Result};
pub use loss::{
    gaussian_nll_head, gaussian_nll_softplus_head, ppo_prob_head, softmax_ce_head, value_loss_head, HeadSpec,
    LossHeadOutput,
};
pub use net::{Activation, BackpropState, ForwardCache, LayerKind, LayerSpec, Network};
pub use optim::{MomentState, OptimizerKind, UpdateBundle};
pub use oracles::DiagEstimate;
pub use par::Execution;
pub use tensor::Tensor;
