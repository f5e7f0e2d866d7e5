//! The local odometry net, pose aggregation and the neural graph optimizer.

mod global;
pub mod gradcheck;
mod init;
mod local;

pub use global::{
    check_shapes, set_beta_bias, zero_update_head, AttentionMode, AttentionTrace, AttentionVars, GlobalNet,
    GlobalNetConfig, GlobalOutput, IterateOutput, LINEAR_ATTENTION_EPS,
};
pub use local::{encode_pair, LocalNetConfig, LocalOutput, LocalPoseNet, PAIR_CHANNELS};
