//! Distillation losses: latent (attention + hidden) alignment, soft and hard
//! label losses, and the unified stage loss.

mod losses;
mod mapping;

pub(crate) use losses::sum_scalars;
pub use losses::{
    hard_label_loss, latent_loss, latent_loss_aligned, soft_label_loss, stage_loss, Alpha, DistillExample,
    Label, LatentLoss, Objective, StageLoss,
};
pub use mapping::{layer_map, LayerMap, MappingParams, MappingVars};
