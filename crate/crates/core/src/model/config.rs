use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When a player's context is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContextSchedule {
    /// Once, at the player's first stroke of the rally, then held.
    #[default]
    PerRally,
    /// Afresh at every stroke from the remaining sequence.
    PerStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub pred: f64,
    pub ctx: f64,
    pub sde: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { pred: 1.0, ctx: 1.0, sde: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub player_embed_dim: usize,
    pub state_embed_dim: usize,
    pub encoder_heads: usize,
    pub max_positions: usize,
    pub context_dim: usize,
    pub context_hidden: usize,
    pub n_mixtures: usize,
    pub loss_weights: LossWeights,
    pub reg_weight: f64,
    pub position_nll_scale: f64,
    pub select_weight: f64,
    pub sde_dt: f64,
    pub std_clamp: f64,
    pub std_floor: f64,
    pub sigma_bound: f64,
    pub time_scale: f64,
    pub context_schedule: ContextSchedule,
    pub recon_horizon: usize,
    /// Probability of hiding each teacher-forced previous action from the
    /// context decoder, so reconstruction has to read the context.
    pub recon_input_dropout: f64,
    pub generic_player_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            player_embed_dim: 16,
            state_embed_dim: 80,
            encoder_heads: 4,
            max_positions: 64,
            context_dim: 128,
            context_hidden: 128,
            n_mixtures: 5,
            loss_weights: LossWeights::default(),
            reg_weight: 0.05,
            position_nll_scale: 0.01,
            select_weight: 1.0,
            sde_dt: 1.0,
            std_clamp: 0.1,
            std_floor: 1e-4,
            sigma_bound: 0.1,
            time_scale: 10.0,
            context_schedule: ContextSchedule::PerRally,
            recon_horizon: 16,
            recon_input_dropout: 0.5,
            generic_player_rate: 0.05,
            batch_size: 32,
            epochs: 100,
            learning_rate: 1e-4,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small dimensions and a faster schedule for single-core runs.
    pub fn desk() -> Self {
        ModelConfig {
            player_embed_dim: 8,
            state_embed_dim: 24,
            encoder_heads: 2,
            context_dim: 16,
            context_hidden: 24,
            epochs: 60,
            learning_rate: 5e-4,
            ..ModelConfig::default()
        }
    }

    /// Width of the state embedding: player block plus rally block.
    pub fn embed_dim(&self) -> usize {
        self.player_embed_dim + self.state_embed_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.embed_dim() + self.context_dim
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        let dims = [
            self.player_embed_dim,
            self.state_embed_dim,
            self.encoder_heads,
            self.max_positions,
            self.context_dim,
            self.context_hidden,
            self.n_mixtures,
            self.recon_horizon,
            self.batch_size,
        ];
        if dims.contains(&0) {
            return bad("model dimensions must be positive".into());
        }
        if self.state_embed_dim % self.encoder_heads != 0 {
            return bad(format!("{} heads do not divide {}", self.encoder_heads, self.state_embed_dim));
        }
        if !(0.0..=1.0).contains(&self.reg_weight) {
            return bad(format!("reg_weight {} outside [0, 1]", self.reg_weight));
        }
        let w = self.loss_weights;
        if [w.pred, w.ctx, w.sde].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("loss weights must lie in [0, 1]".into());
        }
        if !(self.std_clamp > self.std_floor && self.std_floor > 0.0) {
            return bad("need 0 < std_floor < std_clamp".into());
        }
        if !(self.sigma_bound > self.std_floor && self.sde_dt > 0.0 && self.time_scale > 0.0) {
            return bad("sigma_bound, sde_dt and time_scale must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rate and gradient clip must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.recon_input_dropout) {
            return bad(format!("recon_input_dropout {} outside [0, 1]", self.recon_input_dropout));
        }
        if !(0.0..1.0).contains(&self.generic_player_rate) {
            return bad("generic_player_rate must lie in [0, 1)".into());
        }
        Ok(())
    }
}
