//! The shared agent interface and the reference policies.

mod bc;
mod hbc;
mod random;
mod rule;

pub use bc::{BcAgent, BcModel};
pub use hbc::{cluster_purity, HbcAgent, HbcConfig, HbcModel};
pub use random::RandomAgent;
pub use rule::RuleAgent;

use serde::{Deserialize, Serialize};

use crate::data::{Action, PlayerState, ShotType, Stroke, N_SHOT_TYPES};
use crate::error::{Error, Result};

/// How an agent turns its predicted distributions into an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ActMode {
    #[default]
    Sample,
    Mode,
}

/// Everything an agent observes when it is asked to hit.
#[derive(Debug, Clone, Copy)]
pub struct TurnView<'a> {
    /// Strokes already played in this rally, by both players.
    pub history: &'a [Stroke],
    pub state: &'a PlayerState,
    pub player: &'a str,
    /// 1-indexed step of the stroke being decided.
    pub step: usize,
    pub rally_seed: u64,
}

impl TurnView<'_> {
    /// The acting player's own earlier states in this rally, oldest first.
    pub fn own_history(&self) -> impl Iterator<Item = &PlayerState> + '_ {
        self.history.iter().filter(|s| s.player == self.player).map(|s| &s.state)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecisionMeta {
    /// Step at which the acting player's context was selected.
    pub context_step: Option<usize>,
    pub relaxation_level: Option<usize>,
    pub option: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: Action,
    pub shot_probs: [f64; N_SHOT_TYPES],
    pub meta: DecisionMeta,
}

pub trait Agent {
    fn name(&self) -> &str;

    /// Clears per-rally latches. Called before the first stroke of every rally.
    fn reset_rally(&mut self) {}

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision>;
}

/// Rejects decisions outside the action codomain.
pub fn check_decision(d: &Decision) -> Result<()> {
    if !d.action.is_finite() {
        return Err(Error::InvalidAction(format!("non-finite action {:?}", d.action)));
    }
    let total: f64 = d.shot_probs.iter().sum();
    if d.shot_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidAction(format!("shot distribution does not sum to 1 ({total})")));
    }
    Ok(())
}

pub fn one_hot(shot: ShotType) -> [f64; N_SHOT_TYPES] {
    let mut p = [0.0; N_SHOT_TYPES];
    p[shot.id()] = 1.0;
    p
}

