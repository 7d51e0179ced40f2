use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{Agent, Decision, DecisionMeta, TurnView};
use crate::data::{Action, ShotType};
use crate::error::{Error, Result};
use crate::experience::{empirical_distributions, ExperienceIndex};
use crate::seed;

/// Samples from the empirical first actions of the retrieved experiences.
#[derive(Debug, Clone)]
pub struct RuleAgent {
    index: Arc<ExperienceIndex>,
    seed: u64,
}

impl RuleAgent {
    pub fn new(index: Arc<ExperienceIndex>, seed: u64) -> Self {
        RuleAgent { index, seed }
    }
}

impl Agent for RuleAgent {
    fn name(&self) -> &str {
        "rule"
    }

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
        let e = empirical_distributions(&self.index, view.state)?;
        let mut rng = seed::rng(self.seed, &[view.rally_seed, view.step as u64]);
        let shot_id = WeightedIndex::new(e.shot_hist)
            .map_err(|err| Error::Agent(format!("shot histogram: {err}")))?
            .sample(&mut rng);
        let landing = e.landings[rng.gen_range(0..e.landings.len())];
        let move_to = e.moves[rng.gen_range(0..e.moves.len())];
        let shot = ShotType::from_id(shot_id).expect("histogram has one bin per shot type");
        Ok(Decision {
            action: Action { landing, shot, move_to },
            shot_probs: e.shot_hist,
            meta: DecisionMeta { relaxation_level: Some(e.relaxation_level), ..DecisionMeta::default() },
        })
    }
}
