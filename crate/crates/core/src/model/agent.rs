use std::collections::BTreeMap;
use std::sync::Arc;

use super::config::ContextSchedule;
use super::net::{context_centroid, Context, LatentPosition, Process, RallyNet};
use crate::agents::{ActMode, Agent, Decision, DecisionMeta, TurnView};
use crate::data::PlayerState;
use crate::error::{Error, Result};
use crate::experience::{extract_experiences, ExperienceIndex};
use crate::seed;

struct HeldContext {
    context: Context,
    step: usize,
    level: usize,
}

#[derive(Default)]
struct RallyState {
    rally_seed: u64,
    latent: Option<LatentPosition>,
    integrated: usize,
    contexts: BTreeMap<String, HeldContext>,
}

/// Inference-time RallyNet: integrates every stroke of the rally through the
/// player process and projects the current latent position to an action.
pub struct RallyNetAgent {
    name: String,
    model: Arc<RallyNet>,
    idx: Arc<ExperienceIndex>,
    mode: ActMode,
    seed: u64,
    schedule: ContextSchedule,
    rally: RallyState,
}

impl RallyNetAgent {
    pub fn new(model: Arc<RallyNet>, idx: Arc<ExperienceIndex>, mode: ActMode, seed: u64) -> Self {
        let schedule = model.cfg.context_schedule;
        RallyNetAgent { name: "rallynet".into(), model, idx, mode, seed, schedule, rally: RallyState::default() }
    }

    pub fn with_schedule(mut self, schedule: ContextSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Context currently held for `player` in this rally.
    pub fn held_context(&self, player: &str) -> Option<&Context> {
        self.rally.contexts.get(player).map(|h| &h.context)
    }

    /// Selects `player`'s context at 1-based `step` from retrieved experiences.
    fn select(&self, x: &[f64], state: &PlayerState, step: usize) -> Result<HeldContext> {
        let set = extract_experiences(&self.idx, state, None)?;
        if set.retrieved.is_empty() {
            return Err(Error::EmptyExperience);
        }
        let encoded = set
            .retrieved
            .iter()
            .map(|seq| self.model.encode_context::<rand_chacha::ChaCha8Rng>(seq, None))
            .collect::<Result<Vec<_>>>()?;
        let context = self.model.select_context(&context_centroid(&encoded)?, x)?;
        Ok(HeldContext { context, step, level: set.relaxation_level })
    }

    fn integrate(&mut self, player: &str, own: &[PlayerState], state: &PlayerState, step: usize) -> Result<()> {
        let row = self.model.registry.row_or_generic(player);
        let x = self.model.embedder.embed_one(own, state, row)?.to_vec1::<f64>()?;
        let reselect = match self.schedule {
            ContextSchedule::PerRally => !self.rally.contexts.contains_key(player),
            ContextSchedule::PerStep => true,
        };
        if reselect {
            let held = self.select(&x, state, step)?;
            self.rally.contexts.insert(player.to_string(), held);
        }
        let ctx = &self.rally.contexts[player].context;
        let z_prime: Vec<f64> = x.iter().chain(&ctx.z).copied().collect();
        let prev = self.rally.latent.take().unwrap_or_else(|| LatentPosition::origin(self.model.cfg.latent_dim()));
        let noise_seed = seed::derive(self.rally.rally_seed, &[0x5344_45]);
        self.rally.latent = Some(self.model.sde_step(&prev, &z_prime, Process::Player, step, noise_seed)?);
        self.rally.integrated += 1;
        Ok(())
    }
}

impl Agent for RallyNetAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset_rally(&mut self) {
        self.rally = RallyState::default();
    }

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
        if self.rally.rally_seed != view.rally_seed || self.rally.integrated > view.history.len() {
            self.rally = RallyState { rally_seed: view.rally_seed, ..RallyState::default() };
        }
        while self.rally.integrated < view.history.len() {
            let i = self.rally.integrated;
            let s = &view.history[i];
            let own: Vec<PlayerState> =
                view.history[..i].iter().filter(|h| h.player == s.player).map(|h| h.state).collect();
            self.integrate(&s.player.clone(), &own, &s.state.clone(), i + 1)?;
        }
        let own: Vec<PlayerState> = view.own_history().copied().collect();
        self.integrate(view.player, &own, view.state, view.step)?;

        // The current stroke now counts as integrated; it is in the history of the next call.
        let latent = self.rally.latent.as_ref().expect("integrated above");
        let pred = self.model.project_action(latent)?;
        let action = match self.mode {
            ActMode::Mode => pred.mode_action(),
            ActMode::Sample => pred.sample_action(&mut seed::rng(self.seed, &[view.rally_seed, view.step as u64]))?,
        };
        let held = &self.rally.contexts[view.player];
        Ok(Decision {
            action,
            shot_probs: pred.shot,
            meta: DecisionMeta { context_step: Some(held.step), relaxation_level: Some(held.level), option: None },
        })
    }
}
