use std::io::Write;

use crate::agents::{ActMode, Agent, Decision, DecisionMeta, TurnView};
use crate::data::{Dataset, PlayerState, Rally};
use crate::error::Result;
use crate::model::embed::{drop_players, embed_batch, BatchLayout, PlayerRegistry, StateEmbedder};
use crate::model::heads::{decode_head_out, ActionHeads, StepPrediction};
use crate::model::loss::{ActionTargets, LossReport, PredTerms};
use crate::model::train::{fit, scales, step_rng, TrainOptions};
use crate::model::ModelConfig;
use crate::nn::{scalar, ParamStore};
use crate::seed;

/// State embedding followed directly by the action heads.
pub struct BcModel {
    pub cfg: ModelConfig,
    pub registry: PlayerRegistry,
    pub params: ParamStore,
    pub embedder: StateEmbedder,
    pub heads: ActionHeads,
}

impl BcModel {
    pub fn new(cfg: &ModelConfig, players: &[String]) -> Result<Self> {
        cfg.validate()?;
        let registry = PlayerRegistry::new(players);
        let mut ps = ParamStore::new(cfg.seed);
        let embedder = StateEmbedder::new(
            &mut ps,
            "embed",
            registry.n_rows(),
            cfg.player_embed_dim,
            cfg.state_embed_dim,
            cfg.encoder_heads,
            cfg.max_positions,
        )?;
        let heads = ActionHeads::new(&mut ps, "head", cfg.embed_dim(), cfg.n_mixtures)?;
        Ok(BcModel { cfg: cfg.clone(), registry, params: ps, embedder, heads })
    }

    pub fn batch_loss(&self, rallies: &[&Rally], rng: &mut impl rand::Rng) -> Result<(candle_core::Tensor, LossReport)> {
        let s = scales(&self.cfg);
        let layout = BatchLayout::new(rallies, self.cfg.max_positions)?;
        let b = layout.n_rallies as f64;
        let mut rows = layout.chunk_rows(rallies, &self.registry)?;
        drop_players(&mut rows, self.cfg.generic_player_rate, rng);
        let x = embed_batch(&self.embedder, &layout, rallies, rows)?;
        let terms = PredTerms::new(&self.heads.forward(&x)?, &ActionTargets::new(&layout.actions(rallies))?, s)?;
        let pred = terms.combined(s)?.sum_all()?.affine(1.0 / b, 0.0)?;
        let total = pred.affine(self.cfg.loss_weights.pred, 0.0)?;
        let [type_ce, land, move_nll, reg] = terms.totals(b)?;
        let report =
            LossReport { total: scalar(&total)?, pred: scalar(&pred)?, type_ce, land, move_nll, reg, ..Default::default() };
        Ok((total, report))
    }

    pub fn train(train: &Dataset, cfg: &ModelConfig, log: Option<&mut dyn Write>) -> Result<(BcModel, Vec<LossReport>)> {
        let model = BcModel::new(cfg, train.players())?;
        let reports = fit(&model.params, train.rallies.len(), &TrainOptions::from(cfg), log, |ids, _, step| {
            let rallies: Vec<&Rally> = ids.iter().map(|&i| &train.rallies[i]).collect();
            model.batch_loss(&rallies, &mut step_rng(cfg.seed, step))
        })?;
        Ok((model, reports))
    }

    pub fn predict(&self, history: &[PlayerState], current: &PlayerState, player: &str) -> Result<StepPrediction> {
        let x = self.embedder.embed_one(history, current, self.registry.row_or_generic(player))?.unsqueeze(0)?;
        let out = self.heads.forward(&x)?;
        Ok(decode_head_out(&out, self.cfg.n_mixtures, self.cfg.std_floor, self.cfg.std_clamp)?.remove(0))
    }
}

pub struct BcAgent {
    model: std::sync::Arc<BcModel>,
    mode: ActMode,
    seed: u64,
}

impl BcAgent {
    pub fn new(model: std::sync::Arc<BcModel>, mode: ActMode, seed: u64) -> Self {
        BcAgent { model, mode, seed }
    }
}

impl Agent for BcAgent {
    fn name(&self) -> &str {
        "bc"
    }

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
        let own: Vec<PlayerState> = view.own_history().copied().collect();
        let pred = self.model.predict(&own, view.state, view.player)?;
        let action = match self.mode {
            ActMode::Mode => pred.mode_action(),
            ActMode::Sample => pred.sample_action(&mut seed::rng(self.seed, &[view.rally_seed, view.step as u64]))?,
        };
        Ok(Decision { action, shot_probs: pred.shot, meta: DecisionMeta::default() })
    }
}
