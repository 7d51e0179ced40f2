//! Option-based hierarchical behavior cloning.
//!
//! A high-level policy picks one of `n_options` low-level heads from the
//! player's first state of the rally. Training maximizes the marginal
//! likelihood over options through a tempered log-sum-exp whose temperature
//! anneals towards a hard assignment.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use candle_core::{Tensor, D};
use rand_distr::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::agents::{ActMode, Agent, Decision, DecisionMeta, TurnView};
use crate::data::{Dataset, PlayerState, Rally};
use crate::error::{Error, Result};
use crate::model::embed::{drop_players, embed_batch, BatchLayout, PlayerRegistry, StateEmbedder};
use crate::model::heads::{decode_head_out, ActionHeads, StepPrediction};
use crate::model::loss::{ActionTargets, LossReport, PredTerms};
use crate::model::train::{fit, scales, step_rng, TrainOptions};
use crate::model::ModelConfig;
use crate::nn::{device, log_softmax, logsumexp, scalar, softmax, Linear, ParamStore};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HbcConfig {
    pub n_options: usize,
    pub temperature_start: f64,
    pub temperature_end: f64,
}

impl Default for HbcConfig {
    fn default() -> Self {
        HbcConfig { n_options: 4, temperature_start: 1.0, temperature_end: 0.05 }
    }
}

impl HbcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_options == 0 {
            return Err(Error::InvalidArgument("n_options must be positive".into()));
        }
        if !(self.temperature_start > 0.0 && self.temperature_end > 0.0) {
            return Err(Error::InvalidArgument("temperatures must be positive".into()));
        }
        Ok(())
    }

    /// Geometric interpolation from the start to the end temperature.
    pub fn temperature(&self, epoch: usize, epochs: usize) -> f64 {
        if epochs <= 1 {
            return self.temperature_end;
        }
        let f = epoch as f64 / (epochs - 1) as f64;
        self.temperature_start * (self.temperature_end / self.temperature_start).powf(f)
    }
}

fn head_name(k: usize) -> String {
    if k == 0 {
        "head".into()
    } else {
        format!("head{k}")
    }
}

pub struct HbcModel {
    pub cfg: ModelConfig,
    pub hbc: HbcConfig,
    pub registry: PlayerRegistry,
    pub params: ParamStore,
    pub embedder: StateEmbedder,
    pub high: Linear,
    pub options: Vec<ActionHeads>,
}

/// Per-side option log-priors and per-option summed prediction losses.
struct OptionTerms {
    log_prior: Tensor,
    losses: Tensor,
    first: Vec<PredTerms>,
}

impl HbcModel {
    pub fn new(cfg: &ModelConfig, hbc: &HbcConfig, players: &[String]) -> Result<Self> {
        cfg.validate()?;
        hbc.validate()?;
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
        let high = Linear::new(&mut ps, "option", cfg.embed_dim(), hbc.n_options)?;
        let options = (0..hbc.n_options)
            .map(|k| ActionHeads::new(&mut ps, &head_name(k), cfg.embed_dim(), cfg.n_mixtures))
            .collect::<Result<Vec<_>>>()?;
        Ok(HbcModel { cfg: cfg.clone(), hbc: *hbc, registry, params: ps, embedder, high, options })
    }

    fn option_terms(
        &self,
        layout: &BatchLayout,
        rallies: &[&Rally],
        drop_rate: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<OptionTerms> {
        let s = scales(&self.cfg);
        let mut rows = layout.chunk_rows(rallies, &self.registry)?;
        drop_players(&mut rows, drop_rate, rng);
        let x = embed_batch(&self.embedder, layout, rallies, rows)?;
        let targets = ActionTargets::new(&layout.actions(rallies))?;
        let mut per_option = Vec::with_capacity(self.options.len());
        let mut first = Vec::new();
        for heads in &self.options {
            let terms = PredTerms::new(&heads.forward(&x)?, &targets, s)?;
            per_option.push(terms.combined(s)?.unsqueeze(1)?);
            first.push(terms);
        }
        let member = layout.side_membership()?;
        let losses = member.matmul(&Tensor::cat(&per_option, 1)?)?;
        let firsts = Tensor::from_vec(layout.side_first_rows(), layout.sides.len(), &device())?;
        let log_prior = log_softmax(&self.high.forward(&x.index_select(&firsts, 0)?)?, D::Minus1)?;
        Ok(OptionTerms { log_prior, losses, first })
    }

    pub fn batch_loss(
        &self,
        rallies: &[&Rally],
        temperature: f64,
        rng: &mut impl rand::Rng,
    ) -> Result<(Tensor, LossReport)> {
        let layout = BatchLayout::new(rallies, self.cfg.max_positions)?;
        let b = layout.n_rallies as f64;
        let t = self.option_terms(&layout, rallies, self.cfg.generic_player_rate, rng)?;
        let scores = (&t.log_prior - &t.losses)?;
        let marginal = logsumexp(&scores.affine(1.0 / temperature, 0.0)?, D::Minus1)?.affine(-temperature, 0.0)?;
        let pred = marginal.sum_all()?.affine(1.0 / b, 0.0)?;
        let total = pred.affine(self.cfg.loss_weights.pred, 0.0)?;

        let post = softmax(&scores.affine(1.0 / temperature, 0.0)?.detach(), D::Minus1)?;
        let entropy = (post.clone() * (post + 1e-300)?.log()?)?.sum(D::Minus1)?.mean_all()?.neg()?;
        // Components are reported under the option each side would pick.
        let pick: Vec<usize> = scores.argmax(D::Minus1)?.to_vec1::<u32>()?.into_iter().map(|v| v as usize).collect();
        let mut comp = [0.0; 4];
        let side_of: Vec<usize> = layout.side_pos.iter().map(|p| p.0).collect();
        for (k, terms) in t.first.iter().enumerate() {
            let weights: Vec<f64> = side_of.iter().map(|&s| if pick[s] == k { 1.0 } else { 0.0 }).collect();
            let w = Tensor::from_vec(weights, side_of.len(), &device())?;
            for (c, term) in [&terms.type_ce, &terms.land, &terms.mv, &terms.reg].into_iter().enumerate() {
                comp[c] += scalar(&(term * &w)?.sum_all()?)? / b;
            }
        }
        let report = LossReport {
            total: scalar(&total)?,
            pred: scalar(&pred)?,
            type_ce: comp[0],
            land: comp[1],
            move_nll: comp[2],
            reg: comp[3],
            option_entropy: Some(scalar(&entropy)?),
            ..Default::default()
        };
        Ok((total, report))
    }

    pub fn train(
        train: &Dataset,
        cfg: &ModelConfig,
        hbc: &HbcConfig,
        log: Option<&mut dyn Write>,
    ) -> Result<(HbcModel, Vec<LossReport>)> {
        let model = HbcModel::new(cfg, hbc, train.players())?;
        let reports = fit(&model.params, train.rallies.len(), &TrainOptions::from(cfg), log, |ids, epoch, step| {
            let rallies: Vec<&Rally> = ids.iter().map(|&i| &train.rallies[i]).collect();
            model.batch_loss(&rallies, hbc.temperature(epoch, cfg.epochs), &mut step_rng(cfg.seed, step))
        })?;
        Ok((model, reports))
    }

    /// Most probable option a posteriori for each side of each rally, as
    /// `(rally index, side, option)`.
    pub fn posterior_options(&self, rallies: &[Rally]) -> Result<Vec<(usize, usize, usize)>> {
        let mut out = Vec::new();
        for (i, r) in rallies.iter().enumerate() {
            let layout = BatchLayout::new(&[r], self.cfg.max_positions)?;
            let t = self.option_terms(&layout, &[r], 0.0, &mut seed::rng(0, &[]))?;
            let best = (&t.log_prior - &t.losses)?.argmax(D::Minus1)?.to_vec1::<u32>()?;
            for (side_idx, (_, steps)) in layout.sides.iter().enumerate() {
                out.push((i, steps[0] % 2, best[side_idx] as usize));
            }
        }
        Ok(out)
    }

    /// High-level option distribution at a player's first state.
    pub fn option_probs(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(&self.high.forward(x)?, D::Minus1)?.get(0)?.to_vec1::<f64>()?)
    }

    pub fn predict(&self, x: &Tensor, option: usize) -> Result<StepPrediction> {
        let out = self.options[option].forward(x)?;
        Ok(decode_head_out(&out, self.cfg.n_mixtures, self.cfg.std_floor, self.cfg.std_clamp)?.remove(0))
    }

    pub fn embed(&self, history: &[PlayerState], current: &PlayerState, player: &str) -> Result<Tensor> {
        Ok(self.embedder.embed_one(history, current, self.registry.row_or_generic(player))?.unsqueeze(0)?)
    }
}

/// Fraction of items whose cluster's majority label matches their own label.
pub fn cluster_purity(assignments: &[(usize, usize)]) -> f64 {
    if assignments.is_empty() {
        return 0.0;
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for &(cluster, label) in assignments {
        *counts.entry(cluster).or_default().entry(label).or_default() += 1;
    }
    let majority: usize = counts.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    majority as f64 / assignments.len() as f64
}

pub struct HbcAgent {
    model: Arc<HbcModel>,
    mode: ActMode,
    seed: u64,
    latched: BTreeMap<String, usize>,
}

impl HbcAgent {
    pub fn new(model: Arc<HbcModel>, mode: ActMode, seed: u64) -> Self {
        HbcAgent { model, mode, seed, latched: BTreeMap::new() }
    }
}

impl Agent for HbcAgent {
    fn name(&self) -> &str {
        "hbc"
    }

    fn reset_rally(&mut self) {
        self.latched.clear();
    }

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
        let own: Vec<PlayerState> = view.own_history().copied().collect();
        let x = self.model.embed(&own, view.state, view.player)?;
        let mut rng = seed::rng(self.seed, &[view.rally_seed, view.step as u64]);
        let option = match self.latched.get(view.player) {
            Some(&k) => k,
            None => {
                let probs = self.model.option_probs(&x)?;
                let k = match self.mode {
                    ActMode::Mode => (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b }),
                    ActMode::Sample => WeightedIndex::new(&probs).map_err(|e| Error::Agent(e.to_string()))?.sample(&mut rng),
                };
                self.latched.insert(view.player.to_string(), k);
                k
            }
        };
        let pred = self.model.predict(&x, option)?;
        let action = match self.mode {
            ActMode::Mode => pred.mode_action(),
            ActMode::Sample => pred.sample_action(&mut rng)?,
        };
        Ok(Decision { action, shot_probs: pred.shot, meta: DecisionMeta { option: Some(option), ..Default::default() } })
    }
}
