//! Minibatch training: a shared Adam loop with global-norm clipping and a
//! JSON-lines loss log, and the RallyNet batch objective.

use std::io::Write;

use candle_core::Tensor;
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use super::embed::{drop_players, embed_batch, BatchLayout};
use super::heads::{action_features, ACTION_FEATURES};
use super::loss::{kl_standard_normal, sde_divergence, ActionTargets, LossReport, PredScales, PredTerms};
use super::net::{Process, RallyNet};
use crate::data::{dataset_hash, Action, Dataset, Rally, ShotType};
use crate::error::{Error, Result};
use crate::experience::{ExpRef, ExperienceIndex};
use crate::nn::{device, scalar, ParamStore};
use crate::seed;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const NOISE_STREAM: u64 = 0x4e4f_4953;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl From<&ModelConfig> for TrainOptions {
    fn from(c: &ModelConfig) -> Self {
        TrainOptions {
            epochs: c.epochs,
            batch_size: c.batch_size,
            learning_rate: c.learning_rate,
            grad_clip: c.grad_clip,
            seed: c.seed,
        }
    }
}

/// Noise stream for one optimizer step.
pub fn step_rng(seed: u64, step: usize) -> rand_chacha::ChaCha8Rng {
    seed::rng(seed, &[NOISE_STREAM, step as u64])
}

pub fn normal_tensor(rng: &mut impl Rng, shape: (usize, usize)) -> Result<Tensor> {
    let v: Vec<f64> = (0..shape.0 * shape.1).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Ok(Tensor::from_vec(v, shape, &device())?)
}

/// Runs `epochs` passes over `n_items` shuffled items. `batch` receives item
/// ids, the epoch and the global step and returns the loss to minimize.
pub fn fit<F>(
    params: &ParamStore,
    n_items: usize,
    opts: &TrainOptions,
    mut log: Option<&mut dyn Write>,
    mut batch: F,
) -> Result<Vec<LossReport>>
where
    F: FnMut(&[usize], usize, usize) -> Result<(Tensor, LossReport)>,
{
    if n_items == 0 {
        return Err(Error::EmptyInput("no training rallies"));
    }
    let vars = params.vars();
    let mut opt = AdamW::new(
        vars.clone(),
        ParamsAdamW { lr: opts.learning_rate, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 },
    )?;
    let mut reports = Vec::new();
    let mut step = 0;
    for epoch in 0..opts.epochs {
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut seed::rng(opts.seed, &[SHUFFLE_STREAM, epoch as u64]));
        for ids in order.chunks(opts.batch_size.max(1)) {
            let (loss, mut report) = batch(ids, epoch, step)?;
            report.step = step;
            report.epoch = epoch;
            if !report.total.is_finite() {
                return Err(Error::Diverged { step, detail: format!("loss {report:?}") });
            }
            let mut grads = loss.backward()?;
            let mut sq = 0.0;
            for v in &vars {
                if let Some(g) = grads.get(v.as_tensor()) {
                    sq += scalar(&g.sqr()?.sum_all()?)?;
                }
            }
            let norm = sq.sqrt();
            if !norm.is_finite() {
                return Err(Error::Diverged { step, detail: format!("gradient norm {norm}") });
            }
            if norm > opts.grad_clip {
                let s = opts.grad_clip / norm;
                for v in &vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), g.affine(s, 0.0)?);
                    }
                }
            }
            opt.step(&grads)?;
            if let Some(w) = log.as_deref_mut() {
                serde_json::to_writer(&mut *w, &report)?;
                w.write_all(b"\n")?;
            }
            reports.push(report);
            step += 1;
        }
    }
    Ok(reports)
}

pub(crate) fn scales(cfg: &ModelConfig) -> PredScales {
    PredScales {
        n_mixtures: cfg.n_mixtures,
        std_floor: cfg.std_floor,
        std_clamp: cfg.std_clamp,
        reg_weight: cfg.reg_weight,
        nll_scale: cfg.position_nll_scale,
    }
}

/// Retrieved experiences for every stroke of every training rally, excluding
/// the rally itself.
pub fn experience_table(idx: &ExperienceIndex, rallies: &[Rally]) -> Result<Vec<Vec<Vec<ExpRef>>>> {
    rallies
        .iter()
        .map(|r| r.strokes.iter().map(|s| Ok(idx.retrieve(&s.state, Some(&r.rally_id))?.0)).collect())
        .collect()
}

const PAD_ACTION: Action = Action {
    landing: crate::data::Position::ORIGIN,
    shot: ShotType::Receiving,
    move_to: crate::data::Position::ORIGIN,
};

/// Teacher-forced decoder inputs, targets and mask over each stroke's
/// remaining own actions, up to `horizon` steps. Each previous action is
/// zeroed with probability `dropout`.
fn recon_inputs(
    layout: &BatchLayout,
    rallies: &[&Rally],
    horizon: usize,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(Tensor, Vec<Action>, Tensor)> {
    let n = layout.n_strokes();
    let w = ACTION_FEATURES;
    let mut prev = vec![0.0; n * horizon * w];
    let mut targets = Vec::with_capacity(n * horizon);
    let mut mask = Vec::with_capacity(n * horizon);
    for (i, &(side, j)) in layout.side_pos.iter().enumerate() {
        let (b, steps) = &layout.sides[side];
        for h in 0..horizon {
            match steps.get(j + h) {
                Some(&t) => {
                    targets.push(rallies[*b].strokes[t].action);
                    mask.push(1.0);
                }
                None => {
                    targets.push(PAD_ACTION);
                    mask.push(0.0);
                }
            }
            if h > 0 && !rng.gen_bool(dropout) {
                if let Some(&t) = steps.get(j + h - 1) {
                    let at = (i * horizon + h) * w;
                    prev[at..at + w].copy_from_slice(&action_features(&rallies[*b].strokes[t].action));
                }
            }
        }
    }
    Ok((
        Tensor::from_vec(prev, (n, horizon, w), &device())?,
        targets,
        Tensor::from_vec(mask, n * horizon, &device())?,
    ))
}

/// Sampled experience contexts averaged per stroke, `[n, K]`.
fn experience_centroids(
    net: &RallyNet,
    idx: &ExperienceIndex,
    refs: &[&[ExpRef]],
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let mut seqs: Vec<usize> = refs.iter().flat_map(|r| r.iter().map(|e| e.seq)).collect();
    seqs.sort_unstable();
    seqs.dedup();
    if seqs.is_empty() {
        return Err(Error::EmptyExperience);
    }
    let len = seqs.iter().map(|&s| idx.sequences[s].actions.len()).max().unwrap_or(1);
    let w = ACTION_FEATURES;
    let mut data = vec![0.0; seqs.len() * len * w];
    for (i, &s) in seqs.iter().enumerate() {
        for (j, a) in idx.sequences[s].actions.iter().enumerate() {
            let at = (i * len + j) * w;
            data[at..at + w].copy_from_slice(&action_features(a));
        }
    }
    let lengths: Vec<usize> = seqs.iter().map(|&s| idx.sequences[s].actions.len()).collect();
    let acts = Tensor::from_vec(data, (seqs.len(), len, w), &device())?;
    let (mu, sd) = net.encoder.suffix_params(&acts, &lengths)?;
    let k = net.cfg.context_dim;

    let mut picks = Vec::new();
    let n_e: usize = refs.iter().map(|r| r.len()).sum();
    let mut avg = vec![0.0; refs.len() * n_e];
    for (row, r) in refs.iter().enumerate() {
        if r.is_empty() {
            return Err(Error::EmptyExperience);
        }
        for e in r.iter() {
            let local = seqs.binary_search(&e.seq).expect("sequence collected above");
            avg[row * n_e + picks.len()] = 1.0 / r.len() as f64;
            picks.push((local * len + e.offset) as u32);
        }
    }
    let picks = Tensor::from_vec(picks, n_e, &device())?;
    let mu = mu.reshape((seqs.len() * len, k))?.index_select(&picks, 0)?;
    let sd = sd.reshape((seqs.len() * len, k))?.index_select(&picks, 0)?;
    let z = (mu + (sd * normal_tensor(rng, (n_e, k))?)?)?;
    Ok(Tensor::from_vec(avg, (refs.len(), n_e), &device())?.matmul(&z)?)
}

/// Loss of one batch of rallies with their per-stroke experiences.
pub fn rallynet_batch_loss(
    net: &RallyNet,
    idx: &ExperienceIndex,
    rallies: &[&Rally],
    exps: &[&[Vec<ExpRef>]],
    rng: &mut impl Rng,
) -> Result<(Tensor, LossReport)> {
    let cfg = &net.cfg;
    let s = scales(cfg);
    let layout = BatchLayout::new(rallies, cfg.max_positions)?;
    let n = layout.n_strokes();
    let k = cfg.context_dim;
    let b = layout.n_rallies as f64;

    let mut rows = layout.chunk_rows(rallies, &net.registry)?;
    drop_players(&mut rows, cfg.generic_player_rate, rng);
    let x = embed_batch(&net.embedder, &layout, rallies, rows)?;

    // Target contexts from each stroke's true remaining own actions.
    let (mu_s, sd_s) = net.encoder.suffix_params(&layout.side_actions(rallies)?, &layout.side_lengths())?;
    let grid = layout.sides.len() * layout.side_len;
    let sg = layout.side_gather()?;
    let mu_t = mu_s.reshape((grid, k))?.index_select(&sg, 0)?;
    let sd_t = sd_s.reshape((grid, k))?.index_select(&sg, 0)?;
    let z_t = (&mu_t + (&sd_t * normal_tensor(rng, (n, k))?)?)?;

    // Selected contexts from retrieved experiences.
    let refs: Vec<&[ExpRef]> = layout.strokes.iter().map(|&(bi, t)| exps[bi][t].as_slice()).collect();
    let centroid = experience_centroids(net, idx, &refs, rng)?;
    let z_ctx = net.selector.forward(&Tensor::cat(&[&centroid, &x], 1)?)?;
    let select = (z_ctx - mu_t.detach())?.sqr()?.sum_all()?.affine(0.5 / b, 0.0)?;

    let horizon = cfg.recon_horizon.min(layout.side_len);
    let (prev, recon_targets, recon_mask) = recon_inputs(&layout, rallies, horizon, cfg.recon_input_dropout, rng)?;
    let recon_out = net.decoder.forward(&z_t, &prev)?;
    let recon_terms = PredTerms::new(&recon_out, &ActionTargets::new(&recon_targets)?, s)?;
    let recon = (recon_terms.combined(s)? * &recon_mask)?.sum_all()?.affine(1.0 / b, 0.0)?;
    let latent = kl_standard_normal(&mu_t, &sd_t)?.sum_all()?.affine(1.0 / b, 0.0)?;

    let inputs = net.sde.inputs(&Tensor::cat(&[&x, &z_t], 1)?, &layout.step_column(cfg.time_scale)?)?;
    let h_target = net.sde.drift(Process::Target, &inputs)?;
    let h_player = net.sde.drift(Process::Player, &inputs)?;
    let sigma = net.sde.diffusion(&inputs)?;
    let dz = net.sde.increment(&h_target, &sigma, &normal_tensor(rng, (n, cfg.latent_dim()))?)?;
    let z = layout.cumulative()?.matmul(&dz)?;
    let sde = sde_divergence(&h_player, &h_target, &sigma)?.sum_all()?.affine(1.0 / b, 0.0)?;

    let terms = PredTerms::new(&net.heads.forward(&z)?, &ActionTargets::new(&layout.actions(rallies))?, s)?;
    let pred = terms.combined(s)?.sum_all()?.affine(1.0 / b, 0.0)?;

    let ctx = ((&latent + &recon)? + select.affine(cfg.select_weight, 0.0)?)?;
    let w = cfg.loss_weights;
    let total = ((pred.affine(w.pred, 0.0)? + ctx.affine(w.ctx, 0.0)?)? + sde.affine(w.sde, 0.0)?)?;

    let [type_ce, land, move_nll, reg] = terms.totals(b)?;
    let report = LossReport {
        total: scalar(&total)?,
        pred: scalar(&pred)?,
        type_ce,
        land,
        move_nll,
        reg,
        ctx: scalar(&ctx)?,
        latent: scalar(&latent)?,
        recon: scalar(&recon)?,
        select: scalar(&select)?,
        sde: scalar(&sde)?,
        ..LossReport::default()
    };
    Ok((total, report))
}

/// Trains RallyNet on `train` with experiences from `idx`, which must have
/// been built from `train`.
pub fn train(
    train: &Dataset,
    idx: &ExperienceIndex,
    cfg: &ModelConfig,
    log: Option<&mut dyn Write>,
) -> Result<(RallyNet, Vec<LossReport>)> {
    let hash = dataset_hash(train);
    if hash != idx.dataset_hash {
        return Err(Error::StaleArtifact { expected: hash, found: idx.dataset_hash.clone() });
    }
    let net = RallyNet::new(cfg, train.players())?;
    let table = experience_table(idx, &train.rallies)?;
    let reports = fit(&net.params, train.rallies.len(), &TrainOptions::from(cfg), log, |ids, _, step| {
        let rallies: Vec<&Rally> = ids.iter().map(|&i| &train.rallies[i]).collect();
        let exps: Vec<&[Vec<ExpRef>]> = ids.iter().map(|&i| table[i].as_slice()).collect();
        rallynet_batch_loss(&net, idx, &rallies, &exps, &mut step_rng(cfg.seed, step))
    })?;
    Ok((net, reports))
}
