//! Training objectives. Each function returns one value per row so callers
//! choose how to aggregate.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use super::heads::{mixture_tensors, HeadOut};
use crate::data::Action;
use crate::error::{Error, Result};
use crate::nn::{self, device, logsumexp};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Keeps the pairwise-distance gradient finite when two means coincide.
const DIST_EPS: f64 = 1e-12;

/// True actions as tensors.
pub struct ActionTargets {
    pub shots: Tensor,
    pub landing: Tensor,
    pub moves: Tensor,
    /// 0 for missed returns, whose landing and move record where the shuttle
    /// fell rather than a choice, 1 otherwise.
    pub placed: Tensor,
}

impl ActionTargets {
    pub fn new(actions: &[Action]) -> Result<Self> {
        let n = actions.len();
        let shots: Vec<u32> = actions.iter().map(|a| a.shot.id() as u32).collect();
        let land: Vec<f64> = actions.iter().flat_map(|a| [a.landing.x, a.landing.y]).collect();
        let mv: Vec<f64> = actions.iter().flat_map(|a| [a.move_to.x, a.move_to.y]).collect();
        let placed: Vec<f64> = actions.iter().map(|a| if a.is_miss() { 0.0 } else { 1.0 }).collect();
        Ok(ActionTargets {
            placed: Tensor::from_vec(placed, n, &device())?,
            shots: Tensor::from_vec(shots, n, &device())?,
            landing: Tensor::from_vec(land, (n, 2), &device())?,
            moves: Tensor::from_vec(mv, (n, 2), &device())?,
        })
    }
}

/// `−log p(true shot)` per row.
pub fn shot_ce(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let lp = nn::log_softmax(logits, D::Minus1)?;
    Ok(lp.gather(&targets.unsqueeze(1)?, 1)?.squeeze(1)?.neg()?)
}

/// `−log Σ_g w_g N(target; μ_g, diag(σ_g²))` per row.
pub fn position_nll(raw: &Tensor, target: &Tensor, g: usize, floor: f64, clamp: f64) -> Result<Tensor> {
    let m = mixture_tensors(raw, g, floor, clamp)?;
    let zx = m.mu_x.broadcast_sub(&target.narrow(1, 0, 1)?)?.div(&m.sd_x)?;
    let zy = m.mu_y.broadcast_sub(&target.narrow(1, 1, 1)?)?.div(&m.sd_y)?;
    let log_n = ((zx.sqr()? + zy.sqr()?)?.affine(-0.5, -LN_2PI)? - (m.sd_x.log()? + m.sd_y.log()?)?)?;
    Ok(logsumexp(&(m.log_w + log_n)?, D::Minus1)?.squeeze(1)?.neg()?)
}

/// Mean over unordered component pairs of `−‖μ_i − μ_j‖` for one head.
fn head_separation(raw: &Tensor, g: usize) -> Result<Tensor> {
    let n = raw.dims()[0];
    let pairs: Vec<(u32, u32)> = (0..g as u32).flat_map(|i| (i + 1..g as u32).map(move |j| (i, j))).collect();
    if pairs.is_empty() {
        return Ok(Tensor::zeros(n, nn::DTYPE, &device())?);
    }
    let idx_i = Tensor::from_vec(pairs.iter().map(|p| p.0).collect::<Vec<_>>(), pairs.len(), &device())?;
    let idx_j = Tensor::from_vec(pairs.iter().map(|p| p.1).collect::<Vec<_>>(), pairs.len(), &device())?;
    let mx = raw.narrow(1, 0, g)?.contiguous()?;
    let my = raw.narrow(1, g, g)?.contiguous()?;
    let dx = (mx.index_select(&idx_i, 1)? - mx.index_select(&idx_j, 1)?)?;
    let dy = (my.index_select(&idx_i, 1)? - my.index_select(&idx_j, 1)?)?;
    let dist = ((dx.sqr()? + dy.sqr()?)? + DIST_EPS)?.sqrt()?.affine(1.0, -DIST_EPS.sqrt())?;
    Ok(dist.mean(1)?.neg()?)
}

/// Separation regularizer averaged over the landing and move heads.
pub fn reg_loss(land: &Tensor, mv: &Tensor, g: usize) -> Result<Tensor> {
    Ok((head_separation(land, g)? + head_separation(mv, g)?)?.affine(0.5, 0.0)?)
}

/// `D_KL(N(μ, σ²) ‖ N(0, 1))` summed over the last dimension, per row.
pub fn kl_standard_normal(mu: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    let min = nn::scalar(&sigma.flatten_all()?.min(0)?)?;
    if !(min > 0.0) {
        return Err(Error::InvalidEncoderOutput(format!("non-positive std {min}")));
    }
    let t = ((mu.sqr()? + sigma.sqr()?)? - sigma.log()?.affine(2.0, 1.0)?)?;
    Ok(t.sum(D::Minus1)?.affine(0.5, 0.0)?)
}

/// `½ Σ ((h_player − h_target) / σ)²` over the last dimension, per row.
pub fn sde_divergence(h_player: &Tensor, h_target: &Tensor, sigma: &Tensor) -> Result<Tensor> {
    Ok((h_player - h_target)?.div(sigma)?.sqr()?.sum(D::Minus1)?.affine(0.5, 0.0)?)
}

/// Per-row prediction terms.
pub struct PredTerms {
    pub type_ce: Tensor,
    pub land: Tensor,
    pub mv: Tensor,
    pub reg: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct PredScales {
    pub n_mixtures: usize,
    pub std_floor: f64,
    pub std_clamp: f64,
    pub reg_weight: f64,
    pub nll_scale: f64,
}

impl PredTerms {
    pub fn new(out: &HeadOut, t: &ActionTargets, s: PredScales) -> Result<Self> {
        let g = s.n_mixtures;
        Ok(PredTerms {
            type_ce: shot_ce(&out.shot_logits, &t.shots)?,
            land: (position_nll(&out.land, &t.landing, g, s.std_floor, s.std_clamp)? * &t.placed)?,
            mv: (position_nll(&out.mv, &t.moves, g, s.std_floor, s.std_clamp)? * &t.placed)?,
            reg: reg_loss(&out.land, &out.mv, g)?,
        })
    }

    /// Per-row `type + (1 − α)·scale·(land + move) + α·scale·reg`.
    pub fn combined(&self, s: PredScales) -> Result<Tensor> {
        let a = s.reg_weight;
        let pos = (&self.land + &self.mv)?.affine((1.0 - a) * s.nll_scale, 0.0)?;
        Ok(((&self.type_ce + pos)? + self.reg.affine(a * s.nll_scale, 0.0)?)?)
    }

    /// Sums of each term over rows, divided by `denom`.
    pub fn totals(&self, denom: f64) -> Result<[f64; 4]> {
        let s = |t: &Tensor| -> Result<f64> { Ok(nn::scalar(&t.sum_all()?)? / denom) };
        Ok([s(&self.type_ce)?, s(&self.land)?, s(&self.mv)?, s(&self.reg)?])
    }
}

/// One logged training step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub epoch: usize,
    pub total: f64,
    pub pred: f64,
    pub type_ce: f64,
    pub land: f64,
    #[serde(rename = "move")]
    pub move_nll: f64,
    pub reg: f64,
    pub ctx: f64,
    pub latent: f64,
    pub recon: f64,
    pub select: f64,
    pub sde: f64,
    /// Option-posterior entropy, for hierarchical policies.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub option_entropy: Option<f64>,
}
