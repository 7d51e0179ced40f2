//! The RallyNet network: context encoder and decoder, selector, the two latent
//! drift processes with their shared diffusion, and the action heads.

use candle_core::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::embed::{PlayerRegistry, StateEmbedder};
use super::heads::{action_features, decode_head_out, ActionHeads, HeadOut, StepPrediction, ACTION_FEATURES};
use crate::data::{Action, PlayerState};
use crate::error::{Error, Result};
use crate::nn::{bounded, device, softplus, GruCell, Linear, Mlp, ParamStore};
use crate::seed;

/// An intent vector, with the encoder's Gaussian when it came from one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Context {
    pub z: Vec<f64>,
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
}

impl Context {
    pub fn plain(z: Vec<f64>) -> Self {
        Context { z, mu: None, sigma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPosition {
    pub z: Vec<f64>,
    /// Strokes integrated so far.
    pub step: usize,
}

impl LatentPosition {
    pub fn origin(dim: usize) -> Self {
        LatentPosition { z: vec![0.0; dim], step: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Process {
    Target,
    Player,
}

/// `z_prev + h·dt + σ·√dt·ε`, elementwise.
pub fn euler_maruyama(prev: &[f64], h: &[f64], sigma: &[f64], dt: f64, eps: &[f64]) -> Result<Vec<f64>> {
    let n = prev.len();
    if h.len() != n || sigma.len() != n || eps.len() != n {
        return Err(Error::Shape(format!("latent of {n} with drift {}, diffusion {}, noise {}", h.len(), sigma.len(), eps.len())));
    }
    let s = dt.sqrt();
    Ok((0..n).map(|i| prev[i] + h[i] * dt + sigma[i] * s * eps[i]).collect())
}

/// Standard normal draws for the latent step at `step` of a rally.
pub fn sde_noise(noise_seed: u64, step: usize, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(noise_seed, &[step as u64]);
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub struct ContextEncoder {
    gru: GruCell,
    mu: Linear,
    sd: Linear,
    floor: f64,
}

impl ContextEncoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(ContextEncoder {
            gru: GruCell::new(ps, "ctx.enc.gru", ACTION_FEATURES, cfg.context_hidden)?,
            mu: Linear::new(ps, "ctx.enc.mu", cfg.context_hidden, cfg.context_dim)?,
            sd: Linear::new(ps, "ctx.enc.sd", cfg.context_hidden, cfg.context_dim)?,
            floor: cfg.std_floor,
        })
    }

    /// Gaussian of every suffix of padded action sequences `[n, len, A]`:
    /// position `i` summarizes actions `i..lengths[row]`.
    pub fn suffix_params(&self, actions: &Tensor, lengths: &[usize]) -> Result<(Tensor, Tensor)> {
        let h = self.gru.suffix_states(actions, lengths, None)?;
        let mu = self.mu.forward(&h)?;
        let sigma = (softplus(&self.sd.forward(&h)?)? + self.floor)?;
        Ok((mu, sigma))
    }
}

pub struct ContextDecoder {
    init: Linear,
    gru: GruCell,
    heads: ActionHeads,
}

impl ContextDecoder {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        Ok(ContextDecoder {
            init: Linear::new(ps, "ctx.dec.init", cfg.context_dim, cfg.context_hidden)?,
            gru: GruCell::new(ps, "ctx.dec.gru", ACTION_FEATURES, cfg.context_hidden)?,
            heads: ActionHeads::new(ps, "ctx.dec.head", cfg.context_hidden, cfg.n_mixtures)?,
        })
    }

    /// Teacher-forced outputs for `z: [n, K]` and previous actions
    /// `[n, horizon, A]`; rows are ordered `(row, step)`.
    pub fn forward(&self, z: &Tensor, prev: &Tensor) -> Result<HeadOut> {
        let (n, horizon, _) = prev.dims3()?;
        let h0 = self.init.forward(z)?.tanh()?;
        let hs = self.gru.prefix_states(prev, &h0)?;
        self.heads.forward(&hs.reshape((n * horizon, self.gru.hidden()))?)
    }
}

pub struct LatentSde {
    h_target: Mlp,
    h_player: Mlp,
    sigma: Mlp,
    floor: f64,
    bound: f64,
    pub dt: f64,
    pub time_scale: f64,
}

impl LatentSde {
    fn new(ps: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.latent_dim();
        Ok(LatentSde {
            h_target: Mlp::new(ps, "sde.target", d + 1, d, d)?,
            h_player: Mlp::new(ps, "sde.player", d + 1, d, d)?,
            sigma: Mlp::new(ps, "sde.sigma", d + 1, d, d)?,
            floor: cfg.std_floor,
            bound: cfg.sigma_bound,
            dt: cfg.sde_dt,
            time_scale: cfg.time_scale,
        })
    }

    /// Appends the time feature to latent inputs `[n, d]`; `t: [n, 1]`.
    pub fn inputs(&self, z_prime: &Tensor, t: &Tensor) -> Result<Tensor> {
        Ok(Tensor::cat(&[z_prime, t], 1)?)
    }

    pub fn drift(&self, process: Process, inputs: &Tensor) -> Result<Tensor> {
        match process {
            Process::Target => self.h_target.forward(inputs),
            Process::Player => self.h_player.forward(inputs),
        }
    }

    pub fn diffusion(&self, inputs: &Tensor) -> Result<Tensor> {
        bounded(&self.sigma.forward(inputs)?, self.floor, self.bound)
    }

    /// `h·dt + σ·√dt·ε` for each row.
    pub fn increment(&self, h: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
        Ok((h.affine(self.dt, 0.0)? + (sigma * eps)?.affine(self.dt.sqrt(), 0.0)?)?)
    }
}

pub struct RallyNet {
    pub cfg: ModelConfig,
    pub registry: PlayerRegistry,
    pub params: ParamStore,
    pub embedder: StateEmbedder,
    pub encoder: ContextEncoder,
    pub decoder: ContextDecoder,
    pub selector: Linear,
    pub sde: LatentSde,
    pub heads: ActionHeads,
}

fn row(v: &[f64]) -> Result<Tensor> {
    Ok(Tensor::from_slice(v, (1, v.len()), &device())?)
}

fn first_row(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.get(0)?.to_vec1::<f64>()?)
}

impl RallyNet {
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
        let encoder = ContextEncoder::new(&mut ps, cfg)?;
        let decoder = ContextDecoder::new(&mut ps, cfg)?;
        let selector = Linear::new(&mut ps, "ctx.select", cfg.context_dim + cfg.embed_dim(), cfg.context_dim)?;
        let sde = LatentSde::new(&mut ps, cfg)?;
        let heads = ActionHeads::new(&mut ps, "head", cfg.latent_dim(), cfg.n_mixtures)?;
        Ok(RallyNet { cfg: cfg.clone(), registry, params: ps, embedder, encoder, decoder, selector, sde, heads })
    }

    pub fn embed_state(&self, history: &[PlayerState], current: &PlayerState, player_id: &str) -> Result<Vec<f64>> {
        let r = self.registry.row(player_id)?;
        Ok(self.embedder.embed_one(history, current, r)?.to_vec1::<f64>()?)
    }

    /// Encodes one action sequence; samples `μ + σ·ε` when `rng` is given.
    pub fn encode_context<R: Rng>(&self, seq: &[Action], rng: Option<&mut R>) -> Result<Context> {
        if seq.is_empty() {
            return Err(Error::EmptyExperience);
        }
        let feats: Vec<f64> = seq.iter().flat_map(|a| action_features(a)).collect();
        let x = Tensor::from_vec(feats, (1, seq.len(), ACTION_FEATURES), &device())?;
        let (mu, sigma) = self.encoder.suffix_params(&x, &[seq.len()])?;
        let mu = mu.get(0)?.get(0)?.to_vec1::<f64>()?;
        let sigma = sigma.get(0)?.get(0)?.to_vec1::<f64>()?;
        let z = match rng {
            Some(rng) => mu.iter().zip(&sigma).map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal)).collect(),
            None => mu.clone(),
        };
        Ok(Context { z, mu: Some(mu), sigma: Some(sigma) })
    }

    /// Target context of the true remaining sequence, sampled.
    pub fn target_context<R: Rng>(&self, target_seq: &[Action], rng: &mut R) -> Result<Context> {
        self.encode_context(target_seq, Some(rng))
    }

    pub fn select_context(&self, centroid: &Context, x: &[f64]) -> Result<Context> {
        let (k, e) = (self.cfg.context_dim, self.cfg.embed_dim());
        if centroid.z.len() != k || x.len() != e {
            return Err(Error::Shape(format!("selector expects {k} + {e}, got {} + {}", centroid.z.len(), x.len())));
        }
        let input = Tensor::cat(&[&row(&centroid.z)?, &row(x)?], 1)?;
        Ok(Context::plain(first_row(&self.selector.forward(&input)?)?))
    }

    /// Autoregressive decoding, feeding back each step's modal action.
    pub fn decode_context(&self, z: &Context, horizon: usize) -> Result<Vec<StepPrediction>> {
        if horizon < 1 {
            return Err(Error::InvalidArgument("decoding horizon must be at least 1".into()));
        }
        if z.z.len() != self.cfg.context_dim {
            return Err(Error::Shape(format!("context of {} vs {}", z.z.len(), self.cfg.context_dim)));
        }
        let g = self.cfg.n_mixtures;
        let mut h = self.decoder.init.forward(&row(&z.z)?)?.tanh()?;
        let mut prev = Tensor::zeros((1, ACTION_FEATURES), crate::nn::DTYPE, &device())?;
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            h = self.decoder.gru.step(&prev, &h)?;
            let pred = decode_head_out(&self.decoder.heads.forward(&h)?, g, self.cfg.std_floor, self.cfg.std_clamp)?
                .remove(0);
            prev = row(&action_features(&pred.mode_action()))?;
            out.push(pred);
        }
        Ok(out)
    }

    /// One latent step of `process` from `prev` with inputs `z'` at 1-based `step`.
    pub fn sde_step(
        &self,
        prev: &LatentPosition,
        z_prime: &[f64],
        process: Process,
        step: usize,
        noise_seed: u64,
    ) -> Result<LatentPosition> {
        let d = self.cfg.latent_dim();
        if prev.z.len() != d || z_prime.len() != d {
            return Err(Error::Shape(format!("latent dim {d}, got {} and {}", prev.z.len(), z_prime.len())));
        }
        let t = Tensor::from_vec(vec![step as f64 / self.sde.time_scale], (1, 1), &device())?;
        let inp = self.sde.inputs(&row(z_prime)?, &t)?;
        let h = first_row(&self.sde.drift(process, &inp)?)?;
        let sigma = first_row(&self.sde.diffusion(&inp)?)?;
        let z = euler_maruyama(&prev.z, &h, &sigma, self.sde.dt, &sde_noise(noise_seed, step, d))?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Agent(format!("non-finite latent at step {step}")));
        }
        Ok(LatentPosition { z, step: prev.step + 1 })
    }

    pub fn project_action(&self, z: &LatentPosition) -> Result<StepPrediction> {
        let out = self.heads.forward(&row(&z.z)?)?;
        Ok(decode_head_out(&out, self.cfg.n_mixtures, self.cfg.std_floor, self.cfg.std_clamp)?.remove(0))
    }
}

/// Elementwise mean of the contexts' vectors.
pub fn context_centroid(contexts: &[Context]) -> Result<Context> {
    let first = contexts.first().ok_or(Error::EmptyInput("no contexts to average"))?;
    let k = first.z.len();
    if contexts.iter().any(|c| c.z.len() != k) {
        return Err(Error::Shape("contexts of unequal dimension".into()));
    }
    let n = contexts.len() as f64;
    Ok(Context::plain((0..k).map(|i| contexts.iter().map(|c| c.z[i]).sum::<f64>() / n).collect()))
}
