//! Fixtures shared by the integration tests and the acceptance binary.
#![allow(dead_code)]

use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

use rallynet::data::synth::{generate_synthetic_dataset, SynthConfig};
use rallynet::data::{Dataset, Rally};
use rallynet::experience::{build_index, ExperienceIndex};
use rallynet::model::train::{experience_table, rallynet_batch_loss};
use rallynet::model::{euler_maruyama, sde_noise, LossWeights, ModelConfig, RallyNet};
use rallynet::nn::device;
use rallynet::seed;

/// Smallest configuration that exercises every block.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        player_embed_dim: 3,
        state_embed_dim: 4,
        encoder_heads: 2,
        context_dim: 3,
        context_hidden: 4,
        n_mixtures: 2,
        recon_horizon: 3,
        batch_size: 8,
        epochs: 1,
        seed,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Pred,
    Ctx,
    Sde,
}

impl Term {
    pub fn weights(self) -> LossWeights {
        match self {
            Term::Pred => LossWeights { pred: 1.0, ctx: 0.0, sde: 0.0 },
            Term::Ctx => LossWeights { pred: 0.0, ctx: 1.0, sde: 0.0 },
            Term::Sde => LossWeights { pred: 0.0, ctx: 0.0, sde: 1.0 },
        }
    }
}

/// A model with its training rallies, index and per-stroke experiences.
pub struct Fixture {
    pub data: Dataset,
    pub idx: ExperienceIndex,
    pub net: RallyNet,
}

impl Fixture {
    pub fn new(cfg: ModelConfig, rallies: usize, data_seed: u64) -> Fixture {
        let data = generate_synthetic_dataset(&SynthConfig::two_mode(rallies, 4.0), data_seed).unwrap();
        let idx = build_index(&data, 5).unwrap();
        let net = RallyNet::new(&cfg, data.players()).unwrap();
        Fixture { data, idx, net }
    }

    /// The batch loss under a fixed noise stream, so repeated calls are one function.
    pub fn loss(&self, noise: u64) -> Tensor {
        let rallies: Vec<&Rally> = self.data.rallies.iter().collect();
        let table = experience_table(&self.idx, &self.data.rallies).unwrap();
        let exps: Vec<&[_]> = table.iter().map(|t| t.as_slice()).collect();
        rallynet_batch_loss(&self.net, &self.idx, &rallies, &exps, &mut seed::rng(noise, &[])).unwrap().0
    }

    fn value(&self, noise: u64) -> f64 {
        self.loss(noise).to_scalar::<f64>().unwrap()
    }

    fn element(&self, name: &str) -> Vec<f64> {
        self.net.params.var(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1().unwrap()
    }

    fn set_element(&self, name: &str, i: usize, v: f64) {
        let var = self.net.params.var(name).unwrap();
        let mut data = self.element(name);
        data[i] = v;
        var.set(&Tensor::from_vec(data, var.dims(), &device()).unwrap()).unwrap();
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` seen.
    pub worst: f64,
    pub checked: usize,
}

/// Compares backpropagated gradients of one loss term with central
/// differences on the largest-gradient element of up to eight parameters.
/// The selection term regresses onto a stopped target, so it is switched off.
pub fn gradient_check(term: Term, instance: u64) -> GradCheck {
    let cfg = ModelConfig {
        loss_weights: term.weights(),
        generic_player_rate: 0.0,
        select_weight: 0.0,
        ..tiny_config(instance)
    };
    let fx = Fixture::new(cfg, 3, 100 + instance);
    let noise = 7 + instance;
    let grads = fx.loss(noise).backward().unwrap();

    let mut candidates: Vec<(String, usize, f64)> = Vec::new();
    for name in fx.net.params.names() {
        let var = fx.net.params.var(name).unwrap();
        let Some(g) = grads.get(var.as_tensor()) else { continue };
        let g: Vec<f64> = g.flatten_all().unwrap().to_vec1().unwrap();
        let (i, gi) = g.iter().enumerate().fold((0, 0.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best });
        if gi > 1e-6 {
            candidates.push((name.to_string(), i, g[i]));
        }
    }
    candidates.shuffle(&mut seed::rng(instance, &[1]));
    candidates.truncate(8);

    let mut worst: f64 = 0.0;
    for (name, i, analytic) in &candidates {
        let x = fx.element(name)[*i];
        let h = 1e-6 * x.abs().max(1.0);
        fx.set_element(name, *i, x + h);
        let up = fx.value(noise);
        fx.set_element(name, *i, x - h);
        let down = fx.value(noise);
        fx.set_element(name, *i, x);
        let numeric = (up - down) / (2.0 * h);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs());
        worst = worst.max(rel);
    }
    GradCheck { worst, checked: candidates.len() }
}

/// Increment statistics of the Euler step with zero drift and unit diffusion:
/// `(max |mean|, min variance, max variance)` over coordinates.
pub fn unit_diffusion_stats(steps: usize, dim: usize, noise_seed: u64) -> (f64, f64, f64) {
    let zero = vec![0.0; dim];
    let one = vec![1.0; dim];
    let mut sums = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut z = zero.clone();
    for t in 1..=steps {
        let next = euler_maruyama(&z, &zero, &one, 1.0, &sde_noise(noise_seed, t, dim)).unwrap();
        for k in 0..dim {
            let d = next[k] - z[k];
            sums[k] += d;
            sq[k] += d * d;
        }
        z = next;
    }
    let n = steps as f64;
    let means: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let vars: Vec<f64> = (0..dim).map(|k| (sq[k] - n * means[k] * means[k]) / (n - 1.0)).collect();
    (
        means.iter().fold(0.0, |m, v| m.max(v.abs())),
        vars.iter().copied().fold(f64::INFINITY, f64::min),
        vars.iter().copied().fold(0.0, f64::max),
    )
}

/// Random finite number in `[-a, a]`.
pub fn uniform(rng: &mut impl Rng, a: f64) -> f64 {
    rng.gen_range(-a..=a)
}
