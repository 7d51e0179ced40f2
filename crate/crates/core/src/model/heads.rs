//! Feature encoding of states and actions, and the action heads that map a
//! latent vector to a shot distribution and two 2-D Gaussian mixtures.

use candle_core::{Tensor, D};
use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::data::{Action, PlayerState, Position, ShotType, N_SHOT_TYPES};
use crate::error::{Error, Result};
use crate::nn::{self, bounded, log_softmax, Linear, ParamStore};

pub const STATE_FEATURES: usize = 11 + N_SHOT_TYPES;
pub const ACTION_FEATURES: usize = 4 + N_SHOT_TYPES;
/// Parameters per mixture component: two means, two stds, one weight logit.
pub const COMPONENT_PARAMS: usize = 5;

pub fn state_features(s: &PlayerState) -> [f64; STATE_FEATURES] {
    let mut f = [0.0; STATE_FEATURES];
    f[0] = s.score.own_score as f64 / 21.0;
    f[1] = s.score.opp_score as f64 / 21.0;
    f[2] = s.score.set_index as f64 / 3.0;
    let ps = [s.shuttle_pos, s.self_pos, s.opp_pos, s.opp_move];
    for (i, p) in ps.iter().enumerate() {
        f[3 + 2 * i] = p.x;
        f[4 + 2 * i] = p.y;
    }
    f[11 + s.incoming_shot.id()] = 1.0;
    f
}

pub fn action_features(a: &Action) -> [f64; ACTION_FEATURES] {
    let mut f = [0.0; ACTION_FEATURES];
    f[0] = a.landing.x;
    f[1] = a.landing.y;
    f[2] = a.move_to.x;
    f[3] = a.move_to.y;
    f[4 + a.shot.id()] = 1.0;
    f
}

/// Raw head outputs for `n` rows.
pub struct HeadOut {
    pub shot_logits: Tensor,
    pub land: Tensor,
    pub mv: Tensor,
}

impl HeadOut {
    pub fn index_select(&self, rows: &Tensor) -> Result<HeadOut> {
        Ok(HeadOut {
            shot_logits: self.shot_logits.index_select(rows, 0)?,
            land: self.land.index_select(rows, 0)?,
            mv: self.mv.index_select(rows, 0)?,
        })
    }
}

pub struct ActionHeads {
    shot: Linear,
    land: Linear,
    mv: Linear,
}

impl ActionHeads {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, n_mixtures: usize) -> Result<Self> {
        Ok(ActionHeads {
            shot: Linear::new(ps, &format!("{name}.shot"), d_in, N_SHOT_TYPES)?,
            land: Linear::new(ps, &format!("{name}.land"), d_in, COMPONENT_PARAMS * n_mixtures)?,
            mv: Linear::new(ps, &format!("{name}.move"), d_in, COMPONENT_PARAMS * n_mixtures)?,
        })
    }

    /// `z: [n, d_in]`.
    pub fn forward(&self, z: &Tensor) -> Result<HeadOut> {
        Ok(HeadOut { shot_logits: self.shot.forward(z)?, land: self.land.forward(z)?, mv: self.mv.forward(z)? })
    }
}

/// Mixture tensors `[n, g]` each: means, stds and log weights.
pub struct MixtureTensors {
    pub mu_x: Tensor,
    pub mu_y: Tensor,
    pub sd_x: Tensor,
    pub sd_y: Tensor,
    pub log_w: Tensor,
}

pub fn mixture_tensors(raw: &Tensor, g: usize, floor: f64, clamp: f64) -> Result<MixtureTensors> {
    Ok(MixtureTensors {
        mu_x: raw.narrow(1, 0, g)?,
        mu_y: raw.narrow(1, g, g)?,
        sd_x: bounded(&raw.narrow(1, 2 * g, g)?, floor, clamp)?,
        sd_y: bounded(&raw.narrow(1, 3 * g, g)?, floor, clamp)?,
        log_w: log_softmax(&raw.narrow(1, 4 * g, g)?, D::Minus1)?,
    })
}

/// A diagonal-covariance Gaussian mixture over court positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub means: Vec<Position>,
    pub stds: Vec<Position>,
    pub weights: Vec<f64>,
}

impl MixtureParams {
    /// Mean of the heaviest component.
    pub fn mode(&self) -> Position {
        let best = (0..self.weights.len()).fold(0, |b, i| if self.weights[i] > self.weights[b] { i } else { b });
        self.means[best]
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Position> {
        let g = WeightedIndex::new(&self.weights).map_err(|e| Error::Agent(format!("mixture weights: {e}")))?.sample(rng);
        let draw = |mu: f64, sd: f64, rng: &mut R| -> Result<f64> {
            Ok(Normal::new(mu, sd).map_err(|e| Error::Agent(e.to_string()))?.sample(rng))
        };
        Ok(Position { x: draw(self.means[g].x, self.stds[g].x, rng)?, y: draw(self.means[g].y, self.stds[g].y, rng)? })
    }
}

/// Per-row predicted distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPrediction {
    pub shot: [f64; N_SHOT_TYPES],
    pub landing: MixtureParams,
    #[serde(rename = "move")]
    pub move_to: MixtureParams,
}

impl StepPrediction {
    pub fn mode_shot(&self) -> ShotType {
        let best = (0..N_SHOT_TYPES).fold(0, |b, i| if self.shot[i] > self.shot[b] { i } else { b });
        ShotType::from_id(best).expect("shot id in range")
    }

    pub fn mode_action(&self) -> Action {
        Action { landing: self.landing.mode(), shot: self.mode_shot(), move_to: self.move_to.mode() }
    }

    pub fn sample_action<R: Rng>(&self, rng: &mut R) -> Result<Action> {
        let id = WeightedIndex::new(self.shot).map_err(|e| Error::Agent(format!("shot distribution: {e}")))?.sample(rng);
        Ok(Action {
            shot: ShotType::from_id(id).expect("shot id in range"),
            landing: self.landing.sample(rng)?,
            move_to: self.move_to.sample(rng)?,
        })
    }
}

fn mixtures(raw: &Tensor, g: usize, floor: f64, clamp: f64) -> Result<Vec<MixtureParams>> {
    let m = mixture_tensors(raw, g, floor, clamp)?;
    let rows = |t: &Tensor| t.to_vec2::<f64>();
    let (mx, my, sx, sy, lw) = (rows(&m.mu_x)?, rows(&m.mu_y)?, rows(&m.sd_x)?, rows(&m.sd_y)?, rows(&m.log_w)?);
    Ok((0..mx.len())
        .map(|i| MixtureParams {
            means: (0..g).map(|k| Position { x: mx[i][k], y: my[i][k] }).collect(),
            stds: (0..g).map(|k| Position { x: sx[i][k], y: sy[i][k] }).collect(),
            weights: lw[i].iter().map(|v| v.exp()).collect(),
        })
        .collect())
}

pub fn decode_head_out(out: &HeadOut, g: usize, floor: f64, clamp: f64) -> Result<Vec<StepPrediction>> {
    let shots = nn::softmax(&out.shot_logits, D::Minus1)?.to_vec2::<f64>()?;
    let land = mixtures(&out.land, g, floor, clamp)?;
    let mv = mixtures(&out.mv, g, floor, clamp)?;
    Ok(shots
        .into_iter()
        .zip(land)
        .zip(mv)
        .map(|((s, landing), move_to)| {
            let mut shot = [0.0; N_SHOT_TYPES];
            shot.copy_from_slice(&s);
            StepPrediction { shot, landing, move_to }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::device;

    #[test]
    fn projected_heads_satisfy_their_invariants() {
        let mut ps = ParamStore::new(4);
        let heads = ActionHeads::new(&mut ps, "h", 6, 5).unwrap();
        let z = Tensor::from_vec((0..60).map(|i| (i as f64 * 0.37).sin() * 40.0).collect(), (10, 6), &device()).unwrap();
        for p in decode_head_out(&heads.forward(&z).unwrap(), 5, 1e-4, 0.1).unwrap() {
            assert!((p.shot.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for m in [&p.landing, &p.move_to] {
                assert_eq!(m.means.len(), 5);
                assert!((m.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(m.stds.iter().all(|s| s.x > 0.0 && s.x <= 0.1 && s.y > 0.0 && s.y <= 0.1));
            }
        }
    }

    #[test]
    fn sampled_landings_stay_near_a_component() {
        let mix = MixtureParams {
            means: vec![Position { x: 0.2, y: 0.5 }, Position { x: -0.4, y: 0.8 }],
            stds: vec![Position { x: 0.05, y: 0.1 }, Position { x: 0.1, y: 0.02 }],
            weights: vec![0.3, 0.7],
        };
        let mut rng = crate::seed::rng(0, &[]);
        let mut inside = 0;
        for _ in 0..10_000 {
            let p = mix.sample(&mut rng).unwrap();
            let near = mix.means.iter().zip(&mix.stds).any(|(m, s)| {
                (p.x - m.x).abs() <= 4.0 * s.x && (p.y - m.y).abs() <= 4.0 * s.y
            });
            inside += near as usize;
        }
        assert!(inside >= 9_990, "{inside}");
        assert_eq!(mix.mode(), Position { x: -0.4, y: 0.8 });
    }
}
