use rand::Rng;

use super::{Agent, Decision, DecisionMeta, TurnView};
use crate::data::{Action, Position, ShotType, N_SHOT_TYPES};
use crate::error::Result;
use crate::seed;

/// Uniform shot type, uniform landing and move over the whole court.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    seed: u64,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        RandomAgent { seed }
    }
}

impl Agent for RandomAgent {
    fn name(&self) -> &str {
        "random"
    }

    fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
        let mut rng = seed::rng(self.seed, &[view.rally_seed, view.step as u64]);
        let mut pos = || Position { x: rng.gen_range(-1.0..=1.0), y: rng.gen_range(-1.0..=1.0) };
        let landing = pos();
        let move_to = pos();
        let shot = ShotType::ALL[rng.gen_range(0..N_SHOT_TYPES)];
        Ok(Decision {
            action: Action { landing, shot, move_to },
            shot_probs: [1.0 / N_SHOT_TYPES as f64; N_SHOT_TYPES],
            meta: DecisionMeta::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::state;

    fn act(agent: &mut RandomAgent, i: usize) -> Action {
        let s = state((0.0, -0.5), ShotType::Clear, (0.0, -0.5), (0.0, 0.5));
        let view = TurnView { history: &[], state: &s, player: "A", step: 1 + i % 50, rally_seed: (i / 50) as u64 };
        agent.act(&view).unwrap().action
    }

    #[test]
    fn shot_frequencies_are_uniform() {
        let mut agent = RandomAgent::new(5);
        let mut counts = [0usize; N_SHOT_TYPES];
        for i in 0..12_000 {
            let a = act(&mut agent, i);
            counts[a.shot.id()] += 1;
            assert!(a.landing.x.abs() <= 1.0 && a.landing.y.abs() <= 1.0);
            assert!(a.move_to.x.abs() <= 1.0 && a.move_to.y.abs() <= 1.0);
        }
        for c in counts {
            assert!((c as f64 / 12_000.0 - 1.0 / 12.0).abs() <= 0.02, "{counts:?}");
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let (mut a, mut b) = (RandomAgent::new(1), RandomAgent::new(1));
        for i in 0..20 {
            assert_eq!(act(&mut a, i), act(&mut b, i));
        }
    }
}
