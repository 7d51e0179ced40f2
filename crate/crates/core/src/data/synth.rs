//! Synthetic expert rallies for desk-scale verification.
//!
//! The expert plays one of several modes per rally, chosen from the starter's
//! initial lateral position. Each mode fixes a shot cycle, a landing depth and
//! a recovery base; landings go to the side away from the opponent. Rallies
//! end when a per-player error hazard fires, which gives a geometric length
//! distribution.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Action, CourtRanges, Dataset, Frame, PlayerState, Position, Rally, RallySource, ScoreInfo, ShotType, Stroke};
use crate::engine::transition;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    CantReach,
    Net,
    Out,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    /// Shot of the opening stroke; `None` plays the first cycle entry.
    pub serve: Option<ShotType>,
    /// Shots cycled through by each player's successive strokes.
    pub cycle: Vec<ShotType>,
    pub landing_y: f64,
    /// Fixed landing x; `None` lands `away_x` to the side away from the opponent.
    pub landing_x: Option<f64>,
    pub away_x: f64,
    /// Recovery position after each stroke, in the hitter's frame.
    pub base: Position,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_rallies: usize,
    pub players: Vec<String>,
    /// Per-player error probability per stroke, aligned with `players`.
    pub hazards: Vec<f64>,
    /// First stroke at which an error may occur; earlier strokes always return.
    #[serde(default = "one")]
    pub warmup: usize,
    pub modes: Vec<ModeSpec>,
    pub error_kinds: Vec<ErrorKind>,
    pub landing_noise: f64,
    pub move_noise: f64,
    /// When set, `players[0]` serves against `players[1]` in every rally.
    pub fixed_pair: bool,
    pub max_len: usize,
}

fn one() -> usize {
    1
}

/// Warm-up of the two-mode expert. Lengths are `warmup - 1` plus a geometric
/// tail, far less dispersed than a pure geometric with the same mean.
const TWO_MODE_WARMUP: usize = 3;

impl SynthConfig {
    /// Two-mode expert: a net game and a back-court game, with mean rally
    /// length `mean_length` (before the `max_len` cap).
    pub fn two_mode(n_rallies: usize, mean_length: f64) -> SynthConfig {
        let players: Vec<String> = (1..=4).map(|i| format!("P{i}")).collect();
        let warmup = if mean_length >= TWO_MODE_WARMUP as f64 { TWO_MODE_WARMUP } else { 1 };
        let tail = mean_length - (warmup - 1) as f64;
        SynthConfig {
            n_rallies,
            hazards: vec![(1.0 / tail).min(1.0); players.len()],
            warmup,
            players,
            modes: vec![
                ModeSpec {
                    serve: Some(ShotType::ShortService),
                    cycle: vec![ShotType::NetShot, ShotType::PushRush, ShotType::Drop],
                    landing_y: 0.35,
                    landing_x: None,
                    away_x: 0.4,
                    base: Position { x: 0.0, y: -0.3 },
                },
                ModeSpec {
                    serve: Some(ShotType::LongService),
                    cycle: vec![ShotType::Clear, ShotType::Smash, ShotType::Lob],
                    landing_y: 0.8,
                    landing_x: None,
                    away_x: 0.4,
                    base: Position { x: 0.0, y: -0.6 },
                },
            ],
            error_kinds: vec![ErrorKind::CantReach, ErrorKind::Net, ErrorKind::Out],
            landing_noise: 0.03,
            move_noise: 0.03,
            fixed_pair: false,
            max_len: crate::engine::MAX_LEN,
        }
    }

    /// Two fixed players, the first always serving, with hazards `(a, b)` and
    /// only missed returns as errors.
    pub fn matchup(n_rallies: usize, a: f64, b: f64) -> SynthConfig {
        SynthConfig {
            players: vec!["X".into(), "Y".into()],
            hazards: vec![a, b],
            warmup: 1,
            error_kinds: vec![ErrorKind::CantReach],
            fixed_pair: true,
            ..SynthConfig::two_mode(n_rallies, 6.0)
        }
    }

    /// Every stroke is `shot` landing at `landing`.
    pub fn constant(n_rallies: usize, shot: ShotType, landing: Position, mean_length: f64) -> SynthConfig {
        SynthConfig {
            modes: vec![ModeSpec {
                serve: None,
                cycle: vec![shot],
                landing_y: landing.y,
                landing_x: Some(landing.x),
                away_x: 0.0,
                base: Position { x: 0.0, y: -0.5 },
            }],
            landing_noise: 0.0,
            ..SynthConfig::two_mode(n_rallies, mean_length)
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if self.modes.is_empty() {
            return bad("no expert modes");
        }
        if self.modes.iter().any(|m| m.cycle.is_empty()) {
            return bad("a mode has zero shot types");
        }
        if self.players.len() < 2 {
            return bad("need at least two players");
        }
        if self.hazards.len() != self.players.len() {
            return bad("one hazard per player required");
        }
        if self.hazards.iter().any(|h| !(*h > 0.0 && *h <= 1.0)) {
            return bad("hazards must lie in (0, 1]");
        }
        if self.warmup == 0 {
            return bad("warmup counts strokes from 1");
        }
        if self.error_kinds.is_empty() {
            return bad("no error kinds");
        }
        if self.max_len == 0 {
            return bad("max_len must be positive");
        }
        if !(self.landing_noise >= 0.0 && self.move_noise >= 0.0) {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

/// A generated dataset with the expert mode played in each rally.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub modes: Vec<usize>,
}

pub fn generate_synthetic_dataset(spec: &SynthConfig, seed: u64) -> Result<Dataset> {
    Ok(generate_labeled(spec, seed)?.dataset)
}

pub fn generate_labeled(spec: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rallies = Vec::with_capacity(spec.n_rallies);
    let mut modes = Vec::with_capacity(spec.n_rallies);
    for i in 0..spec.n_rallies {
        let (rally, mode) = generate_rally(spec, format!("syn-{i:05}"), &mut rng)?;
        rallies.push(rally);
        modes.push(mode);
    }
    let dataset = Dataset::from_rallies(rallies, CourtRanges::NORMALIZED, true, Frame::Hitter);
    Ok(SynthOutput { dataset, modes })
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("finite std").sample(rng)
    }
}

fn generate_rally(spec: &SynthConfig, rally_id: String, rng: &mut ChaCha8Rng) -> Result<(Rally, usize)> {
    let (ia, ib) = if spec.fixed_pair {
        (0, 1)
    } else {
        let a = rng.gen_range(0..spec.players.len());
        let b = (a + rng.gen_range(1..spec.players.len())) % spec.players.len();
        (a, b)
    };
    let starter_x = rng.gen_range(-0.5..0.5);
    let receiver_x = rng.gen_range(-0.5..0.5);
    let n_modes = spec.modes.len();
    let mode = (((starter_x + 1.0) / 2.0 * n_modes as f64) as usize).min(n_modes - 1);
    let mode_spec = &spec.modes[mode];

    let self_pos = Position { x: starter_x, y: -0.45 };
    let mut state = PlayerState {
        score: ScoreInfo { own_score: rng.gen_range(0..21), opp_score: rng.gen_range(0..21), set_index: rng.gen_range(1..=3) },
        shuttle_pos: self_pos,
        incoming_shot: ShotType::Receiving,
        self_pos,
        opp_pos: Position { x: receiver_x, y: 0.45 },
        opp_move: Position::ORIGIN,
    };
    // Opponent's own position in its own frame.
    let mut opponent_pos = state.opp_pos.mirrored();

    let mut strokes = Vec::new();
    for step in 1..=spec.max_len {
        let (idx, name) = if step % 2 == 1 { (ia, &spec.players[ia]) } else { (ib, &spec.players[ib]) };
        let k = (step - 1) / 2;
        let shot = match (step, mode_spec.serve) {
            (1, Some(serve)) => serve,
            _ => mode_spec.cycle[k % mode_spec.cycle.len()],
        };
        let landing_x = match mode_spec.landing_x {
            Some(x) => x,
            None => {
                let side = if state.opp_pos.x >= 0.0 { -1.0 } else { 1.0 };
                (side * mode_spec.away_x + gaussian(rng, spec.landing_noise)).clamp(-0.6, 0.6)
            }
        };
        let landing_y = (mode_spec.landing_y + gaussian(rng, spec.landing_noise)).clamp(0.05, 0.95);
        let move_to = Position {
            x: (mode_spec.base.x + gaussian(rng, spec.move_noise)).clamp(-0.9, 0.9),
            y: (mode_spec.base.y + gaussian(rng, spec.move_noise)).clamp(-0.95, -0.05),
        };
        let mut action = Action { landing: Position { x: landing_x, y: landing_y }, shot, move_to };

        let fails = step == spec.max_len || (step >= spec.warmup && rng.gen::<f64>() < spec.hazards[idx]);
        if fails {
            match spec.error_kinds[rng.gen_range(0..spec.error_kinds.len())] {
                ErrorKind::CantReach => {
                    action = Action { landing: state.shuttle_pos, shot: ShotType::CantReach, move_to: state.self_pos }
                }
                ErrorKind::Net => action.landing.y = rng.gen_range(-0.1..0.0),
                ErrorKind::Out => action.landing.y = rng.gen_range(1.02..1.15),
            }
        }
        strokes.push(Stroke { player: name.clone(), state, action });
        if fails {
            break;
        }
        let next = transition(&state, &action, opponent_pos)?;
        opponent_pos = action.move_to;
        state = next;
    }

    let mut rally = Rally {
        rally_id,
        starter: spec.players[ia].clone(),
        second: spec.players[ib].clone(),
        strokes,
        winner: String::new(),
        source: RallySource::Synthetic,
    };
    rally.winner = rally.infer_winner();
    Ok((rally, mode))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::write_jsonl_to;
    use crate::engine::{check_termination, TerminationReason};

    fn bytes(d: &Dataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_jsonl_to(d, &mut buf).unwrap();
        buf
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let spec = SynthConfig::two_mode(50, 6.0);
        let a = generate_synthetic_dataset(&spec, 7).unwrap();
        let b = generate_synthetic_dataset(&spec, 7).unwrap();
        assert_eq!(bytes(&a), bytes(&b));
        let c = generate_synthetic_dataset(&spec, 8).unwrap();
        assert_ne!(bytes(&a), bytes(&c));
    }

    #[test]
    fn constant_policy_lands_on_target() {
        let target = Position { x: 0.5, y: 0.8 };
        let spec = SynthConfig::constant(200, ShotType::Clear, target, 4.0);
        let d = generate_synthetic_dataset(&spec, 1).unwrap();
        for r in &d.rallies {
            for s in &r.strokes[..r.len() - 1] {
                assert_eq!(s.action.landing, target);
                assert_eq!(s.action.shot, ShotType::Clear);
            }
        }
    }

    #[test]
    fn mean_length_matches_hazard() {
        let d = generate_synthetic_dataset(&SynthConfig::two_mode(1000, 6.0), 3).unwrap();
        let mean = d.n_strokes() as f64 / d.len() as f64;
        assert!((mean - 6.0).abs() <= 1.0, "mean length {mean}");
    }

    #[test]
    fn zero_shot_types_is_invalid() {
        let mut spec = SynthConfig::two_mode(10, 6.0);
        spec.modes[0].cycle.clear();
        assert!(matches!(generate_synthetic_dataset(&spec, 0), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn rallies_are_valid_and_end_on_their_terminal_stroke() {
        let out = generate_labeled(&SynthConfig::two_mode(300, 6.0), 11).unwrap();
        out.dataset.validate().unwrap();
        assert_eq!(out.modes.len(), 300);
        assert!(out.modes.contains(&0) && out.modes.contains(&1));
        for r in &out.dataset.rallies {
            let n = r.len();
            for (i, s) in r.strokes.iter().enumerate() {
                let reason = check_termination(&s.action, i + 1, 100);
                assert_eq!(reason.is_some(), i + 1 == n, "rally {} stroke {}", r.rally_id, i + 1);
            }
        }
    }

    #[test]
    fn matchup_uses_only_missed_returns() {
        let d = generate_synthetic_dataset(&SynthConfig::matchup(200, 0.1, 0.1667), 5).unwrap();
        for r in &d.rallies {
            assert_eq!(r.starter, "X");
            let last = &r.strokes[r.len() - 1].action;
            assert_eq!(check_termination(last, r.len(), 100), Some(TerminationReason::CantReach));
        }
    }
}
