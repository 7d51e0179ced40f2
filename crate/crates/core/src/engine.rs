//! Alternating two-agent rollout: state transition, termination, and
//! matchup simulation.
//!
//! Every state and action is in its hitter's frame (own half `y < 0`). A
//! transition hands the shuttle to the opponent, so positions produced by the
//! actor are reflected through the court center.

use serde::{Deserialize, Serialize};

use crate::agents::{check_decision, one_hot, Agent, DecisionMeta, TurnView};
use crate::data::{Action, PlayerState, Position, Rally, RallySource, Stroke, N_SHOT_TYPES};
use crate::error::{Error, Result};
use crate::seed;

pub const NET_EPSILON: f64 = 0.02;
pub const MAX_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    CantReach,
    IntoNet,
    OutOfBounds,
    MaxLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    #[default]
    InitOnly,
    TwoStep,
}

/// The opponent's state after the actor plays `action`.
///
/// `opponent_pos` is where the opponent stands in its own frame: its last
/// move destination, or its initial position at rally start.
pub fn transition(actor_state: &PlayerState, action: &Action, opponent_pos: Position) -> Result<PlayerState> {
    if !action.is_finite() {
        return Err(Error::InvalidAction(format!("non-finite action {action:?}")));
    }
    if !opponent_pos.is_finite() {
        return Err(Error::InvalidPosition { x: opponent_pos.x, y: opponent_pos.y });
    }
    Ok(PlayerState {
        score: actor_state.score.swapped(),
        shuttle_pos: action.landing.mirrored(),
        incoming_shot: action.shot,
        self_pos: opponent_pos,
        opp_pos: action.move_to.mirrored(),
        opp_move: action.move_to.sub(&actor_state.self_pos).mirrored(),
    })
}

/// Checks, in order, a missed return, a shot into the net, a landing outside
/// the opponent's half, and the length cap.
pub fn check_termination(action: &Action, step: usize, max_len: usize) -> Option<TerminationReason> {
    let l = action.landing;
    if action.is_miss() {
        Some(TerminationReason::CantReach)
    } else if l.y < NET_EPSILON {
        Some(TerminationReason::IntoNet)
    } else if l.x.abs() > 1.0 || l.y > 1.0 {
        Some(TerminationReason::OutOfBounds)
    } else if step >= max_len {
        Some(TerminationReason::MaxLength)
    } else {
        None
    }
}

/// Starting conditions of one rollout, usually taken from a recorded rally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RallyInit {
    pub rally_id: String,
    pub starter: String,
    pub second: String,
    pub state: PlayerState,
    /// The second player's initial position in its own frame.
    pub second_pos: Position,
    /// Recorded strokes replayed before the agents take over.
    pub forced: Vec<Stroke>,
}

impl RallyInit {
    pub fn from_rally(r: &Rally, mode: RolloutMode) -> RallyInit {
        let first = &r.strokes[0].state;
        let second_pos = r.strokes.get(1).map_or(first.opp_pos.mirrored(), |s| s.state.self_pos);
        let forced = match mode {
            RolloutMode::InitOnly => Vec::new(),
            RolloutMode::TwoStep => r.strokes.iter().take(2).cloned().collect(),
        };
        RallyInit {
            rally_id: r.rally_id.clone(),
            starter: r.starter.clone(),
            second: r.second.clone(),
            state: *first,
            second_pos,
            forced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrokeMeta {
    pub shot_probs: [f64; N_SHOT_TYPES],
    pub forced: bool,
    #[serde(flatten)]
    pub decision: DecisionMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrace {
    pub rally: Rally,
    pub meta: Vec<StrokeMeta>,
    pub seed: u64,
    pub termination: Option<TerminationReason>,
    pub loser: Option<String>,
    /// Set when an agent failed; the rally holds the strokes played until then.
    pub aborted: Option<String>,
}

/// Who plays which side of a rollout.
pub enum Seats<'a> {
    /// One agent plays both sides and shares its per-rally state.
    Shared(&'a mut dyn Agent),
    Pair(&'a mut dyn Agent, &'a mut dyn Agent),
}

impl Seats<'_> {
    fn seat(&mut self, side: usize) -> &mut dyn Agent {
        match self {
            Seats::Shared(a) => &mut **a,
            Seats::Pair(a, b) => {
                if side == 0 {
                    &mut **a
                } else {
                    &mut **b
                }
            }
        }
    }

    fn reset(&mut self) {
        match self {
            Seats::Shared(a) => a.reset_rally(),
            Seats::Pair(a, b) => {
                a.reset_rally();
                b.reset_rally();
            }
        }
    }
}

/// Plays one rally, the starter's seat on odd steps.
pub fn rollout_rally(seats: &mut Seats<'_>, init: &RallyInit, rally_seed: u64, max_len: usize) -> RolloutTrace {
    seats.reset();
    let mut rally = Rally {
        rally_id: init.rally_id.clone(),
        starter: init.starter.clone(),
        second: init.second.clone(),
        strokes: Vec::new(),
        winner: String::new(),
        source: RallySource::Generated,
    };
    let mut meta = Vec::new();
    let mut state = init.state;
    let mut opponent_pos = init.second_pos;
    let mut termination = None;
    let mut aborted = None;

    for step in 1..=max_len.max(1) {
        let side = (step + 1) % 2;
        let player = if side == 0 { init.starter.clone() } else { init.second.clone() };
        let (action, m) = match init.forced.get(step - 1) {
            Some(s) => {
                state = s.state;
                (s.action, StrokeMeta { shot_probs: one_hot(s.action.shot), forced: true, decision: DecisionMeta::default() })
            }
            None => {
                let view = TurnView { history: &rally.strokes, state: &state, player: &player, step, rally_seed };
                match seats.seat(side).act(&view).and_then(|d| check_decision(&d).map(|_| d)) {
                    Ok(d) => (d.action, StrokeMeta { shot_probs: d.shot_probs, forced: false, decision: d.meta }),
                    Err(e) => {
                        aborted = Some(format!("step {step}: {e}"));
                        break;
                    }
                }
            }
        };
        rally.strokes.push(Stroke { player, state, action });
        meta.push(m);
        if let Some(reason) = check_termination(&action, step, max_len) {
            termination = Some(reason);
            break;
        }
        let next = match transition(&state, &action, opponent_pos) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(format!("step {step}: {e}"));
                break;
            }
        };
        opponent_pos = action.move_to;
        state = next;
    }

    let loser = termination.map(|_| rally.actor_at(rally.len()).to_string());
    if let Some(l) = &loser {
        rally.winner = rally.other(l).to_string();
    }
    RolloutTrace { rally, meta, seed: rally_seed, termination, loser, aborted }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchupResult {
    /// Fraction of completed rallies won by player A.
    pub win_rate: f64,
    pub completed: usize,
    pub aborted: usize,
    pub traces: Vec<RolloutTrace>,
}

/// Plays every initial state `n_per_init` times. With [`Seats::Pair`] the
/// first agent plays `player_a` whichever side starts.
pub fn simulate_matchup(
    seats: &mut Seats<'_>,
    player_a: &str,
    inits: &[RallyInit],
    n_per_init: usize,
    seed: u64,
    max_len: usize,
) -> Result<MatchupResult> {
    if inits.is_empty() || n_per_init == 0 {
        return Err(Error::EmptyInput("matchup needs at least one initial state"));
    }
    let mut traces = Vec::with_capacity(inits.len() * n_per_init);
    let (mut wins, mut completed) = (0usize, 0usize);
    for (i, init) in inits.iter().enumerate() {
        if init.starter != player_a && init.second != player_a {
            return Err(Error::UnknownPlayer(player_a.to_string()));
        }
        for k in 0..n_per_init {
            let rally_seed = seed::derive(seed, &[i as u64, k as u64]);
            let trace = match seats {
                Seats::Pair(a, b) if init.starter != player_a => {
                    rollout_rally(&mut Seats::Pair(&mut **b, &mut **a), init, rally_seed, max_len)
                }
                _ => rollout_rally(seats, init, rally_seed, max_len),
            };
            if trace.aborted.is_none() {
                completed += 1;
                if trace.rally.winner == player_a {
                    wins += 1;
                }
            }
            traces.push(trace);
        }
    }
    let aborted = traces.len() - completed;
    if completed == 0 {
        return Err(Error::Agent("every rollout aborted".into()));
    }
    Ok(MatchupResult { win_rate: wins as f64 / completed as f64, completed, aborted, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Decision, RandomAgent};
    use crate::data::fixtures::{action, state};
    use crate::data::ShotType;

    struct Scripted {
        action: Action,
    }

    impl Agent for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }

        fn act(&mut self, _view: &TurnView<'_>) -> Result<Decision> {
            Ok(Decision { action: self.action, shot_probs: one_hot(self.action.shot), meta: DecisionMeta::default() })
        }
    }

    fn init() -> RallyInit {
        RallyInit {
            rally_id: "t".into(),
            starter: "A".into(),
            second: "B".into(),
            state: state((0.0, -0.5), ShotType::Receiving, (0.0, -0.5), (0.1, 0.5)),
            second_pos: Position { x: -0.1, y: -0.5 },
            forced: vec![],
        }
    }

    #[test]
    fn transition_hands_over_the_shuttle() {
        let s = state((0.0, -0.4), ShotType::Clear, (0.0, 0.0), (0.2, 0.5));
        let a = action((0.3, 0.7), ShotType::Smash, (0.2, -0.1));
        let next = transition(&s, &a, Position { x: -0.2, y: -0.5 }).unwrap();
        assert_eq!(next.shuttle_pos, Position { x: -0.3, y: -0.7 });
        assert_eq!(next.incoming_shot, ShotType::Smash);
        assert_eq!(next.self_pos, Position { x: -0.2, y: -0.5 });
        assert_eq!(next.opp_pos, Position { x: -0.2, y: 0.1 });
        assert_eq!(next.opp_move, Position { x: -0.2, y: 0.1 });
        assert_eq!(next, transition(&s, &a, Position { x: -0.2, y: -0.5 }).unwrap());
    }

    #[test]
    fn transition_rejects_non_finite_actions() {
        let s = state((0.0, -0.4), ShotType::Clear, (0.0, 0.0), (0.2, 0.5));
        let a = action((f64::NAN, 0.7), ShotType::Smash, (0.2, -0.1));
        assert!(matches!(transition(&s, &a, Position::ORIGIN), Err(Error::InvalidAction(_))));
    }

    #[test]
    fn termination_rules() {
        let miss = action((0.0, 0.5), ShotType::CantReach, (0.0, -0.5));
        assert_eq!(check_termination(&miss, 1, 100), Some(TerminationReason::CantReach));
        let long = action((0.0, 1.2), ShotType::Clear, (0.0, -0.5));
        assert_eq!(check_termination(&long, 1, 100), Some(TerminationReason::OutOfBounds));
        let net = action((0.0, 0.01), ShotType::NetShot, (0.0, -0.5));
        assert_eq!(check_termination(&net, 1, 100), Some(TerminationReason::IntoNet));
        let fine = action((0.5, 0.5), ShotType::Clear, (0.0, -0.5));
        assert_eq!(check_termination(&fine, 5, 100), None);
        assert_eq!(check_termination(&fine, 100, 100), Some(TerminationReason::MaxLength));
    }

    #[test]
    fn immediate_miss_ends_after_one_stroke() {
        let mut a = Scripted { action: action((0.0, 0.5), ShotType::CantReach, (0.0, -0.5)) };
        let mut b = Scripted { action: action((0.0, 0.5), ShotType::Clear, (0.0, -0.5)) };
        let t = rollout_rally(&mut Seats::Pair(&mut a, &mut b), &init(), 1, 100);
        assert_eq!(t.rally.len(), 1);
        assert_eq!(t.loser.as_deref(), Some("A"));
        assert_eq!(t.rally.winner, "B");
        assert_eq!(t.termination, Some(TerminationReason::CantReach));
    }

    #[test]
    fn in_court_forever_hits_the_cap() {
        let mut a = Scripted { action: action((0.2, 0.5), ShotType::Clear, (0.0, -0.5)) };
        let t = rollout_rally(&mut Seats::Shared(&mut a), &init(), 1, 100);
        assert_eq!(t.rally.len(), 100);
        assert_eq!(t.termination, Some(TerminationReason::MaxLength));
        assert_eq!(t.loser.as_deref(), Some("B"));
        for (i, s) in t.rally.strokes.iter().enumerate() {
            assert_eq!(s.player, t.rally.actor_at(i + 1));
        }
        for w in t.rally.strokes.windows(2) {
            assert_eq!(w[1].state.shuttle_pos, w[0].action.landing.mirrored());
        }
    }

    #[test]
    fn sampling_rollouts_are_seeded() {
        let mut a = RandomAgent::new(3);
        let t1 = rollout_rally(&mut Seats::Shared(&mut a), &init(), 42, 100);
        let t2 = rollout_rally(&mut Seats::Shared(&mut a), &init(), 42, 100);
        assert_eq!(t1, t2);
    }

    #[test]
    fn forced_strokes_replay_the_record() {
        let mut r = crate::data::fixtures::simple_rally("r", 4);
        r.strokes[1].action.shot = ShotType::Lob;
        let init = RallyInit::from_rally(&r, RolloutMode::TwoStep);
        let mut a = Scripted { action: action((0.0, 0.5), ShotType::CantReach, (0.0, -0.5)) };
        let t = rollout_rally(&mut Seats::Shared(&mut a), &init, 0, 100);
        assert_eq!(t.rally.len(), 3);
        assert_eq!(t.rally.strokes[..2], r.strokes[..2]);
        assert!(t.meta[0].forced && t.meta[1].forced && !t.meta[2].forced);
    }

    #[test]
    fn agent_that_always_misses_never_wins() {
        let mut a = Scripted { action: action((0.0, 0.5), ShotType::CantReach, (0.0, -0.5)) };
        let mut b = RandomAgent::new(0);
        let res = simulate_matchup(&mut Seats::Pair(&mut a, &mut b), "A", &[init()], 10, 0, 100).unwrap();
        assert_eq!(res.win_rate, 0.0);
        assert!(simulate_matchup(&mut Seats::Pair(&mut a, &mut b), "A", &[], 10, 0, 100).is_err());
    }

    #[test]
    fn pair_seats_follow_the_player_not_the_side() {
        let mut a = Scripted { action: action((0.0, 0.5), ShotType::CantReach, (0.0, -0.5)) };
        let mut b = Scripted { action: action((0.2, 0.5), ShotType::Clear, (0.0, -0.5)) };
        let mut swapped = init();
        std::mem::swap(&mut swapped.starter, &mut swapped.second);
        let res = simulate_matchup(&mut Seats::Pair(&mut a, &mut b), "A", &[init(), swapped], 5, 0, 100).unwrap();
        assert_eq!(res.win_rate, 0.0);
        assert!(res.traces[5..].iter().all(|t| t.rally.len() == 2));
    }

    #[test]
    fn symmetric_random_matchup_is_even() {
        let mut a = RandomAgent::new(1);
        let mut swapped = init();
        std::mem::swap(&mut swapped.starter, &mut swapped.second);
        let res = simulate_matchup(&mut Seats::Shared(&mut a), "A", &[init(), swapped], 1000, 9, 100).unwrap();
        assert!((res.win_rate - 0.5).abs() <= 0.05, "win rate {}", res.win_rate);
    }
}
