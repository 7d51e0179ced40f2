//! Rollout-based imitation scores, normalized against the random and
//! rule-based anchors.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{dtw_distance, length_jsd, mrns, rns, stroke_ctc, win_rate_difference, RnsInputs};
use crate::agents::Agent;
use crate::data::{dataset_hash, Dataset, Position, Rally, N_SHOT_TYPES};
use crate::engine::{rollout_rally, simulate_matchup, RallyInit, RolloutMode, RolloutTrace, Seats, MAX_LEN};
use crate::error::{Error, Result};
use crate::seed;

pub const RANDOM_AGENT: &str = "random";
pub const RULE_AGENT: &str = "rule";
/// Averaging order recorded in every report.
pub const AVERAGING: &str = "per_side_then_per_rally_then_per_seed";

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub land_dtw: f64,
    pub shot_ctc: f64,
    pub move_dtw: f64,
}

impl Scores {
    fn add(&mut self, o: &Scores, w: f64) {
        self.land_dtw += w * o.land_dtw;
        self.shot_ctc += w * o.shot_ctc;
        self.move_dtw += w * o.move_dtw;
    }

    pub fn mean(items: &[Scores]) -> Scores {
        let mut m = Scores::default();
        for s in items {
            m.add(s, 1.0 / items.len() as f64);
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.land_dtw.is_finite() && self.shot_ctc.is_finite() && self.move_dtw.is_finite()
    }

    /// True when every component is strictly lower.
    pub fn strictly_better_than(&self, o: &Scores) -> bool {
        self.land_dtw < o.land_dtw && self.shot_ctc < o.shot_ctc && self.move_dtw < o.move_dtw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub mode: RolloutMode,
    pub seeds: [u64; 5],
    pub max_len: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { mode: RolloutMode::InitOnly, seeds: [0, 1, 2, 3, 4], max_len: MAX_LEN }
    }
}

impl EvalOptions {
    pub fn with_base_seed(mode: RolloutMode, base: u64) -> Self {
        let seeds = std::array::from_fn(|k| seed::derive(base, &[k as u64]));
        EvalOptions { mode, seeds, max_len: MAX_LEN }
    }
}

/// One side's strokes of a rally: landings, shot ids, moves.
struct Side {
    landing: Vec<Position>,
    shots: Vec<usize>,
    moves: Vec<Position>,
}

fn side_of(r: &Rally, side: usize) -> Side {
    let strokes: Vec<_> = r.side_indices(side).map(|i| &r.strokes[i]).collect();
    Side {
        landing: strokes.iter().map(|s| s.action.landing).collect(),
        shots: strokes.iter().map(|s| s.action.shot.id()).collect(),
        moves: strokes.iter().map(|s| s.action.move_to).collect(),
    }
}

fn or_stand_in(seq: Vec<Position>, stand_in: Position) -> Vec<Position> {
    if seq.is_empty() {
        vec![stand_in]
    } else {
        seq
    }
}

/// Scores a generated rally against the recorded one, per side then averaged.
/// A side without strokes is represented by that player's initial position.
pub fn score_rally(truth: &Rally, generated: &Rally, shot_probs: &[[f64; N_SHOT_TYPES]]) -> Result<Scores> {
    if shot_probs.len() != generated.len() {
        return Err(Error::Shape(format!("{} shot distributions for {} strokes", shot_probs.len(), generated.len())));
    }
    if truth.is_empty() {
        return Err(Error::EmptyInput("recorded rally has no strokes"));
    }
    let init = RallyInit::from_rally(truth, RolloutMode::InitOnly);
    let stand_in = [init.state.self_pos, init.second_pos];
    let mut sides = Vec::with_capacity(2);
    for s in 0..2 {
        let (t, g) = (side_of(truth, s), side_of(generated, s));
        if t.shots.is_empty() && g.shots.is_empty() {
            continue;
        }
        let probs: Vec<[f64; N_SHOT_TYPES]> = generated.side_indices(s).map(|i| shot_probs[i]).collect();
        sides.push(Scores {
            land_dtw: dtw_distance(&or_stand_in(g.landing, stand_in[s]), &or_stand_in(t.landing, stand_in[s]))?,
            shot_ctc: stroke_ctc(&probs, &t.shots)?,
            move_dtw: dtw_distance(&or_stand_in(g.moves, stand_in[s]), &or_stand_in(t.moves, stand_in[s]))?,
        });
    }
    Ok(Scores::mean(&sides))
}

fn trace_probs(t: &RolloutTrace) -> Vec<[f64; N_SHOT_TYPES]> {
    t.meta.iter().map(|m| m.shot_probs).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScores {
    pub seed: u64,
    pub scores: Scores,
    pub n_rallies: usize,
    pub aborted: usize,
    pub lengths: Vec<usize>,
    pub errors: Vec<String>,
}

/// Scores traces against the test rallies they were rolled out from, matched
/// by rally id; several traces of one rally are averaged first.
pub fn score_traces(test: &Dataset, traces: &[RolloutTrace], seed: u64) -> Result<SeedScores> {
    let truth: BTreeMap<&str, &Rally> = test.rallies.iter().map(|r| (r.rally_id.as_str(), r)).collect();
    let mut per_rally: BTreeMap<&str, Vec<Scores>> = BTreeMap::new();
    let mut errors = Vec::new();
    for t in traces {
        let Some(r) = truth.get(t.rally.rally_id.as_str()) else {
            errors.push(format!("{}: no recorded rally with this id", t.rally.rally_id));
            continue;
        };
        if let Some(msg) = &t.aborted {
            errors.push(format!("{}: {msg}", t.rally.rally_id));
        }
        match score_rally(r, &t.rally, &trace_probs(t)) {
            Ok(s) if s.is_finite() => per_rally.entry(&r.rally_id).or_default().push(s),
            Ok(_) => errors.push(format!("{}: non-finite score", t.rally.rally_id)),
            Err(e) => errors.push(format!("{}: {e}", t.rally.rally_id)),
        }
    }
    if per_rally.is_empty() {
        return Err(Error::EmptyInput("no trace could be scored"));
    }
    let rally_means: Vec<Scores> = per_rally.values().map(|v| Scores::mean(v)).collect();
    Ok(SeedScores {
        seed,
        scores: Scores::mean(&rally_means),
        n_rallies: rally_means.len(),
        aborted: traces.iter().filter(|t| t.aborted.is_some()).count(),
        lengths: traces.iter().filter(|t| t.aborted.is_none()).map(|t| t.rally.len()).collect(),
        errors,
    })
}

/// Rally seed of a test rally under an evaluation seed.
pub fn rally_seed(eval_seed: u64, rally_id: &str) -> u64 {
    seed::derive(eval_seed, &[seed::hash_str(rally_id)])
}

/// Rolls out every test rally once with one agent playing both sides.
pub fn rollout_test_set(
    agent: &mut dyn Agent,
    test: &Dataset,
    mode: RolloutMode,
    eval_seed: u64,
    max_len: usize,
) -> Vec<RolloutTrace> {
    test.rallies
        .iter()
        .map(|r| {
            let init = RallyInit::from_rally(r, mode);
            rollout_rally(&mut Seats::Shared(agent), &init, rally_seed(eval_seed, &r.rally_id), max_len)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub agent: String,
    pub per_seed: Vec<SeedScores>,
}

impl AgentRun {
    pub fn mean(&self) -> Scores {
        Scores::mean(&self.per_seed.iter().map(|s| s.scores).collect::<Vec<_>>())
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.per_seed.iter().flat_map(|s| s.lengths.iter().copied()).collect()
    }
}

pub fn evaluate_agent(agent: &mut dyn Agent, test: &Dataset, opts: &EvalOptions) -> Result<AgentRun> {
    if test.is_empty() {
        return Err(Error::EmptyInput("empty test set"));
    }
    let name = agent.name().to_string();
    let per_seed = opts
        .seeds
        .iter()
        .map(|&s| {
            let traces = rollout_test_set(agent, test, opts.mode, s, opts.max_len);
            score_traces(test, &traces, s)
        })
        .collect::<Result<Vec<_>>>()?;
    log::info!("{name}: {:?}", Scores::mean(&per_seed.iter().map(|s| s.scores).collect::<Vec<_>>()));
    Ok(AgentRun { agent: name, per_seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinRateDiff {
    pub player_a: String,
    pub player_b: String,
    pub ground_truth: f64,
    pub simulated: f64,
    pub difference: f64,
    pub n_recorded: usize,
    pub n_simulated: usize,
}

/// Recorded rallies between `a` and `b`, and `a`'s share of them.
pub fn recorded_win_rate<'d>(test: &'d Dataset, a: &str, b: &str) -> Result<(f64, Vec<&'d Rally>)> {
    let played: Vec<&Rally> = test
        .rallies
        .iter()
        .filter(|r| (r.starter == a && r.second == b) || (r.starter == b && r.second == a))
        .collect();
    if played.is_empty() {
        return Err(Error::EmptyInput("no recorded rallies between the two players"));
    }
    let wins = played.iter().filter(|r| r.winner == a).count();
    Ok((wins as f64 / played.len() as f64, played))
}

/// Simulates the recorded pairing from its own initial states and compares
/// `a`'s simulated win rate with the recorded one.
#[allow(clippy::too_many_arguments)]
pub fn win_rate_consistency(
    agent: &mut dyn Agent,
    test: &Dataset,
    a: &str,
    b: &str,
    mode: RolloutMode,
    n_per_init: usize,
    seed: u64,
    max_len: usize,
) -> Result<WinRateDiff> {
    let (gt, played) = recorded_win_rate(test, a, b)?;
    let inits: Vec<RallyInit> = played.iter().map(|r| RallyInit::from_rally(r, mode)).collect();
    let m = simulate_matchup(&mut Seats::Shared(agent), a, &inits, n_per_init, seed, max_len)?;
    Ok(WinRateDiff {
        player_a: a.into(),
        player_b: b.into(),
        ground_truth: gt,
        simulated: m.win_rate,
        difference: win_rate_difference(gt, m.win_rate)?,
        n_recorded: played.len(),
        n_simulated: m.completed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub scores: Scores,
    pub n_rallies: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMetrics {
    pub agent: String,
    pub land_dtw: f64,
    pub shot_ctc: f64,
    pub move_dtw: f64,
    pub rns_land: f64,
    pub rns_shot: f64,
    pub rns_move: f64,
    pub mrns: f64,
    pub length_jsd: f64,
    pub win_rate_diffs: Vec<WinRateDiff>,
    pub per_seed: Vec<SeedSummary>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: RolloutMode,
    pub seeds: Vec<u64>,
    pub dataset_hash: String,
    pub averaging: String,
    pub max_len: usize,
    pub agents: Vec<AgentMetrics>,
}

/// Normalizes every run against the runs named [`RANDOM_AGENT`] and
/// [`RULE_AGENT`], which must be among `runs`.
pub fn build_report(test: &Dataset, opts: &EvalOptions, runs: &[AgentRun]) -> Result<MetricReport> {
    let anchor = |name: &str| {
        runs.iter()
            .find(|r| r.agent == name)
            .map(AgentRun::mean)
            .ok_or_else(|| Error::InvalidArgument(format!("anchor agent `{name}` was not evaluated")))
    };
    let (random, rule) = (anchor(RANDOM_AGENT)?, anchor(RULE_AGENT)?);
    let real: Vec<usize> = test.rallies.iter().map(Rally::len).collect();
    let agents = runs
        .iter()
        .map(|run| {
            let m = run.mean();
            let r = |pick: fn(&Scores) -> f64| {
                rns(RnsInputs { random_score: pick(&random), rule_score: pick(&rule), agent_score: pick(&m) })
            };
            let (rns_land, rns_shot, rns_move) = (r(|s| s.land_dtw)?, r(|s| s.shot_ctc)?, r(|s| s.move_dtw)?);
            let lengths = run.lengths();
            Ok(AgentMetrics {
                agent: run.agent.clone(),
                land_dtw: m.land_dtw,
                shot_ctc: m.shot_ctc,
                move_dtw: m.move_dtw,
                rns_land,
                rns_shot,
                rns_move,
                mrns: mrns(rns_land, rns_shot, rns_move),
                length_jsd: if lengths.is_empty() { 1.0 } else { length_jsd(&real, &lengths)? },
                win_rate_diffs: Vec::new(),
                per_seed: run
                    .per_seed
                    .iter()
                    .map(|s| SeedSummary { seed: s.seed, scores: s.scores, n_rallies: s.n_rallies, aborted: s.aborted })
                    .collect(),
                errors: run.per_seed.iter().flat_map(|s| s.errors.iter().cloned()).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        mode: opts.mode,
        seeds: opts.seeds.to_vec(),
        dataset_hash: dataset_hash(test),
        averaging: AVERAGING.into(),
        max_len: opts.max_len,
        agents,
    })
}

impl MetricReport {
    pub fn agent(&self, name: &str) -> Option<&AgentMetrics> {
        self.agents.iter().find(|a| a.agent == name)
    }

    /// Plain-text table, one row per agent.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mode: {:?}   seeds: {:?}   dataset: {}", self.mode, self.seeds, &self.dataset_hash[..12.min(self.dataset_hash.len())]);
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "agent", "land", "shot", "move", "rns_land", "rns_shot", "rns_move", "mrns", "len_jsd"
        );
        for a in &self.agents {
            let _ = writeln!(
                out,
                "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                a.agent, a.land_dtw, a.shot_ctc, a.move_dtw, a.rns_land, a.rns_shot, a.rns_move, a.mrns, a.length_jsd
            );
            for w in &a.win_rate_diffs {
                let _ = writeln!(
                    out,
                    "  {} vs {}: recorded {:.4}, simulated {:.4}, difference {:.4}",
                    w.player_a, w.player_b, w.ground_truth, w.simulated, w.difference
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{one_hot, Decision, DecisionMeta, RandomAgent, RuleAgent, TurnView};
    use crate::data::synth::{generate_synthetic_dataset, SynthConfig};
    use crate::experience::build_index;

    /// Replays the recorded rally whose initial state matches the rollout.
    struct Replay {
        rallies: Vec<Rally>,
        current: Option<usize>,
    }

    impl Agent for Replay {
        fn name(&self) -> &str {
            "replay"
        }

        fn reset_rally(&mut self) {
            self.current = None;
        }

        fn act(&mut self, view: &TurnView<'_>) -> Result<Decision> {
            if view.step == 1 {
                self.current = self.rallies.iter().position(|r| r.strokes[0].state == *view.state);
            }
            let r = &self.rallies[self.current.ok_or(Error::Agent("unknown rally".into()))?];
            let s = r.strokes.get(view.step - 1).ok_or(Error::Agent("past the recorded end".into()))?;
            Ok(Decision { action: s.action, shot_probs: one_hot(s.action.shot), meta: DecisionMeta::default() })
        }
    }

    fn small_test() -> Dataset {
        generate_synthetic_dataset(&SynthConfig::two_mode(12, 6.0), 3).unwrap()
    }

    fn opts() -> EvalOptions {
        EvalOptions { seeds: [1, 2, 3, 4, 5], ..EvalOptions::default() }
    }

    #[test]
    fn replay_scores_are_minimal() {
        let test = small_test();
        let mut replay = Replay { rallies: test.rallies.clone(), current: None };
        let run = evaluate_agent(&mut replay, &test, &opts()).unwrap();
        let m = run.mean();
        assert_eq!(m.land_dtw, 0.0);
        assert_eq!(m.move_dtw, 0.0);
        // Only the frame smoothing is paid: one small constant per recorded stroke.
        let per_stroke = -(1.0 - super::super::metrics::FRAME_SMOOTHING * 12.0 / 13.0f64).ln();
        assert!(m.shot_ctc < 60.0 * per_stroke, "{}", m.shot_ctc);

        let mut random = RandomAgent::new(7);
        let mut rule = RuleAgent::new(std::sync::Arc::new(build_index(&test, 5).unwrap()), 7);
        let runs = vec![
            run,
            evaluate_agent(&mut random, &test, &opts()).unwrap(),
            evaluate_agent(&mut rule, &test, &opts()).unwrap(),
        ];
        let report = build_report(&test, &opts(), &runs).unwrap();
        let replay = report.agent("replay").unwrap();
        assert!(replay.mrns > 1.0, "{}", replay.mrns);
        let random = report.agent(RANDOM_AGENT).unwrap();
        assert_eq!((random.rns_land, random.rns_shot, random.rns_move, random.mrns), (0.0, 0.0, 0.0, 0.0));
        let rule = report.agent(RULE_AGENT).unwrap();
        assert_eq!((rule.rns_land, rule.rns_shot, rule.rns_move, rule.mrns), (1.0, 1.0, 1.0, 1.0));
        for a in &report.agents {
            assert_eq!(a.mrns, (a.rns_land + a.rns_shot + a.rns_move) / 3.0);
            let mean = Scores::mean(&a.per_seed.iter().map(|s| s.scores).collect::<Vec<_>>());
            assert_eq!(mean.land_dtw, a.land_dtw);
            assert_eq!(a.per_seed.len(), 5);
        }
        assert!(report.render_table().contains("replay"));
    }

    #[test]
    fn missing_side_uses_initial_position() {
        let test = small_test();
        let truth = &test.rallies[0];
        let mut short = truth.clone();
        short.strokes.truncate(1);
        let probs = [one_hot(short.strokes[0].action.shot)];
        let s = score_rally(truth, &short, &probs).unwrap();
        assert!(s.is_finite());
        assert!(score_rally(truth, &short, &[]).is_err());
    }

    #[test]
    fn unmatched_traces_are_reported_not_fatal() {
        let test = small_test();
        let mut random = RandomAgent::new(1);
        let mut traces = rollout_test_set(&mut random, &test, RolloutMode::InitOnly, 9, MAX_LEN);
        traces[0].rally.rally_id = "nope".into();
        let s = score_traces(&test, &traces, 9).unwrap();
        assert_eq!(s.n_rallies, test.len() - 1);
        assert!(s.errors.iter().any(|e| e.starts_with("nope")));
    }

    #[test]
    fn report_requires_anchors() {
        let test = small_test();
        let run = AgentRun { agent: "x".into(), per_seed: vec![] };
        assert!(build_report(&test, &opts(), &[run]).is_err());
    }

    #[test]
    fn recorded_win_rate_counts_the_pairing() {
        let test = small_test();
        let (a, b) = (test.rallies[0].starter.clone(), test.rallies[0].second.clone());
        let (gt, played) = recorded_win_rate(&test, &a, &b).unwrap();
        let wins = played.iter().filter(|r| r.winner == a).count() as f64;
        assert_eq!(gt, wins / played.len() as f64);
        assert!(recorded_win_rate(&test, &a, "nobody").is_err());
    }
}
