//! Evaluation: sequence metrics, rollout scoring, case studies and intent decoding.

mod case_study;
mod evaluate;
mod intent;
pub mod metrics;

pub use case_study::{case_study_agent, case_study_dataset, render_heatmap, CaseStudy, StateFilter};
pub use evaluate::{
    build_report, evaluate_agent, rally_seed, recorded_win_rate, rollout_test_set, score_rally, score_traces,
    win_rate_consistency, AgentMetrics, AgentRun, EvalOptions, MetricReport, Scores, SeedScores, SeedSummary,
    WinRateDiff, AVERAGING, RANDOM_AGENT, RULE_AGENT,
};
pub use intent::{decode_actions, decode_intent, reconstruct_rally, reconstruction_scores, IntentStep};
pub use metrics::{ctc_loss, dtw_distance, length_jsd, length_kde, mrns, rns, stroke_ctc, win_rate_difference, RnsInputs};
