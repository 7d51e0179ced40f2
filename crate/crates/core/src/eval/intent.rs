//! Reading contexts back as action sequences.

use serde::{Deserialize, Serialize};

use super::evaluate::{score_rally, Scores};
use crate::data::{Action, Dataset, Position, Rally, Stroke, N_SHOT_TYPES};
use crate::error::{Error, Result};
use crate::model::{Context, RallyNet, StepPrediction};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentStep {
    pub step: usize,
    pub shot: String,
    pub shot_prob: f64,
    pub landing: Position,
    #[serde(rename = "move")]
    pub move_to: Position,
}

fn describe(preds: &[StepPrediction]) -> Vec<IntentStep> {
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let a = p.mode_action();
            IntentStep {
                step: i + 1,
                shot: a.shot.name().to_string(),
                shot_prob: p.shot[a.shot.id()],
                landing: a.landing,
                move_to: a.move_to,
            }
        })
        .collect()
}

/// Decodes `horizon` steps of intent from a context, as modal actions.
pub fn decode_intent(net: &RallyNet, z: &Context, horizon: usize) -> Result<Vec<IntentStep>> {
    Ok(describe(&net.decode_context(z, horizon)?))
}

/// Modal actions decoded from a context.
pub fn decode_actions(net: &RallyNet, z: &Context, horizon: usize) -> Result<Vec<Action>> {
    Ok(net.decode_context(z, horizon)?.iter().map(StepPrediction::mode_action).collect())
}

/// Encodes each side's recorded action sequence, decodes it back over its
/// full length and scores the result exactly like a rollout.
pub fn reconstruct_rally(net: &RallyNet, r: &Rally) -> Result<(Rally, Vec<[f64; N_SHOT_TYPES]>)> {
    if r.is_empty() {
        return Err(Error::EmptyInput("rally has no strokes"));
    }
    let mut strokes = r.strokes.clone();
    let mut probs = vec![[0.0; N_SHOT_TYPES]; r.len()];
    for side in 0..2 {
        let idx: Vec<usize> = r.side_indices(side).collect();
        if idx.is_empty() {
            continue;
        }
        let actions: Vec<Action> = idx.iter().map(|&i| r.strokes[i].action).collect();
        let ctx = net.encode_context::<rand_chacha::ChaCha8Rng>(&actions, None)?;
        for (&i, p) in idx.iter().zip(net.decode_context(&ctx, actions.len())?) {
            strokes[i] = Stroke { action: p.mode_action(), ..r.strokes[i].clone() };
            probs[i] = p.shot;
        }
    }
    Ok((Rally { strokes, ..r.clone() }, probs))
}

/// Mean reconstruction scores over a dataset.
pub fn reconstruction_scores(net: &RallyNet, test: &Dataset) -> Result<Scores> {
    if test.is_empty() {
        return Err(Error::EmptyInput("empty test set"));
    }
    let per_rally = test
        .rallies
        .iter()
        .map(|r| {
            let (rec, probs) = reconstruct_rally(net, r)?;
            score_rally(r, &rec, &probs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scores::mean(&per_rally))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{generate_synthetic_dataset, SynthConfig};
    use crate::model::ModelConfig;

    fn net() -> (RallyNet, Dataset) {
        let d = generate_synthetic_dataset(&SynthConfig::two_mode(6, 6.0), 2).unwrap();
        let cfg = ModelConfig { seed: 3, ..ModelConfig::desk() };
        (RallyNet::new(&cfg, d.players()).unwrap(), d)
    }

    #[test]
    fn decode_intent_shapes_and_errors() {
        let (net, d) = net();
        let seq: Vec<Action> = d.rallies[0].strokes.iter().map(|s| s.action).collect();
        let z = net.encode_context::<rand_chacha::ChaCha8Rng>(&seq, None).unwrap();
        let steps = decode_intent(&net, &z, 4).unwrap();
        assert_eq!(steps.len(), 4);
        assert_eq!(steps.iter().map(|s| s.step).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
        assert!(steps.iter().all(|s| s.shot_prob > 0.0 && s.shot_prob <= 1.0));
        assert!(matches!(decode_intent(&net, &z, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn reconstruction_keeps_states_and_lengths() {
        let (net, d) = net();
        let r = &d.rallies[1];
        let (rec, probs) = reconstruct_rally(&net, r).unwrap();
        assert_eq!(rec.len(), r.len());
        assert_eq!(probs.len(), r.len());
        assert!(rec.strokes.iter().zip(&r.strokes).all(|(a, b)| a.state == b.state && a.player == b.player));
        assert!(reconstruction_scores(&net, &d).unwrap().is_finite());
    }
}
