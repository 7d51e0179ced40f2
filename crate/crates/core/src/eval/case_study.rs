//! Landing and move distributions at a chosen kind of state, recorded or
//! generated, with heat-map rendering.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, TurnView};
use crate::data::{Dataset, PlayerState, Position, ShotType};
use crate::error::{Error, Result};
use crate::experience::{discretize_position, Cell};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateFilter {
    pub incoming_shot: ShotType,
    pub self_cell: Option<Cell>,
    pub shuttle_cell: Option<Cell>,
}

impl StateFilter {
    pub fn shot(incoming_shot: ShotType) -> Self {
        StateFilter { incoming_shot, self_cell: None, shuttle_cell: None }
    }

    pub fn matches(&self, s: &PlayerState) -> Result<bool> {
        let cell_ok = |want: Option<Cell>, p: Position| -> Result<bool> {
            Ok(match want {
                Some(c) => discretize_position(p)? == c,
                None => true,
            })
        };
        Ok(s.incoming_shot == self.incoming_shot
            && cell_ok(self.self_cell, s.self_pos)?
            && cell_ok(self.shuttle_cell, s.shuttle_pos)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub filter: StateFilter,
    pub source: String,
    pub n_states: usize,
    pub landings: Vec<Position>,
    pub moves: Vec<Position>,
}

/// `(rally index, stroke index)` of every stroke whose state passes the filter.
fn matching_strokes(d: &Dataset, f: &StateFilter) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (ri, r) in d.rallies.iter().enumerate() {
        for (ti, s) in r.strokes.iter().enumerate() {
            if f.matches(&s.state)? {
                out.push((ri, ti));
            }
        }
    }
    if out.is_empty() {
        log::warn!("case-study filter {f:?} matched no stroke");
        return Err(Error::EmptyInput("state filter matched no stroke"));
    }
    Ok(out)
}

/// Recorded actions at every matching state.
pub fn case_study_dataset(d: &Dataset, f: &StateFilter) -> Result<CaseStudy> {
    let hits = matching_strokes(d, f)?;
    let actions: Vec<_> = hits.iter().map(|&(r, t)| d.rallies[r].strokes[t].action).collect();
    Ok(CaseStudy {
        filter: *f,
        source: "dataset".into(),
        n_states: hits.len(),
        landings: actions.iter().map(|a| a.landing).collect(),
        moves: actions.iter().map(|a| a.move_to).collect(),
    })
}

/// Actions the agent generates at every matching state, given the recorded
/// history that led there, `samples` times each.
pub fn case_study_agent(
    agent: &mut dyn Agent,
    d: &Dataset,
    f: &StateFilter,
    samples: usize,
    seed: u64,
) -> Result<CaseStudy> {
    if samples == 0 {
        return Err(Error::InvalidArgument("at least one sample per state".into()));
    }
    let hits = matching_strokes(d, f)?;
    let (mut landings, mut moves) = (Vec::new(), Vec::new());
    for &(ri, ti) in &hits {
        let r = &d.rallies[ri];
        let s = &r.strokes[ti];
        for k in 0..samples {
            agent.reset_rally();
            let view = TurnView {
                history: &r.strokes[..ti],
                state: &s.state,
                player: &s.player,
                step: ti + 1,
                rally_seed: seed::derive(seed, &[seed::hash_str(&r.rally_id), ti as u64, k as u64]),
            };
            let a = agent.act(&view)?.action;
            landings.push(a.landing);
            moves.push(a.move_to);
        }
    }
    Ok(CaseStudy { filter: *f, source: agent.name().to_string(), n_states: hits.len(), landings, moves })
}

const PANEL_W: u32 = 200;
const PANEL_H: u32 = 400;
const GAP: u32 = 8;

/// Pixel of a normalized court position, `y = 1` at the top.
fn pixel(p: Position) -> (i64, i64) {
    let u = ((p.x.clamp(-1.0, 1.0) + 1.0) / 2.0 * (PANEL_W - 1) as f64).round() as i64;
    let v = ((1.0 - p.y.clamp(-1.0, 1.0)) / 2.0 * (PANEL_H - 1) as f64).round() as i64;
    (u, v)
}

fn density(points: &[Position], bandwidth_px: f64) -> Vec<f64> {
    let mut grid = vec![0.0; (PANEL_W * PANEL_H) as usize];
    let reach = (3.0 * bandwidth_px).ceil() as i64;
    for &p in points {
        let (u, v) = pixel(p);
        for dv in -reach..=reach {
            for du in -reach..=reach {
                let (x, y) = (u + du, v + dv);
                if x < 0 || y < 0 || x >= PANEL_W as i64 || y >= PANEL_H as i64 {
                    continue;
                }
                let w = (-0.5 * ((du * du + dv * dv) as f64) / (bandwidth_px * bandwidth_px)).exp();
                grid[(y * PANEL_W as i64 + x) as usize] += w;
            }
        }
    }
    grid
}

fn draw_panel(img: &mut RgbImage, x0: u32, points: &[Position]) {
    let d = density(points, 6.0);
    let max = d.iter().copied().fold(0.0, f64::max).max(1e-12);
    for y in 0..PANEL_H {
        for x in 0..PANEL_W {
            let t = d[(y * PANEL_W + x) as usize] / max;
            let shade = |base: f64, full: f64| (base + (full - base) * t).round() as u8;
            let mut c = Rgb([shade(235.0, 200.0), shade(245.0, 20.0), shade(235.0, 30.0)]);
            if y == PANEL_H / 2 || x == 0 || y == 0 || x == PANEL_W - 1 || y == PANEL_H - 1 {
                c = Rgb([40, 40, 40]);
            }
            img.put_pixel(x0 + x, y, c);
        }
    }
}

/// Writes a two-panel PNG: landing density on the left, move density on the right.
pub fn render_heatmap(cs: &CaseStudy, path: impl AsRef<Path>) -> Result<()> {
    let mut img = RgbImage::from_pixel(2 * PANEL_W + GAP, PANEL_H, Rgb([255, 255, 255]));
    draw_panel(&mut img, 0, &cs.landings);
    draw_panel(&mut img, PANEL_W + GAP, &cs.moves);
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{Decision, DecisionMeta};
    use crate::data::synth::{generate_synthetic_dataset, SynthConfig};
    use crate::data::Action;

    struct Constant(Action);

    impl Agent for Constant {
        fn name(&self) -> &str {
            "constant"
        }

        fn act(&mut self, _: &TurnView<'_>) -> Result<Decision> {
            Ok(Decision { action: self.0, shot_probs: crate::agents::one_hot(self.0.shot), meta: DecisionMeta::default() })
        }
    }

    fn data() -> Dataset {
        generate_synthetic_dataset(&SynthConfig::two_mode(40, 6.0), 5).unwrap()
    }

    /// State of some stroke that is not a serve.
    fn return_state(d: &Dataset) -> PlayerState {
        d.rallies.iter().find(|r| r.len() > 1).unwrap().strokes[1].state
    }

    #[test]
    fn dataset_mode_equals_linear_scan() {
        let d = data();
        let f = StateFilter::shot(return_state(&d).incoming_shot);
        let cs = case_study_dataset(&d, &f).unwrap();
        let scan: Vec<Position> = d
            .rallies
            .iter()
            .flat_map(|r| &r.strokes)
            .filter(|s| s.state.incoming_shot == f.incoming_shot)
            .map(|s| s.action.landing)
            .collect();
        assert_eq!(cs.landings, scan);
        assert_eq!(cs.n_states, scan.len());

        let with_cell = StateFilter { self_cell: Some(discretize_position(return_state(&d).self_pos).unwrap()), ..f };
        let narrowed = case_study_dataset(&d, &with_cell).unwrap();
        assert!(narrowed.n_states >= 1 && narrowed.n_states <= cs.n_states);
    }

    #[test]
    fn constant_policy_gives_a_point_mass() {
        let d = data();
        let target = Action {
            landing: Position { x: 0.25, y: 0.6 },
            shot: ShotType::Clear,
            move_to: Position { x: 0.0, y: -0.5 },
        };
        let f = StateFilter::shot(return_state(&d).incoming_shot);
        let cs = case_study_agent(&mut Constant(target), &d, &f, 2, 0).unwrap();
        assert!(cs.landings.iter().all(|p| *p == target.landing));
        assert!(cs.moves.iter().all(|p| *p == target.move_to));
        assert_eq!(cs.landings.len(), 2 * cs.n_states);
    }

    #[test]
    fn empty_filter_is_an_error() {
        let d = data();
        let f = StateFilter { incoming_shot: ShotType::Clear, self_cell: Some((9, 9)), shuttle_cell: Some((0, 0)) };
        assert!(matches!(case_study_dataset(&d, &f), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn heatmap_file_is_written() {
        let d = data();
        let cs = case_study_dataset(&d, &StateFilter::shot(return_state(&d).incoming_shot)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("case.png");
        render_heatmap(&cs, &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 0);
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 2 * PANEL_W + GAP);
    }
}
