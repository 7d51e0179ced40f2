//! Rally data model, normalization and train/test splitting.
//!
//! Coordinates live in one of two frames. Raw ingested data is in the
//! absolute court frame; after [`to_hitter_frame`] every stroke is expressed
//! relative to its hitter, whose own half is `y < 0` and whose opponent's half
//! is `y > 0`. All learning and simulation code assumes normalized,
//! hitter-relative data.

mod csv_ingest;
mod io;
pub mod synth;

pub use csv_ingest::{ingest_csv, ingest_reader, CsvSchema};
pub use io::{dataset_hash, read_jsonl, read_jsonl_from, write_jsonl, write_jsonl_to};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of shot categories in the dataset convention.
pub const N_SHOT_TYPES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// Displacement between two positions, in the same units as [`Position`].
pub type Displacement = Position;

impl Position {
    pub const ORIGIN: Position = Position { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Result<Self> {
        if x.is_finite() && y.is_finite() {
            Ok(Position { x, y })
        } else {
            Err(Error::InvalidPosition { x, y })
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Point reflection through the court center: the same point seen from
    /// the other side of the net.
    pub fn mirrored(&self) -> Position {
        Position { x: -self.x, y: -self.y }
    }

    pub fn sub(&self, other: &Position) -> Displacement {
        Position { x: self.x - other.x, y: self.y - other.y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ShotType {
    #[serde(rename = "receiving")]
    Receiving,
    #[serde(rename = "short service")]
    ShortService,
    #[serde(rename = "long service")]
    LongService,
    #[serde(rename = "net shot")]
    NetShot,
    #[serde(rename = "clear")]
    Clear,
    #[serde(rename = "push/rush")]
    PushRush,
    #[serde(rename = "smash")]
    Smash,
    #[serde(rename = "defensive shot")]
    DefensiveShot,
    #[serde(rename = "drive")]
    Drive,
    #[serde(rename = "lob")]
    Lob,
    #[serde(rename = "drop")]
    Drop,
    #[serde(rename = "can't reach")]
    CantReach,
}

impl ShotType {
    pub const ALL: [ShotType; N_SHOT_TYPES] = [
        ShotType::Receiving,
        ShotType::ShortService,
        ShotType::LongService,
        ShotType::NetShot,
        ShotType::Clear,
        ShotType::PushRush,
        ShotType::Smash,
        ShotType::DefensiveShot,
        ShotType::Drive,
        ShotType::Lob,
        ShotType::Drop,
        ShotType::CantReach,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<ShotType> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ShotType::Receiving => "receiving",
            ShotType::ShortService => "short service",
            ShotType::LongService => "long service",
            ShotType::NetShot => "net shot",
            ShotType::Clear => "clear",
            ShotType::PushRush => "push/rush",
            ShotType::Smash => "smash",
            ShotType::DefensiveShot => "defensive shot",
            ShotType::Drive => "drive",
            ShotType::Lob => "lob",
            ShotType::Drop => "drop",
            ShotType::CantReach => "can't reach",
        }
    }

    /// Case-insensitive lookup by label.
    pub fn from_name(label: &str) -> Option<ShotType> {
        let label = label.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|s| s.name() == label)
    }
}

impl std::fmt::Display for ShotType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Score information from the hitter's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreInfo {
    pub own_score: u32,
    pub opp_score: u32,
    pub set_index: u32,
}

impl Default for ScoreInfo {
    fn default() -> Self {
        ScoreInfo { own_score: 0, opp_score: 0, set_index: 1 }
    }
}

impl ScoreInfo {
    pub fn swapped(&self) -> ScoreInfo {
        ScoreInfo { own_score: self.opp_score, opp_score: self.own_score, set_index: self.set_index }
    }
}

/// Observation of the player about to hit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    pub score: ScoreInfo,
    pub shuttle_pos: Position,
    pub incoming_shot: ShotType,
    pub self_pos: Position,
    pub opp_pos: Position,
    pub opp_move: Displacement,
}

impl PlayerState {
    pub fn is_finite(&self) -> bool {
        self.shuttle_pos.is_finite()
            && self.self_pos.is_finite()
            && self.opp_pos.is_finite()
            && self.opp_move.is_finite()
    }

    fn map_positions(&mut self, f: impl Fn(Position) -> Position, g: impl Fn(Displacement) -> Displacement) {
        self.shuttle_pos = f(self.shuttle_pos);
        self.self_pos = f(self.self_pos);
        self.opp_pos = f(self.opp_pos);
        self.opp_move = g(self.opp_move);
    }
}

/// A hitter's decision: where the shuttle lands, which shot, where the hitter moves afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub landing: Position,
    pub shot: ShotType,
    #[serde(rename = "move")]
    pub move_to: Position,
}

impl Action {
    pub fn is_finite(&self) -> bool {
        self.landing.is_finite() && self.move_to.is_finite()
    }

    /// "Can't reach" carries positions but ends the rally.
    pub fn is_miss(&self) -> bool {
        self.shot == ShotType::CantReach
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub player: String,
    pub state: PlayerState,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RallySource {
    Real,
    Synthetic,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rally {
    pub rally_id: String,
    pub starter: String,
    pub second: String,
    pub strokes: Vec<Stroke>,
    pub winner: String,
    pub source: RallySource,
}

impl Rally {
    pub fn len(&self) -> usize {
        self.strokes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strokes.is_empty()
    }

    /// Player acting at 1-indexed step `t`: the starter on odd steps.
    pub fn actor_at(&self, t: usize) -> &str {
        if t % 2 == 1 {
            &self.starter
        } else {
            &self.second
        }
    }

    pub fn other(&self, player: &str) -> &str {
        if player == self.starter {
            &self.second
        } else {
            &self.starter
        }
    }

    /// Indices (0-based) of the strokes hit by `side` (0 = starter, 1 = second).
    pub fn side_indices(&self, side: usize) -> impl Iterator<Item = usize> + '_ {
        (side..self.strokes.len()).step_by(2)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Error::MalformedRally { rally_id: self.rally_id.clone(), reason };
        if self.strokes.is_empty() {
            return Err(bad("rally has no strokes".into()));
        }
        if self.starter == self.second {
            return Err(bad("starter and second player are the same".into()));
        }
        for (i, stroke) in self.strokes.iter().enumerate() {
            let expected = self.actor_at(i + 1);
            if stroke.player != expected {
                return Err(bad(format!(
                    "stroke {} hit by `{}`, expected `{}` (strokes must alternate)",
                    i + 1,
                    stroke.player,
                    expected
                )));
            }
            if !stroke.state.is_finite() || !stroke.action.is_finite() {
                return Err(bad(format!("stroke {} has non-finite coordinates", i + 1)));
            }
        }
        if self.winner != self.starter && self.winner != self.second {
            return Err(bad(format!("winner `{}` is not a participant", self.winner)));
        }
        Ok(())
    }

    /// The player who commits the terminal event loses.
    pub fn infer_winner(&self) -> String {
        let last = self.strokes.len();
        self.other(self.actor_at(last)).to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub min: f64,
    pub max: f64,
}

impl AxisRange {
    pub fn width(&self) -> f64 {
        self.max - self.min
    }
}

/// Raw coordinate ranges mapped onto `[-1, 1]` by normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CourtRanges {
    pub x: AxisRange,
    pub y: AxisRange,
}

impl Default for CourtRanges {
    /// Full court bounding box in centimetres (6.10 m by 13.40 m).
    fn default() -> Self {
        CourtRanges { x: AxisRange { min: 0.0, max: 610.0 }, y: AxisRange { min: 0.0, max: 1340.0 } }
    }
}

impl CourtRanges {
    pub const NORMALIZED: CourtRanges =
        CourtRanges { x: AxisRange { min: -1.0, max: 1.0 }, y: AxisRange { min: -1.0, max: 1.0 } };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Absolute,
    Hitter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub court: CourtRanges,
    pub normalized: bool,
    pub frame: Frame,
    pub players: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub rallies: Vec<Rally>,
}

impl Dataset {
    /// Builds a dataset and its player registry from rallies.
    pub fn from_rallies(rallies: Vec<Rally>, court: CourtRanges, normalized: bool, frame: Frame) -> Self {
        let mut players: Vec<String> =
            rallies.iter().flat_map(|r| [r.starter.clone(), r.second.clone()]).collect();
        players.sort();
        players.dedup();
        Dataset { header: DatasetHeader { court, normalized, frame, players }, rallies }
    }

    pub fn len(&self) -> usize {
        self.rallies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rallies.is_empty()
    }

    pub fn n_strokes(&self) -> usize {
        self.rallies.iter().map(Rally::len).sum()
    }

    pub fn players(&self) -> &[String] {
        &self.header.players
    }

    pub fn validate(&self) -> Result<()> {
        for rally in &self.rallies {
            rally.validate()?;
            for p in [&rally.starter, &rally.second] {
                if self.header.players.binary_search(p).is_err() {
                    return Err(Error::UnknownPlayer(p.clone()));
                }
            }
        }
        Ok(())
    }

    /// Subset sharing this dataset's header.
    pub fn with_rallies(&self, rallies: Vec<Rally>) -> Dataset {
        Dataset { header: self.header.clone(), rallies }
    }
}

fn normalize_axis(v: f64, r: AxisRange) -> f64 {
    2.0 * (v - r.min) / r.width() - 1.0
}

/// Affinely maps the recorded court ranges onto `[-1, 1]` on both axes.
///
/// Already-normalized datasets are returned unchanged, so the operation is
/// idempotent.
pub fn normalize_coordinates(d: &Dataset) -> Result<Dataset> {
    let court = d.header.court;
    if d.header.normalized || court == CourtRanges::NORMALIZED {
        let mut out = d.clone();
        out.header.normalized = true;
        out.header.court = CourtRanges::NORMALIZED;
        return Ok(out);
    }
    for (axis, r) in [("x", court.x), ("y", court.y)] {
        if !(r.width() > 0.0) || !r.width().is_finite() {
            return Err(Error::DegenerateCourt { axis, min: r.min, max: r.max });
        }
    }
    let pos = |p: Position| Position { x: normalize_axis(p.x, court.x), y: normalize_axis(p.y, court.y) };
    let disp = |p: Displacement| Position { x: 2.0 * p.x / court.x.width(), y: 2.0 * p.y / court.y.width() };
    let mut out = d.clone();
    for stroke in out.rallies.iter_mut().flat_map(|r| r.strokes.iter_mut()) {
        stroke.state.map_positions(pos, disp);
        stroke.action.landing = pos(stroke.action.landing);
        stroke.action.move_to = pos(stroke.action.move_to);
    }
    out.header.court = CourtRanges::NORMALIZED;
    out.header.normalized = true;
    Ok(out)
}

/// Re-expresses every stroke in its hitter's frame: strokes whose hitter stands
/// on the `y > 0` half are reflected through the court center.
pub fn to_hitter_frame(d: &Dataset) -> Result<Dataset> {
    if !d.header.normalized {
        return Err(Error::InvalidArgument("hitter frame requires normalized coordinates".into()));
    }
    let mut out = d.clone();
    if d.header.frame == Frame::Hitter {
        return Ok(out);
    }
    for stroke in out.rallies.iter_mut().flat_map(|r| r.strokes.iter_mut()) {
        if stroke.state.self_pos.y > 0.0 {
            stroke.state.map_positions(|p| p.mirrored(), |v| v.mirrored());
            stroke.action.landing = stroke.action.landing.mirrored();
            stroke.action.move_to = stroke.action.move_to.mirrored();
        }
    }
    out.header.frame = Frame::Hitter;
    Ok(out)
}

/// Splits by rally order: the first `floor(ratio * n)` rallies train, the rest test.
pub fn split_dataset(d: &Dataset, ratio: f64) -> Result<(Dataset, Dataset)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must be in (0, 1), got {ratio}")));
    }
    if d.is_empty() {
        return Err(Error::EmptyInput("cannot split an empty dataset"));
    }
    let n_train = (ratio * d.len() as f64).floor() as usize;
    let (train, test) = d.rallies.split_at(n_train);
    Ok((d.with_rallies(train.to_vec()), d.with_rallies(test.to_vec())))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn state(shuttle: (f64, f64), incoming: ShotType, me: (f64, f64), opp: (f64, f64)) -> PlayerState {
        PlayerState {
            score: ScoreInfo::default(),
            shuttle_pos: Position { x: shuttle.0, y: shuttle.1 },
            incoming_shot: incoming,
            self_pos: Position { x: me.0, y: me.1 },
            opp_pos: Position { x: opp.0, y: opp.1 },
            opp_move: Position::ORIGIN,
        }
    }

    pub fn action(landing: (f64, f64), shot: ShotType, mv: (f64, f64)) -> Action {
        Action {
            landing: Position { x: landing.0, y: landing.1 },
            shot,
            move_to: Position { x: mv.0, y: mv.1 },
        }
    }

    /// Alternating rally between "A" and "B" with the given (state, action) pairs.
    pub fn rally(id: &str, strokes: Vec<(PlayerState, Action)>) -> Rally {
        let mut r = Rally {
            rally_id: id.to_string(),
            starter: "A".into(),
            second: "B".into(),
            strokes: strokes
                .into_iter()
                .enumerate()
                .map(|(i, (state, action))| Stroke {
                    player: if i % 2 == 0 { "A".into() } else { "B".into() },
                    state,
                    action,
                })
                .collect(),
            winner: String::new(),
            source: RallySource::Synthetic,
        };
        r.winner = r.infer_winner();
        r
    }

    pub fn simple_rally(id: &str, n: usize) -> Rally {
        let strokes = (0..n)
            .map(|i| {
                let f = i as f64 * 0.1;
                (
                    state((0.1 + f, -0.5), ShotType::Clear, (-0.2, -0.5), (0.3, 0.5)),
                    action((0.2, 0.6 - f * 0.5), ShotType::Clear, (0.0, -0.4)),
                )
            })
            .collect();
        rally(id, strokes)
    }

    pub fn dataset(rallies: Vec<Rally>) -> Dataset {
        Dataset::from_rallies(rallies, CourtRanges::NORMALIZED, true, Frame::Hitter)
    }
}
