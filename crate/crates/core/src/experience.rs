//! Grid-keyed retrieval of historical action sequences.
//!
//! Every training stroke is stored under the 10x10 cells of the shuttle, the
//! hitter and the opponent plus the incoming shot type. A stored sequence is
//! the hitter's own remaining actions in that rally. Lookups that find nothing
//! widen step by step:
//!
//! * level 0: exact key
//! * level 1: any incoming shot
//! * level 1 + r: every cell within Chebyshev radius `r`, for `r = 1..=max_radius`
//! * last level: every stored sequence, same incoming shot first
//!
//! Each level's match set contains the previous one's.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{dataset_hash, Action, Dataset, PlayerState, Position, Rally, ShotType, N_SHOT_TYPES};
use crate::error::{Error, Result};

pub const GRID: usize = 10;
pub const DEFAULT_CAP: usize = 5;
pub const DEFAULT_MAX_RADIUS: usize = 3;

pub type Cell = (u8, u8);

pub fn discretize_position(p: Position) -> Result<Cell> {
    if !p.is_finite() {
        return Err(Error::InvalidPosition { x: p.x, y: p.y });
    }
    let idx = |v: f64| ((v + 1.0) * 5.0).floor().clamp(0.0, (GRID - 1) as f64) as u8;
    Ok((idx(p.x), idx(p.y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridKey {
    pub shuttle: Cell,
    pub self_cell: Cell,
    pub opp_cell: Cell,
    pub shot: ShotType,
}

impl GridKey {
    pub fn of(s: &PlayerState) -> Result<GridKey> {
        Ok(GridKey {
            shuttle: discretize_position(s.shuttle_pos)?,
            self_cell: discretize_position(s.self_pos)?,
            opp_cell: discretize_position(s.opp_pos)?,
            shot: s.incoming_shot,
        })
    }

    fn cells(&self) -> [Cell; 3] {
        [self.shuttle, self.self_cell, self.opp_cell]
    }

    fn cheb(a: Cell, b: Cell) -> usize {
        (a.0.abs_diff(b.0)).max(a.1.abs_diff(b.1)) as usize
    }

    /// Largest per-cell Chebyshev distance, and the sum over the three cells.
    fn distance(&self, other: &GridKey) -> (usize, usize) {
        let d = [0, 1, 2].map(|i| Self::cheb(self.cells()[i], other.cells()[i]));
        (d.into_iter().max().unwrap_or(0), d.into_iter().sum())
    }
}

/// One player's action sequence in one rally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerSequence {
    pub rally_id: String,
    pub player: String,
    /// 0-based rally step of each action.
    pub steps: Vec<usize>,
    pub actions: Vec<Action>,
}

/// A stored experience: the suffix of `sequences[seq]` starting at `offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpRef {
    pub seq: usize,
    pub offset: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Entry {
    key: GridKey,
    r: ExpRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperienceIndex {
    pub cap: usize,
    pub max_radius: usize,
    pub dataset_hash: String,
    pub sequences: Vec<PlayerSequence>,
    entries: Vec<Entry>,
    #[serde(skip)]
    exact: BTreeMap<GridKey, Vec<usize>>,
    #[serde(skip)]
    by_cells: BTreeMap<[Cell; 3], Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceSet {
    /// The hitter's true remaining actions; known only for recorded rallies.
    pub target_seq: Option<Vec<Action>>,
    pub retrieved: Vec<Vec<Action>>,
    pub refs: Vec<ExpRef>,
    pub relaxation_level: usize,
}

/// The first actions of the retrieved sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub shot_hist: [f64; N_SHOT_TYPES],
    pub landings: Vec<Position>,
    pub moves: Vec<Position>,
    pub relaxation_level: usize,
}

/// The hitter's own actions from 0-based stroke `step` to the end of the rally.
pub fn target_sequence(rally: &Rally, step: usize) -> Vec<Action> {
    let player = &rally.strokes[step].player;
    rally.strokes[step..].iter().filter(|s| &s.player == player).map(|s| s.action).collect()
}

pub fn build_index(train: &Dataset, cap: usize) -> Result<ExperienceIndex> {
    if !train.header.normalized {
        return Err(Error::InvalidArgument("experience index requires normalized coordinates".into()));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("experience cap must be positive".into()));
    }
    let mut sequences = Vec::new();
    let mut entries = Vec::new();
    for rally in &train.rallies {
        for side in 0..2 {
            let steps: Vec<usize> = rally.side_indices(side).collect();
            if steps.is_empty() {
                continue;
            }
            let seq = sequences.len();
            for (offset, &t) in steps.iter().enumerate() {
                entries.push(Entry { key: GridKey::of(&rally.strokes[t].state)?, r: ExpRef { seq, offset } });
            }
            sequences.push(PlayerSequence {
                rally_id: rally.rally_id.clone(),
                player: rally.strokes[steps[0]].player.clone(),
                actions: steps.iter().map(|&t| rally.strokes[t].action).collect(),
                steps,
            });
        }
    }
    let mut idx = ExperienceIndex {
        cap,
        max_radius: DEFAULT_MAX_RADIUS,
        dataset_hash: dataset_hash(train),
        sequences,
        entries,
        exact: BTreeMap::new(),
        by_cells: BTreeMap::new(),
    };
    idx.sort_entries();
    idx.rebuild_tables();
    Ok(idx)
}

impl ExperienceIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Level reported when nothing narrower matched.
    pub fn fallback_level(&self) -> usize {
        self.max_radius + 2
    }

    pub fn suffix(&self, r: ExpRef) -> &[Action] {
        &self.sequences[r.seq].actions[r.offset..]
    }

    fn order_key(&self, e: &Entry) -> (&str, usize) {
        let s = &self.sequences[e.r.seq];
        (s.rally_id.as_str(), s.steps[e.r.offset])
    }

    fn sort_entries(&mut self) {
        let mut entries = std::mem::take(&mut self.entries);
        entries.sort_by(|a, b| self.order_key(a).cmp(&self.order_key(b)));
        self.entries = entries;
    }

    fn rebuild_tables(&mut self) {
        self.exact.clear();
        self.by_cells.clear();
        for (i, e) in self.entries.iter().enumerate() {
            self.exact.entry(e.key).or_default().push(i);
            self.by_cells.entry(e.key.cells()).or_default().push(i);
        }
    }

    /// Entry ids matching `key` at `level`, nearest first, uncapped.
    pub fn match_set(&self, key: &GridKey, level: usize, exclude_rally: Option<&str>) -> Vec<usize> {
        let keep = |i: &usize| exclude_rally.map_or(true, |r| self.sequences[self.entries[*i].r.seq].rally_id != r);
        // Entries are stored in (rally_id, step) order, so stable sorts keep that as the tie-break.
        let mut ids: Vec<usize> = match level {
            0 => self.exact.get(key).map_or(Vec::new(), |v| v.iter().copied().filter(keep).collect()),
            1 => self.by_cells.get(&key.cells()).map_or(Vec::new(), |v| v.iter().copied().filter(keep).collect()),
            l if l <= self.max_radius + 1 => {
                let radius = l - 1;
                (0..self.entries.len()).filter(keep).filter(|&i| self.entries[i].key.distance(key).0 <= radius).collect()
            }
            _ => (0..self.entries.len()).filter(keep).collect(),
        };
        if level >= 2 {
            ids.sort_by_key(|&i| {
                let e = &self.entries[i].key;
                let same_shot = level > self.max_radius + 1 && e.shot != key.shot;
                (same_shot, e.distance(key).1)
            });
        }
        ids
    }

    /// Capped retrieval for `state`, relaxing until something matches.
    pub fn retrieve(&self, state: &PlayerState, exclude_rally: Option<&str>) -> Result<(Vec<ExpRef>, usize)> {
        let key = GridKey::of(state)?;
        for level in 0..=self.fallback_level() {
            let ids = self.match_set(&key, level, exclude_rally);
            if !ids.is_empty() {
                return Ok((ids.into_iter().take(self.cap).map(|i| self.entries[i].r).collect(), level));
            }
        }
        if exclude_rally.is_some() {
            return self.retrieve(state, None);
        }
        Ok((Vec::new(), self.fallback_level()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        serde_json::to_writer(BufWriter::new(File::create(path)?), self)?;
        Ok(())
    }

    /// Loads an index, rejecting it if it was built from a different dataset.
    pub fn load(path: impl AsRef<Path>, expected_hash: Option<&str>) -> Result<ExperienceIndex> {
        let mut idx: ExperienceIndex = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if let Some(h) = expected_hash {
            if h != idx.dataset_hash {
                return Err(Error::StaleArtifact { expected: h.to_string(), found: idx.dataset_hash });
            }
        }
        idx.rebuild_tables();
        Ok(idx)
    }
}

/// Retrieves experiences for `s`. With `rally_ctx = (rally, step)` the set also
/// carries the true remaining sequence and excludes that rally from retrieval.
pub fn extract_experiences(
    idx: &ExperienceIndex,
    s: &PlayerState,
    rally_ctx: Option<(&Rally, usize)>,
) -> Result<ExperienceSet> {
    let (refs, relaxation_level) = idx.retrieve(s, rally_ctx.map(|(r, _)| r.rally_id.as_str()))?;
    Ok(ExperienceSet {
        target_seq: rally_ctx.map(|(r, t)| target_sequence(r, t)),
        retrieved: refs.iter().map(|&r| idx.suffix(r).to_vec()).collect(),
        refs,
        relaxation_level,
    })
}

pub fn empirical_distributions(idx: &ExperienceIndex, s: &PlayerState) -> Result<EmpiricalDistribution> {
    let (refs, relaxation_level) = idx.retrieve(s, None)?;
    if refs.is_empty() {
        return Err(Error::EmptyInput("experience index is empty"));
    }
    let firsts: Vec<Action> = refs.iter().map(|&r| idx.suffix(r)[0]).collect();
    let mut shot_hist = [0.0; N_SHOT_TYPES];
    for a in &firsts {
        shot_hist[a.shot.id()] += 1.0 / firsts.len() as f64;
    }
    Ok(EmpiricalDistribution {
        shot_hist,
        landings: firsts.iter().map(|a| a.landing).collect(),
        moves: firsts.iter().map(|a| a.move_to).collect(),
        relaxation_level,
    })
}
