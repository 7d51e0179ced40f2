//! Player registry, the per-player state embedder, and the padded batch layout
//! shared by every learned policy.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::heads::{action_features, state_features, ACTION_FEATURES, STATE_FEATURES};
use crate::data::{Action, PlayerState, Rally};
use crate::error::{Error, Result};
use crate::nn::{device, CausalEncoder, Init, ParamStore, DTYPE};

/// Reserved name for the embedding row used for unseen players.
pub const GENERIC_PLAYER: &str = "<generic>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerRegistry {
    players: Vec<String>,
}

impl PlayerRegistry {
    pub fn new(players: &[String]) -> Self {
        PlayerRegistry { players: players.to_vec() }
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    /// Embedding rows, including the generic row 0.
    pub fn n_rows(&self) -> usize {
        self.players.len() + 1
    }

    pub fn row(&self, name: &str) -> Result<usize> {
        if name == GENERIC_PLAYER {
            return Ok(0);
        }
        self.players.iter().position(|p| p == name).map(|i| i + 1).ok_or_else(|| Error::UnknownPlayer(name.into()))
    }

    pub fn row_or_generic(&self, name: &str) -> usize {
        self.row(name).unwrap_or(0)
    }
}

/// `x = [player embedding ; causal encoding of the player's own states]`.
pub struct StateEmbedder {
    table: Tensor,
    encoder: CausalEncoder,
    player_dim: usize,
    state_dim: usize,
}

impl StateEmbedder {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        n_rows: usize,
        player_dim: usize,
        state_dim: usize,
        heads: usize,
        max_positions: usize,
    ) -> Result<Self> {
        Ok(StateEmbedder {
            table: ps.get(&format!("{name}.players"), &[n_rows, player_dim], Init::Normal(0.1))?,
            encoder: CausalEncoder::new(ps, &format!("{name}.rally"), STATE_FEATURES, state_dim, heads, max_positions)?,
            player_dim,
            state_dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.player_dim + self.state_dim
    }

    pub fn max_positions(&self) -> usize {
        self.encoder.max_len()
    }

    /// `states: [n, len, F]`, `rows: [n * len]` player rows → `[n, len, dim]`.
    pub fn forward(&self, states: &Tensor, rows: &Tensor) -> Result<Tensor> {
        let (n, len, _) = states.dims3()?;
        let r = self.encoder.forward(states)?;
        let p = self.table.index_select(rows, 0)?.reshape((n, len, self.player_dim))?;
        Ok(Tensor::cat(&[&p, &r], 2)?)
    }

    /// Embedding `[dim]` of `current` after the player's own `history`.
    pub fn embed_one(&self, history: &[PlayerState], current: &PlayerState, row: usize) -> Result<Tensor> {
        if row >= self.table.dims()[0] {
            return Err(Error::UnknownPlayer(format!("embedding row {row}")));
        }
        let m = history.len() + 1;
        let start = window_start(m - 1, self.max_positions());
        let feats: Vec<f64> =
            history[start..].iter().chain(std::iter::once(current)).flat_map(|s| state_features(s)).collect();
        let len = m - start;
        let states = Tensor::from_vec(feats, (1, len, STATE_FEATURES), &device())?;
        let rows = Tensor::from_vec(vec![row as u32; len], len, &device())?;
        Ok(self.forward(&states, &rows)?.get(0)?.get(len - 1)?)
    }
}

/// First index of the positional window containing 0-based position `i`.
pub fn window_start(i: usize, max_positions: usize) -> usize {
    (i / max_positions) * max_positions
}

/// Per-player layout of a batch of rallies.
///
/// Strokes are numbered rally-major. "Chunks" are windows of one player's
/// strokes no longer than the embedder's positional table; "sides" are whole
/// per-player sequences.
pub struct BatchLayout {
    pub n_rallies: usize,
    /// `(rally, stroke index)` per row.
    pub strokes: Vec<(usize, usize)>,
    pub chunks: Vec<(usize, Vec<usize>)>,
    pub chunk_len: usize,
    /// Flat position of each stroke in the `[chunks * chunk_len]` grid.
    pub chunk_pos: Vec<u32>,
    pub sides: Vec<(usize, Vec<usize>)>,
    pub side_len: usize,
    /// `(side, offset)` of each stroke.
    pub side_pos: Vec<(usize, usize)>,
}

impl BatchLayout {
    pub fn new(rallies: &[&Rally], max_positions: usize) -> Result<Self> {
        if rallies.is_empty() {
            return Err(Error::EmptyInput("batch has no rallies"));
        }
        let mut strokes = Vec::new();
        let mut row_of = Vec::with_capacity(rallies.len());
        for (b, r) in rallies.iter().enumerate() {
            row_of.push(strokes.len());
            strokes.extend((0..r.len()).map(|t| (b, t)));
        }
        let mut chunks = Vec::new();
        let mut sides = Vec::new();
        let mut chunk_at = vec![(0usize, 0usize); strokes.len()];
        let mut side_pos = vec![(0usize, 0usize); strokes.len()];
        for (b, r) in rallies.iter().enumerate() {
            for side in 0..2 {
                let steps: Vec<usize> = r.side_indices(side).collect();
                if steps.is_empty() {
                    continue;
                }
                for (j, &t) in steps.iter().enumerate() {
                    side_pos[row_of[b] + t] = (sides.len(), j);
                }
                for part in steps.chunks(max_positions) {
                    for (j, &t) in part.iter().enumerate() {
                        chunk_at[row_of[b] + t] = (chunks.len(), j);
                    }
                    chunks.push((b, part.to_vec()));
                }
                sides.push((b, steps));
            }
        }
        let chunk_len = chunks.iter().map(|c| c.1.len()).max().unwrap_or(1);
        let side_len = sides.iter().map(|s| s.1.len()).max().unwrap_or(1);
        let chunk_pos = chunk_at.iter().map(|&(c, j)| (c * chunk_len + j) as u32).collect();
        Ok(BatchLayout { n_rallies: rallies.len(), strokes, chunks, chunk_len, chunk_pos, sides, side_len, side_pos })
    }

    pub fn n_strokes(&self) -> usize {
        self.strokes.len()
    }

    /// Chunk state features `[chunks, chunk_len, F]`, zero padded.
    pub fn chunk_states(&self, rallies: &[&Rally]) -> Result<Tensor> {
        let w = STATE_FEATURES;
        let mut data = vec![0.0; self.chunks.len() * self.chunk_len * w];
        for (c, (b, steps)) in self.chunks.iter().enumerate() {
            for (j, &t) in steps.iter().enumerate() {
                let at = (c * self.chunk_len + j) * w;
                data[at..at + w].copy_from_slice(&state_features(&rallies[*b].strokes[t].state));
            }
        }
        Ok(Tensor::from_vec(data, (self.chunks.len(), self.chunk_len, w), &device())?)
    }

    /// Player row for every chunk position, flattened `[chunks * chunk_len]`.
    pub fn chunk_rows(&self, rallies: &[&Rally], reg: &PlayerRegistry) -> Result<Vec<u32>> {
        let mut rows = Vec::with_capacity(self.chunks.len() * self.chunk_len);
        for (b, steps) in &self.chunks {
            let row = reg.row(&rallies[*b].strokes[steps[0]].player)? as u32;
            rows.extend(std::iter::repeat(row).take(self.chunk_len));
        }
        Ok(rows)
    }

    /// Whole-side action features `[sides, side_len, A]`, zero padded.
    pub fn side_actions(&self, rallies: &[&Rally]) -> Result<Tensor> {
        let w = ACTION_FEATURES;
        let mut data = vec![0.0; self.sides.len() * self.side_len * w];
        for (i, (b, steps)) in self.sides.iter().enumerate() {
            for (j, &t) in steps.iter().enumerate() {
                let at = (i * self.side_len + j) * w;
                data[at..at + w].copy_from_slice(&action_features(&rallies[*b].strokes[t].action));
            }
        }
        Ok(Tensor::from_vec(data, (self.sides.len(), self.side_len, w), &device())?)
    }

    pub fn side_lengths(&self) -> Vec<usize> {
        self.sides.iter().map(|s| s.1.len()).collect()
    }

    /// Flat position of each stroke in the `[sides * side_len]` grid.
    pub fn side_gather(&self) -> Result<Tensor> {
        let v: Vec<u32> = self.side_pos.iter().map(|&(s, j)| (s * self.side_len + j) as u32).collect();
        let n = v.len();
        Ok(Tensor::from_vec(v, n, &device())?)
    }

    pub fn actions(&self, rallies: &[&Rally]) -> Vec<Action> {
        self.strokes.iter().map(|&(b, t)| rallies[b].strokes[t].action).collect()
    }

    /// 1-based stroke step over `time_scale`, `[n, 1]`.
    pub fn step_column(&self, time_scale: f64) -> Result<Tensor> {
        let v: Vec<f64> = self.strokes.iter().map(|&(_, t)| (t + 1) as f64 / time_scale).collect();
        Ok(Tensor::from_vec(v, (self.n_strokes(), 1), &device())?)
    }

    /// `[n, n]` with ones where row and column share a rally and the column
    /// stroke is not later than the row stroke.
    pub fn cumulative(&self) -> Result<Tensor> {
        let n = self.n_strokes();
        let mut m = vec![0.0; n * n];
        for (i, &(bi, ti)) in self.strokes.iter().enumerate() {
            for (j, &(bj, tj)) in self.strokes.iter().enumerate() {
                if bi == bj && tj <= ti {
                    m[i * n + j] = 1.0;
                }
            }
        }
        Ok(Tensor::from_vec(m, (n, n), &device())?)
    }

    /// `[sides, n]` indicator of each stroke's side.
    pub fn side_membership(&self) -> Result<Tensor> {
        let (s, n) = (self.sides.len(), self.n_strokes());
        let mut m = vec![0.0; s * n];
        for (i, &(side, _)) in self.side_pos.iter().enumerate() {
            m[side * n + i] = 1.0;
        }
        Ok(Tensor::from_vec(m, (s, n), &device())?)
    }

    /// Row of the first stroke of every side.
    pub fn side_first_rows(&self) -> Vec<u32> {
        let mut first = vec![0u32; self.sides.len()];
        for (i, &(side, j)) in self.side_pos.iter().enumerate() {
            if j == 0 {
                first[side] = i as u32;
            }
        }
        first
    }
}

/// Embeds every stroke of a batch: `[n_strokes, dim]`.
pub fn embed_batch(
    embedder: &StateEmbedder,
    layout: &BatchLayout,
    rallies: &[&Rally],
    rows: Vec<u32>,
) -> Result<Tensor> {
    let states = layout.chunk_states(rallies)?;
    let n = rows.len();
    let rows = Tensor::from_vec(rows, n, &device())?;
    let x = embedder.forward(&states, &rows)?;
    let flat = x.reshape((layout.chunks.len() * layout.chunk_len, embedder.dim()))?;
    let pos = Tensor::from_vec(layout.chunk_pos.clone(), layout.n_strokes(), &device())?;
    Ok(flat.index_select(&pos, 0)?)
}

/// Replaces a `rate` fraction of player rows with the generic row.
pub fn drop_players(rows: &mut [u32], rate: f64, rng: &mut impl rand::Rng) {
    for r in rows.iter_mut() {
        if rng.gen::<f64>() < rate {
            *r = 0;
        }
    }
}

pub fn zeros(shape: &[usize]) -> Result<Tensor> {
    Ok(Tensor::zeros(shape, DTYPE, &device())?)
}
