use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Action, CourtRanges, Dataset, Frame, PlayerState, Position, Rally, RallySource, ScoreInfo, ShotType, Stroke};
use crate::error::{Error, Result};

/// Column names of a stroke-per-row CSV export.
///
/// Coordinates are raw absolute court coordinates; scores are from the
/// hitter's point of view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub match_id: String,
    pub rally_id: String,
    pub stroke_index: String,
    pub player: String,
    pub shot: String,
    pub landing_x: String,
    pub landing_y: String,
    pub player_x: String,
    pub player_y: String,
    pub opponent_x: String,
    pub opponent_y: String,
    pub player_score: String,
    pub opponent_score: String,
    pub set: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            match_id: "match_id".into(),
            rally_id: "rally_id".into(),
            stroke_index: "ball_round".into(),
            player: "player".into(),
            shot: "type".into(),
            landing_x: "landing_x".into(),
            landing_y: "landing_y".into(),
            player_x: "player_location_x".into(),
            player_y: "player_location_y".into(),
            opponent_x: "opponent_location_x".into(),
            opponent_y: "opponent_location_y".into(),
            player_score: "player_score".into(),
            opponent_score: "opponent_score".into(),
            set: "set".into(),
        }
    }
}

struct Columns {
    match_id: usize,
    rally_id: usize,
    stroke_index: usize,
    player: usize,
    shot: usize,
    landing: (usize, usize),
    player_pos: (usize, usize),
    opponent_pos: (usize, usize),
    player_score: usize,
    opponent_score: usize,
    set: usize,
}

impl Columns {
    fn resolve(schema: &CsvSchema, headers: &csv::StringRecord) -> Result<Columns> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        Ok(Columns {
            match_id: find(&schema.match_id)?,
            rally_id: find(&schema.rally_id)?,
            stroke_index: find(&schema.stroke_index)?,
            player: find(&schema.player)?,
            shot: find(&schema.shot)?,
            landing: (find(&schema.landing_x)?, find(&schema.landing_y)?),
            player_pos: (find(&schema.player_x)?, find(&schema.player_y)?),
            opponent_pos: (find(&schema.opponent_x)?, find(&schema.opponent_y)?),
            player_score: find(&schema.player_score)?,
            opponent_score: find(&schema.opponent_score)?,
            set: find(&schema.set)?,
        })
    }
}

struct Row {
    stroke_index: i64,
    player: String,
    shot: ShotType,
    landing: Position,
    player_pos: Position,
    opponent_pos: Position,
    score: ScoreInfo,
}

fn parse_row(rec: &csv::StringRecord, cols: &Columns, row: usize) -> Result<Row> {
    let bad = |reason: String| Error::MalformedRow { row, reason };
    let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let num = |i: usize| -> Result<f64> {
        field(i).parse::<f64>().map_err(|_| bad(format!("non-numeric value `{}`", field(i))))
    };
    let int = |i: usize| -> Result<u32> {
        let v = num(i)?;
        if v < 0.0 || v.fract() != 0.0 {
            return Err(bad(format!("expected a non-negative integer, got `{}`", field(i))));
        }
        Ok(v as u32)
    };
    let pos = |(x, y): (usize, usize)| -> Result<Position> {
        Position::new(num(x)?, num(y)?).map_err(|e| bad(e.to_string()))
    };
    let label = field(cols.shot);
    let shot = ShotType::from_name(label).ok_or_else(|| bad(format!("unknown shot type `{label}`")))?;
    Ok(Row {
        stroke_index: num(cols.stroke_index)? as i64,
        player: field(cols.player).to_string(),
        shot,
        landing: pos(cols.landing)?,
        player_pos: pos(cols.player_pos)?,
        opponent_pos: pos(cols.opponent_pos)?,
        score: ScoreInfo {
            own_score: int(cols.player_score)?,
            opp_score: int(cols.opponent_score)?,
            set_index: int(cols.set)?.max(1),
        },
    })
}

/// Turns the rows of one rally (sorted by stroke index) into states and actions.
///
/// The hitter's move target is where they stand at the opponent's next stroke;
/// the incoming shuttle is the previous stroke's landing.
fn build_rally(rally_id: String, rows: Vec<Row>, match_players: &[String]) -> Result<Rally> {
    let bad = |reason: String| Error::MalformedRally { rally_id: rally_id.clone(), reason };
    for w in rows.windows(2) {
        if w[0].player == w[1].player {
            return Err(bad(format!(
                "strokes {} and {} are both hit by `{}`",
                w[0].stroke_index, w[1].stroke_index, w[0].player
            )));
        }
    }
    let starter = rows[0].player.clone();
    let second = match rows.get(1) {
        Some(r) => r.player.clone(),
        None => match_players
            .iter()
            .find(|p| **p != starter)
            .cloned()
            .ok_or_else(|| bad("cannot determine the second player of a one-stroke rally".into()))?,
    };
    let mut strokes = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &rows[j]);
        let next = rows.get(i + 1);
        let state = PlayerState {
            score: row.score,
            shuttle_pos: prev.map_or(row.player_pos, |p| p.landing),
            incoming_shot: prev.map_or(ShotType::Receiving, |p| p.shot),
            self_pos: row.player_pos,
            opp_pos: row.opponent_pos,
            opp_move: prev.map_or(Position::ORIGIN, |p| row.opponent_pos.sub(&p.player_pos)),
        };
        let action = Action {
            landing: row.landing,
            shot: row.shot,
            move_to: next.map_or(row.player_pos, |n| n.opponent_pos),
        };
        strokes.push(Stroke { player: row.player.clone(), state, action });
    }
    let mut rally = Rally { rally_id, starter, second, strokes, winner: String::new(), source: RallySource::Real };
    rally.winner = rally.infer_winner();
    rally.validate()?;
    Ok(rally)
}

/// Reads a stroke-per-row CSV into a dataset with raw coordinates preserved.
pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema, court: CourtRanges) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = Columns::resolve(schema, rdr.headers()?)?;

    // Rallies keep the order of first appearance in the file.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), Vec<Row>> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row_no = i + 2; // 1-based, after the header line
        let key = (rec.get(cols.match_id).unwrap_or("").trim().to_string(), rec.get(cols.rally_id).unwrap_or("").trim().to_string());
        let row = parse_row(&rec, &cols, row_no)?;
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(row);
    }

    let mut match_players: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for ((m, _), rows) in &groups {
        let players = match_players.entry(m.clone()).or_default();
        for r in rows {
            if !players.contains(&r.player) {
                players.push(r.player.clone());
            }
        }
    }

    let mut rallies = Vec::with_capacity(order.len());
    for key in order {
        let mut rows = groups.remove(&key).unwrap_or_default();
        rows.sort_by_key(|r| r.stroke_index);
        let id = format!("{}-{}", key.0, key.1);
        rallies.push(build_rally(id, rows, &match_players[&key.0])?);
    }
    Ok(Dataset::from_rallies(rallies, court, false, Frame::Absolute))
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema, court: CourtRanges) -> Result<Dataset> {
    ingest_reader(std::fs::File::open(path)?, schema, court)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "match_id,rally_id,ball_round,player,type,landing_x,landing_y,player_location_x,player_location_y,opponent_location_x,opponent_location_y,player_score,opponent_score,set\n";

    fn ingest(body: &str) -> Result<Dataset> {
        ingest_reader(format!("{HEADER}{body}").as_bytes(), &CsvSchema::default(), CourtRanges::default())
    }

    #[test]
    fn two_stroke_rally() {
        let d = ingest(
            "1,1,1,Alice,short service,300,800,310,300,290,1000,0,0,1\n\
             1,1,2,Bob,net shot,280,500,300,800,305,400,0,0,1\n",
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        let r = &d.rallies[0];
        assert_eq!(r.len(), 2);
        assert_eq!((r.starter.as_str(), r.second.as_str()), ("Alice", "Bob"));
        assert_eq!(r.winner, "Alice");
        assert_eq!(r.strokes[0].state.incoming_shot, ShotType::Receiving);
        assert_eq!(r.strokes[1].state.shuttle_pos, Position { x: 300.0, y: 800.0 });
        assert_eq!(r.strokes[1].state.incoming_shot, ShotType::ShortService);
        // Alice's move target is where she stands when Bob hits.
        assert_eq!(r.strokes[0].action.move_to, Position { x: 305.0, y: 400.0 });
        assert_eq!(r.strokes[1].state.opp_move, Position { x: -5.0, y: 100.0 });
        assert_eq!(d.players(), ["Alice".to_string(), "Bob".to_string()]);
        assert!(!d.header.normalized);
    }

    #[test]
    fn unknown_shot_label_is_rejected() {
        let err = ingest("1,1,1,Alice,banana,300,800,310,300,290,1000,0,0,1\n").unwrap_err();
        assert!(matches!(err, Error::MalformedRow { row: 2, .. }), "{err}");
    }

    #[test]
    fn consecutive_strokes_by_same_player_are_rejected() {
        let err = ingest(
            "1,7,1,Alice,short service,300,800,310,300,290,1000,0,0,1\n\
             1,7,2,Alice,net shot,280,500,300,800,305,400,0,0,1\n",
        )
        .unwrap_err();
        match err {
            Error::MalformedRally { rally_id, .. } => assert_eq!(rally_id, "1-7"),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let err = ingest_reader("match_id,rally_id\n1,1\n".as_bytes(), &CsvSchema::default(), CourtRanges::default())
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "ball_round"), "{err}");
    }

    #[test]
    fn one_stroke_rally_takes_opponent_from_match() {
        let d = ingest(
            "1,1,1,Alice,short service,300,800,310,300,290,1000,0,0,1\n\
             1,1,2,Bob,net shot,280,500,300,800,305,400,0,0,1\n\
             1,2,1,Bob,can't reach,300,800,310,300,290,1000,0,1,1\n",
        )
        .unwrap();
        assert_eq!(d.rallies[1].second, "Alice");
        assert_eq!(d.rallies[1].winner, "Alice");
    }
}
