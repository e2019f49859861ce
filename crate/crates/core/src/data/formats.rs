//! Track table readers, registered by format name.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;

use crate::data::AgentTrack;
use crate::error::{Error, Result};
use crate::scene::{convert_units, LengthUnit, Point};

/// Column layout of one track table flavour.
pub trait TrackFormat: Send + Sync {
    fn name(&self) -> &'static str;

    fn source_rate(&self) -> u32;

    /// Header names for id, frame, longitudinal, lateral and lane columns.
    fn columns(&self) -> [&'static str; 5];

    fn unit(&self) -> LengthUnit;

    /// Maps the file's longitudinal and lateral readings to a position.
    fn position(&self, longitudinal: f64, lateral: f64) -> Point {
        Point::new(
            convert_units(longitudinal, self.unit()),
            convert_units(lateral, self.unit()),
        )
    }
}

/// NGSIM: `Local_Y` runs along the road and `Local_X` across it, in feet.
pub struct Ngsim;

impl TrackFormat for Ngsim {
    fn name(&self) -> &'static str {
        "ngsim"
    }
    fn source_rate(&self) -> u32 {
        10
    }
    fn columns(&self) -> [&'static str; 5] {
        ["Vehicle_ID", "Frame_ID", "Local_Y", "Local_X", "Lane_ID"]
    }
    fn unit(&self) -> LengthUnit {
        LengthUnit::Feet
    }
}

pub struct HighD;

impl TrackFormat for HighD {
    fn name(&self) -> &'static str {
        "highd"
    }
    fn source_rate(&self) -> u32 {
        25
    }
    fn columns(&self) -> [&'static str; 5] {
        ["id", "frame", "x", "y", "laneId"]
    }
    fn unit(&self) -> LengthUnit {
        LengthUnit::Meters
    }
}

/// The generator's own 5 Hz layout.
pub struct SyntheticNative;

impl TrackFormat for SyntheticNative {
    fn name(&self) -> &'static str {
        "synthetic"
    }
    fn source_rate(&self) -> u32 {
        5
    }
    fn columns(&self) -> [&'static str; 5] {
        ["id", "frame", "x_m", "y_m", "lane"]
    }
    fn unit(&self) -> LengthUnit {
        LengthUnit::Meters
    }
}

pub struct FormatRegistry {
    entries: Vec<Box<dyn TrackFormat>>,
}

impl FormatRegistry {
    pub fn get(&self, name: &str) -> Option<&dyn TrackFormat> {
        let name = name.to_ascii_lowercase();
        let name = if name == "synthetic-native" { "synthetic" } else { name.as_str() };
        self.entries.iter().find(|f| f.name() == name).map(|f| f.as_ref())
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|f| f.name()).collect()
    }
}

pub fn formats() -> &'static FormatRegistry {
    static REGISTRY: OnceLock<FormatRegistry> = OnceLock::new();
    REGISTRY.get_or_init(|| FormatRegistry {
        entries: vec![Box::new(Ngsim), Box::new(HighD), Box::new(SyntheticNative)],
    })
}

pub fn load_tracks(path: &Path, format: &str) -> Result<Vec<AgentTrack>> {
    let fmt = formats()
        .get(format)
        .ok_or_else(|| Error::UnknownFormat(format.to_string()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tracks(&text, fmt)
}

/// Parses a CSV table. Rows of one agent must appear in increasing frame
/// order; agents come out sorted by id.
pub fn parse_tracks(text: &str, fmt: &dyn TrackFormat) -> Result<Vec<AgentTrack>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| csv_error(e, "header"))?.clone();
    let names = fmt.columns();
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(names) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            column: name.to_string(),
            message: "column missing from header".into(),
        })?;
    }

    let mut tracks: BTreeMap<u64, AgentTrack> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(e, "row"))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |k: usize| -> Result<&str> {
            record.get(idx[k]).ok_or_else(|| Error::Parse {
                line,
                column: names[k].to_string(),
                message: "missing field".into(),
            })
        };
        let parse_f = |k: usize| -> Result<f64> {
            let s = field(k)?;
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    column: names[k].to_string(),
                    message: format!("'{s}' is not a finite number"),
                })
        };
        let parse_i = |k: usize| -> Result<i64> {
            let s = field(k)?;
            // Some exports write integer columns as floats ("12.0").
            s.parse::<i64>()
                .ok()
                .or_else(|| s.parse::<f64>().ok().filter(|v| v.fract() == 0.0).map(|v| v as i64))
                .ok_or_else(|| Error::Parse {
                    line,
                    column: names[k].to_string(),
                    message: format!("'{s}' is not an integer"),
                })
        };
        let id = parse_i(0)?;
        if id < 0 {
            return Err(Error::Parse {
                line,
                column: names[0].to_string(),
                message: format!("negative id {id}"),
            });
        }
        let id = id as u64;
        let frame = parse_i(1)?;
        let pos = fmt.position(parse_f(2)?, parse_f(3)?);
        let lane = parse_i(4)? as i32;

        let track = tracks.entry(id).or_insert_with(|| AgentTrack {
            agent_id: id,
            frames: Vec::new(),
            positions: Vec::new(),
            lane_ids: Vec::new(),
            source_rate: fmt.source_rate(),
        });
        if track.frames.last().is_some_and(|&f| frame <= f) {
            return Err(Error::NonMonotonicFrames { agent: id, frame });
        }
        track.frames.push(frame);
        track.positions.push(pos);
        track.lane_ids.push(lane);
    }
    Ok(tracks.into_values().collect())
}

fn csv_error(e: csv::Error, what: &str) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::Parse {
        line,
        column: what.to_string(),
        message: e.to_string(),
    }
}

/// Writes tracks in the synthetic-native layout. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_synthetic(tracks: &[AgentTrack], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "id,frame,x_m,y_m,lane")?;
    for t in tracks {
        for k in 0..t.frames.len() {
            let p = t.positions[k];
            writeln!(out, "{},{},{},{},{}", t.agent_id, t.frames[k], p.x, p.y, t.lane_ids[k])?;
        }
    }
    Ok(())
}
