use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{CdsError, Result};

/// One observed position. `frame` counts 5 Hz ticks after loading.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
}

/// One vehicle's observations, sorted by frame.
#[derive(Clone, Debug)]
pub struct Track {
    pub agent_id: u64,
    pub points: Vec<TrackPoint>,
}

impl Track {
    pub fn position_at(&self, frame: i64) -> Option<[f64; 2]> {
        self.points
            .binary_search_by_key(&frame, |p| p.frame)
            .ok()
            .map(|i| [self.points[i].x, self.points[i].y])
    }
}

/// Loads `agent_id,frame,x,y` rows recorded at 10 Hz and decimates to 5 Hz by
/// keeping even frames (new frame = raw frame / 2). A header line is skipped
/// if the first field is not numeric. Frames must be strictly increasing per
/// agent; the returned tracks are ordered by agent id.
pub fn load_tracks_csv(path: &Path) -> Result<Vec<Track>> {
    let text = std::fs::read_to_string(path).map_err(|e| CdsError::io(path, e))?;
    let mut by_agent: BTreeMap<u64, Vec<TrackPoint>> = BTreeMap::new();
    let mut last_raw_frame: BTreeMap<u64, i64> = BTreeMap::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if idx == 0 && fields.first().map_or(false, |f| f.parse::<u64>().is_err()) {
            continue; // header row
        }
        if fields.len() != 4 {
            return Err(CdsError::DataFormat {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 4 fields agent_id,frame,x,y, got {}", fields.len()),
            });
        }
        let parse_err = |what: &str, val: &str| CdsError::DataFormat {
            path: path.to_path_buf(),
            line: line_no,
            msg: format!("invalid {what}: {val:?}"),
        };
        let agent_id: u64 = fields[0].parse().map_err(|_| parse_err("agent_id", fields[0]))?;
        let frame: i64 = fields[1].parse().map_err(|_| parse_err("frame", fields[1]))?;
        let x: f64 = fields[2].parse().map_err(|_| parse_err("x", fields[2]))?;
        let y: f64 = fields[3].parse().map_err(|_| parse_err("y", fields[3]))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(parse_err("position", trimmed));
        }
        if let Some(&prev) = last_raw_frame.get(&agent_id) {
            if frame <= prev {
                return Err(CdsError::DataFormat {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!(
                        "frames not strictly increasing for agent {agent_id}: {prev} then {frame}"
                    ),
                });
            }
        }
        last_raw_frame.insert(agent_id, frame);
        if frame % 2 == 0 {
            by_agent
                .entry(agent_id)
                .or_default()
                .push(TrackPoint { frame: frame / 2, x, y });
        }
    }

    Ok(by_agent
        .into_iter()
        .map(|(agent_id, points)| Track { agent_id, points })
        .collect())
}
