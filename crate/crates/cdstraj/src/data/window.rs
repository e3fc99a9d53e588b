use serde::{Deserialize, Serialize};

use super::track::Track;
use crate::{FRAME_DT, FUT_LEN, HIST_LEN};

/// Lateral maneuver classes. The x axis points left, so a positive final
/// lateral displacement is a left lane change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LateralManeuver {
    Left,
    Keep,
    Right,
}

impl LateralManeuver {
    pub const ALL: [Self; 3] = [Self::Left, Self::Keep, Self::Right];

    pub fn index(self) -> usize {
        match self {
            Self::Left => 0,
            Self::Keep => 1,
            Self::Right => 2,
        }
    }
}

/// Longitudinal maneuver classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LongitudinalManeuver {
    Normal,
    Braking,
}

impl LongitudinalManeuver {
    pub const ALL: [Self; 2] = [Self::Normal, Self::Braking];

    pub fn index(self) -> usize {
        match self {
            Self::Normal => 0,
            Self::Braking => 1,
        }
    }
}

/// Joint mode index for a (lateral, longitudinal) pair; 6 modes total.
pub fn mode_index(lat: LateralManeuver, lon: LongitudinalManeuver) -> usize {
    lat.index() * LongitudinalManeuver::ALL.len() + lon.index()
}

/// One prediction scenario: 16 observed frames and 25 future frames for a
/// target plus up to `n_max` neighbors, all in the target frame (the
/// target's last observed position is the origin; translation only).
///
/// Neighbors are stored nearest-first; absent slots are simply not stored.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioWindow {
    pub agent_id: u64,
    /// 5 Hz frame index of the first history point.
    pub start_frame: i64,
    pub target_history: Vec<[f64; 2]>,
    pub target_future: Vec<[f64; 2]>,
    pub neighbor_ids: Vec<u64>,
    pub neighbor_histories: Vec<Vec<[f64; 2]>>,
    pub neighbor_futures: Vec<Vec<[f64; 2]>>,
    /// Neighbor capacity the scenario was built with (fixed model width).
    pub n_max: usize,
    pub lat_label: LateralManeuver,
    pub lon_label: LongitudinalManeuver,
}

impl ScenarioWindow {
    pub fn n_neighbors(&self) -> usize {
        self.neighbor_ids.len()
    }

    /// Structural invariants: lengths, capacity, normalized origin.
    pub fn validate(&self) -> Result<(), String> {
        if self.target_history.len() != HIST_LEN {
            return Err(format!("history length {} != {HIST_LEN}", self.target_history.len()));
        }
        if self.target_future.len() != FUT_LEN {
            return Err(format!("future length {} != {FUT_LEN}", self.target_future.len()));
        }
        if self.neighbor_ids.len() > self.n_max {
            return Err(format!(
                "{} neighbors exceed capacity {}",
                self.neighbor_ids.len(),
                self.n_max
            ));
        }
        if self.neighbor_histories.len() != self.neighbor_ids.len()
            || self.neighbor_futures.len() != self.neighbor_ids.len()
        {
            return Err("neighbor array lengths disagree".to_string());
        }
        for h in &self.neighbor_histories {
            if h.len() != HIST_LEN {
                return Err(format!("neighbor history length {} != {HIST_LEN}", h.len()));
            }
        }
        for f in &self.neighbor_futures {
            if f.len() != FUT_LEN {
                return Err(format!("neighbor future length {} != {FUT_LEN}", f.len()));
            }
        }
        let last = self.target_history[HIST_LEN - 1];
        if last != [0.0, 0.0] {
            return Err(format!("target's last observed position {last:?} is not the origin"));
        }
        let all_finite = self
            .target_history
            .iter()
            .chain(&self.target_future)
            .chain(self.neighbor_histories.iter().flatten())
            .chain(self.neighbor_futures.iter().flatten())
            .all(|p| p[0].is_finite() && p[1].is_finite());
        if !all_finite {
            return Err("non-finite position".to_string());
        }
        Ok(())
    }
}

/// Shifts every trajectory so the target's last observed position becomes
/// the origin. Translation only; inter-agent geometry is preserved.
pub fn normalize_frame(window: &mut ScenarioWindow) {
    let origin = window.target_history[HIST_LEN - 1];
    let shift = |traj: &mut Vec<[f64; 2]>| {
        for p in traj.iter_mut() {
            p[0] -= origin[0];
            p[1] -= origin[1];
        }
    };
    shift(&mut window.target_history);
    shift(&mut window.target_future);
    for h in &mut window.neighbor_histories {
        shift(h);
    }
    for f in &mut window.neighbor_futures {
        shift(f);
    }
    // Exact zero regardless of rounding: the origin subtracted from itself.
    window.target_history[HIST_LEN - 1] = [0.0, 0.0];
}

/// Derives maneuver labels from a normalized window.
///
/// Lateral: final future lateral displacement beyond +-half_lane picks
/// Left/Right, otherwise Keep. Longitudinal: Braking when the mean future
/// speed drops below 0.8 x the last observed speed.
pub fn label_maneuvers(
    window: &ScenarioWindow,
    half_lane: f64,
) -> (LateralManeuver, LongitudinalManeuver) {
    let lat_disp = window.target_future[FUT_LEN - 1][0] - window.target_history[HIST_LEN - 1][0];
    let lat = if lat_disp >= half_lane {
        LateralManeuver::Left
    } else if lat_disp <= -half_lane {
        LateralManeuver::Right
    } else {
        LateralManeuver::Keep
    };

    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let last_speed =
        dist(window.target_history[HIST_LEN - 1], window.target_history[HIST_LEN - 2]) / FRAME_DT;
    let mut prev = window.target_history[HIST_LEN - 1];
    let mut total = 0.0;
    for &p in &window.target_future {
        total += dist(p, prev) / FRAME_DT;
        prev = p;
    }
    let mean_future_speed = total / FUT_LEN as f64;
    let lon = if mean_future_speed < 0.8 * last_speed {
        LongitudinalManeuver::Braking
    } else {
        LongitudinalManeuver::Normal
    };
    (lat, lon)
}

/// Neighbor selection and windowing parameters (a slice of `DataConfig`).
#[derive(Clone, Debug)]
pub struct WindowingParams {
    pub stride: usize,
    pub radius_lat: f64,
    pub radius_lon: f64,
    pub n_max: usize,
    pub lane_width: f64,
}

/// Selects up to `n_max` neighbors for a target at `center_frame`:
/// co-present agents with full coverage of the window span, within the
/// lateral/longitudinal radii, nearest first (ties broken by agent id).
pub fn select_neighbors(
    tracks: &[Track],
    target_id: u64,
    center_frame: i64,
    span: std::ops::Range<i64>,
    p: &WindowingParams,
) -> Vec<usize> {
    let target = tracks
        .iter()
        .find(|t| t.agent_id == target_id)
        .expect("contract violation: target track missing");
    let center = target
        .position_at(center_frame)
        .expect("contract violation: target absent at its own center frame");

    let mut candidates: Vec<(f64, u64, usize)> = Vec::new();
    'outer: for (idx, other) in tracks.iter().enumerate() {
        if other.agent_id == target_id {
            continue;
        }
        let pos = match other.position_at(center_frame) {
            Some(p) => p,
            None => continue,
        };
        let dx = pos[0] - center[0];
        let dy = pos[1] - center[1];
        if dx.abs() > p.radius_lat || dy.abs() > p.radius_lon {
            continue;
        }
        for f in span.clone() {
            if other.position_at(f).is_none() {
                continue 'outer;
            }
        }
        candidates.push(((dx * dx + dy * dy).sqrt(), other.agent_id, idx));
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    candidates.truncate(p.n_max);
    candidates.into_iter().map(|(_, _, idx)| idx).collect()
}

/// Slices every track into normalized, labeled scenarios. Windows advance by
/// `stride` within runs of consecutive frames; a run of F frames yields
/// floor((F - 41) / stride) + 1 windows when F >= 41.
pub fn build_windows(tracks: &[Track], p: &WindowingParams) -> Vec<ScenarioWindow> {
    let total = HIST_LEN + FUT_LEN;
    let mut windows = Vec::new();
    for target in tracks {
        // Runs of consecutive frames.
        let pts = &target.points;
        let mut run_start = 0;
        for i in 0..=pts.len() {
            let run_ends = i == pts.len() || (i > 0 && pts[i].frame != pts[i - 1].frame + 1);
            if !run_ends {
                continue;
            }
            let run = &pts[run_start..i];
            run_start = i;
            if run.len() < total {
                continue;
            }
            let mut offset = 0;
            while offset + total <= run.len() {
                let first_frame = run[offset].frame;
                if let Some(w) = assemble_window(tracks, target, first_frame, p) {
                    windows.push(w);
                }
                offset += p.stride;
            }
        }
    }
    windows
}

fn assemble_window(
    tracks: &[Track],
    target: &Track,
    first_frame: i64,
    p: &WindowingParams,
) -> Option<ScenarioWindow> {
    let total = (HIST_LEN + FUT_LEN) as i64;
    let span = first_frame..first_frame + total;
    let center_frame = first_frame + HIST_LEN as i64 - 1;
    let collect = |track: &Track, range: std::ops::Range<i64>| -> Option<Vec<[f64; 2]>> {
        range.map(|f| track.position_at(f)).collect()
    };
    let target_history = collect(target, first_frame..first_frame + HIST_LEN as i64)?;
    let target_future = collect(target, first_frame + HIST_LEN as i64..span.end)?;

    let neighbor_idx = select_neighbors(tracks, target.agent_id, center_frame, span.clone(), p);
    let mut neighbor_ids = Vec::with_capacity(neighbor_idx.len());
    let mut neighbor_histories = Vec::with_capacity(neighbor_idx.len());
    let mut neighbor_futures = Vec::with_capacity(neighbor_idx.len());
    for idx in neighbor_idx {
        let t = &tracks[idx];
        neighbor_ids.push(t.agent_id);
        neighbor_histories.push(collect(t, first_frame..first_frame + HIST_LEN as i64)?);
        neighbor_futures.push(collect(t, first_frame + HIST_LEN as i64..span.end)?);
    }

    let mut window = ScenarioWindow {
        agent_id: target.agent_id,
        start_frame: first_frame,
        target_history,
        target_future,
        neighbor_ids,
        neighbor_histories,
        neighbor_futures,
        n_max: p.n_max,
        lat_label: LateralManeuver::Keep,
        lon_label: LongitudinalManeuver::Normal,
    };
    normalize_frame(&mut window);
    let (lat, lon) = label_maneuvers(&window, p.lane_width / 2.0);
    window.lat_label = lat;
    window.lon_label = lon;
    debug_assert!(window.validate().is_ok());
    Some(window)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::track::TrackPoint;
    use proptest::prelude::*;

    fn straight_track(agent_id: u64, frames: usize, x: f64, vy: f64) -> Track {
        Track {
            agent_id,
            points: (0..frames)
                .map(|i| TrackPoint { frame: i as i64, x, y: vy * FRAME_DT * i as f64 })
                .collect(),
        }
    }

    fn default_params() -> WindowingParams {
        WindowingParams { stride: 1, radius_lat: 12.0, radius_lon: 90.0, n_max: 8, lane_width: 3.5 }
    }

    #[test]
    fn window_counts_follow_the_stride_law() {
        let p = default_params();
        for (frames, expected) in [(41usize, 1usize), (45, 5), (40, 0)] {
            let tracks = vec![straight_track(1, frames, 0.0, 10.0)];
            assert_eq!(build_windows(&tracks, &p).len(), expected, "frames {frames}");
        }
        let p2 = WindowingParams { stride: 4, ..default_params() };
        let tracks = vec![straight_track(1, 49, 0.0, 10.0)];
        // floor((49 - 41) / 4) + 1 = 3
        assert_eq!(build_windows(&tracks, &p2).len(), 3);
    }

    #[test]
    fn gaps_split_tracks_into_runs() {
        let mut t = straight_track(1, 60, 0.0, 10.0);
        t.points.remove(45); // frame 45 missing: runs of 45 and 14
        assert_eq!(build_windows(&[t], &default_params()).len(), 5);
    }

    #[test]
    fn single_agent_window_has_no_neighbors_and_is_normalized() {
        let tracks = vec![straight_track(1, 41, 2.0, 12.0)];
        let windows = build_windows(&tracks, &default_params());
        assert_eq!(windows.len(), 1);
        let w = &windows[0];
        assert!(w.neighbor_ids.is_empty());
        assert_eq!(w.target_history[HIST_LEN - 1], [0.0, 0.0]);
        assert!(w.validate().is_ok());
        // Straight constant speed: labels are Keep / Normal.
        assert_eq!(w.lat_label, LateralManeuver::Keep);
        assert_eq!(w.lon_label, LongitudinalManeuver::Normal);
    }

    #[test]
    fn neighbor_radius_and_capacity_are_enforced() {
        let mut tracks = vec![straight_track(1, 41, 0.0, 10.0)];
        // 9 in-range neighbors at increasing lateral offsets, 1 out of range.
        for k in 0..9 {
            tracks.push(straight_track(2 + k, 41, 0.5 + 0.5 * k as f64, 10.0));
        }
        tracks.push(straight_track(100, 41, 13.0, 10.0)); // beyond radius_lat
        tracks.push(straight_track(101, 41, 0.0, 10.0 + 95.0 / (40.0 * FRAME_DT))); // drifts beyond radius_lon
        let windows = build_windows(&tracks, &default_params());
        let w = windows.iter().find(|w| w.agent_id == 1).unwrap();
        assert_eq!(w.n_neighbors(), 8);
        // Nearest-first ordering by center-frame distance.
        assert_eq!(w.neighbor_ids, vec![2, 3, 4, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn equidistant_neighbors_tie_break_by_agent_id() {
        let tracks = vec![
            straight_track(5, 41, 0.0, 10.0),
            straight_track(9, 41, 3.0, 10.0),
            straight_track(3, 41, -3.0, 10.0),
        ];
        let windows = build_windows(&tracks, &default_params());
        let w = windows.iter().find(|w| w.agent_id == 5).unwrap();
        assert_eq!(w.neighbor_ids, vec![3, 9]);
    }

    #[test]
    fn incomplete_coverage_excludes_a_neighbor() {
        let mut partial = straight_track(2, 41, 1.0, 10.0);
        partial.points.truncate(30); // present at center frame 15, absent later
        let tracks = vec![straight_track(1, 41, 0.0, 10.0), partial];
        let windows = build_windows(&tracks, &default_params());
        let w = windows.iter().find(|w| w.agent_id == 1).unwrap();
        assert!(w.neighbor_ids.is_empty());
    }

    #[test]
    fn left_lane_change_of_a_full_lane_is_labeled_left() {
        let mut t = straight_track(1, 41, 0.0, 10.0);
        // Lateral ramp over the future: +3.5 m by the final frame.
        for (i, p) in t.points.iter_mut().enumerate() {
            if i > HIST_LEN - 1 {
                p.x = 3.5 * (i - (HIST_LEN - 1)) as f64 / FUT_LEN as f64;
            }
        }
        let windows = build_windows(&[t], &default_params());
        assert_eq!(windows[0].lat_label, LateralManeuver::Left);
        assert_eq!(windows[0].lon_label, LongitudinalManeuver::Normal);
    }

    #[test]
    fn hard_deceleration_is_labeled_braking() {
        let mut y = 0.0;
        let mut v: f64 = 12.0;
        let points = (0..41)
            .map(|i| {
                let p = TrackPoint { frame: i, x: 0.0, y };
                if i >= 14 {
                    v = (v - 3.0 * FRAME_DT).max(0.5);
                }
                y += v * FRAME_DT;
                p
            })
            .collect();
        let windows = build_windows(&[Track { agent_id: 1, points }], &default_params());
        assert_eq!(windows[0].lon_label, LongitudinalManeuver::Braking);
    }

    #[test]
    fn normalize_is_idempotent() {
        let tracks = vec![straight_track(1, 41, 4.0, 11.0), straight_track(2, 41, 6.0, 9.0)];
        let mut windows = build_windows(&tracks, &default_params());
        let w = &mut windows[0];
        let before = w.clone();
        normalize_frame(w);
        assert_eq!(w.target_history, before.target_history);
        assert_eq!(w.neighbor_histories, before.neighbor_histories);
    }

    proptest! {
        /// Translation by the target's last position preserves all pairwise
        /// displacements (isometry) and pins the origin.
        #[test]
        fn normalization_is_an_isometry(
            ox in -500.0f64..500.0,
            oy in -500.0f64..500.0,
            vx in -2.0f64..2.0,
            vy in 5.0f64..20.0,
            nx in -10.0f64..10.0,
        ) {
            let mut target = straight_track(1, 41, 0.0, vy);
            for p in target.points.iter_mut() {
                p.x += ox + vx * FRAME_DT * p.frame as f64;
                p.y += oy;
            }
            let mut nb = straight_track(2, 41, nx, vy * 0.9);
            for p in nb.points.iter_mut() {
                p.x += ox;
                p.y += oy;
            }
            let tracks = vec![target.clone(), nb.clone()];
            let windows = build_windows(&tracks, &default_params());
            let w = windows.iter().find(|w| w.agent_id == 1).unwrap();
            prop_assert!(w.validate().is_ok());
            prop_assert_eq!(w.target_history[HIST_LEN - 1], [0.0, 0.0]);
            if w.n_neighbors() == 1 {
                // Displacement neighbor-minus-target at the first history frame
                // must match the raw data up to float rounding.
                let raw_dx = nb.points[0].x - target.points[0].x;
                let norm_dx = w.neighbor_histories[0][0][0] - w.target_history[0][0];
                prop_assert!((raw_dx - norm_dx).abs() < 1e-9);
            }
        }

        /// Window count obeys floor((F - 41) / stride) + 1 on a single run.
        #[test]
        fn window_count_law(frames in 41usize..140, stride in 1usize..6) {
            let tracks = vec![straight_track(1, frames, 0.0, 10.0)];
            let p = WindowingParams { stride, ..default_params() };
            let expected = (frames - 41) / stride + 1;
            prop_assert_eq!(build_windows(&tracks, &p).len(), expected);
        }
    }
}
