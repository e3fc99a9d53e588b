use super::track::{Track, TrackPoint};
use super::window::{
    build_windows, LateralManeuver, LongitudinalManeuver, ScenarioWindow, WindowingParams,
};
use crate::config::DataConfig;
use crate::numerics::SplitRng;
use crate::{FRAME_DT, HIST_LEN};

/// Frames per synthetic scene: one full scenario per designated target.
const SCENE_FRAMES: usize = 41;
/// Speed floor during braking, m/s.
const BRAKE_FLOOR: f64 = 0.5;
/// Lane-change transition time constant, seconds.
const LC_TAU: f64 = 0.45;

/// One generated scene plus the maneuver the generator intended for its
/// target agent (used to audit the derived labels).
#[derive(Clone, Debug)]
pub struct SynthScene {
    pub tracks: Vec<Track>,
    pub target_id: u64,
    pub intended_lat: LateralManeuver,
    pub intended_lon: LongitudinalManeuver,
}

#[derive(Clone, Copy, Debug)]
enum Profile {
    Constant,
    /// Logistic lateral transition of one lane width; dir +1 is left.
    LaneChange { dir: f64, t_mid: f64 },
    /// Constant deceleration from t_onset down to the speed floor.
    Brake { t_onset: f64, decel: f64 },
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Kinematic multi-lane traffic. Highway frame: x lateral (positive left),
/// y longitudinal. Vehicles follow straight lanes at constant speed except
/// for their assigned maneuver; i.i.d. position noise is added on top.
/// Collisions are not modeled.
///
/// The target's maneuver onset is placed just after (lane change) or just
/// before (braking) the observation boundary so the observed history carries
/// the cue that makes the label predictable.
pub fn generate_scene(cfg: &DataConfig, scene_idx: u64, root: &SplitRng) -> SynthScene {
    assert!(cfg.agents_per_scene < 1000, "contract violation: agent id space exhausted");
    let scene_rng = root.split(scene_idx);
    let t_c = (HIST_LEN - 1) as f64 * FRAME_DT;
    let mut tracks = Vec::with_capacity(cfg.agents_per_scene);
    let mut intended = (LateralManeuver::Keep, LongitudinalManeuver::Normal);
    let target_id = scene_idx * 1000;

    for agent in 0..cfg.agents_per_scene {
        let mut rng = scene_rng.split(agent as u64);
        let is_target = agent == 0;
        let lane = rng.below(3) as i64 - 1; // -1, 0, 1
        let lane_x = lane as f64 * cfg.lane_width;
        let y0 = if is_target { rng.range(-10.0, 10.0) } else { rng.range(-60.0, 60.0) };
        let speed = rng.range(cfg.speed_min, cfg.speed_max);

        let u = rng.uniform();
        let profile = if u < cfg.lane_change_frac {
            let dir = match lane {
                1 => -1.0,
                -1 => 1.0,
                _ => {
                    if rng.bernoulli(0.5) {
                        1.0
                    } else {
                        -1.0
                    }
                }
            };
            let t_mid = if is_target {
                rng.range(t_c + 0.3, t_c + 1.2)
            } else {
                rng.range(1.0, 7.0)
            };
            Profile::LaneChange { dir, t_mid }
        } else if u < cfg.lane_change_frac + cfg.brake_frac {
            let t_onset = if is_target {
                rng.range(t_c - 1.2, t_c - 0.2)
            } else {
                rng.range(0.5, 6.0)
            };
            Profile::Brake { t_onset, decel: rng.range(2.0, 4.0) }
        } else {
            Profile::Constant
        };

        if is_target {
            intended = match profile {
                Profile::Constant => (LateralManeuver::Keep, LongitudinalManeuver::Normal),
                Profile::LaneChange { dir, .. } => (
                    if dir > 0.0 { LateralManeuver::Left } else { LateralManeuver::Right },
                    LongitudinalManeuver::Normal,
                ),
                Profile::Brake { .. } => (LateralManeuver::Keep, LongitudinalManeuver::Braking),
            };
        }

        let mut points = Vec::with_capacity(SCENE_FRAMES);
        let mut y = y0;
        for frame in 0..SCENE_FRAMES {
            let t = frame as f64 * FRAME_DT;
            let x = match profile {
                Profile::LaneChange { dir, t_mid } => {
                    lane_x + dir * cfg.lane_width * logistic((t - t_mid) / LC_TAU)
                }
                _ => lane_x,
            };
            let v = match profile {
                Profile::Brake { t_onset, decel } if t >= t_onset => {
                    (speed - decel * (t - t_onset)).max(BRAKE_FLOOR)
                }
                _ => speed,
            };
            let nx = x + cfg.noise_sigma * rng.standard_normal();
            let ny = y + cfg.noise_sigma * rng.standard_normal();
            points.push(TrackPoint { frame: frame as i64, x: nx, y: ny });
            y += v * FRAME_DT;
        }
        tracks.push(Track { agent_id: target_id + agent as u64, points });
    }

    SynthScene { tracks, target_id, intended_lat: intended.0, intended_lon: intended.1 }
}

/// Generates one scenario window per scene (the designated target's window).
pub fn generate_dataset(cfg: &DataConfig, seed: u64) -> Vec<ScenarioWindow> {
    let root = SplitRng::new(seed).split_str("synth");
    let params = WindowingParams {
        stride: cfg.stride,
        radius_lat: cfg.radius_lat,
        radius_lon: cfg.radius_lon,
        n_max: cfg.n_max,
        lane_width: cfg.lane_width,
    };
    let mut out = Vec::with_capacity(cfg.n_scenes);
    for scene_idx in 0..cfg.n_scenes {
        let scene = generate_scene(cfg, scene_idx as u64, &root);
        let windows = build_windows(&scene.tracks, &params);
        let target = windows
            .into_iter()
            .find(|w| w.agent_id == scene.target_id)
            .expect("target track always spans a full scene");
        out.push(target);
    }
    out
}
