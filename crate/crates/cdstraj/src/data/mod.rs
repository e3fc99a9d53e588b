//! Scenario data: track loading, windowing, neighbor selection, maneuver
//! labels, synthetic traffic, and the JSONL dataset cache.
//!
//! Coordinate convention throughout: x lateral (positive left), y
//! longitudinal (positive forward), meters, 5 Hz frames.

mod cache;
mod synth;
mod track;
mod window;

pub use cache::{
    data_hash, jsonl_bytes, load_scene_json, load_split_dir, load_windows_jsonl, save_split_dir,
    split_hash, split_windows, DatasetSplit,
};
pub use synth::{generate_dataset, generate_scene, SynthScene};
pub use track::{load_tracks_csv, Track, TrackPoint};
pub use window::{
    build_windows, label_maneuvers, mode_index, normalize_frame, select_neighbors,
    LateralManeuver, LongitudinalManeuver, ScenarioWindow, WindowingParams,
};
