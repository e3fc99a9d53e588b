use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::window::ScenarioWindow;
use crate::error::{CdsError, Result};

/// Scenario windows partitioned by scene into train/val/test.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: Vec<ScenarioWindow>,
    pub val: Vec<ScenarioWindow>,
    pub test: Vec<ScenarioWindow>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SplitMeta {
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
}

/// Contiguous split by scene order; scenes are i.i.d. by construction, so no
/// shuffle is needed and the split is reproducible from the fractions alone.
pub fn split_windows(
    windows: Vec<ScenarioWindow>,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> DatasetSplit {
    let n = windows.len();
    let n_train = ((n as f64) * train_frac).floor() as usize;
    let n_val = ((n as f64) * val_frac).floor() as usize;
    let mut it = windows.into_iter();
    let train: Vec<_> = it.by_ref().take(n_train).collect();
    let val: Vec<_> = it.by_ref().take(n_val).collect();
    let test: Vec<_> = it.collect();
    DatasetSplit { train, val, test, seed }
}

/// Canonical serialization: one compact JSON object per line, LF-terminated.
pub fn jsonl_bytes(windows: &[ScenarioWindow]) -> Vec<u8> {
    let mut out = Vec::new();
    for w in windows {
        serde_json::to_writer(&mut out, w).expect("window serializes");
        out.push(b'\n');
    }
    out
}

/// SHA-256 (lowercase hex) of the canonical serialization.
pub fn data_hash(windows: &[ScenarioWindow]) -> String {
    let digest = Sha256::digest(jsonl_bytes(windows));
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash over all three splits in train/val/test order.
pub fn split_hash(split: &DatasetSplit) -> String {
    let mut bytes = jsonl_bytes(&split.train);
    bytes.extend(jsonl_bytes(&split.val));
    bytes.extend(jsonl_bytes(&split.test));
    let digest = Sha256::digest(&bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_split_dir(dir: &Path, split: &DatasetSplit) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CdsError::io(dir, e))?;
    let write = |name: &str, windows: &[ScenarioWindow]| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, jsonl_bytes(windows)).map_err(|e| CdsError::io(&path, e))
    };
    write("train.jsonl", &split.train)?;
    write("val.jsonl", &split.val)?;
    write("test.jsonl", &split.test)?;
    let meta = SplitMeta {
        seed: split.seed,
        n_train: split.train.len(),
        n_val: split.val.len(),
        n_test: split.test.len(),
    };
    let meta_path = dir.join("meta.json");
    std::fs::write(&meta_path, serde_json::to_vec_pretty(&meta).expect("meta serializes"))
        .map_err(|e| CdsError::io(&meta_path, e))
}

/// Loads one JSONL split file, validating every window.
pub fn load_windows_jsonl(path: &Path) -> Result<Vec<ScenarioWindow>> {
    let text = std::fs::read_to_string(path).map_err(|e| CdsError::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let w: ScenarioWindow = serde_json::from_str(line).map_err(|e| CdsError::DataFormat {
            path: path.to_path_buf(),
            line: idx + 1,
            msg: format!("malformed scenario: {e}"),
        })?;
        w.validate().map_err(|msg| CdsError::DataFormat {
            path: path.to_path_buf(),
            line: idx + 1,
            msg,
        })?;
        out.push(w);
    }
    Ok(out)
}

pub fn load_split_dir(dir: &Path) -> Result<DatasetSplit> {
    let meta_path = dir.join("meta.json");
    let meta_text = std::fs::read_to_string(&meta_path).map_err(|e| CdsError::io(&meta_path, e))?;
    let meta: SplitMeta = serde_json::from_str(&meta_text)
        .map_err(|e| CdsError::Config(format!("malformed meta.json: {e}")))?;
    Ok(DatasetSplit {
        train: load_windows_jsonl(&dir.join("train.jsonl"))?,
        val: load_windows_jsonl(&dir.join("val.jsonl"))?,
        test: load_windows_jsonl(&dir.join("test.jsonl"))?,
        seed: meta.seed,
    })
}

/// Loads a single scenario from a JSON file (the `predict` input format).
pub fn load_scene_json(path: &Path) -> Result<ScenarioWindow> {
    let text = std::fs::read_to_string(path).map_err(|e| CdsError::io(path, e))?;
    let w: ScenarioWindow = serde_json::from_str(&text).map_err(|e| CdsError::DataFormat {
        path: path.to_path_buf(),
        line: 1,
        msg: format!("malformed scenario: {e}"),
    })?;
    w.validate().map_err(|msg| CdsError::DataFormat { path: path.to_path_buf(), line: 1, msg })?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::data::synth::generate_dataset;

    fn sample_windows(n: usize) -> Vec<ScenarioWindow> {
        let cfg = DataConfig { n_scenes: n, ..DataConfig::default() };
        generate_dataset(&cfg, 1)
    }

    #[test]
    fn round_trip_preserves_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let split = split_windows(sample_windows(20), 0.8, 0.1, 1);
        save_split_dir(dir.path(), &split).unwrap();
        let loaded = load_split_dir(dir.path()).unwrap();
        assert_eq!(jsonl_bytes(&split.train), jsonl_bytes(&loaded.train));
        assert_eq!(jsonl_bytes(&split.val), jsonl_bytes(&loaded.val));
        assert_eq!(jsonl_bytes(&split.test), jsonl_bytes(&loaded.test));
        assert_eq!(loaded.seed, 1);
        assert_eq!(split_hash(&split), split_hash(&loaded));
    }

    #[test]
    fn split_sizes_follow_fractions_and_are_disjoint() {
        let split = split_windows(sample_windows(20), 0.8, 0.1, 1);
        assert_eq!(split.train.len(), 16);
        assert_eq!(split.val.len(), 2);
        assert_eq!(split.test.len(), 2);
        let mut ids: Vec<u64> = split
            .train
            .iter()
            .chain(&split.val)
            .chain(&split.test)
            .map(|w| w.agent_id)
            .collect();
        let n_total = ids.len();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), n_total, "splits share a scenario");
    }

    #[test]
    fn hash_changes_when_data_changes() {
        let a = sample_windows(5);
        let mut b = a.clone();
        b[0].target_future[0][0] += 1e-9;
        assert_ne!(data_hash(&a), data_hash(&b));
        assert_eq!(data_hash(&a), data_hash(&sample_windows(5)));
    }

    #[test]
    fn corrupted_line_reports_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let split = split_windows(sample_windows(5), 0.6, 0.2, 1);
        save_split_dir(dir.path(), &split).unwrap();
        let path = dir.path().join("train.jsonl");
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.push_str("{ broken\n");
        std::fs::write(&path, text).unwrap();
        let err = load_windows_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains(":4:"), "message was: {err}");
    }

    #[test]
    fn invalid_window_is_rejected_with_reason() {
        let dir = tempfile::tempdir().unwrap();
        let mut windows = sample_windows(1);
        windows[0].target_history.pop();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, jsonl_bytes(&windows)).unwrap();
        let err = load_windows_jsonl(&path).unwrap_err();
        assert!(err.to_string().contains("history length"), "message was: {err}");
    }
}
