//! Deterministic SVG rendering of one scenario's multi-modal prediction.
//!
//! Bird's-eye view from behind the target: forward (longitudinal +y) points
//! up, left (lateral +x) points left. All coordinates are formatted with a
//! fixed precision, so the same scenario and prediction always produce the
//! same bytes.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::ScenarioWindow;
use crate::error::{CdsError, Result};
use crate::model::Prediction;

/// Plot scale: one meter spans ten SVG user units.
pub const UNITS_PER_METER: f64 = 10.0;

/// Margin around the data extent, in meters.
const PAD_M: f64 = 2.0;

struct Viewport {
    max_x: f64,
    max_y: f64,
    width: f64,
    height: f64,
}

impl Viewport {
    fn fit(point_sets: &[&[[f64; 2]]]) -> Viewport {
        let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
        for set in point_sets {
            for p in *set {
                min_x = min_x.min(p[0]);
                max_x = max_x.max(p[0]);
                min_y = min_y.min(p[1]);
                max_y = max_y.max(p[1]);
            }
        }
        assert!(min_x.is_finite(), "contract violation: nothing to plot");
        Viewport {
            max_x,
            max_y,
            width: (max_x - min_x + 2.0 * PAD_M) * UNITS_PER_METER,
            height: (max_y - min_y + 2.0 * PAD_M) * UNITS_PER_METER,
        }
    }

    /// Scene meters to user units; both axes flip so +x is screen-left and
    /// +y is screen-up.
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            (self.max_x - p[0] + PAD_M) * UNITS_PER_METER,
            (self.max_y - p[1] + PAD_M) * UNITS_PER_METER,
        )
    }
}

fn polyline(out: &mut String, vp: &Viewport, pts: &[[f64; 2]], class: &str, style: &str) {
    let mut attr = String::new();
    for (i, p) in pts.iter().enumerate() {
        let (x, y) = vp.map(*p);
        if i > 0 {
            attr.push(' ');
        }
        write!(attr, "{x:.1},{y:.1}").unwrap();
    }
    writeln!(out, "<polyline class=\"{class}\" points=\"{attr}\" {style}/>").unwrap();
}

/// Renders the scenario as a standalone SVG document string.
pub fn render_plot(w: &ScenarioWindow, pred: &Prediction) -> String {
    let mode_means: Vec<Vec<[f64; 2]>> = pred
        .modes
        .iter()
        .map(|traj| traj.iter().map(|row| [row[0], row[1]]).collect())
        .collect();

    let mut sets: Vec<&[[f64; 2]]> = vec![&w.target_history, &w.target_future];
    for h in &w.neighbor_histories {
        sets.push(h);
    }
    for m in &mode_means {
        sets.push(m);
    }
    let vp = Viewport::fit(&sets);

    let mut out = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.1}\" height=\"{h:.1}\" \
         viewBox=\"0 0 {w:.1} {h:.1}\">",
        w = vp.width,
        h = vp.height
    )
    .unwrap();
    writeln!(out, "<rect width=\"{:.1}\" height=\"{:.1}\" fill=\"#ffffff\"/>", vp.width, vp.height)
        .unwrap();
    out.push_str("<g fill=\"none\" stroke-linecap=\"round\" stroke-linejoin=\"round\">\n");

    for h in &w.neighbor_histories {
        polyline(&mut out, &vp, h, "neighbor", "stroke=\"#9aa5b1\" stroke-width=\"2\"");
    }
    polyline(
        &mut out,
        &vp,
        &w.target_history,
        "history",
        "stroke=\"#1f2933\" stroke-width=\"3\"",
    );
    polyline(&mut out, &vp, &w.target_future, "truth", "stroke=\"#0f9d58\" stroke-width=\"3\"");

    for (mean, prob) in mode_means.iter().zip(&pred.mode_probs) {
        let mut d = String::new();
        for (i, p) in mean.iter().enumerate() {
            let (x, y) = vp.map(*p);
            let cmd = if i == 0 { "M" } else { " L" };
            write!(d, "{cmd}{x:.1} {y:.1}").unwrap();
        }
        writeln!(
            out,
            "<path class=\"mode\" d=\"{d}\" stroke=\"#4285f4\" stroke-width=\"2\" \
             stroke-opacity=\"{prob:.4}\"/>"
        )
        .unwrap();
    }

    let (ox, oy) = vp.map(w.target_history[w.target_history.len() - 1]);
    writeln!(out, "<circle class=\"target\" cx=\"{ox:.1}\" cy=\"{oy:.1}\" r=\"4\" fill=\"#1f2933\"/>")
        .unwrap();
    out.push_str("</g>\n</svg>\n");
    out
}

/// Renders and writes the plot; output bytes depend only on the inputs.
pub fn emit_plot(w: &ScenarioWindow, pred: &Prediction, path: &Path) -> Result<()> {
    std::fs::write(path, render_plot(w, pred)).map_err(|e| CdsError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_dataset;
    use crate::model::{Model, ModelFlags};
    use crate::testutil::tiny_config;

    fn sample() -> (ScenarioWindow, Prediction, Prediction) {
        let cfg = tiny_config();
        let w = generate_dataset(&cfg.data, 11).remove(0);
        let full = Model::new(&cfg, ModelFlags::full());
        let single = Model::new(&cfg, ModelFlags::ablation('E'));
        let params = full.init_params::<f64>(3);
        let params_single = single.init_params::<f64>(3);
        let pred = full.predict(&params, &w, 4);
        let pred_single = single.predict(&params_single, &w, 4);
        (w, pred, pred_single)
    }

    /// Stack-based tag balance check; enough to catch malformed output.
    fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(start) = rest.find('<') {
            let end = start + rest[start..].find('>').expect("unterminated tag");
            let tag = &rest[start + 1..end];
            rest = &rest[end + 1..];
            assert!(!tag.contains('<'), "nested angle bracket in {tag:?}");
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name.trim()), "mismatched close");
            } else if !tag.ends_with('/') {
                stack.push(tag.split_whitespace().next().unwrap().to_string());
            }
            assert_eq!(tag.matches('"').count() % 2, 0, "unbalanced quotes in {tag:?}");
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn output_is_well_formed_and_byte_deterministic() {
        let (w, pred, _) = sample();
        let a = render_plot(&w, &pred);
        let b = render_plot(&w, &pred);
        assert_eq!(a, b);
        assert_well_formed(&a);
        assert!(a.starts_with("<?xml version=\"1.0\""));
    }

    #[test]
    fn conditioned_predictions_draw_exactly_six_mode_paths() {
        let (w, pred, pred_single) = sample();
        let svg = render_plot(&w, &pred);
        assert_eq!(svg.matches("class=\"mode\"").count(), 6);
        assert_eq!(svg.matches("class=\"history\"").count(), 1);
        assert_eq!(svg.matches("class=\"truth\"").count(), 1);
        assert_eq!(svg.matches("class=\"neighbor\"").count(), w.neighbor_histories.len());

        let single = render_plot(&w, &pred_single);
        assert_eq!(single.matches("class=\"mode\"").count(), 1);
        assert!(single.contains("stroke-opacity=\"1.0000\""));
    }

    #[test]
    fn mode_opacity_matches_mode_probability() {
        let (w, pred, _) = sample();
        let svg = render_plot(&w, &pred);
        for p in &pred.mode_probs {
            assert!(svg.contains(&format!("stroke-opacity=\"{p:.4}\"")), "missing opacity {p}");
        }
    }

    #[test]
    fn one_meter_spans_ten_user_units() {
        let (w, pred, _) = sample();
        let svg = render_plot(&w, &pred);
        // Parse the truth polyline back and compare screen distance against
        // scene distance for the first segment.
        let marker = "class=\"truth\" points=\"";
        let at = svg.find(marker).unwrap() + marker.len();
        let pts_attr = &svg[at..at + svg[at..].find('"').unwrap()];
        let pts: Vec<(f64, f64)> = pts_attr
            .split(' ')
            .map(|pair| {
                let (x, y) = pair.split_once(',').unwrap();
                (x.parse().unwrap(), y.parse().unwrap())
            })
            .collect();
        let screen =
            ((pts[1].0 - pts[0].0).powi(2) + (pts[1].1 - pts[0].1).powi(2)).sqrt();
        let scene = ((w.target_future[1][0] - w.target_future[0][0]).powi(2)
            + (w.target_future[1][1] - w.target_future[0][1]).powi(2))
        .sqrt();
        assert!(
            (screen - scene * UNITS_PER_METER).abs() < 0.3,
            "screen {screen} vs scene {scene} m"
        );
    }

    #[test]
    fn emit_writes_identical_bytes_across_calls() {
        let (w, pred, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.svg");
        let p2 = dir.path().join("b.svg");
        emit_plot(&w, &pred, &p1).unwrap();
        emit_plot(&w, &pred, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
