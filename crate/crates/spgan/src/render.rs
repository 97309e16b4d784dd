//! Static SVG strip of sampled frames.
//!
//! Manual joints are drawn as a chain of line segments in the x/y plane
//! (z is dropped), face landmarks as dots. All panels share one scale so
//! motion between frames is visible.

use std::fmt::Write as _;

use spgan_core::pose::PoseSequence;

const PANEL: f64 = 120.0;
const MARGIN: f64 = 10.0;

/// Indices of at most `count` evenly spaced frames, first and last included.
pub fn sample_frames(len: usize, count: usize) -> Vec<usize> {
    if len == 0 || count == 0 {
        return Vec::new();
    }
    if len <= count {
        return (0..len).collect();
    }
    if count == 1 {
        return vec![0];
    }
    (0..count).map(|i| i * (len - 1) / (count - 1)).collect()
}

struct Points {
    manual: Vec<(f64, f64)>,
    face: Vec<(f64, f64)>,
}

fn frame_points(values: &[f64], joints: usize, landmarks: usize) -> Points {
    let manual = (0..joints).map(|j| (values[3 * j], values[3 * j + 1])).collect();
    let off = 3 * joints;
    let face = (0..landmarks)
        .map(|k| (values[off + 2 * k], values[off + 2 * k + 1]))
        .collect();
    Points { manual, face }
}

pub fn render_svg(seq: &PoseSequence, max_panels: usize) -> String {
    let layout = seq.layout();
    let picks = sample_frames(seq.len(), max_panels);
    let frames: Vec<Points> = picks
        .iter()
        .map(|&i| frame_points(&seq.frames()[i].values, layout.manual_joints, layout.face_landmarks))
        .collect();

    let all = frames.iter().flat_map(|f| f.manual.iter().chain(&f.face));
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        lo_x = lo_x.min(x);
        hi_x = hi_x.max(x);
        lo_y = lo_y.min(y);
        hi_y = hi_y.max(y);
    }
    let span = (hi_x - lo_x).max(hi_y - lo_y).max(1e-9);
    let inner = PANEL - 2.0 * MARGIN;
    let place = |panel: usize, (x, y): (f64, f64)| {
        (
            panel as f64 * PANEL + MARGIN + (x - lo_x) / span * inner,
            // SVG y grows downward
            PANEL - MARGIN - (y - lo_y) / span * inner,
        )
    };

    let width = PANEL * frames.len().max(1) as f64;
    let mut out = String::new();
    let w = &mut out;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{PANEL}" viewBox="0 0 {width} {PANEL}">"#
    )
    .unwrap();
    writeln!(w, r#"<rect width="{width}" height="{PANEL}" fill="white"/>"#).unwrap();
    for (p, (f, &idx)) in frames.iter().zip(&picks).enumerate() {
        writeln!(w, r#"<g id="frame-{idx}">"#).unwrap();
        writeln!(
            w,
            r#"<text x="{:.1}" y="12" font-size="10" font-family="monospace">{idx}</text>"#,
            p as f64 * PANEL + 4.0
        )
        .unwrap();
        for pair in f.manual.windows(2) {
            let (a, b) = (place(p, pair[0]), place(p, pair[1]));
            writeln!(
                w,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                a.0, a.1, b.0, b.1
            )
            .unwrap();
        }
        for &pt in &f.manual {
            let (x, y) = place(p, pt);
            writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="black"/>"#).unwrap();
        }
        for &pt in &f.face {
            let (x, y) = place(p, pt);
            writeln!(w, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2" fill="crimson"/>"#).unwrap();
        }
        writeln!(w, "</g>").unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    out
}
