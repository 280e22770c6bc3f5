//! Minimal SVG wireframes.

use std::fmt::Write;

const SIZE: f64 = 800.0;
const MARGIN: f64 = 20.0;

/// Closed polygons inside the box `[x0, y0, x1, y1]`, drawn with +y up.
pub fn wireframe(polygons: &[Vec<[f64; 2]>], bounds: [f64; 4]) -> String {
    let [x0, y0, x1, y1] = bounds;
    let scale = (SIZE - 2.0 * MARGIN) / (x1 - x0).max(y1 - y0);
    let map = |p: [f64; 2]| (MARGIN + (p[0] - x0) * scale, SIZE - MARGIN - (p[1] - y0) * scale);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <g fill=\"none\" stroke=\"black\" stroke-width=\"0.6\">\n"
    );
    for poly in polygons {
        s.push_str("<polygon points=\"");
        for (i, &p) in poly.iter().enumerate() {
            let (x, y) = map(p);
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x:.2},{y:.2}");
        }
        s.push_str("\"/>\n");
    }
    s.push_str("</g>\n</svg>\n");
    s
}
