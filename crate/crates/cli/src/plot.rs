//! Trajectory plots as plain SVG, plus the raw numbers as CSV.

use std::fmt::Write as _;
use std::path::Path;

use smallgs::eval::AlignedSample;

const PANEL: f64 = 320.0;
const PAD: f64 = 36.0;
const GT_COLOR: &str = "#1f77b4";
const EST_COLOR: &str = "#d62728";

pub fn write_csv(path: &Path, rows: &[AlignedSample]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "gt_x", "gt_y", "gt_z", "est_x", "est_y", "est_z"])?;
    for r in rows {
        w.serialize((r.t, r.gt.x, r.gt.y, r.gt.z, r.est.x, r.est.y, r.est.z))?;
    }
    w.flush()
}

struct Frame {
    x0: f64,
    y0: f64,
    lo: (f64, f64),
    span: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone, equal: bool) -> Self {
        let range = |v: &mut dyn Iterator<Item = f64>| {
            v.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
        };
        let (xl, xh) = range(&mut xs.clone());
        let (yl, yh) = range(&mut ys.clone());
        let (mut sx, mut sy) = ((xh - xl).max(1e-9), (yh - yl).max(1e-9));
        let (mut cx, mut cy) = (0.5 * (xl + xh), 0.5 * (yl + yh));
        if equal {
            let s = sx.max(sy);
            (sx, sy) = (s, s);
        }
        // 5% margin
        sx *= 1.1;
        sy *= 1.1;
        cx -= 0.5 * sx;
        cy -= 0.5 * sy;
        Frame {
            x0,
            y0,
            lo: (cx, cy),
            span: (sx, sy),
        }
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.x0 + (x - self.lo.0) / self.span.0 * PANEL,
            self.y0 + PANEL - (y - self.lo.1) / self.span.1 * PANEL,
        )
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, color: &str) {
        let d: Vec<String> = pts
            .map(|(x, y)| {
                let (u, v) = self.map(x, y);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            d.join(" ")
        );
    }

    fn chrome(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r##"<rect x="{}" y="{}" width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##,
            self.x0, self.y0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="12" font-family="sans-serif">{title}</text>"#,
            self.x0,
            self.y0 - 6.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-size="10" font-family="sans-serif">x [{:.3e}, {:.3e}]  y [{:.3e}, {:.3e}]</text>"#,
            self.x0,
            self.y0 + PANEL + 14.0,
            self.lo.0,
            self.lo.0 + self.span.0,
            self.lo.1,
            self.lo.1 + self.span.1
        );
    }
}

/// Top-down (x–z) view and x/y/z against time, ground truth vs estimate.
pub fn svg(rows: &[AlignedSample]) -> String {
    let width = 4.0 * PANEL + 5.0 * PAD;
    let height = PANEL + 2.0 * PAD + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let all = |f: fn(&AlignedSample) -> f64| rows.iter().map(f);
    let top = Frame::new(
        PAD,
        PAD,
        all(|r| r.gt.x).chain(all(|r| r.est.x)),
        all(|r| r.gt.z).chain(all(|r| r.est.z)),
        true,
    );
    top.chrome(&mut out, "top-down (x, z)");
    top.polyline(&mut out, rows.iter().map(|r| (r.gt.x, r.gt.z)), GT_COLOR);
    top.polyline(&mut out, rows.iter().map(|r| (r.est.x, r.est.z)), EST_COLOR);

    for axis in 0..3 {
        let x0 = PAD + (axis as f64 + 1.0) * (PANEL + PAD);
        let f = Frame::new(
            x0,
            PAD,
            rows.iter().map(|r| r.t),
            rows.iter().flat_map(move |r| [r.gt[axis], r.est[axis]]),
            false,
        );
        f.chrome(&mut out, &format!("{} vs t", ["x", "y", "z"][axis]));
        f.polyline(&mut out, rows.iter().map(|r| (r.t, r.gt[axis])), GT_COLOR);
        f.polyline(&mut out, rows.iter().map(|r| (r.t, r.est[axis])), EST_COLOR);
    }
    let _ = writeln!(
        out,
        r#"<text x="{PAD}" y="{}" font-size="12" font-family="sans-serif"><tspan fill="{GT_COLOR}">ground truth</tspan>  <tspan fill="{EST_COLOR}">estimate</tspan></text>"#,
        height - 8.0
    );
    out.push_str("</svg>\n");
    out
}
