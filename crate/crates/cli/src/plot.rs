//! Plain SVG output. Coordinates are printed with fixed precision so the
//! same data always gives the same bytes.

use std::fmt::Write;

use crate::fit::SlopeFit;
use crate::output::Table;
use crate::HarnessError;

const W: f64 = 640.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 60.0;

fn header(h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {W:.0} {h:.0}\" font-family=\"monospace\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn range(v: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return None;
    }
    if hi - lo < 1e-300 + 1e-12 * lo.abs() {
        Some((lo - 0.5 - 0.5 * lo.abs(), hi + 0.5 + 0.5 * hi.abs()))
    } else {
        Some((lo, hi))
    }
}

struct Frame {
    top: f64,
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }
    fn py(&self, y: f64) -> f64 {
        self.top + PANEL_H - 30.0 - (y - self.y.0) / (self.y.1 - self.y.0) * (PANEL_H - 60.0)
    }
    fn axes(&self, s: &mut String, title: &str, xlabel: &str) {
        let (x0, x1) = (MARGIN, W - MARGIN);
        let (y0, y1) = (self.top + 30.0, self.top + PANEL_H - 30.0);
        let _ = writeln!(s, "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>", x1 - x0, y1 - y0);
        let _ = writeln!(s, "<text x=\"{x0:.2}\" y=\"{:.2}\">{}</text>", self.top + 20.0, escape(title));
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{}</text>", x1, y1 + 20.0, escape(xlabel));
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.3e}</text>", x0 - 4.0, y0 + 4.0, self.y.1);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.3e}</text>", x0 - 4.0, y1, self.y.0);
        let _ = writeln!(s, "<text x=\"{x0:.2}\" y=\"{:.2}\">{:.3e}</text>", y1 + 20.0, self.x.0);
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], colour: &str) {
    let mut coords = String::new();
    for (x, y) in pts.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
        let _ = write!(coords, "{:.2},{:.2} ", f.px(*x), f.py(*y));
    }
    let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{colour}\" points=\"{}\"/>", coords.trim_end());
}

/// One panel per `y` column against column `x`.
pub fn time_series_svg(table: &Table, x: &str, ys: &[&str]) -> Result<String, HarnessError> {
    if table.is_empty() || ys.is_empty() {
        return Err(HarnessError::EmptyData);
    }
    let xs = table.column(x).ok_or_else(|| HarnessError::Format(format!("no column `{x}`")))?;
    let mut s = header(PANEL_H * ys.len() as f64);
    for (p, name) in ys.iter().enumerate() {
        let v = table.column(name).ok_or_else(|| HarnessError::Format(format!("no column `{name}`")))?;
        let (Some(xr), Some(yr)) = (range(xs.iter().copied()), range(v.iter().copied())) else {
            continue;
        };
        let f = Frame { top: p as f64 * PANEL_H, x: xr, y: yr };
        f.axes(&mut s, name, x);
        let pts: Vec<(f64, f64)> = xs.iter().copied().zip(v.iter().copied()).collect();
        polyline(&mut s, &f, &pts, "steelblue");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// One log-log panel per fit: measured points, fitted line and the slope.
pub fn scaling_svg(fits: &[SlopeFit]) -> Result<String, HarnessError> {
    if fits.is_empty() {
        return Err(HarnessError::EmptyData);
    }
    let mut s = header(PANEL_H * fits.len() as f64);
    for (p, fit) in fits.iter().enumerate() {
        let lx: Vec<f64> = fit.alphas.iter().map(|a| a.ln()).collect();
        let ly: Vec<f64> = fit.values.iter().map(|v| v.ln()).collect();
        let line: Vec<(f64, f64)> = lx.iter().map(|x| (*x, fit.intercept + fit.slope * x)).collect();
        let (Some(xr), Some(yr)) = (range(lx.iter().copied()), range(ly.iter().chain(line.iter().map(|q| &q.1)).copied())) else {
            continue;
        };
        let f = Frame { top: p as f64 * PANEL_H, x: xr, y: yr };
        f.axes(&mut s, &format!("ln {} vs ln alpha   slope = {:.3}", fit.name, fit.slope), "ln alpha");
        polyline(&mut s, &f, &line, "firebrick");
        for (x, y) in lx.iter().zip(&ly) {
            let _ = writeln!(s, "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"steelblue\"/>", f.px(*x), f.py(*y));
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::fit_loglog;

    #[test]
    fn empty_inputs_are_rejected() {
        assert!(matches!(time_series_svg(&Table::new(&["t", "x"]), "t", &["x"]), Err(HarnessError::EmptyData)));
        assert!(matches!(scaling_svg(&[]), Err(HarnessError::EmptyData)));
    }

    #[test]
    fn output_is_deterministic() {
        let mut t = Table::new(&["t", "x"]);
        for i in 0..20 {
            t.push(vec![i as f64 * 0.1, (i as f64 * 0.3).sin()]);
        }
        let a = time_series_svg(&t, "t", &["x"]).unwrap();
        assert_eq!(a, time_series_svg(&t.clone(), "t", &["x"]).unwrap());
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        let fit = fit_loglog("err", &[2.0, 2.83, 4.0], &[0.3, 0.15, 0.07]).unwrap();
        let s = scaling_svg(&[fit.clone(), fit]).unwrap();
        assert_eq!(s.matches("<circle").count(), 6);
        assert!(s.contains("slope = "));
    }
}
