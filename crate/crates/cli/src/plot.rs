//! Minimal SVG line charts: axes, ticks, a legend and one polyline per
//! series. Non-finite points are left out of their polyline.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Base-10 logarithmic x axis; points with `x <= 0` are dropped.
    pub log_x: bool,
    pub series: Vec<Series>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const COLORS: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Round step of 1, 2 or 5 times a power of ten giving about `target` ticks.
fn nice_step(span: f64, target: f64) -> f64 {
    let raw = span / target;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    let m = if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn linear_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo, 5.0);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        return format!("{v:.0e}");
    }
    // Trim float noise from multiples of the tick step.
    let s = format!("{:.6}", v);
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

impl LineChart {
    fn x_of(&self, x: f64) -> Option<f64> {
        match (self.log_x, x.is_finite()) {
            (_, false) => None,
            (true, _) if x <= 0.0 => None,
            (true, _) => Some(x.log10()),
            (false, _) => Some(x),
        }
    }

    /// Data range in transformed x and in y, padded when degenerate.
    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
        let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
        for s in &self.series {
            for &(x, y) in &s.points {
                if let (Some(tx), true) = (self.x_of(x), y.is_finite()) {
                    xs = (xs.0.min(tx), xs.1.max(tx));
                    ys = (ys.0.min(y), ys.1.max(y));
                }
            }
        }
        let pad = |(lo, hi): (f64, f64)| {
            if lo > hi {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 * (1.0 + lo.abs()) {
                (lo - 0.5 * (1.0 + lo.abs() * 0.1), hi + 0.5 * (1.0 + hi.abs() * 0.1))
            } else {
                (lo, hi)
            }
        };
        let (ylo, yhi) = pad(ys);
        let margin = 0.05 * (yhi - ylo);
        (pad(xs), (ylo - margin, yhi + margin))
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |tx: f64| LEFT + (tx - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut o = String::new();
        let _ = writeln!(o, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&self.title));

        // Axes.
        let _ = writeln!(
            o,
            r#"<g class="axes" stroke="black" fill="none"><line x1="{LEFT}" y1="{b}" x2="{r}" y2="{b}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{b}"/></g>"#,
            b = TOP + ph,
            r = LEFT + pw
        );

        // X ticks.
        let x_ticks: Vec<(f64, String)> = if self.log_x {
            let (lo, hi) = (x0.ceil() as i32, x1.floor() as i32);
            (lo..=hi).map(|e| (e as f64, tick_label(10f64.powi(e)))).collect()
        } else {
            linear_ticks(x0, x1).into_iter().map(|v| (v, tick_label(v))).collect()
        };
        let _ = writeln!(o, r#"<g class="x-ticks">"#);
        for (t, label) in &x_ticks {
            let px = sx(*t);
            let _ = writeln!(
                o,
                r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{b2}" stroke="black"/><text x="{px:.2}" y="{ty}" text-anchor="middle">{}</text>"#,
                escape(label),
                b = TOP + ph,
                b2 = TOP + ph + 5.0,
                ty = TOP + ph + 19.0
            );
        }
        let _ = writeln!(o, "</g>");

        // Y ticks with light grid lines.
        let _ = writeln!(o, r#"<g class="y-ticks">"#);
        for t in linear_ticks(y0, y1) {
            let py = sy(t);
            let _ = writeln!(
                o,
                r##"<line x1="{LEFT}" y1="{py:.2}" x2="{r}" y2="{py:.2}" stroke="#dddddd"/><line x1="{l5}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{}</text>"##,
                escape(&tick_label(t)),
                r = LEFT + pw,
                l5 = LEFT - 5.0,
                tx = LEFT - 8.0,
                ty = py + 4.0
            );
        }
        let _ = writeln!(o, "</g>");

        let _ = writeln!(o, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(&self.x_label));
        let _ = writeln!(
            o,
            r#"<text x="18" y="{cy}" text-anchor="middle" transform="rotate(-90 18 {cy})">{}</text>"#,
            escape(&self.y_label),
            cy = TOP + ph / 2.0
        );

        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter_map(|&(x, y)| match (self.x_of(x), y.is_finite()) {
                    (Some(tx), true) => Some(format!("{:.2},{:.2}", sx(tx), sy(y))),
                    _ => None,
                })
                .collect();
            let _ = writeln!(
                o,
                r#"<polyline data-series="{}" fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                escape(&s.name),
                pts.join(" ")
            );
        }

        // Legend.
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(o, r#"<g class="legend">"#);
        for (i, s) in self.series.iter().enumerate() {
            let ly = TOP + 10.0 + 20.0 * i as f64;
            let _ = writeln!(
                o,
                r#"<line x1="{lx}" y1="{ly}" x2="{lx2}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{tx}" y="{ty}">{}</text>"#,
                COLORS[i % COLORS.len()],
                escape(&s.name),
                lx2 = lx + 22.0,
                tx = lx + 28.0,
                ty = ly + 4.0
            );
        }
        let _ = writeln!(o, "</g>");
        o.push_str("</svg>\n");
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(log_x: bool) -> LineChart {
        LineChart {
            title: "a < b & c".into(),
            x_label: "x".into(),
            y_label: "y".into(),
            log_x,
            series: vec![
                Series { name: "one".into(), points: vec![(0.001, 0.1), (0.1, 0.2), (10.0, 0.4)] },
                Series { name: "two".into(), points: vec![(0.001, f64::NAN), (1.0, 0.3)] },
            ],
        }
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(escape(r#"<a href="x">&'"#), "&lt;a href=&quot;x&quot;&gt;&amp;&apos;");
        assert!(chart(false).to_svg().contains("a &lt; b &amp; c"));
    }

    #[test]
    fn one_polyline_per_series_and_nan_dropped() {
        let svg = chart(true).to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
        let two = svg.lines().find(|l| l.contains(r#"data-series="two""#)).unwrap();
        assert_eq!(two.split("points=\"").nth(1).unwrap().trim_end_matches("\"/>").split(' ').count(), 1);
    }

    #[test]
    fn log_ticks_are_powers_of_ten() {
        let svg = chart(true).to_svg();
        for label in [">0.001<", ">0.01<", ">0.1<", ">1<", ">10<"] {
            assert!(svg.contains(label), "missing {label}");
        }
    }

    #[test]
    fn empty_chart_still_renders() {
        let c = LineChart { title: String::new(), x_label: String::new(), y_label: String::new(), log_x: false, series: vec![] };
        assert!(c.to_svg().ends_with("</svg>\n"));
    }

    #[test]
    fn nice_steps() {
        assert_eq!(nice_step(1.0, 5.0), 0.2);
        assert_eq!(nice_step(300.0, 5.0), 50.0);
        assert_eq!(linear_ticks(0.0, 1.0).len(), 6);
    }
}
