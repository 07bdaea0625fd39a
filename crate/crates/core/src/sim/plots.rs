//! SVG line charts of a scenario log, each with the CSV it was drawn from.
//!
//! Every CSV has the columns `series,x,y`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::ScenarioLog;
use crate::driver::Intention;
use crate::error::{Error, Result};

/// Base names of the emitted plots; each yields `<name>.svg` and `<name>.csv`.
pub const PLOT_NAMES: [&str; 4] = ["trajectories", "probabilities", "velocities", "distances"];

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: [f64; 4] = [70.0, 20.0, 40.0, 60.0]; // left, right, top, bottom
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

struct Series {
    name: String,
    points: Vec<(f64, f64)>,
    dashed: bool,
    color: usize,
}

struct Chart {
    title: &'static str,
    x_label: &'static str,
    y_label: &'static str,
    series: Vec<Series>,
    equal_axes: bool,
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f < 1.5 {
        1.0
    } else if f < 3.0 {
        2.0
    } else if f < 7.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    fn bounds(&self) -> ([f64; 2], [f64; 2]) {
        let mut x = [f64::INFINITY, f64::NEG_INFINITY];
        let mut y = [f64::INFINITY, f64::NEG_INFINITY];
        for (px, py) in self.series.iter().flat_map(|s| s.points.iter()) {
            if px.is_finite() && py.is_finite() {
                x = [x[0].min(*px), x[1].max(*px)];
                y = [y[0].min(*py), y[1].max(*py)];
            }
        }
        if !x[0].is_finite() {
            return ([0.0, 1.0], [0.0, 1.0]);
        }
        let pad = |r: [f64; 2]| {
            let span = (r[1] - r[0]).max(1e-9);
            [r[0] - 0.05 * span, r[1] + 0.05 * span]
        };
        let (mut x, mut y) = (pad(x), pad(y));
        if self.equal_axes {
            let pw = WIDTH - MARGIN[0] - MARGIN[1];
            let ph = HEIGHT - MARGIN[2] - MARGIN[3];
            let scale = ((x[1] - x[0]) / pw).max((y[1] - y[0]) / ph);
            let (cx, cy) = (0.5 * (x[0] + x[1]), 0.5 * (y[0] + y[1]));
            x = [cx - 0.5 * scale * pw, cx + 0.5 * scale * pw];
            y = [cy - 0.5 * scale * ph, cy + 0.5 * scale * ph];
        }
        (x, y)
    }

    fn svg(&self) -> String {
        let (xr, yr) = self.bounds();
        let (l, r, t, b) = (MARGIN[0], WIDTH - MARGIN[1], MARGIN[2], HEIGHT - MARGIN[3]);
        let sx = |x: f64| l + (x - xr[0]) / (xr[1] - xr[0]) * (r - l);
        let sy = |y: f64| b - (y - yr[0]) / (yr[1] - yr[0]) * (b - t);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(self.title)
        );
        for (range, horizontal) in [(xr, true), (yr, false)] {
            let step = nice_step(range[1] - range[0]);
            let mut v = (range[0] / step).ceil() * step;
            while v <= range[1] {
                let label = format!("{}", (v / step).round() * step);
                if horizontal {
                    let x = sx(v);
                    let _ = writeln!(
                        out,
                        r##"<line x1="{x:.2}" y1="{t}" x2="{x:.2}" y2="{b}" stroke="#e0e0e0"/>"##
                    );
                    let _ = writeln!(
                        out,
                        r#"<text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"#,
                        b + 16.0
                    );
                } else {
                    let y = sy(v);
                    let _ = writeln!(
                        out,
                        r##"<line x1="{l}" y1="{y:.2}" x2="{r}" y2="{y:.2}" stroke="#e0e0e0"/>"##
                    );
                    let _ = writeln!(
                        out,
                        r#"<text x="{}" y="{:.2}" text-anchor="end">{label}</text>"#,
                        l - 6.0,
                        y + 4.0
                    );
                }
                v += step;
            }
        }
        let _ = writeln!(
            out,
            r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (l + r) / 2.0,
            HEIGHT - 18.0,
            escape(self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{1}</text>"#,
            (t + b) / 2.0,
            escape(self.y_label)
        );
        let mut legend = Vec::new();
        for s in &self.series {
            let color = COLORS[s.color % COLORS.len()];
            let pts: Vec<String> = s
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let dash = if s.dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                pts.join(" ")
            );
            if !legend
                .iter()
                .any(|(n, _, _): &(String, usize, bool)| *n == legend_name(&s.name))
            {
                legend.push((legend_name(&s.name), s.color, s.dashed));
            }
        }
        for (i, (name, color, dashed)) in legend.iter().enumerate() {
            let y = t + 14.0 + 16.0 * i as f64;
            let color = COLORS[color % COLORS.len()];
            let dash = if *dashed {
                r#" stroke-dasharray="6 4""#
            } else {
                ""
            };
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="2"{dash}/>"#,
                r - 170.0,
                r - 145.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}">{}</text>"#,
                r - 140.0,
                y + 4.0,
                escape(name)
            );
        }
        out.push_str("</svg>\n");
        out
    }

    fn csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Data(format!("plot data: {e}"));
        w.write_record(["series", "x", "y"]).map_err(err)?;
        for s in &self.series {
            for (x, y) in &s.points {
                w.write_record([s.name.as_str(), &x.to_string(), &y.to_string()])
                    .map_err(err)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
    }
}

/// Snapshot traces share one legend entry per kind.
fn legend_name(name: &str) -> String {
    name.split('@').next().unwrap_or(name).to_string()
}

fn charts(log: &ScenarioLog) -> Vec<Chart> {
    let rows = &log.rows;
    let ts = if rows.len() > 1 {
        rows[1].t - rows[0].t
    } else {
        0.04
    };
    let series = |name: &str, points: Vec<(f64, f64)>, color: usize, dashed: bool| Series {
        name: name.to_string(),
        points,
        dashed,
        color,
    };

    let mut traj = vec![series(
        "ego",
        rows.iter().map(|r| (r.ego_px, r.ego_py)).collect(),
        0,
        false,
    )];
    let target: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.target_px?, r.target_py?)))
        .collect();
    if !target.is_empty() {
        traj.push(series("target", target, 1, false));
    }

    let probs = Intention::ALL
        .iter()
        .enumerate()
        .map(|(c, &i)| {
            series(
                &format!("P_{}", i.short()),
                rows.iter().map(|r| (r.t, r.probability(i))).collect(),
                c,
                false,
            )
        })
        .collect();

    let mut vel = vec![series(
        "ego_v",
        rows.iter().map(|r| (r.t, r.ego_v)).collect(),
        0,
        false,
    )];
    let tv: Vec<(f64, f64)> = rows
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let d = (b.target_px? - a.target_px?).hypot(b.target_py? - a.target_py?);
            Some((a.t, d / (b.t - a.t)))
        })
        .collect();
    if !tv.is_empty() {
        vel.push(series("target_v", tv, 1, false));
    }

    let mut dist = Vec::new();
    let d: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| Some((r.t, r.distance?)))
        .collect();
    if !d.is_empty() {
        dist.push(series("distance", d, 0, false));
    }
    dist.push(series(
        "d_safe",
        rows.iter().map(|r| (r.t, r.d_safe)).collect(),
        7,
        false,
    ));
    for snap in &log.predictions {
        let c = 1 + snap.intention.index();
        let t0 = snap.k as f64 * ts;
        let pts = |v: &[f64]| {
            v.iter()
                .enumerate()
                .map(|(j, d)| (t0 + j as f64 * ts, *d))
                .collect()
        };
        dist.push(series(
            &format!("predicted_{}@k={}", snap.intention.short(), snap.k),
            pts(&snap.predicted_distance),
            c,
            false,
        ));
        dist.push(series(
            &format!("tightened_{}@k={}", snap.intention.short(), snap.k),
            pts(&snap.required_distance),
            c,
            true,
        ));
    }

    vec![
        Chart {
            title: "Trajectories",
            x_label: "x [m]",
            y_label: "y [m]",
            series: traj,
            equal_axes: true,
        },
        Chart {
            title: "Intention probabilities",
            x_label: "t [s]",
            y_label: "probability",
            series: probs,
            equal_axes: false,
        },
        Chart {
            title: "Velocities",
            x_label: "t [s]",
            y_label: "v [m/s]",
            series: vel,
            equal_axes: false,
        },
        Chart {
            title: "Distance and tightened constraints",
            x_label: "t [s]",
            y_label: "distance [m]",
            series: dist,
            equal_axes: false,
        },
    ]
}

/// Writes the four charts and their CSVs into `out_dir`, returning the paths.
/// All content is rendered before anything is written.
pub fn emit_plots(log: &ScenarioLog, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if log.rows.is_empty() {
        return Err(Error::Data(format!("log {} has no rows to plot", log.name)));
    }
    let mut files = Vec::new();
    for (name, chart) in PLOT_NAMES.iter().zip(charts(log)) {
        files.push((format!("{name}.svg"), chart.svg()));
        files.push((format!("{name}.csv"), chart.csv()?));
    }
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, content) in files {
        let p = dir.join(name);
        fs::write(&p, content).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}
