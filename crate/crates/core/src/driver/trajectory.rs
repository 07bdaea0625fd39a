//! Timed target-vehicle trajectories and finite-difference velocities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allowed deviation of a sample gap from the sampling time, as a fraction of it.
pub const SAMPLING_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedPosition {
    pub t: f64,
    pub px: f64,
    pub py: f64,
}

impl TimedPosition {
    pub fn position(&self) -> [f64; 2] {
        [self.px, self.py]
    }
}

/// A uniformly sampled sequence of target positions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub samples: Vec<TimedPosition>,
}

/// A position paired with its estimated velocity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocitySample {
    pub px: f64,
    pub py: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Trajectory {
    pub fn new(samples: Vec<TimedPosition>) -> Self {
        Self { samples }
    }

    /// Positions sampled every `ts` seconds starting at `t0`.
    pub fn from_positions(positions: &[[f64; 2]], ts: f64, t0: f64) -> Self {
        Self {
            samples: positions
                .iter()
                .enumerate()
                .map(|(k, p)| TimedPosition {
                    t: t0 + k as f64 * ts,
                    px: p[0],
                    py: p[1],
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        self.samples.iter().map(TimedPosition::position).collect()
    }

    /// Checks that consecutive timestamps are `ts` apart to within [`SAMPLING_TOLERANCE`].
    pub fn check_uniform(&self, ts: f64) -> Result<()> {
        for (k, w) in self.samples.windows(2).enumerate() {
            let gap = w[1].t - w[0].t;
            if (gap - ts).abs() > SAMPLING_TOLERANCE * ts {
                return Err(Error::Data(format!(
                    "non-uniform sampling between samples {k} and {}: gap {gap} s, expected {ts} s",
                    k + 1
                )));
            }
        }
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        if headers.iter().collect::<Vec<_>>() != ["t", "px", "py"] {
            return Err(Error::Data(format!(
                "{}: expected header 't,px,py', found '{}'",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut samples = Vec::new();
        for row in reader.deserialize::<TimedPosition>() {
            let s = row.map_err(|e| csv_error(path, e))?;
            if !(s.t.is_finite() && s.px.is_finite() && s.py.is_finite()) {
                return Err(Error::Data(format!(
                    "{}: non-finite sample",
                    path.display()
                )));
            }
            samples.push(s);
        }
        Ok(Self { samples })
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
        writer
            .write_record(["t", "px", "py"])
            .map_err(|e| csv_error(path, e))?;
        for s in &self.samples {
            writer
                .write_record([s.t.to_string(), s.px.to_string(), s.py.to_string()])
                .map_err(|e| csv_error(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

/// Velocities by central differences, one-sided at both ends.
pub fn estimate_velocities(trajectory: &Trajectory, ts: f64) -> Result<Vec<VelocitySample>> {
    let n = trajectory.len();
    if n < 2 {
        return Err(Error::Data(format!(
            "trajectory needs at least 2 samples, has {n}"
        )));
    }
    if !(ts > 0.0) {
        return Err(Error::Usage(format!(
            "sampling time must be positive, got {ts}"
        )));
    }
    trajectory.check_uniform(ts)?;
    let p = &trajectory.samples;
    Ok((0..n)
        .map(|k| {
            let (a, b, h) = if k == 0 {
                (0, 1, ts)
            } else if k == n - 1 {
                (n - 2, n - 1, ts)
            } else {
                (k - 1, k + 1, 2.0 * ts)
            };
            VelocitySample {
                px: p[k].px,
                py: p[k].py,
                vx: (p[b].px - p[a].px) / h,
                vy: (p[b].py - p[a].py) / h,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_velocity_line() {
        let pos: Vec<[f64; 2]> = (0..20).map(|k| [k as f64 * 0.04 * 2.0, 1.0]).collect();
        let v = estimate_velocities(&Trajectory::from_positions(&pos, 0.04, 0.0), 0.04).unwrap();
        assert_eq!(v.len(), 20);
        for s in v {
            assert!((s.vx - 2.0).abs() < 1e-12);
            assert!(s.vy.abs() < 1e-12);
        }
    }

    #[test]
    fn three_point_central_difference() {
        let pos = [[0.0, 0.0], [1.0, 0.5], [3.0, 0.7]];
        let v = estimate_velocities(&Trajectory::from_positions(&pos, 0.1, 2.0), 0.1).unwrap();
        assert!((v[1].vx - 3.0 / 0.2).abs() < 1e-12);
        assert!((v[1].vy - 0.7 / 0.2).abs() < 1e-12);
        assert!((v[0].vx - 10.0).abs() < 1e-12);
        assert!((v[2].vx - 20.0).abs() < 1e-12);
    }

    #[test]
    fn sine_path_error_is_second_order() {
        let ts = 0.04;
        let omega = 1.3;
        let pos: Vec<[f64; 2]> = (0..200)
            .map(|k| {
                let t = k as f64 * ts;
                [5.0 * t, (omega * t).sin()]
            })
            .collect();
        let v = estimate_velocities(&Trajectory::from_positions(&pos, ts, 0.0), ts).unwrap();
        // Central difference error is bounded by h²/6 · max|y'''| = ts²/6 · ω³.
        let bound = ts * ts / 6.0 * omega.powi(3);
        for (k, s) in v.iter().enumerate().take(199).skip(1) {
            let exact = omega * (omega * k as f64 * ts).cos();
            assert!((s.vy - exact).abs() <= bound * 1.0001, "k={k}");
        }
    }

    #[test]
    fn non_uniform_timestamps_rejected() {
        let t = Trajectory::new(vec![
            TimedPosition {
                t: 0.0,
                px: 0.0,
                py: 0.0,
            },
            TimedPosition {
                t: 0.04,
                px: 0.1,
                py: 0.0,
            },
            TimedPosition {
                t: 0.0805,
                px: 0.2,
                py: 0.0,
            },
        ]);
        assert!(matches!(estimate_velocities(&t, 0.04), Err(Error::Data(_))));
        let ok = Trajectory::new(vec![
            TimedPosition {
                t: 0.0,
                px: 0.0,
                py: 0.0,
            },
            TimedPosition {
                t: 0.0402,
                px: 0.1,
                py: 0.0,
            },
        ]);
        assert!(estimate_velocities(&ok, 0.04).is_ok());
    }

    #[test]
    fn csv_roundtrip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let t = Trajectory::from_positions(&[[0.1, 0.2], [0.3, 0.4]], 0.04, 0.0);
        t.write_csv(&path).unwrap();
        assert!(std::fs::read_to_string(&path)
            .unwrap()
            .starts_with("t,px,py\n"));
        assert_eq!(Trajectory::read_csv(&path).unwrap(), t);
        std::fs::write(&path, "time,x,y\n0,0,0\n").unwrap();
        assert!(Trajectory::read_csv(&path).is_err());
    }
}
