//! Synthetic target-vehicle trajectories at a four-way crossing.
//!
//! Right-hand traffic, intersection centre at the origin, lane width `w`.
//! The ego vehicle drives north on `x = w/2`. Targets approach from the
//! east heading west: straight-on and right-turning vehicles on `y = 1.5w`,
//! left-turning vehicles on their own lane `y = w/2`. Right turns merge into
//! the ego lane, left turns cross it and leave south on `x = -w/2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::driver::{Intention, Trajectory};
use crate::error::{Error, Result};

/// Intersection layout. All other coordinates derive from the lane width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntersectionGeometry {
    pub lane_width: f64,
}

impl Default for IntersectionGeometry {
    fn default() -> Self {
        Self { lane_width: 3.5 }
    }
}

impl IntersectionGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.lane_width > 0.0 && self.lane_width.is_finite()) {
            return Err(Error::Config(format!(
                "lane_width must be positive, got {}",
                self.lane_width
            )));
        }
        Ok(())
    }

    /// x coordinate of the northbound ego lane.
    pub fn ego_lane_x(&self) -> f64 {
        0.5 * self.lane_width
    }

    /// Conflict area `[x_min, x_max, y_min, y_max]`: one lane each side of the
    /// north-south road, three lanes across the east approach.
    pub fn intersection_box(&self) -> [f64; 4] {
        let w = self.lane_width;
        [-w, w, -w, 2.0 * w]
    }

    pub fn in_intersection(&self, p: [f64; 2]) -> bool {
        let b = self.intersection_box();
        p[0] >= b[0] && p[0] <= b[1] && p[1] >= b[2] && p[1] <= b[3]
    }

    /// Knots of the straight northbound ego path from `y_start` to `y_end`.
    pub fn ego_path_knots(&self, y_start: f64, y_end: f64, spacing: f64) -> Vec<[f64; 2]> {
        let n = (((y_end - y_start) / spacing).ceil() as usize).max(1);
        (0..=n)
            .map(|i| {
                [
                    self.ego_lane_x(),
                    y_start + (y_end - y_start) * i as f64 / n as f64,
                ]
            })
            .collect()
    }

    /// Centre line of the target lane for `intention`.
    pub fn template(
        &self,
        intention: Intention,
        approach_start_x: f64,
        exit_length: f64,
    ) -> LaneTemplate {
        let w = self.lane_width;
        match intention {
            Intention::StraightOn => {
                let start = [approach_start_x, 1.5 * w];
                let len = approach_start_x + 2.0 * w + exit_length;
                LaneTemplate {
                    pieces: vec![Piece::Line {
                        start,
                        dir: [-1.0, 0.0],
                        len,
                    }],
                    turn: None,
                }
            }
            Intention::TurnRight => {
                let r = 4.0 / 3.5 * w;
                let cx = 0.5 * w + r;
                let approach = approach_start_x - cx;
                LaneTemplate {
                    pieces: vec![
                        Piece::Line {
                            start: [approach_start_x, 1.5 * w],
                            dir: [-1.0, 0.0],
                            len: approach,
                        },
                        Piece::Arc {
                            center: [cx, 1.5 * w + r],
                            radius: r,
                            start_angle: -std::f64::consts::FRAC_PI_2,
                            sweep: -std::f64::consts::FRAC_PI_2,
                        },
                        Piece::Line {
                            start: [0.5 * w, 1.5 * w + r],
                            dir: [0.0, 1.0],
                            len: exit_length,
                        },
                    ],
                    turn: Some((approach, approach + r * std::f64::consts::FRAC_PI_2)),
                }
            }
            Intention::TurnLeft => {
                let r = 1.5 * w;
                let cx = w;
                let approach = approach_start_x - cx;
                LaneTemplate {
                    pieces: vec![
                        Piece::Line {
                            start: [approach_start_x, 0.5 * w],
                            dir: [-1.0, 0.0],
                            len: approach,
                        },
                        Piece::Arc {
                            center: [cx, -w],
                            radius: r,
                            start_angle: std::f64::consts::FRAC_PI_2,
                            sweep: std::f64::consts::FRAC_PI_2,
                        },
                        Piece::Line {
                            start: [cx - r, -w],
                            dir: [0.0, -1.0],
                            len: exit_length,
                        },
                    ],
                    turn: Some((approach, approach + r * std::f64::consts::FRAC_PI_2)),
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Piece {
    Line {
        start: [f64; 2],
        dir: [f64; 2],
        len: f64,
    },
    /// Counter-clockwise for positive sweep.
    Arc {
        center: [f64; 2],
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Piece {
    fn len(&self) -> f64 {
        match *self {
            Piece::Line { len, .. } => len,
            Piece::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    /// Point and unit tangent at arc length `s` into the piece.
    fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        match *self {
            Piece::Line { start, dir, .. } => ([start[0] + s * dir[0], start[1] + s * dir[1]], dir),
            Piece::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let a = start_angle + sweep.signum() * s / radius;
                let p = [center[0] + radius * a.cos(), center[1] + radius * a.sin()];
                let t = [-a.sin() * sweep.signum(), a.cos() * sweep.signum()];
                (p, t)
            }
        }
    }
}

/// Lane centre line made of straight and circular pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneTemplate {
    pieces: Vec<Piece>,
    /// Arc-length interval of the turn, if any.
    turn: Option<(f64, f64)>,
}

impl LaneTemplate {
    pub fn length(&self) -> f64 {
        self.pieces.iter().map(Piece::len).sum()
    }

    pub fn turn_interval(&self) -> Option<(f64, f64)> {
        self.turn
    }

    /// Point and unit tangent at arc length `s`, clamped to the template.
    pub fn eval(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let mut rest = s.max(0.0);
        for (i, p) in self.pieces.iter().enumerate() {
            let l = p.len();
            if rest <= l || i + 1 == self.pieces.len() {
                return p.eval(rest.min(l));
            }
            rest -= l;
        }
        unreachable!("template has at least one piece")
    }
}

/// Generator magnitudes. Speeds in m/s, distances in m, times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub geometry: IntersectionGeometry,
    pub sampling_time: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Speed multiplier inside the right-turn arc.
    pub right_turn_factor: f64,
    /// Speed multiplier inside the left-turn arc.
    pub left_turn_factor: f64,
    /// Distance over which drivers slow down before a turn.
    pub slowdown_distance: f64,
    /// Distance over which drivers regain speed after a turn.
    pub recovery_distance: f64,
    pub perturbation_amplitude: f64,
    pub perturbation_period_min: f64,
    pub perturbation_period_max: f64,
    pub lateral_offset_std: f64,
    pub measurement_noise: f64,
    pub approach_start_x: f64,
    pub exit_length: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        Self {
            geometry: IntersectionGeometry::default(),
            sampling_time: 0.04,
            speed_min: 6.0,
            speed_max: 12.0,
            right_turn_factor: 0.45,
            left_turn_factor: 0.55,
            slowdown_distance: 15.0,
            recovery_distance: 30.0,
            perturbation_amplitude: 0.2,
            perturbation_period_min: 4.0,
            perturbation_period_max: 8.0,
            lateral_offset_std: 0.2,
            measurement_noise: 0.15,
            approach_start_x: 50.0,
            exit_length: 40.0,
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let positive = [
            ("sampling_time", self.sampling_time),
            ("speed_min", self.speed_min),
            ("right_turn_factor", self.right_turn_factor),
            ("left_turn_factor", self.left_turn_factor),
            ("perturbation_period_min", self.perturbation_period_min),
            ("exit_length", self.exit_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("slowdown_distance", self.slowdown_distance),
            ("recovery_distance", self.recovery_distance),
            ("perturbation_amplitude", self.perturbation_amplitude),
            ("lateral_offset_std", self.lateral_offset_std),
            ("measurement_noise", self.measurement_noise),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.speed_max < self.speed_min {
            return Err(Error::Config("speed_max must be at least speed_min".into()));
        }
        if self.perturbation_period_max < self.perturbation_period_min {
            return Err(Error::Config(
                "perturbation_period_max must be at least perturbation_period_min".into(),
            ));
        }
        if self.perturbation_amplitude
            >= self.speed_min * self.right_turn_factor.min(self.left_turn_factor)
        {
            return Err(Error::Config(
                "perturbation_amplitude would allow standstill".into(),
            ));
        }
        if self.approach_start_x <= 3.0 * self.geometry.lane_width {
            return Err(Error::Config(
                "approach_start_x must lie east of the turn radius".into(),
            ));
        }
        Ok(())
    }

    fn turn_factor(&self, intention: Intention) -> f64 {
        match intention {
            Intention::TurnRight => self.right_turn_factor,
            Intention::TurnLeft => self.left_turn_factor,
            Intention::StraightOn => 1.0,
        }
    }
}

/// One synthetic target vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTrajectory {
    pub intention: Intention,
    /// Measured positions (with noise).
    pub trajectory: Trajectory,
    /// Noise-free positions at the same instants.
    pub truth: Vec<[f64; 2]>,
    /// Arc length along the lane template at each sample.
    pub arc_length: Vec<f64>,
    pub base_speed: f64,
    /// Arc-length interval of the turn, if any.
    pub turn_interval: Option<(f64, f64)>,
}

impl GeneratedTrajectory {
    /// Index of the first sample at or past arc length `s`.
    pub fn index_at_arc_length(&self, s: f64) -> Option<usize> {
        self.arc_length.iter().position(|&a| a >= s)
    }
}

/// Smooth factor that ramps from 1 to `c` before the turn and back after it.
fn speed_factor(s: f64, turn: Option<(f64, f64)>, c: f64, slow: f64, recover: f64) -> f64 {
    let Some((a, b)) = turn else { return 1.0 };
    let ramp = |u: f64| 0.5 - 0.5 * (std::f64::consts::PI * u.clamp(0.0, 1.0)).cos();
    let w = if s < a - slow {
        0.0
    } else if s < a {
        if slow > 0.0 {
            ramp((s - (a - slow)) / slow)
        } else {
            1.0
        }
    } else if s <= b {
        1.0
    } else if recover > 0.0 {
        1.0 - ramp((s - b) / recover)
    } else {
        0.0
    };
    1.0 + (c - 1.0) * w
}

/// Generates vehicle `index` of `intention` from the master `seed`.
///
/// Each (intention, index) pair draws from its own random stream, so a
/// vehicle does not depend on how many others are generated.
pub fn generate(
    intention: Intention,
    index: u64,
    seed: u64,
    params: &GeneratorParams,
) -> Result<GeneratedTrajectory> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((intention.index() as u64) << 48) ^ index);

    let template = params
        .geometry
        .template(intention, params.approach_start_x, params.exit_length);
    let turn = template.turn_interval();
    let total = template.length();
    let c = params.turn_factor(intention);

    let base = if params.speed_max > params.speed_min {
        rng.random_range(params.speed_min..params.speed_max)
    } else {
        params.speed_min
    };
    let period = if params.perturbation_period_max > params.perturbation_period_min {
        rng.random_range(params.perturbation_period_min..params.perturbation_period_max)
    } else {
        params.perturbation_period_min
    };
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let offset = if params.lateral_offset_std > 0.0 {
        Normal::new(0.0, params.lateral_offset_std)
            .map_err(|e| Error::Config(e.to_string()))?
            .sample(&mut rng)
    } else {
        0.0
    };
    let noise =
        Normal::new(0.0, params.measurement_noise).map_err(|e| Error::Config(e.to_string()))?;

    let speed = |s: f64, t: f64| {
        base * speed_factor(
            s,
            turn,
            c,
            params.slowdown_distance,
            params.recovery_distance,
        ) + params.perturbation_amplitude * (std::f64::consts::TAU * t / period + phase).sin()
    };

    let ts = params.sampling_time;
    const SUBSTEPS: usize = 8;
    let h = ts / SUBSTEPS as f64;
    let mut s = 0.0;
    let mut t = 0.0;
    let mut truth = Vec::new();
    let mut arc = Vec::new();
    let mut measured = Vec::new();
    while s <= total {
        let (p, dir) = template.eval(s);
        // Left normal of the direction of travel.
        let q = [p[0] - offset * dir[1], p[1] + offset * dir[0]];
        truth.push(q);
        arc.push(s);
        measured.push([q[0] + noise.sample(&mut rng), q[1] + noise.sample(&mut rng)]);
        for _ in 0..SUBSTEPS {
            let k1 = speed(s, t);
            let k2 = speed(s + 0.5 * h * k1, t + 0.5 * h);
            s += h * k2;
            t += h;
        }
    }
    Ok(GeneratedTrajectory {
        intention,
        trajectory: Trajectory::from_positions(&measured, ts, 0.0),
        truth,
        arc_length: arc,
        base_speed: base,
        turn_interval: turn,
    })
}

/// Vehicles `0..count` of one intention.
pub fn generate_set(
    intention: Intention,
    count: usize,
    seed: u64,
    params: &GeneratorParams,
) -> Result<Vec<GeneratedTrajectory>> {
    (0..count as u64)
        .map(|i| generate(intention, i, seed, params))
        .collect()
}
