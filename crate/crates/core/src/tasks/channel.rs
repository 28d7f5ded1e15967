//! Synthetic CSI amplitude generator.
//!
//! Each scenario is one room: a transmitter at a random position, a few
//! attenuating obstacles, and a set of fixed point scatterers. A capture at a
//! reference point sums the line-of-sight ray and the scattered rays at every
//! subcarrier for each of three receive antennas, then adds a time-varying
//! diffuse component (a burst of weak random rays), small receiver jitter and
//! additive noise:
//!
//! ```text
//! amp[a][s] = envelope(d) · |H_a(f_s)| · gain_a + noise
//! envelope(d) = A_ref · (d_ref / d)^(n / 2) · 10^(-obstacle_loss_db / 20)
//! ```

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Grid, Sample, Scenario};
use crate::error::{Error, Result};
use crate::model::{ANTENNAS, SUBCARRIERS};
use crate::rng::{self, Stream};

/// Subcarrier indices reported by a 20 MHz grouped CSI feedback (30 groups).
pub const SUBCARRIER_INDICES: [i32; SUBCARRIERS] = [
    -28, -26, -24, -22, -20, -18, -16, -14, -12, -10, -8, -6, -4, -2, -1, 1, 3, 5, 7, 9, 11, 13,
    15, 17, 19, 21, 23, 25, 27, 28,
];

const SUBCARRIER_SPACING_HZ: f64 = 312.5e3;
const SPEED_OF_LIGHT_CM_S: f64 = 2.997_924_58e10;
const REFERENCE_DISTANCE_CM: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub grid: Grid,
    pub samples_per_rp: usize,
    pub path_loss_exponent: f64,
    pub carrier_hz: f64,
    /// Transmitter distance from the grid centroid, `[min, max]` cm.
    pub tx_distance_cm: [f64; 2],
    /// Half-width of the transmitter bearing window around +x, degrees.
    /// 180 places it anywhere around the grid.
    pub tx_bearing_spread_deg: f64,
    pub max_obstacles: usize,
    pub obstacle_loss_db: [f64; 2],
    pub scatterers: usize,
    pub reflection_gain: [f64; 2],
    /// Half-extent of the square room scatterers live in, `[min, max]` cm.
    pub room_half_extent_cm: [f64; 2],
    /// Ratio of specular to diffuse power, dB.
    pub rician_k_db: f64,
    /// Rays in each capture's diffuse component.
    pub diffuse_rays: usize,
    /// Largest excess delay of a diffuse ray, ns.
    pub diffuse_max_delay_ns: f64,
    /// Per-sample phase perturbation (std, radians) of the static diffuse rays.
    pub diffuse_phase_jitter: f64,
    /// Standard deviation of receiver placement error per capture, cm.
    pub jitter_cm: f64,
    pub antenna_gain_db_std: f64,
    pub noise_std: f64,
    /// Line-of-sight amplitude at 1 m with no obstacles.
    pub reference_amplitude: f64,
    /// Seed of the base environment shared by every scenario of a suite.
    pub environment_seed: u64,
    /// Range of the per-scenario fraction of room components (transmitter,
    /// each obstacle, each scatterer) redrawn away from the base environment.
    /// Antenna gains are always the scenario's own. `[1, 1]` makes every scenario an independent room.
    pub variation: [f64; 2],
    /// Range of the per-scenario multiplier on `noise_std`, drawn
    /// log-uniformly.
    pub noise_scale: [f64; 2],
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            grid: Grid::default(),
            samples_per_rp: 40,
            path_loss_exponent: 2.5,
            carrier_hz: 5.32e9,
            tx_distance_cm: [250.0, 600.0],
            tx_bearing_spread_deg: 180.0,
            max_obstacles: 3,
            obstacle_loss_db: [3.0, 12.0],
            scatterers: 6,
            reflection_gain: [0.2, 0.7],
            room_half_extent_cm: [300.0, 700.0],
            rician_k_db: 8.0,
            diffuse_rays: 8,
            diffuse_max_delay_ns: 100.0,
            diffuse_phase_jitter: 1.5,
            jitter_cm: 0.5,
            antenna_gain_db_std: 2.0,
            noise_std: 1.0,
            reference_amplitude: 30.0,
            environment_seed: 0,
            variation: [0.0, 0.2],
            noise_scale: [0.5, 2.0],
        }
    }
}

impl ChannelConfig {
    fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.samples_per_rp < 2 {
            return Err(Error::Config(format!(
                "samples_per_rp must be at least 2, got {}",
                self.samples_per_rp
            )));
        }
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(self.tx_distance_cm)
            || !ordered(self.obstacle_loss_db)
            || !ordered(self.reflection_gain)
            || !ordered(self.room_half_extent_cm)
            || !ordered(self.variation)
            || !ordered(self.noise_scale)
            || self.tx_distance_cm[0] <= 0.0
            || self.variation[0] < 0.0
            || self.variation[1] > 1.0
            || self.noise_scale[0] <= 0.0
        {
            return Err(Error::Config("channel ranges must be finite and ordered".into()));
        }
        if !(self.carrier_hz > 0.0 && self.path_loss_exponent > 0.0) {
            return Err(Error::Config("carrier and path-loss exponent must be positive".into()));
        }
        if self.jitter_cm < 0.0 || self.noise_std < 0.0 || self.antenna_gain_db_std < 0.0 {
            return Err(Error::Config("noise parameters must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Point {
    x: f64,
    y: f64,
}

impl Point {
    fn dist(self, o: Point) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }
}

#[derive(Debug, Clone, Copy)]
struct Obstacle {
    a: Point,
    b: Point,
    loss_db: f64,
}

#[derive(Debug, Clone, Copy)]
struct Scatterer {
    at: Point,
    gain: f64,
    phase: f64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn segments_cross(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

struct Room {
    tx: Point,
    obstacles: Vec<Obstacle>,
    scatterers: Vec<Scatterer>,
    antenna_gain: [f64; ANTENNAS],
}

fn uniform(rng: &mut impl Rng, r: [f64; 2]) -> f64 {
    if r[0] == r[1] {
        r[0]
    } else {
        rng.random_range(r[0]..r[1])
    }
}

fn draw_room(cfg: &ChannelConfig, rng: &mut impl Rng) -> Room {
    let c = cfg.grid.centroid();
    let center = Point { x: c[0], y: c[1] };
    let spread = cfg.tx_bearing_spread_deg.to_radians();
    let bearing = if spread > 0.0 {
        rng.random_range(-spread..=spread)
    } else {
        0.0
    };
    let r = uniform(rng, cfg.tx_distance_cm);
    let tx = Point {
        x: center.x + r * bearing.cos(),
        y: center.y + r * bearing.sin(),
    };

    let n_obstacles = rng.random_range(0..=cfg.max_obstacles);
    let obstacles = (0..n_obstacles)
        .map(|_| {
            // somewhere between the grid and the transmitter, off to one side
            let t = rng.random_range(0.2..0.8);
            let off = rng.random_range(-150.0..150.0);
            let (dx, dy) = ((tx.x - center.x) / r, (tx.y - center.y) / r);
            let mid = Point {
                x: center.x + t * (tx.x - center.x) - off * dy,
                y: center.y + t * (tx.y - center.y) + off * dx,
            };
            let angle = rng.random_range(0.0..PI);
            let half = rng.random_range(50.0..200.0);
            Obstacle {
                a: Point {
                    x: mid.x - half * angle.cos(),
                    y: mid.y - half * angle.sin(),
                },
                b: Point {
                    x: mid.x + half * angle.cos(),
                    y: mid.y + half * angle.sin(),
                },
                loss_db: uniform(rng, cfg.obstacle_loss_db),
            }
        })
        .collect();

    let half = uniform(rng, cfg.room_half_extent_cm);
    let scatterers = (0..cfg.scatterers)
        .map(|_| Scatterer {
            at: Point {
                x: center.x + rng.random_range(-half..=half),
                y: center.y + rng.random_range(-half..=half),
            },
            gain: uniform(rng, cfg.reflection_gain),
            phase: rng.random_range(0.0..2.0 * PI),
        })
        .collect();

    let gain_db = Normal::new(0.0, cfg.antenna_gain_db_std.max(f64::MIN_POSITIVE))
        .expect("finite std");
    let antenna_gain = std::array::from_fn(|_| 10f64.powf(gain_db.sample(rng) / 20.0));

    Room {
        tx,
        obstacles,
        scatterers,
        antenna_gain,
    }
}

/// Generates one deterministic synthetic scenario for `seed`.
/// Keeps each component of `base` with probability `1 - v`, otherwise takes
/// the matching component of `own`.
fn mix_rooms(base: Room, own: Room, v: f64, rng: &mut impl Rng) -> Room {
    let mut pick = || rng.random::<f64>() < v;
    let tx = if pick() { own.tx } else { base.tx };
    let mut obstacles: Vec<Obstacle> = base.obstacles.into_iter().filter(|_| !pick()).collect();
    obstacles.extend(own.obstacles.into_iter().filter(|_| pick()));
    let scatterers = base
        .scatterers
        .into_iter()
        .zip(own.scatterers)
        .map(|(b, o)| if pick() { o } else { b })
        .collect();
    Room {
        tx,
        obstacles,
        scatterers,
        antenna_gain: own.antenna_gain,
    }
}

const ENVIRONMENT_SEED: u64 = 0xE5;

/// `n` scenarios named `scenario_<k>` sharing one base environment, all
/// derived from `seed`. `cfg.environment_seed` is replaced by a value derived
/// from `seed`.
pub fn generate_suite(n: usize, seed: u64, cfg: &ChannelConfig) -> Result<Vec<Scenario>> {
    let cfg = ChannelConfig {
        environment_seed: rng::derive(seed, ENVIRONMENT_SEED),
        ..cfg.clone()
    };
    (0..n as u64)
        .map(|k| {
            let mut s = generate_scenario(rng::derive(seed, k), &cfg)?;
            s.id = format!("scenario_{k}");
            Ok(s)
        })
        .collect()
}

pub fn generate_scenario(seed: u64, cfg: &ChannelConfig) -> Result<Scenario> {
    cfg.validate()?;
    let own = draw_room(cfg, &mut rng::stream(seed, Stream::Data, 0));
    let base = draw_room(cfg, &mut rng::stream(cfg.environment_seed, Stream::Data, 2));
    let mut mix_rng = rng::stream(seed, Stream::Data, 1);
    let v = uniform(&mut mix_rng, cfg.variation);
    let noise_scale = uniform(&mut mix_rng, [cfg.noise_scale[0].ln(), cfg.noise_scale[1].ln()]).exp();
    let room = mix_rooms(base, own, v, &mut mix_rng);
    let mut rng = rng::stream(seed, Stream::Noise, 0);
    let mut ray_rng = rng::stream(seed, Stream::Data, 3);

    let lambda = SPEED_OF_LIGHT_CM_S / cfg.carrier_hz;
    let wavenumbers: Vec<f64> = SUBCARRIER_INDICES
        .iter()
        .map(|&i| 2.0 * PI * (cfg.carrier_hz + i as f64 * SUBCARRIER_SPACING_HZ) / SPEED_OF_LIGHT_CM_S)
        .collect();
    let half_exp = cfg.path_loss_exponent / 2.0;
    let k_lin = 10f64.powf(cfg.rician_k_db / 10.0);
    let jitter = Normal::new(0.0, cfg.jitter_cm.max(f64::MIN_POSITIVE)).expect("finite std");
    let noise = Normal::new(0.0, (cfg.noise_std * noise_scale).max(f64::MIN_POSITIVE))
        .expect("finite std");
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut samples = Vec::with_capacity(cfg.grid.len() * cfg.samples_per_rp);
    for rp in 0..cfg.grid.len() {
        let pos = cfg.grid.position(rp);
        let q = Point { x: pos[0], y: pos[1] };
        let wall_db: f64 = room
            .obstacles
            .iter()
            .filter(|o| segments_cross(room.tx, q, o.a, o.b))
            .map(|o| o.loss_db)
            .sum();
        let d_los = room.tx.dist(q).max(1.0);
        let envelope = cfg.reference_amplitude
            * (REFERENCE_DISTANCE_CM / d_los).powf(half_exp)
            * 10f64.powf(-wall_db / 20.0);

        // specular power relative to line of sight, for scaling the diffuse part
        let specular: f64 = 1.0
            + room
                .scatterers
                .iter()
                .map(|s| {
                    let l = room.tx.dist(s.at) + s.at.dist(q);
                    (s.gain * (d_los / l).powf(half_exp)).powi(2)
                })
                .sum::<f64>();
        let diffuse_power = specular / k_lin;

        let rays: Vec<(f64, f64, f64)> = (0..cfg.diffuse_rays)
            .map(|_| {
                let amp = (diffuse_power / cfg.diffuse_rays as f64).sqrt()
                    * f64::hypot(unit.sample(&mut ray_rng), unit.sample(&mut ray_rng))
                    / 2f64.sqrt();
                let delay_cm =
                    ray_rng.random_range(0.0..=cfg.diffuse_max_delay_ns) * 1e-9 * SPEED_OF_LIGHT_CM_S;
                (amp, delay_cm, ray_rng.random_range(0.0..2.0 * PI))
            })
            .collect();

        for _ in 0..cfg.samples_per_rp {
            let here = Point {
                x: q.x + jitter.sample(&mut rng),
                y: q.y + jitter.sample(&mut rng),
            };
            let rays: Vec<(f64, f64, f64)> = rays
                .iter()
                .map(|&(g, d, ph)| (g, d, ph + cfg.diffuse_phase_jitter * unit.sample(&mut rng)))
                .collect();

            let mut amp = Vec::with_capacity(ANTENNAS * SUBCARRIERS);
            for a in 0..ANTENNAS {
                let ant = Point {
                    x: here.x,
                    y: here.y + (a as f64 - 1.0) * lambda / 2.0,
                };
                let l0 = room.tx.dist(ant);
                let paths: Vec<(f64, f64, f64)> = room
                    .scatterers
                    .iter()
                    .map(|s| {
                        let l = room.tx.dist(s.at) + s.at.dist(ant);
                        (s.gain * (l0 / l).powf(half_exp), l, s.phase)
                    })
                    .collect();
                for &k in &wavenumbers {
                    let (mut re, mut im) = ((-k * l0).cos(), (-k * l0).sin());
                    for &(g, l, ph) in &paths {
                        let th = ph - k * l;
                        re += g * th.cos();
                        im += g * th.sin();
                    }
                    for &(g, extra, ph) in &rays {
                        let th = ph - k * (l0 + extra);
                        re += g * th.cos();
                        im += g * th.sin();
                    }
                    let v = envelope * re.hypot(im) * room.antenna_gain[a] + noise.sample(&mut rng);
                    amp.push(v.max(0.0));
                }
            }
            samples.push(Sample {
                rp,
                pos_cm: pos,
                amp,
            });
        }
    }

    Ok(Scenario {
        id: format!("synthetic-{seed}"),
        grid: cfg.grid,
        samples,
    })
}
