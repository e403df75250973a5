//! Differential-drive kinematics, bump contacts and IR reflectance sampling.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::world::{Point, Pose, WorldModel};
use crate::protocol::{MAX_MOTOR_POWER, NUM_IR_SENSORS};

/// Extra distance beyond body contact at which the bumpers still close.
pub const BUMP_MARGIN: f64 = 0.002;
/// Half-width (radians) of the frontal zone where both bumpers close.
pub const BUMP_CENTER_ZONE: f64 = 0.26;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Seconds per physics step.
    pub dt: f64,
    /// Wheel surface speed (m/s) at power 255.
    pub max_wheel_speed: f64,
    pub wheel_base: f64,
    pub wheel_diameter: f64,
    pub ticks_per_revolution: u32,
    /// IR sensor positions in the robot frame (x forward, y left); sensor 0
    /// is the leftmost.
    pub ir_offsets: [Point; NUM_IR_SENSORS],
    /// Radius of each sensor's field of view on the floor.
    pub sensor_radius: f64,
    /// Radius of the circular chassis used for collisions.
    pub body_radius: f64,
    /// When set, positive power on wheel 0 drives it backwards, so driving
    /// straight ahead is `(-p, p)`.
    pub mirror_left_motor: bool,
    pub rng_seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            max_wheel_speed: 0.5,
            wheel_base: 0.11,
            wheel_diameter: 0.06,
            ticks_per_revolution: 128,
            ir_offsets: [Point::new(0.06, 0.008), Point::new(0.06, 0.0), Point::new(0.06, -0.008)],
            sensor_radius: 0.004,
            body_radius: 0.075,
            mirror_left_motor: true,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid simulator config: {0}")]
pub struct ConfigError(pub String);

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("dt", self.dt),
            ("max_wheel_speed", self.max_wheel_speed),
            ("wheel_base", self.wheel_base),
            ("wheel_diameter", self.wheel_diameter),
            ("sensor_radius", self.sensor_radius),
            ("body_radius", self.body_radius),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ConfigError(format!("{name} must be positive")));
            }
        }
        if self.ticks_per_revolution == 0 {
            return Err(ConfigError("ticks_per_revolution must be positive".into()));
        }
        if self.dt > 0.02 {
            return Err(ConfigError("dt must not exceed 0.02 s".into()));
        }
        if self.ir_offsets.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(ConfigError("ir_offsets must be finite".into()));
        }
        Ok(())
    }

    /// Wheel surface speed for `power`, signed like the power.
    pub fn wheel_speed(&self, power: i32) -> f64 {
        f64::from(power) / f64::from(MAX_MOTOR_POWER) * self.max_wheel_speed
    }

    pub fn ticks_per_meter(&self) -> f64 {
        f64::from(self.ticks_per_revolution) / (PI * self.wheel_diameter)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub pose: Pose,
    /// Motor powers `[wheel 0, wheel 1]`.
    pub power: [i32; 2],
    /// Fractional encoder ticks since the last reset, signed like the power
    /// that turned the wheel.
    pub encoder_ticks: [f64; 2],
    /// `[left, right]` bump switches.
    pub bump: [bool; 2],
}

impl RobotState {
    pub fn at(pose: Pose) -> Self {
        Self {
            pose,
            power: [0, 0],
            encoder_ticks: [0.0, 0.0],
            bump: [false, false],
        }
    }

    /// Whole encoder counts, truncated toward zero.
    pub fn encoders(&self) -> [i32; 2] {
        self.encoder_ticks.map(|t| t.trunc() as i32)
    }

    pub fn reset_encoder(&mut self, wheel: usize) {
        self.encoder_ticks[wheel] = 0.0;
    }
}

fn body_clear(world: &WorldModel, config: &SimConfig, p: Point) -> bool {
    world.obstacle_distance(p) >= config.body_radius
}

fn moved(pose: Pose, v: f64, omega: f64, dt: f64) -> Pose {
    let heading = pose.theta + omega * dt / 2.0;
    Pose::new(
        pose.x + v * dt * heading.cos(),
        pose.y + v * dt * heading.sin(),
        pose.theta + omega * dt,
    )
}

/// Advances the robot by `dt` seconds.
///
/// Motion that would push the chassis into an obstacle is cut short at the
/// contact point; the wheels stall for the blocked part of the step, so the
/// encoders only count travel that actually happened.
pub fn step_sim(state: &RobotState, world: &WorldModel, config: &SimConfig, dt: f64) -> RobotState {
    let mut next = state.clone();
    if dt <= 0.0 {
        return next;
    }
    let wheel = state.power.map(|p| config.wheel_speed(p));
    let left = if config.mirror_left_motor { -wheel[0] } else { wheel[0] };
    let right = wheel[1];
    let v = (left + right) / 2.0;
    let omega = (right - left) / config.wheel_base;

    let full = moved(state.pose, v, omega, dt);
    let fraction = if body_clear(world, config, full.position()) || !body_clear(world, config, state.pose.position()) {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..40 {
            let mid = (lo + hi) / 2.0;
            if body_clear(world, config, moved(state.pose, v, omega, dt * mid).position()) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    next.pose = if fraction == 1.0 {
        full
    } else {
        moved(state.pose, v, omega, dt * fraction)
    };
    let ticks_per_meter = config.ticks_per_meter();
    for (i, speed) in wheel.iter().enumerate() {
        next.encoder_ticks[i] += speed * dt * fraction * ticks_per_meter;
    }
    next.bump = bump_contacts(&next.pose, world, config);
    next
}

fn normalize_angle(a: f64) -> f64 {
    let mut a = a % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a
}

/// `[left, right]` bumper states for a robot at `pose`.
pub fn bump_contacts(pose: &Pose, world: &WorldModel, config: &SimConfig) -> [bool; 2] {
    let center = pose.position();
    let mut bump = [false, false];
    for obstacle in &world.obstacles {
        let contact = obstacle.closest_point(center);
        if contact.distance(center) > config.body_radius + BUMP_MARGIN {
            continue;
        }
        let bearing = normalize_angle((contact.y - center.y).atan2(contact.x - center.x) - pose.theta);
        if bearing.abs() > FRAC_PI_2 {
            continue;
        }
        bump[0] |= bearing >= -BUMP_CENTER_ZONE;
        bump[1] |= bearing <= BUMP_CENTER_ZONE;
    }
    bump
}

/// Fraction (0–1) of sensor `index`'s field of view covered by the line.
pub fn ir_coverage(pose: &Pose, world: &WorldModel, config: &SimConfig, index: usize) -> f64 {
    let Some(track) = &world.track else {
        return 0.0;
    };
    let sensor = pose.to_world(config.ir_offsets[index]);
    let distance = track.distance_to(sensor);
    (0.5 + (track.width() / 2.0 - distance) / (2.0 * config.sensor_radius)).clamp(0.0, 1.0)
}

/// IR reading (0–100, dark line reads high) of sensor `index` at physics
/// step `step`. Noise depends only on the seed, the step and the sensor.
pub fn sample_ir(state: &RobotState, world: &WorldModel, config: &SimConfig, index: usize, step: u64) -> i32 {
    let mut value = 100.0 * ir_coverage(&state.pose, world, config, index);
    if world.ir_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(step);
        rng.set_word_pos(index as u128 * 16);
        value += rng.gen_range(-world.ir_noise..=world.ir_noise);
    }
    value.round().clamp(0.0, 100.0) as i32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{Segment, Track};

    fn straight_line_world() -> WorldModel {
        WorldModel {
            track: Some(Track::new(vec![Point::new(-1.0, 0.0), Point::new(1.0, 0.0)], 0.02).unwrap()),
            ..WorldModel::default()
        }
    }

    fn unmirrored() -> SimConfig {
        SimConfig {
            mirror_left_motor: false,
            ..SimConfig::default()
        }
    }

    #[test]
    fn idle_robot_stays_put() {
        let state = RobotState::at(Pose::new(0.3, -0.2, 1.0));
        let next = step_sim(&state, &WorldModel::default(), &SimConfig::default(), 0.01);
        assert_eq!(next, state);
    }

    #[test]
    fn full_power_drives_half_a_meter_per_second() {
        let mut state = RobotState::at(Pose::new(0.0, 0.0, 0.7));
        state.power = [255, 255];
        let next = step_sim(&state, &WorldModel::default(), &unmirrored(), 1.0);
        let travelled = next.pose.position().distance(state.pose.position());
        assert!((travelled - 0.5).abs() < 1e-12);
        assert!((next.pose.x - 0.5 * 0.7f64.cos()).abs() < 1e-12);
        assert_eq!(next.pose.theta, 0.7);
        // 0.5 m / (pi * 0.06 m) * 128 ticks
        let expected = 0.5 / (PI * 0.06) * 128.0;
        assert!((next.encoder_ticks[0] - expected).abs() < 1e-9);
        assert_eq!(next.encoders(), [339, 339]);
    }

    #[test]
    fn opposite_powers_spin_in_place() {
        let mut state = RobotState::at(Pose::default());
        state.power = [-255, 255];
        let next = step_sim(&state, &WorldModel::default(), &unmirrored(), 0.01);
        assert_eq!((next.pose.x, next.pose.y), (0.0, 0.0));
        assert!(next.pose.theta > 0.0);
        assert!(next.encoder_ticks[0] < 0.0 && next.encoder_ticks[1] > 0.0);
    }

    #[test]
    fn mirrored_left_motor_drives_forward_on_opposite_signs() {
        let mut state = RobotState::at(Pose::default());
        state.power = [-255, 255];
        let next = step_sim(&state, &WorldModel::default(), &SimConfig::default(), 1.0);
        assert!((next.pose.x - 0.5).abs() < 1e-12);
        assert_eq!(next.pose.theta, 0.0);
        assert!(next.encoder_ticks[0] < 0.0 && next.encoder_ticks[1] > 0.0);

        state.power = [115, 115];
        let spun = step_sim(&state, &WorldModel::default(), &SimConfig::default(), 0.1);
        assert_eq!((spun.pose.x, spun.pose.y), (0.0, 0.0));
        assert!(spun.pose.theta > 0.0, "(115, 115) turns left");
    }

    #[test]
    fn wall_blocks_forward_motion_and_closes_bumpers() {
        let world = WorldModel {
            obstacles: vec![Segment::new(Point::new(0.2, -1.0), Point::new(0.2, 1.0))],
            ..WorldModel::default()
        };
        let config = SimConfig::default();
        let mut state = RobotState::at(Pose::default());
        state.power = [-255, 255];
        for _ in 0..100 {
            state = step_sim(&state, &world, &config, config.dt);
            assert!(world.obstacle_distance(state.pose.position()) >= config.body_radius);
        }
        assert!((state.pose.x - (0.2 - config.body_radius)).abs() < 1e-6);
        assert_eq!(state.bump, [true, true]);
        let stalled = state.encoder_ticks;
        state = step_sim(&state, &world, &config, config.dt);
        assert!((state.encoder_ticks[1] - stalled[1]).abs() < 1e-3);

        // backing off is never blocked
        state.power = [255, -255];
        state = step_sim(&state, &world, &config, 0.02);
        assert!(state.pose.x < 0.2 - config.body_radius - 0.005);
        assert_eq!(state.bump, [false, false]);
    }

    #[test]
    fn side_contacts_close_one_bumper() {
        let wall = |theta: f64| {
            let world = WorldModel {
                obstacles: vec![Segment::new(Point::new(0.076, -1.0), Point::new(0.076, 1.0))],
                ..WorldModel::default()
            };
            bump_contacts(&Pose::new(0.0, 0.0, theta), &world, &SimConfig::default())
        };
        assert_eq!(wall(0.0), [true, true]);
        assert_eq!(wall(-0.8), [true, false]);
        assert_eq!(wall(0.8), [false, true]);
        assert_eq!(wall(PI), [false, false]);
    }

    #[test]
    fn ir_reads_line_coverage() {
        let world = straight_line_world();
        let config = SimConfig::default();
        let r = config.sensor_radius;
        let on = RobotState::at(Pose::new(-0.06, 0.0, 0.0));
        assert_eq!(sample_ir(&on, &world, &config, 1, 0), 100);
        // sensor 1 exactly on the band edge
        let edge = RobotState::at(Pose::new(-0.06, 0.01, 0.0));
        assert_eq!(sample_ir(&edge, &world, &config, 1, 0), 50);
        let off = RobotState::at(Pose::new(-0.06, 0.01 + r, 0.0));
        assert_eq!(sample_ir(&off, &world, &config, 1, 0), 0);
        let far = RobotState::at(Pose::new(-0.06, 0.5, 0.0));
        assert_eq!(sample_ir(&far, &world, &config, 0, 0), 0);
        assert_eq!(sample_ir(&on, &WorldModel::default(), &config, 1, 0), 0);
    }

    #[test]
    fn ir_noise_is_bounded_and_seeded_per_step() {
        let mut world = straight_line_world();
        world.ir_noise = 10.0;
        let config = SimConfig {
            rng_seed: 9,
            ..SimConfig::default()
        };
        let edge = RobotState::at(Pose::new(-0.06, 0.01, 0.0));
        let readings: Vec<i32> = (0..200).map(|k| sample_ir(&edge, &world, &config, 1, k)).collect();
        assert!(readings.iter().all(|v| (40..=60).contains(v)));
        assert!(readings.iter().any(|&v| v != 50));
        let again: Vec<i32> = (0..200).map(|k| sample_ir(&edge, &world, &config, 1, k)).collect();
        assert_eq!(readings, again);
        let other_sensor: Vec<i32> = (0..200).map(|k| sample_ir(&edge, &world, &config, 0, k)).collect();
        assert_ne!(readings, other_sensor);
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        assert!(SimConfig {
            dt: 0.05,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            wheel_base: 0.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            ticks_per_revolution: 0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
    }
}
