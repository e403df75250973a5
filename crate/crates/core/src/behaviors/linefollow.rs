//! Line followers over the three IR sensors: a bang-bang decision table with
//! an encoder-bounded search, and a PID controller on the weighted centroid
//! of the readings.

use super::{positive, with_stop, BehaviorError, Recorder, Trace};
use crate::client::ClientSession;
use crate::protocol::NUM_IR_SENSORS;

/// `v` if it is above `threshold`, else 0.
pub fn clamp_ir(v: i32, threshold: i32) -> i32 {
    if v > threshold {
        v
    } else {
        0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BangBangConfig {
    pub threshold: i32,
    pub turn_power: i32,
    /// Encoder ticks per search sweep.
    pub search_limit: i32,
    pub search_sweeps: u32,
    pub tick: f64,
}

impl Default for BangBangConfig {
    fn default() -> Self {
        Self {
            threshold: 45,
            turn_power: 115,
            search_limit: 16,
            search_sweeps: 4,
            tick: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Search,
    SetMotors(i32, i32),
}

/// The bang-bang table. A sensor sees the line when its reading is above
/// the threshold.
pub fn bang_bang_decision(ir: [i32; NUM_IR_SENSORS], config: &BangBangConfig) -> Decision {
    let p = config.turn_power;
    let seen = ir.map(|v| v > config.threshold);
    match seen {
        [false, false, false] => Decision::Search,
        [true, true, true] => Decision::SetMotors(-p, p),
        [true, true, false] => Decision::SetMotors(0, p),
        [false, true, true] => Decision::SetMotors(-p, 0),
        [true, false, false] => Decision::SetMotors(0, p),
        [false, false, true] => Decision::SetMotors(-p, 0),
        _ => Decision::SetMotors(0, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchResult {
    Found,
    Lost,
}

fn sees_line(session: &ClientSession, threshold: i32) -> bool {
    session.ir_values().iter().any(|&v| v > threshold)
}

/// Sweeps on the spot looking for the line: counter-clockwise until wheel 0
/// has counted `search_limit` ticks, then clockwise until it is back at
/// `-search_limit`, alternating for `search_sweeps` sweeps. The motors are
/// stopped on return.
pub fn search_maneuver(session: &mut ClientSession, config: &BangBangConfig) -> Result<SearchResult, BehaviorError> {
    let mut recorder = None;
    search_recorded(session, config, &mut recorder)
}

fn search_recorded(
    session: &mut ClientSession,
    config: &BangBangConfig,
    recorder: &mut Option<&mut Recorder>,
) -> Result<SearchResult, BehaviorError> {
    if sees_line(session, config.threshold) {
        return Ok(SearchResult::Found);
    }
    let p = config.turn_power;
    session.reset_count(0)?;
    session.reset_count(1)?;
    for sweep in 0..config.search_sweeps {
        let ccw = sweep % 2 == 0;
        if ccw {
            session.set_motors(p, p)?;
        } else {
            session.set_motors(-p, -p)?;
        }
        loop {
            if let Some(r) = recorder {
                r.record(session, session.ir_values(), None, None);
            }
            session.sleep(config.tick)?;
            if sees_line(session, config.threshold) {
                session.stop_motors()?;
                return Ok(SearchResult::Found);
            }
            let count = session.get_count(0)?;
            if (ccw && count >= config.search_limit) || (!ccw && count <= -config.search_limit) {
                break;
            }
        }
    }
    session.stop_motors()?;
    Ok(SearchResult::Lost)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidConfig {
    pub kp: f64,
    pub kd: f64,
    pub ki: f64,
    pub base_speed: i32,
    /// Error the proportional term steers toward.
    pub setpoint: f64,
    /// Error the integral term accumulates against.
    pub integral_offset: f64,
    /// The integral resets while the error is strictly inside ±band.
    pub integral_band: f64,
    pub weights: [f64; NUM_IR_SENSORS],
    pub threshold: i32,
    pub tick: f64,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 0.05,
            kd: 0.045,
            ki: 0.007,
            base_speed: 150,
            setpoint: 2800.0,
            integral_offset: 2000.0,
            integral_band: 400.0,
            weights: [0.0, 2000.0, 4000.0],
            threshold: 45,
            tick: 0.02,
        }
    }
}

impl PidConfig {
    /// Proportional and integral terms both centred on 2000.
    pub fn symmetric() -> Self {
        Self {
            setpoint: 2000.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        let gains = [self.kp, self.kd, self.ki];
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(BehaviorError::Usage("gains must be finite and non-negative".into()));
        }
        if !(self.setpoint.is_finite() && self.integral_offset.is_finite() && self.integral_band.is_finite()) {
            return Err(BehaviorError::Usage("setpoint, offset and band must be finite".into()));
        }
        if !positive(self.tick) {
            return Err(BehaviorError::Usage("tick must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidState {
    pub config: PidConfig,
    pub old_error: f64,
    pub sum_error: f64,
}

impl PidState {
    pub fn new(config: PidConfig) -> Self {
        Self {
            config,
            old_error: 0.0,
            sum_error: 0.0,
        }
    }
}

impl Default for PidState {
    fn default() -> Self {
        Self::new(PidConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PidOutput {
    pub error: f64,
    pub correction: i64,
    pub command: (i32, i32),
    pub next: PidState,
}

fn saturate(v: i64) -> i32 {
    v.clamp(i64::from(i32::MIN), i64::from(i32::MAX)) as i32
}

/// One controller update.
///
/// The command is not clamped; powers outside ±255 are left for the motor
/// contract to reject.
pub fn pid_step(ir: [i32; NUM_IR_SENSORS], state: &PidState) -> PidOutput {
    let c = &state.config;
    let clamped = ir.map(|v| f64::from(clamp_ir(v, c.threshold)));
    let total: f64 = clamped.iter().sum();
    let error = if total > 0.0 {
        clamped.iter().zip(&c.weights).map(|(v, w)| v * w).sum::<f64>() / total
    } else if state.old_error > c.integral_offset {
        c.weights[2]
    } else {
        c.weights[0]
    };
    let raw = c.kp * (error - c.setpoint) + c.kd * (error - state.old_error) + c.ki * state.sum_error;
    let correction = raw.round() as i64;
    let base = i64::from(c.base_speed);
    let command = match correction {
        k if k < 0 => (-(base + k), base),
        k if k > 0 => (-base, base - k),
        _ => (-base, base),
    };
    let sum_error = if -c.integral_band < error && error < c.integral_band {
        0.0
    } else {
        state.sum_error + (error - c.integral_offset)
    };
    PidOutput {
        error,
        correction,
        command: (saturate(command.0), saturate(command.1)),
        next: PidState {
            config: state.config.clone(),
            old_error: error,
            sum_error,
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FollowerMode {
    BangBang(BangBangConfig),
    Pid(PidConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FollowOutcome {
    pub trace: Trace,
    /// `Lost` when a bang-bang search gave up before the time ran out.
    pub result: SearchResult,
}

/// Follows the line for `duration` seconds of session time.
pub fn run_line_follower(
    session: &mut ClientSession,
    mode: &FollowerMode,
    duration: f64,
) -> Result<FollowOutcome, BehaviorError> {
    if !positive(duration) {
        return Err(BehaviorError::Usage("duration must be positive".into()));
    }
    if let FollowerMode::Pid(config) = mode {
        config.validate()?;
    }
    let duration_ms = (duration * 1000.0).round() as u64;
    with_stop(session, |session| {
        session.enable_ir(20)?;
        session.enable_encoders(20)?;
        session.settle()?;
        let mut recorder = Recorder::start(session);
        let mut pid = match mode {
            FollowerMode::Pid(config) => Some(PidState::new(config.clone())),
            FollowerMode::BangBang(_) => None,
        };
        let mut result = SearchResult::Found;
        while recorder.elapsed_ms(session) < duration_ms {
            let ir = session.ir_values();
            let tick = match (mode, &mut pid) {
                (FollowerMode::BangBang(config), _) => match bang_bang_decision(ir, config) {
                    Decision::Search => {
                        if search_recorded(session, config, &mut Some(&mut recorder))? == SearchResult::Lost {
                            result = SearchResult::Lost;
                            break;
                        }
                        continue;
                    }
                    Decision::SetMotors(l, r) => {
                        session.set_motors(l, r)?;
                        recorder.record(session, ir, None, None);
                        config.tick
                    }
                },
                (FollowerMode::Pid(config), Some(state)) => {
                    let out = pid_step(ir, state);
                    session.set_motors(out.command.0, out.command.1)?;
                    recorder.record(session, ir, Some(out.error), Some(out.correction));
                    *state = out.next;
                    config.tick
                }
                (FollowerMode::Pid(_), None) => unreachable!("pid state exists in pid mode"),
            };
            session.sleep(tick)?;
        }
        Ok(FollowOutcome {
            trace: recorder.finish(),
            result,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_is_strict() {
        assert_eq!(clamp_ir(50, 45), 50);
        assert_eq!(clamp_ir(45, 45), 0);
        assert_eq!(clamp_ir(0, 45), 0);
    }

    #[test]
    fn decision_examples() {
        let c = BangBangConfig::default();
        assert_eq!(bang_bang_decision([0, 0, 0], &c), Decision::Search);
        assert_eq!(bang_bang_decision([90, 90, 90], &c), Decision::SetMotors(-115, 115));
        assert_eq!(bang_bang_decision([90, 0, 0], &c), Decision::SetMotors(0, 115));
        assert_eq!(bang_bang_decision([90, 0, 90], &c), Decision::SetMotors(0, 0));
        assert_eq!(bang_bang_decision([45, 45, 45], &c), Decision::Search);
    }

    #[test]
    fn pid_examples() {
        let out = pid_step([0, 90, 0], &PidState::default());
        assert_eq!(out.error, 2000.0);
        assert_eq!(out.correction, 50);
        assert_eq!(out.command, (-150, 100));
        assert_eq!(out.next.sum_error, 0.0);

        let out = pid_step([0, 0, 0], &PidState::default());
        assert_eq!(out.error, 0.0);
        assert_eq!(out.correction, -140);
        assert_eq!(out.command, (-10, 150));

        let state = PidState {
            old_error: 2500.0,
            ..PidState::default()
        };
        assert_eq!(pid_step([0, 0, 0], &state).error, 4000.0);
    }

    #[test]
    fn pid_ties_round_away_from_zero() {
        // kp * (2000 - 2800) + kd * 2000 = -40 + 90 = 50; push it to 50.5
        let config = PidConfig {
            ki: 1.0,
            ..PidConfig::default()
        };
        let state = PidState {
            config,
            old_error: 0.0,
            sum_error: 0.5,
        };
        assert_eq!(pid_step([0, 90, 0], &state).correction, 51);
        let state = PidState {
            sum_error: -100.5,
            ..state
        };
        assert_eq!(pid_step([0, 90, 0], &state).correction, -51);
    }
}
