//! The simulated robot speaking ASIP on the device side of a connection.
//!
//! Each physics step runs in the order: apply pending commands, integrate,
//! emit the reports that fell due. Under [`Pacing::Lockstep`] the device only
//! steps when the client asks it to (see [`crate::protocol::lockstep`]);
//! under [`Pacing::RealTime`] it steps on the wall clock.

use std::time::{Duration, Instant};

use log::{debug, warn};

use super::physics::{bump_contacts, sample_ir, step_sim, ConfigError, RobotState, SimConfig};
use super::world::WorldModel;
use crate::protocol::{self, lockstep, AsipMessage, PinMode, ReportMap, MAX_NUM_ANALOG_PINS, NUM_IR_SENSORS};
use crate::transport::{Connection, EndpointKind, Listener, TransportEndpoint, TransportError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    #[default]
    Lockstep,
    RealTime,
}

/// Forces the bump switches to fixed values over `[from_ms, until_ms)` of
/// virtual time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BumpOverride {
    pub from_ms: u64,
    pub until_ms: u64,
    pub left: bool,
    pub right: bool,
}

#[derive(Debug, Clone, Default)]
pub struct EmulatorOptions {
    pub pacing: Pacing,
    pub bump_script: Vec<BumpOverride>,
    /// Keep every post-step robot state in the report.
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MotorCommand {
    pub t_us: u64,
    pub left: i32,
    pub right: i32,
}

/// What happened during an emulator session.
#[derive(Debug, Clone)]
pub struct EmulatorReport {
    pub steps: u64,
    pub final_state: RobotState,
    /// Accepted motor commands with the virtual time they took effect.
    pub motor_log: Vec<MotorCommand>,
    /// Virtual times at which a bump switch closed.
    pub bump_onsets: Vec<u64>,
    /// Smallest gap between chassis and any obstacle after any step.
    pub min_clearance: f64,
    pub trajectory: Vec<RobotState>,
    pub rejected_lines: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct Autoreport {
    interval_us: u64,
    next_us: u64,
}

impl Autoreport {
    fn set(&mut self, interval_ms: u32, now_us: u64) {
        self.interval_us = u64::from(interval_ms) * 1000;
        self.next_us = now_us + self.interval_us;
    }

    fn due(&mut self, now_us: u64) -> bool {
        if self.interval_us == 0 || now_us < self.next_us {
            return false;
        }
        while self.next_us <= now_us {
            self.next_us += self.interval_us;
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
enum Service {
    Io = 0,
    Ir = 1,
    Bump = 2,
    Encoder = 3,
}

pub struct Emulator {
    world: WorldModel,
    config: SimConfig,
    options: EmulatorOptions,
    state: RobotState,
    step: u64,
    dt_us: u64,
    autoreports: [Autoreport; 4],
    pin_modes: [Option<PinMode>; MAX_NUM_ANALOG_PINS],
    digital_out: [u8; MAX_NUM_ANALOG_PINS],
    report: EmulatorReport,
}

impl Emulator {
    pub fn new(world: WorldModel, config: SimConfig, options: EmulatorOptions) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut state = RobotState::at(world.start);
        state.bump = bump_contacts(&state.pose, &world, &config);
        let clearance = world.obstacle_distance(state.pose.position()) - config.body_radius;
        let dt_us = (config.dt * 1e6).round() as u64;
        Ok(Self {
            report: EmulatorReport {
                steps: 0,
                final_state: state.clone(),
                motor_log: Vec::new(),
                bump_onsets: Vec::new(),
                min_clearance: clearance,
                trajectory: Vec::new(),
                rejected_lines: 0,
            },
            world,
            config,
            options,
            state,
            step: 0,
            dt_us,
            autoreports: [Autoreport::default(); 4],
            pin_modes: [None; MAX_NUM_ANALOG_PINS],
            digital_out: [0; MAX_NUM_ANALOG_PINS],
        })
    }

    pub fn state(&self) -> &RobotState {
        &self.state
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn now_us(&self) -> u64 {
        self.step * self.dt_us
    }

    /// Handles one incoming line, appending replies (including any reports
    /// produced while stepping) to `out`.
    pub fn handle_line(&mut self, line: &str, out: &mut Vec<AsipMessage>) {
        let msg = match protocol::decode(line) {
            Ok(msg) => msg,
            Err(err) => {
                debug!("emulator: rejecting `{line}`: {err}");
                self.report.rejected_lines += 1;
                out.push(AsipMessage::Info(format!("parse-error:{}", err.offset)));
                return;
            }
        };
        if let Err(err) = msg.validate() {
            self.report.rejected_lines += 1;
            out.push(AsipMessage::Info(format!("range-error:{err}")));
            return;
        }
        let now = self.now_us();
        match msg {
            AsipMessage::SetMotors { left, right } => {
                self.state.power = [left, right];
                self.report.motor_log.push(MotorCommand { t_us: now, left, right });
            }
            AsipMessage::ResetEncoder { wheel } => self.state.reset_encoder(usize::from(wheel)),
            AsipMessage::SetPinMode { pin, mode } => self.pin_modes[usize::from(pin)] = Some(mode),
            AsipMessage::DigitalWrite { pin, level } => self.digital_out[usize::from(pin)] = level,
            AsipMessage::AnalogAutoreport { interval_ms } => {
                self.autoreports[Service::Io as usize].set(interval_ms, now)
            }
            AsipMessage::IrAutoreport { interval_ms } => self.autoreports[Service::Ir as usize].set(interval_ms, now),
            AsipMessage::BumpAutoreport { interval_ms } => {
                self.autoreports[Service::Bump as usize].set(interval_ms, now)
            }
            AsipMessage::EncoderAutoreport { interval_ms } => {
                self.autoreports[Service::Encoder as usize].set(interval_ms, now)
            }
            AsipMessage::Raw(raw) => match lockstep::parse_advance(&raw) {
                Some(steps) if self.options.pacing == Pacing::Lockstep => {
                    self.advance(steps, out);
                    let pose = self.state.pose;
                    out.push(lockstep::ack(&lockstep::Ack {
                        step: self.step,
                        x: pose.x,
                        y: pose.y,
                        theta: pose.theta,
                    }));
                }
                _ => {
                    self.report.rejected_lines += 1;
                    out.push(AsipMessage::Info(format!("unknown-command:{}", raw.line())));
                }
            },
            AsipMessage::Info(_) => {}
            event => {
                self.report.rejected_lines += 1;
                warn!("emulator: ignoring event sent by client: {event:?}");
                out.push(AsipMessage::Info("unexpected-event".into()));
            }
        }
    }

    /// Runs `steps` physics steps, appending due reports to `out`.
    pub fn advance(&mut self, steps: u64, out: &mut Vec<AsipMessage>) {
        for _ in 0..steps {
            self.step_once(out);
        }
    }

    fn step_once(&mut self, out: &mut Vec<AsipMessage>) {
        let before = self.state.bump;
        self.state = step_sim(&self.state, &self.world, &self.config, self.config.dt);
        self.step += 1;
        let now = self.now_us();
        let now_ms = now / 1000;
        if let Some(o) = self
            .options
            .bump_script
            .iter()
            .find(|o| (o.from_ms..o.until_ms).contains(&now_ms))
        {
            self.state.bump = [o.left, o.right];
        }
        if (self.state.bump[0] && !before[0]) || (self.state.bump[1] && !before[1]) {
            self.report.bump_onsets.push(now);
        }
        let clearance = self.world.obstacle_distance(self.state.pose.position()) - self.config.body_radius;
        self.report.min_clearance = self.report.min_clearance.min(clearance);
        if self.options.record_trajectory {
            self.report.trajectory.push(self.state.clone());
        }
        self.emit_due_reports(now, out);
    }

    fn ir_readings(&self) -> [i32; NUM_IR_SENSORS] {
        std::array::from_fn(|i| sample_ir(&self.state, &self.world, &self.config, i, self.step))
    }

    fn emit_due_reports(&mut self, now: u64, out: &mut Vec<AsipMessage>) {
        if self.autoreports[Service::Ir as usize].due(now) {
            let ir = self.ir_readings();
            out.push(AsipMessage::IrReport((0u16..).zip(ir).collect()));
        }
        if self.autoreports[Service::Bump as usize].due(now) {
            let [l, r] = self.state.bump.map(i32::from);
            out.push(AsipMessage::BumpReport([(0, l), (1, r)].into_iter().collect()));
        }
        if self.autoreports[Service::Encoder as usize].due(now) {
            let [a, b] = self.state.encoders();
            out.push(AsipMessage::EncoderReport([(0, a), (1, b)].into_iter().collect()));
        }
        if self.autoreports[Service::Io as usize].due(now) {
            let ir = self.ir_readings();
            let analog: ReportMap = (0..MAX_NUM_ANALOG_PINS as u16)
                .map(|pin| {
                    let value = ir
                        .get(usize::from(pin))
                        .map_or(0, |&v| (f64::from(v) * 1023.0 / 100.0).round() as i32);
                    (pin, value)
                })
                .collect();
            out.push(AsipMessage::AnalogReport(analog));
            let digital: ReportMap = self
                .pin_modes
                .iter()
                .enumerate()
                .filter_map(|(pin, mode)| match mode {
                    Some(PinMode::Input) => Some((pin as u16, 0)),
                    Some(PinMode::InputPullup) => Some((pin as u16, 1)),
                    Some(PinMode::Output) => Some((pin as u16, i32::from(self.digital_out[pin]))),
                    None => None,
                })
                .collect();
            if !digital.is_empty() {
                out.push(AsipMessage::DigitalReport(digital));
            }
        }
    }

    /// Ends the session and returns its record.
    pub fn finish(mut self) -> EmulatorReport {
        self.report.steps = self.step;
        self.report.final_state = self.state;
        self.report
    }

    /// Serves one client over `conn` until it disconnects.
    pub fn serve(mut self, conn: Connection) -> Result<EmulatorReport, TransportError> {
        let mut out = Vec::new();
        let started = Instant::now();
        let step_period = Duration::from_micros(self.dt_us);
        loop {
            let timeout = match self.options.pacing {
                Pacing::Lockstep => Duration::from_millis(250),
                Pacing::RealTime => {
                    let next = started + step_period * (self.step as u32 + 1);
                    next.saturating_duration_since(Instant::now())
                        .max(Duration::from_millis(1))
                }
            };
            match conn.recv_line(timeout) {
                Ok(Some(line)) => self.handle_line(&line, &mut out),
                Ok(None) => {}
                Err(TransportError::Closed) => break,
                Err(TransportError::LineTooLong) => {
                    self.report.rejected_lines += 1;
                    out.push(AsipMessage::Info("framing-error".into()));
                }
                Err(err) => {
                    warn!("emulator: connection failed: {err}");
                    break;
                }
            }
            if self.options.pacing == Pacing::RealTime {
                while Instant::now() >= started + step_period * (self.step as u32 + 1) {
                    self.step_once(&mut out);
                }
            }
            if Self::flush(&conn, &mut out).is_err() {
                break;
            }
        }
        conn.close();
        Ok(self.finish())
    }

    fn flush(conn: &Connection, out: &mut Vec<AsipMessage>) -> Result<(), TransportError> {
        for msg in out.drain(..) {
            match protocol::encode(&msg) {
                Ok(line) => conn.send_line(&line)?,
                Err(err) => warn!("emulator: cannot encode {msg:?}: {err}"),
            }
        }
        Ok(())
    }
}

/// Binds `endpoint`, accepts one client and serves it.
///
/// TCP endpoints are listened on; serial endpoints are opened as the device
/// end of a (virtual) serial line. Loopback connections are served directly
/// with [`Emulator::serve`].
pub fn run_emulator(
    endpoint: &TransportEndpoint,
    world: WorldModel,
    config: SimConfig,
    options: EmulatorOptions,
) -> Result<EmulatorReport, EmulatorError> {
    let emulator = Emulator::new(world, config, options)?;
    let conn = match endpoint.kind {
        EndpointKind::Tcp => Listener::bind(&endpoint.address)?.accept()?,
        EndpointKind::Serial => crate::transport::open(endpoint)?,
        EndpointKind::Loopback => {
            return Err(
                TransportError::InvalidEndpoint("serve loopback connections with Emulator::serve".into()).into(),
            )
        }
    };
    Ok(emulator.serve(conn)?)
}

#[derive(Debug, thiserror::Error)]
pub enum EmulatorError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{Point, Pose, Segment};

    fn emulator(world: WorldModel) -> Emulator {
        Emulator::new(world, SimConfig::default(), EmulatorOptions::default()).unwrap()
    }

    fn lines(out: &mut Vec<AsipMessage>) -> Vec<String> {
        out.drain(..).map(|m| protocol::encode(&m).unwrap()).collect()
    }

    #[test]
    fn malformed_command_is_rejected_with_offset() {
        let mut emu = emulator(WorldModel::default());
        let mut out = Vec::new();
        emu.handle_line("M,m,x", &mut out);
        assert_eq!(lines(&mut out), ["!parse-error:4"]);
        assert_eq!(emu.state().power, [0, 0]);
        emu.handle_line("M,m,300,0", &mut out);
        assert_eq!(lines(&mut out), ["!range-error:field `left` out of range: 300"]);
        emu.handle_line("Q,q", &mut out);
        assert_eq!(lines(&mut out), ["!unknown-command:Q,q"]);
    }

    #[test]
    fn ir_reports_follow_the_interval_in_virtual_time() {
        let mut emu = emulator(WorldModel::default());
        let mut out = Vec::new();
        emu.handle_line("R,A,100", &mut out);
        let mut times = Vec::new();
        for _ in 0..100 {
            emu.advance(1, &mut out);
            if out.iter().any(|m| matches!(m, AsipMessage::IrReport(_))) {
                times.push(emu.now_us() / 1000);
            }
            out.clear();
        }
        assert_eq!(times, [100, 200, 300, 400, 500, 600, 700, 800, 900, 1000]);
        emu.handle_line("R,A,0", &mut out);
        emu.advance(50, &mut out);
        assert!(out.is_empty());
    }

    #[test]
    fn motors_move_encoders() {
        let mut emu = emulator(WorldModel::default());
        let mut out = Vec::new();
        emu.handle_line("E,A,20", &mut out);
        emu.handle_line("M,m,100,100", &mut out);
        emu.advance(20, &mut out);
        let counts: Vec<i32> = out
            .iter()
            .filter_map(|m| match m {
                AsipMessage::EncoderReport(map) => map.get(0),
                _ => None,
            })
            .collect();
        assert_eq!(counts.len(), 10);
        assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        assert!(counts.last().unwrap() > &0);
        emu.handle_line("E,r,0", &mut out);
        assert_eq!(emu.state().encoders()[0], 0);
    }

    #[test]
    fn lockstep_advance_is_acknowledged_after_reports() {
        let mut emu = emulator(WorldModel::default());
        let mut out = Vec::new();
        emu.handle_line("B,A,20", &mut out);
        emu.handle_line("T,s,4", &mut out);
        let got = lines(&mut out);
        assert_eq!(got.len(), 3);
        assert_eq!(got[0], "@B,b,2,{0:0,1:0}");
        assert_eq!(got[2], "!sim:4,0,0,0");
    }

    #[test]
    fn bump_script_and_onsets() {
        let options = EmulatorOptions {
            bump_script: vec![BumpOverride {
                from_ms: 50,
                until_ms: 100,
                left: true,
                right: false,
            }],
            ..EmulatorOptions::default()
        };
        let mut emu = Emulator::new(WorldModel::default(), SimConfig::default(), options).unwrap();
        let mut out = Vec::new();
        emu.advance(4, &mut out);
        assert_eq!(emu.state().bump, [false, false]);
        emu.advance(1, &mut out);
        assert_eq!(emu.state().bump, [true, false]);
        emu.advance(5, &mut out);
        assert_eq!(emu.state().bump, [false, false]);
        assert_eq!(emu.finish().bump_onsets, [50_000]);
    }

    #[test]
    fn clearance_is_tracked() {
        let world = WorldModel {
            obstacles: vec![Segment::new(Point::new(0.3, -1.0), Point::new(0.3, 1.0))],
            start: Pose::new(0.0, 0.0, 0.0),
            ..WorldModel::default()
        };
        let mut emu = emulator(world);
        let mut out = Vec::new();
        emu.handle_line("M,m,-255,255", &mut out);
        emu.advance(200, &mut out);
        let report = emu.finish();
        assert!(report.min_clearance >= 0.0);
        assert!(report.min_clearance < 1e-6);
        assert!(report.bump_onsets.len() == 1);
    }
}
