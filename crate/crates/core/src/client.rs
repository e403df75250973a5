//! ASIP client: a background thread ingests device events into a [`PinCache`]
//! and [`ClientSession`] offers the accessor API the behaviors use.

use std::sync::atomic::{AtomicBool, AtomicI32, AtomicU8, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use log::{debug, warn};
use thiserror::Error;

use crate::contracts::{self, Blame, ContractViolation};
use crate::protocol::{
    self, lockstep, AsipMessage, EncodeError, PinMode, ReportMap, MAX_INTERVAL_MS, MAX_NUM_ANALOG_PINS, NUM_IR_SENSORS,
};
use crate::sim::{Pose, VirtualClock};
use crate::transport::{self, Connection, TransportEndpoint, TransportError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Contract(#[from] ContractViolation),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("simulator did not acknowledge step {0} in time")]
    SyncTimeout(u64),
    #[error("device disconnected")]
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("{service} report names slot {index}, but only {slots} exist")]
    IndexOutOfRange {
        service: &'static str,
        index: u16,
        slots: usize,
    },
}

/// Latest known value of every pin and sensor. Each slot is read and written
/// atomically on its own.
#[derive(Debug, Default)]
pub struct PinCache {
    analog: [AtomicI32; MAX_NUM_ANALOG_PINS],
    digital: [AtomicU8; MAX_NUM_ANALOG_PINS],
    ir: [AtomicI32; NUM_IR_SENSORS],
    bump: [AtomicBool; 2],
    encoder: [AtomicI32; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PinSnapshot {
    pub analog: [i32; MAX_NUM_ANALOG_PINS],
    pub digital: [u8; MAX_NUM_ANALOG_PINS],
    pub ir: [i32; NUM_IR_SENSORS],
    pub bump: [bool; 2],
    pub encoder: [i32; 2],
}

fn clamped(service: &str, index: u16, value: i32, lo: i32, hi: i32) -> i32 {
    let v = value.clamp(lo, hi);
    if v != value {
        warn!("{service} slot {index}: value {value} clamped to {v}");
    }
    v
}

fn check_indices(service: &'static str, map: &ReportMap, slots: usize) -> Result<(), CacheError> {
    match map.iter().find(|&(i, _)| usize::from(i) >= slots) {
        Some((index, _)) => Err(CacheError::IndexOutOfRange { service, index, slots }),
        None => Ok(()),
    }
}

impl PinCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Writes each `(pin, value)` pair of an analog report into its slot.
    /// A report naming any pin ≥ 16 is dropped whole.
    pub fn process_analog_values(&self, map: &ReportMap) -> Result<(), CacheError> {
        check_indices("analog", map, MAX_NUM_ANALOG_PINS)?;
        for (pin, value) in map.iter() {
            self.analog[usize::from(pin)].store(clamped("analog", pin, value, 0, 1023), Ordering::SeqCst);
        }
        Ok(())
    }

    /// Applies a device event. Commands, info text and raw lines are ignored.
    pub fn apply(&self, msg: &AsipMessage) -> Result<(), CacheError> {
        match msg {
            AsipMessage::AnalogReport(map) => self.process_analog_values(map)?,
            AsipMessage::DigitalReport(map) => {
                check_indices("digital", map, MAX_NUM_ANALOG_PINS)?;
                for (pin, value) in map.iter() {
                    let v = clamped("digital", pin, value, 0, 1) as u8;
                    self.digital[usize::from(pin)].store(v, Ordering::SeqCst);
                }
            }
            AsipMessage::IrReport(map) => {
                check_indices("ir", map, NUM_IR_SENSORS)?;
                for (i, value) in map.iter() {
                    self.ir[usize::from(i)].store(clamped("ir", i, value, 0, 100), Ordering::SeqCst);
                }
            }
            AsipMessage::BumpReport(map) => {
                check_indices("bump", map, 2)?;
                for (i, value) in map.iter() {
                    self.bump[usize::from(i)].store(clamped("bump", i, value, 0, 1) == 1, Ordering::SeqCst);
                }
            }
            AsipMessage::EncoderReport(map) => {
                check_indices("encoder", map, 2)?;
                for (i, value) in map.iter() {
                    self.encoder[usize::from(i)].store(value, Ordering::SeqCst);
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn analog(&self, pin: usize) -> i32 {
        self.analog[pin].load(Ordering::SeqCst)
    }

    pub fn digital(&self, pin: usize) -> u8 {
        self.digital[pin].load(Ordering::SeqCst)
    }

    pub fn ir(&self, index: usize) -> i32 {
        self.ir[index].load(Ordering::SeqCst)
    }

    pub fn bump(&self, side: usize) -> bool {
        self.bump[side].load(Ordering::SeqCst)
    }

    pub fn encoder(&self, wheel: usize) -> i32 {
        self.encoder[wheel].load(Ordering::SeqCst)
    }

    pub fn zero_encoder(&self, wheel: usize) {
        self.encoder[wheel].store(0, Ordering::SeqCst);
    }

    /// Slot-by-slot copy; slots are not read as one atomic unit.
    pub fn snapshot(&self) -> PinSnapshot {
        PinSnapshot {
            analog: std::array::from_fn(|i| self.analog(i)),
            digital: std::array::from_fn(|i| self.digital(i)),
            ir: std::array::from_fn(|i| self.ir(i)),
            bump: std::array::from_fn(|i| self.bump(i)),
            encoder: std::array::from_fn(|i| self.encoder(i)),
        }
    }
}

/// How [`ClientSession::sleep`] passes time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClockMode {
    WallClock,
    /// Drive a lockstep simulator: each sleep asks the device to run the
    /// physics steps that fall due and waits for its acknowledgement.
    Lockstep {
        dt: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionOptions {
    pub clock: ClockMode,
    /// Time given to the device to stabilise after opening.
    pub settle_ms: u64,
    /// Longest wait for a lockstep acknowledgement.
    pub sync_timeout: Duration,
}

impl Default for SessionOptions {
    fn default() -> Self {
        Self {
            clock: ClockMode::WallClock,
            settle_ms: 500,
            sync_timeout: Duration::from_secs(30),
        }
    }
}

impl SessionOptions {
    pub fn lockstep(dt: f64) -> Self {
        Self {
            clock: ClockMode::Lockstep { dt },
            ..Self::default()
        }
    }
}

#[derive(Debug, Default)]
struct SimStatus {
    ack: Option<lockstep::Ack>,
    closed: bool,
}

#[derive(Debug, Default)]
struct Shared {
    cache: PinCache,
    sim: Mutex<SimStatus>,
    sim_changed: Condvar,
    last_event_at: Mutex<Option<Instant>>,
    stop: AtomicBool,
}

fn ingest(conn: Connection, shared: Arc<Shared>) {
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let line = match conn.recv_line(Duration::from_millis(50)) {
            Ok(Some(line)) => line,
            Ok(None) => continue,
            Err(TransportError::LineTooLong) => {
                warn!("dropping over-long line from device");
                continue;
            }
            Err(err) => {
                if !matches!(err, TransportError::Closed) && !shared.stop.load(Ordering::SeqCst) {
                    warn!("ingestion stopped: {err}");
                }
                break;
            }
        };
        *shared.last_event_at.lock().unwrap() = Some(Instant::now());
        match protocol::decode(&line) {
            Ok(AsipMessage::Info(text)) => match lockstep::parse_ack(&text) {
                Some(ack) => {
                    shared.sim.lock().unwrap().ack = Some(ack);
                    shared.sim_changed.notify_all();
                }
                None => debug!("device says: {text}"),
            },
            Ok(msg) => {
                if let Err(err) = shared.cache.apply(&msg) {
                    warn!("dropping `{line}`: {err}");
                }
            }
            Err(err) => warn!("undecodable line `{line}`: {err}"),
        }
    }
    shared.sim.lock().unwrap().closed = true;
    shared.sim_changed.notify_all();
}

/// A live connection to one ASIP device.
pub struct ClientSession {
    conn: Connection,
    shared: Arc<Shared>,
    options: SessionOptions,
    virtual_clock: Option<VirtualClock>,
    started: Instant,
    ingestion: Option<JoinHandle<()>>,
    powers: (i32, i32),
}

/// Opens `endpoint` and starts a session on it.
pub fn open_session(endpoint: &TransportEndpoint, options: SessionOptions) -> Result<ClientSession, ClientError> {
    Ok(ClientSession::new(transport::open(endpoint)?, options))
}

impl ClientSession {
    /// Starts ingesting events from `conn` into a zeroed cache.
    pub fn new(conn: Connection, options: SessionOptions) -> Self {
        let shared = Arc::new(Shared::default());
        let ingestion = {
            let (conn, shared) = (conn.clone(), Arc::clone(&shared));
            std::thread::Builder::new()
                .name("asip-ingest".into())
                .spawn(move || ingest(conn, shared))
                .expect("spawn ingestion thread")
        };
        let virtual_clock = match options.clock {
            ClockMode::Lockstep { dt } => Some(VirtualClock::new(dt)),
            ClockMode::WallClock => None,
        };
        Self {
            conn,
            shared,
            options,
            virtual_clock,
            started: Instant::now(),
            ingestion: Some(ingestion),
            powers: (0, 0),
        }
    }

    pub fn options(&self) -> &SessionOptions {
        &self.options
    }

    pub fn cache(&self) -> &PinCache {
        &self.shared.cache
    }

    pub fn last_event_at(&self) -> Option<Instant> {
        *self.shared.last_event_at.lock().unwrap()
    }

    fn send(&self, msg: &AsipMessage) -> Result<(), ClientError> {
        let line = protocol::encode(msg)?;
        self.conn.send_line(&line)?;
        Ok(())
    }

    pub fn set_motors(&mut self, left: i32, right: i32) -> Result<(), ClientError> {
        if !contracts::motor_powers_ok(&(left, right)) {
            return Err(ContractViolation::new("setMotors", Blame::Caller, format!("({left}, {right})")).into());
        }
        self.send(&AsipMessage::SetMotors { left, right })?;
        self.powers = (left, right);
        Ok(())
    }

    pub fn stop_motors(&mut self) -> Result<(), ClientError> {
        self.set_motors(0, 0)
    }

    /// Powers most recently sent with [`set_motors`](Self::set_motors).
    pub fn motor_powers(&self) -> (i32, i32) {
        self.powers
    }

    pub fn get_ir(&self, index: usize) -> Result<i32, ClientError> {
        if index >= NUM_IR_SENSORS {
            return Err(ClientError::Usage(format!("IR sensor {index} does not exist (0-2)")));
        }
        Ok(self.shared.cache.ir(index))
    }

    /// All three IR readings.
    pub fn ir_values(&self) -> [i32; NUM_IR_SENSORS] {
        std::array::from_fn(|i| self.shared.cache.ir(i))
    }

    fn check_wheel(wheel: usize) -> Result<(), ClientError> {
        if wheel > 1 {
            return Err(ClientError::Usage(format!("wheel {wheel} does not exist (0-1)")));
        }
        Ok(())
    }

    pub fn get_count(&self, wheel: usize) -> Result<i32, ClientError> {
        Self::check_wheel(wheel)?;
        Ok(self.shared.cache.encoder(wheel))
    }

    pub fn reset_count(&mut self, wheel: usize) -> Result<(), ClientError> {
        Self::check_wheel(wheel)?;
        self.send(&AsipMessage::ResetEncoder { wheel: wheel as u8 })?;
        self.shared.cache.zero_encoder(wheel);
        Ok(())
    }

    pub fn left_bump(&self) -> bool {
        self.shared.cache.bump(0)
    }

    pub fn right_bump(&self) -> bool {
        self.shared.cache.bump(1)
    }

    fn interval(ms: i64) -> Result<u32, ClientError> {
        if !(0..=i64::from(MAX_INTERVAL_MS)).contains(&ms) {
            return Err(ClientError::Usage(format!(
                "autoreport interval {ms} ms outside 0..={MAX_INTERVAL_MS}"
            )));
        }
        Ok(ms as u32)
    }

    /// Requests IR reports every `ms` milliseconds; 0 turns them off.
    pub fn enable_ir(&mut self, ms: i64) -> Result<(), ClientError> {
        let interval_ms = Self::interval(ms)?;
        self.send(&AsipMessage::IrAutoreport { interval_ms })
    }

    pub fn enable_bumpers(&mut self, ms: i64) -> Result<(), ClientError> {
        let interval_ms = Self::interval(ms)?;
        self.send(&AsipMessage::BumpAutoreport { interval_ms })
    }

    pub fn enable_encoders(&mut self, ms: i64) -> Result<(), ClientError> {
        let interval_ms = Self::interval(ms)?;
        self.send(&AsipMessage::EncoderAutoreport { interval_ms })
    }

    pub fn enable_analog(&mut self, ms: i64) -> Result<(), ClientError> {
        let interval_ms = Self::interval(ms)?;
        self.send(&AsipMessage::AnalogAutoreport { interval_ms })
    }

    pub fn set_pin_mode(&mut self, pin: u8, mode: PinMode) -> Result<(), ClientError> {
        self.send(&AsipMessage::SetPinMode { pin, mode })
    }

    pub fn digital_write(&mut self, pin: u8, level: u8) -> Result<(), ClientError> {
        self.send(&AsipMessage::DigitalWrite { pin, level })
    }

    /// Writes `level` to each pin in order, stopping at the first error.
    pub fn digital_write_all(&mut self, pins: &[u8], level: u8) -> Result<(), ClientError> {
        pins.iter().try_for_each(|&pin| self.digital_write(pin, level))
    }

    /// Milliseconds since the session opened: virtual time when driving a
    /// lockstep simulator, wall-clock time otherwise.
    pub fn now_ms(&self) -> u64 {
        match &self.virtual_clock {
            Some(clock) => clock.now_us() / 1000,
            None => self.started.elapsed().as_millis() as u64,
        }
    }

    /// Lets `seconds` pass. Against a lockstep simulator this returns once
    /// every physics step due by then has run and its reports are cached.
    pub fn sleep(&mut self, seconds: f64) -> Result<(), ClientError> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(ClientError::Usage(format!("cannot sleep for {seconds} s")));
        }
        let Some(clock) = &mut self.virtual_clock else {
            std::thread::sleep(Duration::from_secs_f64(seconds));
            return Ok(());
        };
        let fresh = clock.sleep(seconds);
        if fresh == 0 {
            return Ok(());
        }
        let target = clock.steps();
        self.send(&lockstep::advance(fresh))?;
        let deadline = Instant::now() + self.options.sync_timeout;
        let mut status = self.shared.sim.lock().unwrap();
        loop {
            if status.ack.is_some_and(|a| a.step >= target) {
                return Ok(());
            }
            if status.closed {
                return Err(ClientError::Disconnected);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ClientError::SyncTimeout(target));
            }
            status = self.shared.sim_changed.wait_timeout(status, deadline - now).unwrap().0;
        }
    }

    /// Sleeps for the configured settle time.
    pub fn settle(&mut self) -> Result<(), ClientError> {
        self.sleep(self.options.settle_ms as f64 / 1000.0)
    }

    /// Robot pose reported by a lockstep simulator at the last sleep.
    pub fn sim_pose(&self) -> Option<Pose> {
        let ack = self.shared.sim.lock().unwrap().ack?;
        Some(Pose::new(ack.x, ack.y, ack.theta))
    }

    /// Closes the connection and waits for the ingestion thread.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        self.conn.close();
        if let Some(handle) = self.ingestion.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for ClientSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}
