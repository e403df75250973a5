//! Sensor monitor loop: print the IR readings at a fixed interval, report
//! bumper presses and releases, exit when both bumpers are held.

use std::fmt;

use super::{positive, BehaviorError, Recorder, Trace};
use crate::client::ClientSession;
use crate::protocol::NUM_IR_SENSORS;

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorConfig {
    pub print_interval_ms: u64,
    pub tick: f64,
    pub ir_interval_ms: i64,
    pub bump_interval_ms: i64,
    /// Stop after this many seconds even if the bumpers are never held.
    pub duration: Option<f64>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            print_interval_ms: 3000,
            tick: 0.02,
            ir_interval_ms: 100,
            bump_interval_ms: 20,
            duration: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MonitorEvent {
    Ir { t_ms: u64, values: [i32; NUM_IR_SENSORS] },
    Bump { t_ms: u64, left: bool, pressed: bool },
    BothPressed { t_ms: u64 },
}

impl fmt::Display for MonitorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MonitorEvent::Ir { values, .. } => {
                for (i, v) in values.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "IR sensor {i} -> {v};")?;
                }
                Ok(())
            }
            MonitorEvent::Bump { left, pressed, .. } => write!(
                f,
                "{} bump {}",
                if *left { "Left" } else { "Right" },
                if *pressed { "pressed" } else { "released" }
            ),
            MonitorEvent::BothPressed { .. } => f.write_str("Both bumps pressed, exiting"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MonitorOutcome {
    pub events: Vec<MonitorEvent>,
    pub trace: Trace,
}

impl MonitorOutcome {
    pub fn ir_reports(&self) -> impl Iterator<Item = (u64, [i32; NUM_IR_SENSORS])> + '_ {
        self.events.iter().filter_map(|e| match e {
            MonitorEvent::Ir { t_ms, values } => Some((*t_ms, *values)),
            _ => None,
        })
    }
}

/// Runs the monitor loop. `on_event` sees each event as it happens.
///
/// The tick that reaches the configured duration is still processed.
pub fn run_monitor(
    session: &mut ClientSession,
    config: &MonitorConfig,
    mut on_event: impl FnMut(&MonitorEvent),
) -> Result<MonitorOutcome, BehaviorError> {
    if !positive(config.tick) {
        return Err(BehaviorError::Usage("tick must be positive".into()));
    }
    let duration_ms = match config.duration {
        Some(d) if d >= 0.0 && d.is_finite() => Some((d * 1000.0).round() as u64),
        Some(d) => return Err(BehaviorError::Usage(format!("bad duration {d}"))),
        None => None,
    };
    session.enable_ir(config.ir_interval_ms)?;
    session.enable_bumpers(config.bump_interval_ms)?;
    session.settle()?;

    let mut recorder = Recorder::start(session);
    let mut events = Vec::new();
    let mut emit = |event: MonitorEvent| {
        on_event(&event);
        events.push(event);
    };
    let mut previous_print = 0;
    let mut previous = [false, false];
    loop {
        let t_ms = recorder.elapsed_ms(session);
        if t_ms - previous_print >= config.print_interval_ms {
            emit(MonitorEvent::Ir {
                t_ms,
                values: session.ir_values(),
            });
            previous_print = t_ms;
        }
        let current = [session.left_bump(), session.right_bump()];
        for (side, (&now, &before)) in current.iter().zip(&previous).enumerate() {
            if now != before {
                emit(MonitorEvent::Bump {
                    t_ms,
                    left: side == 0,
                    pressed: now,
                });
            }
        }
        previous = current;
        if current == [true, true] {
            emit(MonitorEvent::BothPressed { t_ms });
            break;
        }
        if duration_ms.is_some_and(|d| t_ms >= d) {
            break;
        }
        session.sleep(config.tick)?;
        let ir = session.ir_values();
        recorder.record(session, ir, None, None);
    }
    Ok(MonitorOutcome {
        events,
        trace: recorder.finish(),
    })
}

/// IR readings taken every `interval_ms` for `duration` seconds, oldest
/// first, three values per sample, with the trace recorded meanwhile.
pub fn log_ir_samples(
    session: &mut ClientSession,
    interval_ms: u64,
    duration: f64,
) -> Result<(Vec<i32>, Trace), BehaviorError> {
    let config = MonitorConfig {
        print_interval_ms: interval_ms,
        duration: Some(duration),
        ..MonitorConfig::default()
    };
    let outcome = run_monitor(session, &config, |_| {})?;
    let samples = outcome.ir_reports().flat_map(|(_, values)| values).collect();
    Ok((samples, outcome.trace))
}
