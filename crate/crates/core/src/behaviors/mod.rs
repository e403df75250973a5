//! Robot control programs built on the client API, and the trace they leave.

pub mod analytics;
pub mod explore;
pub mod linefollow;
pub mod monitor;

use std::io::{Read, Write};

use thiserror::Error;

use crate::client::{ClientError, ClientSession};
use crate::protocol::NUM_IR_SENSORS;
use crate::sim::Pose;

pub use analytics::{count_high_corrections, count_high_pins, count_high_pins_fold, lap_time, sum_ir_greater_than};
pub use explore::{pick_random_action, run_explore, ExploreConfig, ExploreOutcome, Maneuver, Turn};
pub use linefollow::{
    bang_bang_decision, clamp_ir, pid_step, run_line_follower, search_maneuver, BangBangConfig, Decision,
    FollowOutcome, FollowerMode, PidConfig, PidOutput, PidState, SearchResult,
};
pub use monitor::{log_ir_samples, run_monitor, MonitorConfig, MonitorEvent, MonitorOutcome};

#[derive(Debug, Error)]
pub enum BehaviorError {
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("trace: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace line {line}: {message}")]
    BadTrace { line: u64, message: String },
}

impl BehaviorError {
    /// The contract violation behind this error, if any.
    pub fn contract_violation(&self) -> Option<&crate::contracts::ContractViolation> {
        match self {
            BehaviorError::Client(ClientError::Contract(v)) => Some(v),
            _ => None,
        }
    }
}

/// False for zero, negative and NaN.
pub(crate) fn positive(x: f64) -> bool {
    x > 0.0
}

/// Runs `body`, then stops the motors whether or not it succeeded.
pub(crate) fn with_stop<T>(
    session: &mut ClientSession,
    body: impl FnOnce(&mut ClientSession) -> Result<T, BehaviorError>,
) -> Result<T, BehaviorError> {
    let result = body(session);
    let stopped = session.stop_motors();
    let value = result?;
    stopped?;
    Ok(value)
}

/// One control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub t_ms: u64,
    pub power_left: i32,
    pub power_right: i32,
    /// Only known when driving the simulator.
    pub pose: Option<Pose>,
    pub ir: [i32; NUM_IR_SENSORS],
    pub bump_left: bool,
    pub bump_right: bool,
    pub error: Option<f64>,
    pub correction: Option<i64>,
}

pub const TRACE_HEADER: [&str; 13] = [
    "t_ms", "pl", "pr", "x", "y", "theta", "ir0", "ir1", "ir2", "bl", "br", "err", "corr",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

fn float(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BehaviorError> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(TRACE_HEADER)?;
        for r in &self.records {
            writer.write_record([
                r.t_ms.to_string(),
                r.power_left.to_string(),
                r.power_right.to_string(),
                float(r.pose.map(|p| p.x)),
                float(r.pose.map(|p| p.y)),
                float(r.pose.map(|p| p.theta)),
                r.ir[0].to_string(),
                r.ir[1].to_string(),
                r.ir[2].to_string(),
                u8::from(r.bump_left).to_string(),
                u8::from(r.bump_right).to_string(),
                float(r.error),
                r.correction.map_or_else(String::new, |c| c.to_string()),
            ])?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self, BehaviorError> {
        let mut reader = csv::Reader::from_reader(input);
        if reader.headers()?.iter().ne(TRACE_HEADER) {
            return Err(BehaviorError::BadTrace {
                line: 1,
                message: format!("expected header {}", TRACE_HEADER.join(",")),
            });
        }
        let mut records = Vec::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map_or(0, |p| p.line());
            let bad = |message: String| BehaviorError::BadTrace { line, message };
            if row.len() != TRACE_HEADER.len() {
                return Err(bad(format!("expected {} fields", TRACE_HEADER.len())));
            }
            fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<Option<T>, String> {
                let text = &row[i];
                if text.is_empty() {
                    return Ok(None);
                }
                text.parse()
                    .map(Some)
                    .map_err(|_| format!("bad {} value `{text}`", TRACE_HEADER[i]))
            }
            let required = |i: usize| -> Result<i64, BehaviorError> {
                field::<i64>(&row, i)
                    .map_err(&bad)?
                    .ok_or_else(|| bad(format!("missing {}", TRACE_HEADER[i])))
            };
            let small = |i: usize| -> Result<i32, BehaviorError> {
                i32::try_from(required(i)?).map_err(|_| bad(format!("{} out of range", TRACE_HEADER[i])))
            };
            let pose = match (
                field::<f64>(&row, 3).map_err(&bad)?,
                field::<f64>(&row, 4).map_err(&bad)?,
                field::<f64>(&row, 5).map_err(&bad)?,
            ) {
                (Some(x), Some(y), Some(theta)) => Some(Pose::new(x, y, theta)),
                (None, None, None) => None,
                _ => return Err(bad("pose needs all of x, y, theta or none".into())),
            };
            let t_ms = u64::try_from(required(0)?).map_err(|_| bad("negative t_ms".into()))?;
            records.push(TraceRecord {
                t_ms,
                power_left: small(1)?,
                power_right: small(2)?,
                pose,
                ir: [small(6)?, small(7)?, small(8)?],
                bump_left: required(9)? != 0,
                bump_right: required(10)? != 0,
                error: field::<f64>(&row, 11).map_err(&bad)?,
                correction: field::<i64>(&row, 12).map_err(&bad)?,
            });
        }
        Ok(Self { records })
    }
}

/// Collects trace records with times relative to when recording started.
pub(crate) struct Recorder {
    origin_ms: u64,
    trace: Trace,
}

impl Recorder {
    pub(crate) fn start(session: &ClientSession) -> Self {
        Self {
            origin_ms: session.now_ms(),
            trace: Trace::new(),
        }
    }

    pub(crate) fn elapsed_ms(&self, session: &ClientSession) -> u64 {
        session.now_ms() - self.origin_ms
    }

    pub(crate) fn record(
        &mut self,
        session: &ClientSession,
        ir: [i32; NUM_IR_SENSORS],
        error: Option<f64>,
        correction: Option<i64>,
    ) {
        let (power_left, power_right) = session.motor_powers();
        self.trace.records.push(TraceRecord {
            t_ms: self.elapsed_ms(session),
            power_left,
            power_right,
            pose: session.sim_pose(),
            ir,
            bump_left: session.left_bump(),
            bump_right: session.right_bump(),
            error,
            correction,
        });
    }

    pub(crate) fn finish(self) -> Trace {
        self.trace
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t_ms: u64, pose: Option<Pose>) -> TraceRecord {
        TraceRecord {
            t_ms,
            power_left: -150,
            power_right: 100,
            pose,
            ir: [0, 90, 3],
            bump_left: false,
            bump_right: true,
            error: Some(2000.0),
            correction: Some(50),
        }
    }

    #[test]
    fn csv_layout() {
        let trace = Trace {
            records: vec![
                record(0, Some(Pose::new(0.1, -0.03, 1.0 / 3.0))),
                TraceRecord {
                    error: None,
                    correction: None,
                    ..record(20, None)
                },
            ],
        };
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "t_ms,pl,pr,x,y,theta,ir0,ir1,ir2,bl,br,err,corr\n\
             0,-150,100,0.100000,-0.030000,0.333333,0,90,3,0,1,2000.000000,50\n\
             20,-150,100,,,,0,90,3,0,1,,\n"
        );
        let back = Trace::read_csv(text.as_bytes()).unwrap();
        assert_eq!(back.records[1], trace.records[1]);
        assert_eq!(back.records[0].pose.unwrap().theta, 0.333333);
    }

    #[test]
    fn rejects_malformed_traces() {
        assert!(Trace::read_csv("a,b\n".as_bytes()).is_err());
        let bad = "t_ms,pl,pr,x,y,theta,ir0,ir1,ir2,bl,br,err,corr\n0,1,2,0.1,,,0,0,0,0,0,,\n";
        assert!(matches!(
            Trace::read_csv(bad.as_bytes()),
            Err(BehaviorError::BadTrace { line: 2, .. })
        ));
        let empty = "t_ms,pl,pr,x,y,theta,ir0,ir1,ir2,bl,br,err,corr\n";
        assert!(Trace::read_csv(empty.as_bytes()).unwrap().is_empty());
    }
}
