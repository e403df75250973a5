//! Runtime contracts: guard predicates wrapped around operations, with blame.
//!
//! A failing precondition blames the caller (it passed a bad argument); a
//! failing postcondition blames the callee (it produced a bad result).
//! Violations are ordinary errors so callers can still run cleanup such as
//! stopping the motors.

use std::fmt;

use thiserror::Error;

use crate::protocol::MAX_MOTOR_POWER;

/// Lower and upper bound of the speed accumulator.
pub const SPEED_LIMIT: i64 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Blame {
    Caller,
    Callee,
}

impl fmt::Display for Blame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Blame::Caller => "caller",
            Blame::Callee => "callee",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("contract-violation {guard} blame={blame} value={value}")]
pub struct ContractViolation {
    pub guard: String,
    pub blame: Blame,
    pub value: String,
}

impl ContractViolation {
    pub fn new(guard: impl Into<String>, blame: Blame, value: impl fmt::Display) -> Self {
        Self {
            guard: guard.into(),
            blame,
            value: value.to_string(),
        }
    }
}

/// A numeric argument that may or may not be exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Number {
    Exact(i64),
    Inexact(f64),
}

impl From<i64> for Number {
    fn from(v: i64) -> Self {
        Number::Exact(v)
    }
}

impl From<i32> for Number {
    fn from(v: i32) -> Self {
        Number::Exact(i64::from(v))
    }
}

impl From<f64> for Number {
    fn from(v: f64) -> Self {
        Number::Inexact(v)
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Number::Exact(v) => write!(f, "{v}"),
            Number::Inexact(v) => write!(f, "{v:?}"),
        }
    }
}

/// Accepts `delta` only if it is an exact integer and keeps `current + delta`
/// within ±255.
pub fn check_speed(current: i64, delta: Number) -> bool {
    match delta {
        Number::Exact(d) => current
            .checked_add(d)
            .is_some_and(|total| (-SPEED_LIMIT..=SPEED_LIMIT).contains(&total)),
        Number::Inexact(_) => false,
    }
}

/// A running speed that never leaves ±255.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpeedAccumulator {
    speed: i64,
}

impl SpeedAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_speed(&self) -> i64 {
        self.speed
    }

    /// Adds `delta`, or leaves the speed untouched and blames the caller.
    pub fn added_speed(&mut self, delta: impl Into<Number>) -> Result<(), ContractViolation> {
        let delta = delta.into();
        if !check_speed(self.speed, delta) {
            return Err(ContractViolation::new("added_speed", Blame::Caller, delta));
        }
        if let Number::Exact(d) = delta {
            self.speed += d;
        }
        Ok(())
    }
}

/// An operation wrapped with a precondition on its input and a postcondition
/// on its output.
pub struct Guarded<F, Pre, Post> {
    name: String,
    pre: Pre,
    post: Post,
    op: F,
}

/// Wraps `op` so that each call checks `pre` on the input and `post` on the
/// output.
pub fn guard<F, Pre, Post>(name: impl Into<String>, pre: Pre, post: Post, op: F) -> Guarded<F, Pre, Post> {
    Guarded {
        name: name.into(),
        pre,
        post,
        op,
    }
}

impl<F, Pre, Post> Guarded<F, Pre, Post> {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn call<I, O>(&self, input: I) -> Result<O, ContractViolation>
    where
        F: Fn(I) -> O,
        Pre: Fn(&I) -> bool,
        Post: Fn(&O) -> bool,
        I: fmt::Debug,
        O: fmt::Debug,
    {
        if !(self.pre)(&input) {
            return Err(ContractViolation::new(&self.name, Blame::Caller, format!("{input:?}")));
        }
        let output = (self.op)(input);
        if !(self.post)(&output) {
            return Err(ContractViolation::new(&self.name, Blame::Callee, format!("{output:?}")));
        }
        Ok(output)
    }

    pub fn call_mut<I, O>(&mut self, input: I) -> Result<O, ContractViolation>
    where
        F: FnMut(I) -> O,
        Pre: Fn(&I) -> bool,
        Post: Fn(&O) -> bool,
        I: fmt::Debug,
        O: fmt::Debug,
    {
        if !(self.pre)(&input) {
            return Err(ContractViolation::new(&self.name, Blame::Caller, format!("{input:?}")));
        }
        let output = (self.op)(input);
        if !(self.post)(&output) {
            return Err(ContractViolation::new(&self.name, Blame::Callee, format!("{output:?}")));
        }
        Ok(output)
    }
}

pub fn motor_power_ok(power: i32) -> bool {
    (-MAX_MOTOR_POWER..=MAX_MOTOR_POWER).contains(&power)
}

/// Precondition of `setMotors`: both powers within ±255.
pub fn motor_powers_ok(&(left, right): &(i32, i32)) -> bool {
    motor_power_ok(left) && motor_power_ok(right)
}
