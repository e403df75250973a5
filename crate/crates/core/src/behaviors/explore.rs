//! Random exploration: drive forward until a bumper closes, back off, turn a
//! random way for a random time, repeat.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{positive, with_stop, BehaviorError, Recorder, Trace};
use crate::client::{ClientError, ClientSession};

/// Picks one of `actions` uniformly. Nothing is run; the caller decides
/// what to do with the choice.
pub fn pick_random_action<'a, T, R: Rng + ?Sized>(actions: &'a [T], rng: &mut R) -> Result<&'a T, BehaviorError> {
    actions
        .choose(rng)
        .ok_or_else(|| BehaviorError::Usage("no actions to choose from".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExploreConfig {
    pub forward_power: i32,
    pub backoff_seconds: f64,
    pub rotation_min: f64,
    pub rotation_max: f64,
    pub rng_seed: u64,
    pub tick: f64,
    pub bump_interval_ms: i64,
    /// Swap the meaning of the two random turn choices.
    pub mirror: bool,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        Self {
            forward_power: 115,
            backoff_seconds: 0.5,
            rotation_min: 0.3,
            rotation_max: 1.5,
            rng_seed: 0,
            tick: 0.02,
            bump_interval_ms: 20,
            mirror: false,
        }
    }
}

impl ExploreConfig {
    fn validate(&self) -> Result<(), BehaviorError> {
        let usage = |m: &str| Err(BehaviorError::Usage(m.into()));
        if !positive(self.backoff_seconds) {
            return usage("backoff must be positive");
        }
        if !(self.rotation_min >= 0.0 && self.rotation_min <= self.rotation_max) {
            return usage("rotation bounds must satisfy 0 <= min <= max");
        }
        if !positive(self.tick) {
            return usage("tick must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Turn {
    Left,
    Right,
}

/// One bump and the turn that followed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Maneuver {
    pub bump_ms: u64,
    pub turn: Turn,
    pub rotation_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExploreOutcome {
    pub trace: Trace,
    pub maneuvers: Vec<Maneuver>,
}

type Action = fn(&mut ClientSession, i32) -> Result<(), ClientError>;

/// Spin counter-clockwise on the spot.
fn rotate_left(session: &mut ClientSession, power: i32) -> Result<(), ClientError> {
    session.set_motors(power, power)
}

fn rotate_right(session: &mut ClientSession, power: i32) -> Result<(), ClientError> {
    session.set_motors(-power, -power)
}

struct Explorer<'a> {
    config: &'a ExploreConfig,
    recorder: Recorder,
    deadline_ms: u64,
}

impl Explorer<'_> {
    fn remaining_ms(&self, session: &ClientSession) -> u64 {
        self.deadline_ms.saturating_sub(self.recorder.elapsed_ms(session))
    }

    fn tick_ms(&self) -> u64 {
        (self.config.tick * 1000.0).round().max(1.0) as u64
    }

    /// Sleeps `ms` (cut short at the deadline) in ticks, recording each.
    fn hold(&mut self, session: &mut ClientSession, ms: u64) -> Result<(), BehaviorError> {
        let tick_ms = self.tick_ms();
        let mut left = ms.min(self.remaining_ms(session));
        while left > 0 {
            let chunk = left.min(tick_ms);
            session.sleep(chunk as f64 / 1000.0)?;
            left -= chunk;
            let ir = session.ir_values();
            self.recorder.record(session, ir, None, None);
        }
        Ok(())
    }
}

/// Explores for `duration` seconds of session time.
pub fn run_explore(
    session: &mut ClientSession,
    config: &ExploreConfig,
    duration: f64,
) -> Result<ExploreOutcome, BehaviorError> {
    config.validate()?;
    if !positive(duration) {
        return Err(BehaviorError::Usage("duration must be positive".into()));
    }
    with_stop(session, |session| {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let actions: [(Turn, Action); 2] = if config.mirror {
            [(Turn::Right, rotate_right), (Turn::Left, rotate_left)]
        } else {
            [(Turn::Left, rotate_left), (Turn::Right, rotate_right)]
        };
        let (min_ms, max_ms) = (
            (config.rotation_min * 1000.0).round() as u64,
            (config.rotation_max * 1000.0).round() as u64,
        );
        let backoff_ms = (config.backoff_seconds * 1000.0).round() as u64;
        let p = config.forward_power;

        session.enable_bumpers(config.bump_interval_ms)?;
        session.settle()?;
        let mut explorer = Explorer {
            config,
            recorder: Recorder::start(session),
            deadline_ms: (duration * 1000.0).round() as u64,
        };
        let mut maneuvers = Vec::new();
        session.set_motors(-p, p)?;
        while explorer.remaining_ms(session) > 0 {
            if !(session.left_bump() || session.right_bump()) {
                explorer.hold(session, explorer.tick_ms())?;
                continue;
            }
            let bump_ms = explorer.recorder.elapsed_ms(session);
            session.set_motors(p, -p)?;
            explorer.hold(session, backoff_ms)?;
            let &(turn, action) = pick_random_action(&actions, &mut rng)?;
            let rotation_ms = rng.gen_range(min_ms..=max_ms);
            if explorer.remaining_ms(session) == 0 {
                break;
            }
            action(session, p)?;
            explorer.hold(session, rotation_ms)?;
            maneuvers.push(Maneuver {
                bump_ms,
                turn,
                rotation_ms,
            });
            if explorer.remaining_ms(session) == 0 {
                break;
            }
            session.set_motors(-p, p)?;
        }
        Ok(ExploreOutcome {
            trace: explorer.recorder.finish(),
            maneuvers,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn selection_does_not_run_anything() {
        let (left, right) = (Cell::new(0), Cell::new(0));
        let move_left = || left.set(left.get() + 1);
        let move_right = || right.set(right.get() + 1);
        let actions: [&dyn Fn(); 2] = [&move_left, &move_right];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chosen = pick_random_action(&actions, &mut rng).unwrap();
        assert_eq!((left.get(), right.get()), (0, 0));
        chosen();
        assert_eq!(left.get() + right.get(), 1);
    }

    #[test]
    fn single_and_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(pick_random_action(&[7], &mut rng).unwrap(), &7);
        let none: [u8; 0] = [];
        assert!(matches!(
            pick_random_action(&none, &mut rng),
            Err(BehaviorError::Usage(_))
        ));
    }

    #[test]
    fn choices_are_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let firsts = (0..1000)
            .filter(|_| *pick_random_action(&[0, 1], &mut rng).unwrap() == 0)
            .count();
        assert!((450..=550).contains(&firsts), "{firsts}");
    }
}
