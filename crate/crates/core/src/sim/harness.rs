//! Runs an [`Emulator`] on its own thread behind a loopback connection, with
//! a lockstep [`ClientSession`] on the other end.

use std::thread::JoinHandle;

use super::emulator::{Emulator, EmulatorOptions, EmulatorReport};
use super::physics::{ConfigError, SimConfig};
use super::world::WorldModel;
use crate::client::{ClientSession, SessionOptions};
use crate::transport::{Connection, TransportError};

pub struct SimHandle {
    thread: JoinHandle<Result<EmulatorReport, TransportError>>,
}

/// Starts an emulator thread and returns a session driving it.
pub fn spawn(
    world: WorldModel,
    config: SimConfig,
    options: EmulatorOptions,
) -> Result<(ClientSession, SimHandle), ConfigError> {
    let dt = config.dt;
    let emulator = Emulator::new(world, config, options)?;
    let (client_end, device_end) = Connection::loopback_pair();
    let thread = std::thread::Builder::new()
        .name("mirto-emulator".into())
        .spawn(move || emulator.serve(device_end))
        .expect("spawn emulator thread");
    let session = ClientSession::new(client_end, SessionOptions::lockstep(dt));
    Ok((session, SimHandle { thread }))
}

impl SimHandle {
    /// Closes `session` and returns the emulator's record of the run.
    pub fn finish(self, session: ClientSession) -> Result<EmulatorReport, TransportError> {
        session.close();
        self.thread.join().expect("emulator thread panicked")
    }
}
