//! ASIP client, MIRTO robot emulator and the robot behaviors that run on top
//! of them.
//!
//! * [`protocol`]: message model and line codec.
//! * [`transport`]: loopback, TCP and serial line transports.
//! * [`client`]: session with a background ingestion thread and pin cache.
//! * [`sim`]: deterministic differential-drive simulator and device emulator.
//! * [`behaviors`]: exploration, monitor loop, line followers, analytics.
//! * [`contracts`]: runtime pre/postcondition guards with blame.

pub mod behaviors;
pub mod client;
pub mod contracts;
pub mod protocol;
pub mod sim;
pub mod transport;
