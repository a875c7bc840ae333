//! Operator-facing plumbing: wire protocol, session records, headless
//! runs with replay, and the driver behind the live service.

pub mod headless;
pub mod live;
pub mod protocol;
pub mod record;

pub use headless::{record_header, replay, run_headless, CommandScript, HeadlessError, HeadlessRun, ReplayReport};
pub use live::LiveDriver;
pub use protocol::{parse_client, Payload, ProtocolMessage, Sequencer};
pub use record::{SessionRecord, Summary};
