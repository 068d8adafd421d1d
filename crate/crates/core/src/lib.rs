//! Simulation and analysis of a two-station pulsed Bell experiment recorded as
//! time-tag streams.
//!
//! * [`model`]: domain types, configuration and the nominal timing budget.
//! * [`simulator`]: seeded generation of the six tag streams of a run.
//! * [`syncproto`]: pulse numbering from the frequency-modulated trigger.
//! * [`analysis`]: coincidences, CHSH, trigger-to-photon delays, verdicts.
//! * [`tagio`]: BTAG channel files and session manifests.

pub mod analysis;
pub mod error;
pub mod model;
pub mod simulator;
pub mod syncproto;
pub mod tagio;

pub use error::{Error, Result};
