//! Compliance monitoring for food-production floors.
//!
//! Detector events are bound to a digital twin of the factory
//! ([`twin`]), deduplicated and routed by priority ([`pipeline`]), rolled up
//! into per-space red/amber/green status ([`status`]), and combined with
//! badge positions for contact tracing ([`contact`]). [`system`] wires these
//! together behind a write-ahead journal; [`sim`] generates seeded pilot
//! scenarios and scores the whole chain against ground truth.

pub mod contact;
pub mod event;
pub mod geom;
pub mod journal;
pub mod pipeline;
pub mod sim;
pub mod status;
pub mod system;
pub mod twin;

#[cfg(test)]
pub(crate) mod fixtures;

pub use event::AnomalyEvent;
pub use geom::{Point, Timestamp};
