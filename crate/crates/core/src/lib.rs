//! Deterministic discrete-event emulator for swarms of Flying Light Specks
//! (FLSs) rendering point clouds and haptic interactions inside a desk-sized
//! display volume.
//!
//! Actors (one per FLS plus a coordinating hub) are share-nothing state
//! machines driven by a single deterministic event loop ([`runtime`]) and
//! exchange datagrams over a lossy, reordering network ([`transport`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod haptics;
pub mod localization;
pub mod runtime;
pub mod scenario;
pub mod swarm;
pub mod transport;

pub use dynamics::Vec3;
