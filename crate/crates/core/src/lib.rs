//! Deterministic desk-scale testbed for federated MEC third-party
//! authentication and application-state mobility over a transparent proxy.
//!
//! The crate is organised around six subsystems:
//!
//! * [`wire`] — length-prefixed, type-tagged framing for every message
//!   exchanged between entities (S1-lite, S6a-lite, federation proxy
//!   messages, application messages).
//! * [`netsim`] — a virtual-clock event network plus a loopback socket
//!   transport behind the same entity interface.
//! * [`cellular`] — minimal LTE control plane (UE, eNB, MME, HSS) with an
//!   EPS-AKA style mutual authentication, including roaming through the
//!   federation proxy.
//! * [`mecsys`] — per-network MEC system: manager (S1 tap), auth server,
//!   subscriber datastore, application server, AMS and AMC.
//! * [`fedproxy`] — the transparent relay with routing tables and virtual
//!   counterparts.
//! * [`harness`] — scenario runner, stage timing instrumentation and CSV
//!   reports.

pub mod cellular;
pub mod crypto;
pub mod fedproxy;
pub mod harness;
pub mod mecsys;
pub mod netsim;
pub mod wire;

pub use harness::config::ScenarioConfig;
pub use harness::report::LatencyReport;
pub use wire::{decode_frame, encode_frame, Message, WireError};
