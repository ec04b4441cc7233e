//! Shared helpers for the integration tests.

#![allow(dead_code)]

pub mod oracle;

use std::any::Any;

use fs3a_core::netsim::{Ctx, Entity};
use fs3a_core::wire::Message;

/// Inert endpoint that records everything delivered to it. Used as the
/// origin and reply-path of crafted frames in the security tests.
pub struct Probe {
    id: String,
    pub inbox: Vec<(String, Message)>,
}

impl Probe {
    pub fn new(id: &str) -> Self {
        Probe {
            id: id.to_string(),
            inbox: Vec::new(),
        }
    }
}

impl Entity for Probe {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, _ctx: &mut dyn Ctx, from: &str, msg: Message) {
        self.inbox.push((from.to_string(), msg));
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
