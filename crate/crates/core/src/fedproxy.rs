//! Transparent federation proxy: one proxy entity per network, fully meshed
//! over persistent inter-proxy links. The S6a relay forwards AIR/AIA and
//! ULR/ULA between a visited MME and the home HSS; the MEC relay forwards
//! federation messages between MEC managers and AMCs. Each side talks to a
//! virtual counterpart — nobody learns it is speaking across networks — and
//! payloads pass through bit-identically.

use std::any::Any;
use std::collections::{HashMap, HashSet, VecDeque};

use thiserror::Error;

use crate::netsim::{Ctx, Entity};
use crate::wire::{Fs3aBody, Fs3aMessage, Message, S6aMessage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FedError {
    #[error("plmn prefix {0} already registered")]
    DuplicatePrefix(String),
    #[error("no registered network for {0}")]
    UnroutableRealm(String),
    #[error("response with no pending request")]
    CorrelationLost,
}

/// Endpoints of one network's MEC/cellular side, as the proxy sees them.
pub struct LocalEndpoints {
    pub mme: String,
    pub hss: String,
    pub manager: String,
    pub amc: String,
}

/// One proxy entity. Requests are routed by the IMSI's PLMN prefix (S6a) or
/// the destination-network header (MEC); responses retrace the recorded
/// correlation path. Frames from endpoints outside the routing table are
/// dropped with an audit record: the proxy network is closed.
pub struct Proxy {
    id: String,
    network: String,
    local: LocalEndpoints,
    /// network_id -> proxy endpoint serving it (own network maps to self).
    peers: HashMap<String, String>,
    plmn_to_network: HashMap<String, String>,
    generation: u64,
    pending_air: VecDeque<String>,
    pending_ulr: VecDeque<String>,
    allowed: HashSet<String>,
}

impl Proxy {
    pub fn new(id: &str, network: &str, local: LocalEndpoints) -> Self {
        let allowed = [
            local.mme.clone(),
            local.hss.clone(),
            local.manager.clone(),
            local.amc.clone(),
        ]
        .into_iter()
        .collect();
        Proxy {
            id: id.to_string(),
            network: network.to_string(),
            local,
            peers: HashMap::new(),
            plmn_to_network: HashMap::new(),
            generation: 0,
            pending_air: VecDeque::new(),
            pending_ulr: VecDeque::new(),
            allowed,
        }
    }

    /// Admit a network to the federation: its PLMN prefix becomes routable
    /// and its proxy becomes an accepted peer.
    pub fn register_network(
        &mut self,
        network_id: &str,
        plmn_prefix: &str,
        proxy_endpoint: &str,
    ) -> Result<(), FedError> {
        if self.plmn_to_network.contains_key(plmn_prefix) {
            return Err(FedError::DuplicatePrefix(plmn_prefix.to_string()));
        }
        self.plmn_to_network
            .insert(plmn_prefix.to_string(), network_id.to_string());
        self.peers
            .insert(network_id.to_string(), proxy_endpoint.to_string());
        if network_id != self.network {
            self.allowed.insert(proxy_endpoint.to_string());
        }
        self.generation += 1;
        Ok(())
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn lookup_plmn(&self, prefix: &str) -> Option<&str> {
        self.plmn_to_network.get(prefix).map(String::as_str)
    }

    /// Next hop for a request belonging to `network_id`: the local
    /// counterpart if it is ours, the peer proxy otherwise.
    fn route_to_network(&self, network_id: &str, local_target: &str) -> Result<String, FedError> {
        if network_id == self.network {
            return Ok(local_target.to_string());
        }
        self.peers
            .get(network_id)
            .cloned()
            .ok_or_else(|| FedError::UnroutableRealm(network_id.to_string()))
    }

    fn relay_s6a(&mut self, ctx: &mut dyn Ctx, from: &str, msg: &Message, s6a: &S6aMessage) {
        match s6a {
            S6aMessage::Air { imsi, .. } | S6aMessage::Ulr { imsi, .. } => {
                let home = match self.plmn_to_network.get(imsi.plmn_prefix()) {
                    Some(n) => n.clone(),
                    None => {
                        ctx.audit(&format!(
                            "unroutable realm for imsi prefix {}",
                            imsi.plmn_prefix()
                        ));
                        return;
                    }
                };
                let target = match self.route_to_network(&home, &self.local.hss.clone()) {
                    Ok(t) => t,
                    Err(e) => {
                        ctx.audit(&e.to_string());
                        return;
                    }
                };
                let pending = match s6a {
                    S6aMessage::Air { .. } => &mut self.pending_air,
                    _ => &mut self.pending_ulr,
                };
                pending.push_back(from.to_string());
                ctx.send(&target, msg).unwrap();
            }
            S6aMessage::Aia { .. } | S6aMessage::Ula { .. } => {
                let pending = match s6a {
                    S6aMessage::Aia { .. } => &mut self.pending_air,
                    _ => &mut self.pending_ulr,
                };
                match pending.pop_front() {
                    Some(reply_to) => ctx.send(&reply_to, msg).unwrap(),
                    None => ctx.audit("correlation lost: response with no pending request"),
                }
            }
        }
    }

    fn relay_mec(&mut self, ctx: &mut dyn Ctx, msg: &Message, fs3a: &Fs3aMessage) {
        let dst = &fs3a.destination_network;
        // Inside the destination network the frame goes to the entity class
        // the message concerns: subscription traffic to the MEC manager,
        // mobility/state traffic to the AMC.
        let local_target = match fs3a.body {
            Fs3aBody::SubscriptionFetchReq { .. } | Fs3aBody::SubscriptionFetchResp { .. } => {
                self.local.manager.clone()
            }
            _ => self.local.amc.clone(),
        };
        match self.route_to_network(dst, &local_target) {
            Ok(target) => {
                // A pipelined state push keeps its streaming behaviour on
                // every relay hop; everything else is store-and-forward.
                let streamed = matches!(fs3a.body, Fs3aBody::StateFetchResp { streamed: true, .. });
                if streamed {
                    ctx.send_streamed(&target, msg).unwrap();
                } else {
                    ctx.send(&target, msg).unwrap();
                }
            }
            Err(e) => ctx.audit(&e.to_string()),
        }
    }
}

impl Entity for Proxy {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        if !self.allowed.contains(from) {
            ctx.audit(&format!("dropped frame from unregistered endpoint {from}"));
            return;
        }
        match &msg {
            Message::S6a(s6a) => {
                let s6a = s6a.clone();
                self.relay_s6a(ctx, from, &msg, &s6a);
            }
            Message::Fs3a(fs3a) => {
                let fs3a = fs3a.clone();
                self.relay_mec(ctx, &msg, &fs3a);
            }
            other => ctx.audit(&format!("non-relayable message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}
