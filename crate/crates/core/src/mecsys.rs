//! One MEC system per network: the manager (S1 tap, UE identification,
//! subscriber datastore, prefetch triggers), the cellular-OIDC auth server
//! (IP-to-IMSI identity, token issue and introspection), the application
//! server (sessions and versioned state), the host-level mobility service
//! (AMS) and the system-level coordinator (AMC). A cloud state store backs
//! the no-federation baseline.
//!
//! State moves two ways. An on-demand pull is chunked stop-and-wait: the
//! first response carries the opening chunk and the total size, and the
//! requester paginates with chunk requests over the full relay path. A
//! prefetch is a pipelined push over the persistent connections: the blob is
//! serialized once at the origin and relays forward it with propagation
//! latency only. The pull path is what a user waits on; the push happens
//! while the UE is still attaching, which is where the benefit that grows
//! with state size comes from.

use std::any::Any;
use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cellular::SubscriptionRecord;
use crate::crypto::{mac, tags_equal};
use crate::netsim::{Command, Ctx, Entity};
use crate::wire::{
    AppMessage, CtrlMessage, Fs3aBody, Fs3aMessage, Imsi, Ipv4, Message, S1Message,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MecError {
    #[error("no active context for source ip")]
    UnknownSourceIp,
    #[error("subscriber not entitled to MEC service")]
    NotEntitled,
    #[error("subscription entry not yet fetched")]
    SubscriptionPending,
    #[error("no mobility watch installed")]
    StaleWatch,
    #[error("no active session")]
    NoSession,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("token encoding malformed")]
    Malformed,
    #[error("signature does not verify")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("audience mismatch")]
    AudienceMismatch,
    #[error("subject does not match the presenting ip")]
    SubjectIpMismatch,
}

/// Sentinel subject used in failure responses where the codec still needs a
/// well-formed IMSI field.
pub fn nil_imsi() -> Imsi {
    Imsi::new("000000000000000").unwrap()
}

// Result codes carried by TokenCheckResp.
pub mod check {
    pub const OK: u32 = 0;
    pub const BAD_SIGNATURE: u32 = 1;
    pub const EXPIRED: u32 = 2;
    pub const AUDIENCE_MISMATCH: u32 = 3;
    pub const SUBJECT_IP_MISMATCH: u32 = 4;
    pub const NOT_ENTITLED: u32 = 5;
    pub const UNKNOWN_SOURCE_IP: u32 = 6;
}

// ---------------------------------------------------------------------------
// Access tokens
// ---------------------------------------------------------------------------

/// Signed bearer credential. The signature is an HMAC over the canonical
/// pipe-joined encoding of all prior fields under the per-app federation key
/// (the same application deployed in two networks holds the same key, which
/// is what makes cross-operator reuse verifiable).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessToken {
    pub issuer: String,
    pub subject: Imsi,
    pub audience: String,
    pub issued_at_ms: u64,
    pub expires_at_ms: u64,
    pub nonce: [u8; 16],
    pub signature: [u8; 32],
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return None;
    }
    Some(
        (0..s.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
            .collect(),
    )
}

impl AccessToken {
    pub fn issue(
        issuer: &str,
        subject: Imsi,
        audience: &str,
        now_ms: u64,
        lifetime_ms: u64,
        nonce: [u8; 16],
        key: &[u8],
    ) -> Self {
        let mut t = AccessToken {
            issuer: issuer.to_string(),
            subject,
            audience: audience.to_string(),
            issued_at_ms: now_ms,
            expires_at_ms: now_ms + lifetime_ms,
            nonce,
            signature: [0; 32],
        };
        t.signature = mac(key, t.signing_input().as_bytes());
        t
    }

    /// Byte-stable canonical encoding of everything the signature covers.
    fn signing_input(&self) -> String {
        format!(
            "v1|{}|{}|{}|{:016x}|{:016x}|{}",
            self.issuer,
            self.subject,
            self.audience,
            self.issued_at_ms,
            self.expires_at_ms,
            hex(&self.nonce)
        )
    }

    pub fn encode(&self) -> String {
        format!("{}|{}", self.signing_input(), hex(&self.signature))
    }

    pub fn parse(s: &str) -> Result<Self, TokenError> {
        let parts: Vec<&str> = s.split('|').collect();
        let [v, issuer, subject, audience, iat, exp, nonce, sig] = parts[..] else {
            return Err(TokenError::Malformed);
        };
        if v != "v1" {
            return Err(TokenError::Malformed);
        }
        let subject = Imsi::new(subject).map_err(|_| TokenError::Malformed)?;
        let issued_at_ms =
            u64::from_str_radix(iat, 16).map_err(|_| TokenError::Malformed)?;
        let expires_at_ms =
            u64::from_str_radix(exp, 16).map_err(|_| TokenError::Malformed)?;
        let nonce: [u8; 16] = unhex(nonce)
            .and_then(|v| v.try_into().ok())
            .ok_or(TokenError::Malformed)?;
        let signature: [u8; 32] = unhex(sig)
            .and_then(|v| v.try_into().ok())
            .ok_or(TokenError::Malformed)?;
        Ok(AccessToken {
            issuer: issuer.to_string(),
            subject,
            audience: audience.to_string(),
            issued_at_ms,
            expires_at_ms,
            nonce,
            signature,
        })
    }

    pub fn verify_signature(&self, key: &[u8]) -> bool {
        tags_equal(&mac(key, self.signing_input().as_bytes()), &self.signature)
    }
}

// ---------------------------------------------------------------------------
// MEC manager
// ---------------------------------------------------------------------------

/// The identity record the tap assembles from mirrored S1 traffic.
#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub imsi: Imsi,
    pub teid: u32,
    pub ue_ip: Ipv4,
    pub home_plmn: String,
    pub active: bool,
    pub attached_at_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatastoreSource {
    LocalHss,
    HomeMecViaProxy,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatastoreEntry {
    pub record: SubscriptionRecord,
    pub source: DatastoreSource,
    pub fetched_at_ms: f64,
}

pub struct ManagerConfig {
    pub network: String,
    pub plmn: String,
    pub proxy: String,
    pub ams: String,
    pub apps: Vec<String>,
    pub plmn_to_network: HashMap<String, String>,
    pub subscription_prefetch: bool,
    pub state_prefetch: bool,
}

/// MEC manager: taps the S1 control plane to bind IMSI to TEID and IP,
/// owns the system-wide subscriber datastore, answers identity lookups, and
/// fires the prefetch triggers right after Initial Context Setup Request.
pub struct Manager {
    id: String,
    cfg: ManagerConfig,
    contexts: Vec<UeContext>,
    pending_imsi: Option<Imsi>,
    datastore: HashMap<Imsi, DatastoreEntry>,
    in_flight: HashSet<Imsi>,
    /// Identity lookups parked until a subscription fetch completes.
    deferred: Vec<(String, Ipv4, Imsi)>,
    /// user -> AMS endpoint that asked to hear about the arrival.
    watches: HashMap<Imsi, String>,
    notified: HashSet<Imsi>,
}

impl Manager {
    pub fn new(id: &str, cfg: ManagerConfig) -> Self {
        Manager {
            id: id.to_string(),
            cfg,
            contexts: Vec::new(),
            pending_imsi: None,
            datastore: HashMap::new(),
            in_flight: HashSet::new(),
            deferred: Vec::new(),
            watches: HashMap::new(),
            notified: HashSet::new(),
        }
    }

    /// Preload a local subscriber's record (the manager reaches its own HSS
    /// without crossing the proxy).
    pub fn preload_local(&mut self, record: SubscriptionRecord) {
        self.datastore.insert(
            record.imsi.clone(),
            DatastoreEntry {
                record,
                source: DatastoreSource::LocalHss,
                fetched_at_ms: 0.0,
            },
        );
    }

    pub fn datastore(&self) -> &HashMap<Imsi, DatastoreEntry> {
        &self.datastore
    }

    pub fn contexts(&self) -> &[UeContext] {
        &self.contexts
    }

    pub fn active_context_by_ip(&self, ip: Ipv4) -> Option<&UeContext> {
        self.contexts.iter().find(|c| c.active && c.ue_ip == ip)
    }

    /// Map a request's source address to the subscriber behind it and its
    /// entitlement. This is the synchronous core of the identity lookup.
    pub fn resolve_identity(&self, ip: Ipv4) -> Result<(Imsi, bool), MecError> {
        let ctx = self.active_context_by_ip(ip).ok_or(MecError::UnknownSourceIp)?;
        let entry = self
            .datastore
            .get(&ctx.imsi)
            .ok_or(MecError::SubscriptionPending)?;
        Ok((ctx.imsi.clone(), entry.record.mec_entitlement))
    }

    fn is_foreign(&self, imsi: &Imsi) -> bool {
        imsi.plmn_prefix() != self.cfg.plmn
    }

    fn home_network(&self, imsi: &Imsi) -> Option<String> {
        self.cfg.plmn_to_network.get(imsi.plmn_prefix()).cloned()
    }

    fn start_subscription_fetch(&mut self, ctx: &mut dyn Ctx, imsi: &Imsi) {
        if self.in_flight.contains(imsi) {
            return; // coalesce concurrent fetches into the in-flight one
        }
        let Some(home) = self.home_network(imsi) else {
            ctx.audit(&format!("no home network for imsi prefix {}", imsi.plmn_prefix()));
            return;
        };
        self.in_flight.insert(imsi.clone());
        ctx.mark("m1_start");
        let msg = Message::Fs3a(Fs3aMessage {
            source_network: self.cfg.network.clone(),
            destination_network: home,
            body: Fs3aBody::SubscriptionFetchReq { imsi: imsi.clone() },
        });
        ctx.send(&self.cfg.proxy, &msg).unwrap();
    }

    fn notify_arrival(&mut self, ctx: &mut dyn Ctx, imsi: &Imsi) {
        if self.notified.contains(imsi) {
            return;
        }
        if let Some(ams) = self.watches.get(imsi).cloned() {
            self.notified.insert(imsi.clone());
            ctx.mark("m3_start");
            let msg = Message::Fs3a(Fs3aMessage {
                source_network: self.cfg.network.clone(),
                destination_network: self.cfg.network.clone(),
                body: Fs3aBody::UeArrivalNotice {
                    user_id: imsi.clone(),
                    platform: self.cfg.network.clone(),
                },
            });
            ctx.send(&ams, &msg).unwrap();
        }
    }

    fn answer_lookup(&self, ctx: &mut dyn Ctx, requester: &str, ip: Ipv4) {
        let (result, imsi, entitled) = match self.resolve_identity(ip) {
            Ok((imsi, entitled)) => (0, imsi, entitled),
            Err(MecError::UnknownSourceIp) => (1, nil_imsi(), false),
            Err(_) => (2, nil_imsi(), false),
        };
        let msg = Message::Ctrl(CtrlMessage::IdentityLookupResp {
            result,
            imsi,
            entitled,
            source_ip: ip,
        });
        ctx.send(requester, &msg).unwrap();
    }

    fn tap_s1(&mut self, ctx: &mut dyn Ctx, msg: &S1Message) {
        match msg {
            S1Message::InitialUeMessage { imsi } => self.pending_imsi = Some(imsi.clone()),
            S1Message::InitialContextSetupRequest { teid, ue_ip } => {
                let Some(imsi) = self.pending_imsi.take() else {
                    ctx.audit("orphan context setup request; ignored");
                    return;
                };
                for c in self.contexts.iter_mut().filter(|c| c.imsi == imsi) {
                    c.active = false;
                }
                self.contexts.push(UeContext {
                    imsi: imsi.clone(),
                    teid: *teid,
                    ue_ip: *ue_ip,
                    home_plmn: imsi.plmn_prefix().to_string(),
                    active: true,
                    attached_at_ms: ctx.now(),
                });
                // Prefetch triggers fire here, straight off the tap, long
                // before the application asks for anything.
                if self.is_foreign(&imsi)
                    && self.cfg.subscription_prefetch
                    && !self.datastore.contains_key(&imsi)
                {
                    self.start_subscription_fetch(ctx, &imsi);
                }
                if self.cfg.state_prefetch {
                    self.notify_arrival(ctx, &imsi);
                }
            }
            S1Message::UeContextRelease { teid, .. } => {
                let mut released = None;
                for c in self.contexts.iter_mut().filter(|c| c.active && c.teid == *teid) {
                    c.active = false;
                    released = Some(c.imsi.clone());
                }
                match released {
                    Some(imsi) => {
                        self.notified.remove(&imsi);
                        for app in self.cfg.apps.clone() {
                            let msg = Message::Ctrl(CtrlMessage::SessionFreeze {
                                user_id: imsi.clone(),
                            });
                            ctx.send(&app, &msg).unwrap();
                        }
                    }
                    None => ctx.audit(&format!("release for unknown teid {teid}")),
                }
            }
            S1Message::ContextModification { teid, new_ip } => {
                match self.contexts.iter_mut().find(|c| c.active && c.teid == *teid) {
                    Some(c) => c.ue_ip = *new_ip,
                    None => ctx.audit(&format!("ip change for unknown teid {teid}")),
                }
            }
            // Authentication legs and the setup response carry nothing the
            // tap needs.
            _ => {}
        }
    }
}

impl Entity for Manager {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::S1(s1) => self.tap_s1(ctx, &s1),
            Message::Ctrl(CtrlMessage::IdentityLookupReq { source_ip, .. }) => {
                match self.resolve_identity(source_ip) {
                    Err(MecError::SubscriptionPending) => {
                        let imsi = self
                            .active_context_by_ip(source_ip)
                            .map(|c| c.imsi.clone())
                            .expect("pending implies an active context");
                        if self.is_foreign(&imsi) {
                            // Fetch on demand; the answer flows once the
                            // subscription lands.
                            self.start_subscription_fetch(ctx, &imsi);
                            self.deferred.push((from.to_string(), source_ip, imsi));
                        } else {
                            // A local subscriber missing from the datastore
                            // is simply unknown.
                            let msg = Message::Ctrl(CtrlMessage::IdentityLookupResp {
                                result: 1,
                                imsi: nil_imsi(),
                                entitled: false,
                                source_ip,
                            });
                            ctx.send(from, &msg).unwrap();
                        }
                    }
                    _ => self.answer_lookup(ctx, from, source_ip),
                }
            }
            Message::Ctrl(CtrlMessage::SessionNotice { user_id, .. }) => {
                self.notify_arrival(ctx, &user_id);
            }
            Message::Fs3a(f) => match f.body {
                Fs3aBody::SubscriptionFetchReq { imsi } => {
                    let resp = match self.datastore.get(&imsi) {
                        Some(e) => Fs3aBody::SubscriptionFetchResp {
                            result: 0,
                            imsi: imsi.clone(),
                            home_plmn: e.record.home_plmn.clone(),
                            mec_entitlement: e.record.mec_entitlement,
                            apn: e.record.apn.clone(),
                            qos: e.record.qos.clone(),
                        },
                        None => Fs3aBody::SubscriptionFetchResp {
                            result: 1,
                            imsi: imsi.clone(),
                            home_plmn: String::new(),
                            mec_entitlement: false,
                            apn: String::new(),
                            qos: String::new(),
                        },
                    };
                    let msg = Message::Fs3a(Fs3aMessage {
                        source_network: self.cfg.network.clone(),
                        destination_network: f.source_network,
                        body: resp,
                    });
                    ctx.send(from, &msg).unwrap();
                }
                Fs3aBody::SubscriptionFetchResp {
                    result,
                    imsi,
                    home_plmn,
                    mec_entitlement,
                    apn,
                    qos,
                } => {
                    self.in_flight.remove(&imsi);
                    if result != 0 {
                        ctx.audit(&format!("subscription fetch failed for {imsi} ({result})"));
                    } else {
                        self.datastore.insert(
                            imsi.clone(),
                            DatastoreEntry {
                                record: SubscriptionRecord {
                                    imsi: imsi.clone(),
                                    home_plmn,
                                    mec_entitlement,
                                    apn,
                                    qos,
                                },
                                source: DatastoreSource::HomeMecViaProxy,
                                fetched_at_ms: ctx.now(),
                            },
                        );
                        ctx.mark("m1_end");
                    }
                    let ready: Vec<_> = {
                        let mut keep = Vec::new();
                        let mut flush = Vec::new();
                        for d in self.deferred.drain(..) {
                            if d.2 == imsi {
                                flush.push(d);
                            } else {
                                keep.push(d);
                            }
                        }
                        self.deferred = keep;
                        flush
                    };
                    for (requester, ip, _) in ready {
                        self.answer_lookup(ctx, &requester, ip);
                    }
                }
                Fs3aBody::WatchRequest { user_id, requester } => {
                    self.watches.insert(user_id, requester);
                }
                other => ctx.audit(&format!("unexpected federation body {other:?}")),
            },
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// Cellular-OIDC auth server
// ---------------------------------------------------------------------------

pub struct AuthServerConfig {
    pub issuer: String,
    /// MEC manager doing identity resolution for the serving network; for a
    /// cloud-placed server this hop crosses the cloud link.
    pub manager: String,
    pub app_keys: HashMap<String, Vec<u8>>,
    pub token_lifetime_ms: u64,
    pub seed: u64,
}

/// Issues tokens after mapping the request's source IP to an IMSI, and
/// introspects presented tokens for app servers. Placement (MEC or cloud)
/// is purely a topology choice.
pub struct AuthServer {
    id: String,
    cfg: AuthServerConfig,
    rng: ChaCha8Rng,
    pending_oidc: HashMap<u32, (String, String)>,
    pending_consent: HashMap<u32, (String, String, Imsi)>,
    pending_checks: HashMap<u32, (String, AccessToken)>,
    issued: Vec<AccessToken>,
}

impl AuthServer {
    pub fn new(id: &str, cfg: AuthServerConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        AuthServer {
            id: id.to_string(),
            cfg,
            rng,
            pending_oidc: HashMap::new(),
            pending_consent: HashMap::new(),
            pending_checks: HashMap::new(),
            issued: Vec::new(),
        }
    }

    pub fn issued(&self) -> &[AccessToken] {
        &self.issued
    }

    /// Structural checks that need no identity lookup: parse, signature
    /// under the audience's key, expiry, audience match.
    pub fn precheck_token(&self, token: &str, app_id: &str, now_ms: u64) -> Result<AccessToken, TokenError> {
        let t = AccessToken::parse(token)?;
        let key = self
            .cfg
            .app_keys
            .get(&t.audience)
            .ok_or(TokenError::BadSignature)?;
        if !t.verify_signature(key) {
            return Err(TokenError::BadSignature);
        }
        if now_ms >= t.expires_at_ms {
            return Err(TokenError::Expired);
        }
        if t.audience != app_id {
            return Err(TokenError::AudienceMismatch);
        }
        Ok(t)
    }

    fn lookup(&self, ctx: &mut dyn Ctx, source_ip: Ipv4, app_id: &str) {
        let msg = Message::Ctrl(CtrlMessage::IdentityLookupReq {
            source_ip,
            app_id: app_id.to_string(),
        });
        ctx.send(&self.cfg.manager.clone(), &msg).unwrap();
    }
}

impl Entity for AuthServer {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::App(AppMessage::OidcAuthRequest { client_id, source_ip, .. }) => {
                self.pending_oidc
                    .insert(source_ip.0, (from.to_string(), client_id.clone()));
                self.lookup(ctx, source_ip, &client_id);
            }
            Message::App(AppMessage::OidcConsent {
                client_id,
                source_ip,
                granted,
            }) => {
                let Some((ue, app_id, imsi)) = self.pending_consent.remove(&source_ip.0) else {
                    ctx.audit("consent with no pending authentication");
                    return;
                };
                if !granted || client_id != app_id {
                    ctx.audit(&format!("authentication rejected: consent withheld by {imsi}"));
                    return;
                }
                let key = self
                    .cfg
                    .app_keys
                    .get(&app_id)
                    .expect("configured app key")
                    .clone();
                let token = AccessToken::issue(
                    &self.cfg.issuer,
                    imsi,
                    &app_id,
                    ctx.now() as u64,
                    self.cfg.token_lifetime_ms,
                    self.rng.gen(),
                    &key,
                );
                self.issued.push(token.clone());
                ctx.mark("token_issued");
                let msg = Message::App(AppMessage::OidcAuthResponse {
                    token: token.encode(),
                });
                ctx.send(&ue, &msg).unwrap();
            }
            Message::Ctrl(CtrlMessage::TokenCheckReq { token, source_ip, app_id }) => {
                match self.precheck_token(&token, &app_id, ctx.now() as u64) {
                    Ok(t) => {
                        self.pending_checks.insert(source_ip.0, (from.to_string(), t));
                        self.lookup(ctx, source_ip, &app_id);
                    }
                    Err(e) => {
                        let result = match e {
                            TokenError::Expired => check::EXPIRED,
                            TokenError::AudienceMismatch => check::AUDIENCE_MISMATCH,
                            _ => check::BAD_SIGNATURE,
                        };
                        ctx.audit(&format!("token rejected: {e}"));
                        let msg = Message::Ctrl(CtrlMessage::TokenCheckResp {
                            result,
                            imsi: nil_imsi(),
                            source_ip,
                        });
                        ctx.send(from, &msg).unwrap();
                    }
                }
            }
            Message::Ctrl(CtrlMessage::IdentityLookupResp {
                result,
                imsi,
                entitled,
                source_ip,
            }) => {
                if let Some((ue, app_id)) = self.pending_oidc.remove(&source_ip.0) {
                    if result != 0 {
                        ctx.audit("authentication rejected: unknown source ip");
                        return;
                    }
                    if !entitled {
                        ctx.audit(&format!("authentication rejected: {imsi} not entitled"));
                        return;
                    }
                    // The identity is resolved; the user must still consent
                    // to releasing it before a token is issued.
                    self.pending_consent
                        .insert(source_ip.0, (ue.clone(), app_id.clone(), imsi));
                    let msg = Message::App(AppMessage::OidcConsentRequest {
                        client_id: app_id,
                        scope: "openid state".to_string(),
                    });
                    ctx.send(&ue, &msg).unwrap();
                } else if let Some((app, token)) = self.pending_checks.remove(&source_ip.0) {
                    let (result, subject) = if result != 0 {
                        (check::UNKNOWN_SOURCE_IP, nil_imsi())
                    } else if token.subject != imsi {
                        (check::SUBJECT_IP_MISMATCH, nil_imsi())
                    } else if !entitled {
                        (check::NOT_ENTITLED, nil_imsi())
                    } else {
                        (check::OK, token.subject.clone())
                    };
                    if result != check::OK {
                        ctx.audit(&format!("token introspection failed ({result})"));
                    }
                    let msg = Message::Ctrl(CtrlMessage::TokenCheckResp {
                        result,
                        imsi: subject,
                        source_ip,
                    });
                    ctx.send(&app, &msg).unwrap();
                } else {
                    ctx.audit("identity lookup response with no pending request");
                }
            }
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// Application server
// ---------------------------------------------------------------------------

/// Versioned opaque session state.
#[derive(Debug, Clone, PartialEq)]
pub struct AppState {
    pub version: u64,
    pub blob: Vec<u8>,
    pub updated_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateBackend {
    /// State moves through the federation (AMS/AMC/proxy).
    Federation,
    /// State is uploaded to and fetched from a cloud store.
    Cloud { store: String },
}

pub struct AppServerConfig {
    pub network: String,
    pub app_id: String,
    pub authsrv: String,
    pub manager: String,
    pub ams: String,
    pub state_backend: StateBackend,
    pub chunk_size: usize,
}

/// One MEC application: authenticates sessions through the auth server,
/// keeps per-user versioned state, serves state to fetchers and resumes
/// sessions once state is in place.
pub struct AppServer {
    id: String,
    cfg: AppServerConfig,
    session_next: u64,
    sessions: HashMap<Imsi, u64>,
    session_user: HashMap<u64, Imsi>,
    states: HashMap<Imsi, AppState>,
    pending_logins: HashMap<u32, String>,
    pending_resume: HashMap<Imsi, (String, u64)>,
}

impl AppServer {
    pub fn new(id: &str, cfg: AppServerConfig) -> Self {
        AppServer {
            id: id.to_string(),
            cfg,
            session_next: 1,
            sessions: HashMap::new(),
            session_user: HashMap::new(),
            states: HashMap::new(),
            pending_logins: HashMap::new(),
            pending_resume: HashMap::new(),
        }
    }

    pub fn state_of(&self, user: &Imsi) -> Option<&AppState> {
        self.states.get(user)
    }

    pub fn session_of(&self, user: &Imsi) -> Option<u64> {
        self.sessions.get(user).copied()
    }

    /// Overwrite a user's state. Versions only ever go up.
    pub fn update_state(&mut self, user: &Imsi, blob: Vec<u8>, now_ms: f64) -> Result<u64, MecError> {
        if !self.sessions.contains_key(user) {
            return Err(MecError::NoSession);
        }
        let version = self.states.get(user).map_or(1, |s| s.version + 1);
        self.states.insert(
            user.clone(),
            AppState {
                version,
                blob,
                updated_at_ms: now_ms,
            },
        );
        Ok(version)
    }

    fn serve_fetch(&mut self, ctx: &mut dyn Ctx, reply_to: &str, dest_network: String, user: Imsi, streamed: bool) {
        let body = match self.states.get(&user) {
            None => Fs3aBody::StateFetchResp {
                user_id: user,
                app_id: self.cfg.app_id.clone(),
                version: 0,
                total_len: 0,
                data: Vec::new(),
                streamed: false,
            },
            Some(s) => {
                ctx.mark("m2_resp_start");
                if streamed {
                    Fs3aBody::StateFetchResp {
                        user_id: user,
                        app_id: self.cfg.app_id.clone(),
                        version: s.version,
                        total_len: s.blob.len() as u64,
                        data: s.blob.clone(),
                        streamed: true,
                    }
                } else {
                    let end = self.cfg.chunk_size.min(s.blob.len());
                    Fs3aBody::StateFetchResp {
                        user_id: user,
                        app_id: self.cfg.app_id.clone(),
                        version: s.version,
                        total_len: s.blob.len() as u64,
                        data: s.blob[..end].to_vec(),
                        streamed: false,
                    }
                }
            }
        };
        let msg = Message::Fs3a(Fs3aMessage {
            source_network: self.cfg.network.clone(),
            destination_network: dest_network,
            body,
        });
        ctx.send(reply_to, &msg).unwrap();
    }
}

impl Entity for AppServer {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_command(&mut self, ctx: &mut dyn Ctx, cmd: Command) {
        match cmd {
            Command::UpdateState { user_id, blob } => {
                match self.update_state(&user_id, blob.clone(), ctx.now()) {
                    Ok(version) => {
                        if let StateBackend::Cloud { store } = &self.cfg.state_backend {
                            let msg = Message::Ctrl(CtrlMessage::StateStore {
                                user_id,
                                app_id: self.cfg.app_id.clone(),
                                version,
                                total_len: blob.len() as u64,
                                data: blob,
                            });
                            ctx.send(&store.clone(), &msg).unwrap();
                        }
                    }
                    Err(e) => ctx.audit(&format!("state update rejected: {e}")),
                }
            }
            Command::Advertise { user_id } => {
                if !self.sessions.contains_key(&user_id) {
                    ctx.audit("advertise without an active session");
                    return;
                }
                if self.cfg.state_backend == StateBackend::Federation {
                    let msg = Message::Ctrl(CtrlMessage::AmsRegister {
                        user_id,
                        app_id: self.cfg.app_id.clone(),
                    });
                    ctx.send(&self.cfg.ams.clone(), &msg).unwrap();
                }
            }
            other => ctx.audit(&format!("unsupported command {other:?}")),
        }
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::App(AppMessage::TokenPresent { token, source_ip }) => {
                self.pending_logins.insert(source_ip.0, from.to_string());
                let msg = Message::Ctrl(CtrlMessage::TokenCheckReq {
                    token,
                    source_ip,
                    app_id: self.cfg.app_id.clone(),
                });
                ctx.send(&self.cfg.authsrv.clone(), &msg).unwrap();
            }
            Message::Ctrl(CtrlMessage::TokenCheckResp { result, imsi, source_ip }) => {
                let Some(ue) = self.pending_logins.remove(&source_ip.0) else {
                    ctx.audit("token check response with no pending login");
                    return;
                };
                if result != check::OK {
                    ctx.audit(&format!("login rejected ({result})"));
                    return;
                }
                let session_id = self.session_next;
                self.session_next += 1;
                self.sessions.insert(imsi.clone(), session_id);
                self.session_user.insert(session_id, imsi.clone());
                ctx.mark("u3_start");
                ctx.send(&ue, &Message::App(AppMessage::LoginOk { session_id }))
                    .unwrap();
                let notice = Message::Ctrl(CtrlMessage::SessionNotice {
                    user_id: imsi,
                    app_id: self.cfg.app_id.clone(),
                });
                ctx.send(&self.cfg.manager.clone(), &notice).unwrap();
            }
            Message::App(AppMessage::Resume { session_id }) => {
                ctx.mark("state_demand");
                let Some(user) = self.session_user.get(&session_id).cloned() else {
                    ctx.audit(&format!("resume for unknown session {session_id}"));
                    return;
                };
                if self.states.contains_key(&user) {
                    ctx.send(&from.to_string(), &Message::App(AppMessage::Data {
                        payload: vec![b'd'; 64],
                    }))
                    .unwrap();
                } else {
                    // Ask the mobility service; the reply arrives once any
                    // in-flight transfer lands (or immediately if there is
                    // nothing to restore).
                    self.pending_resume.insert(user.clone(), (from.to_string(), session_id));
                    let msg = Message::Fs3a(Fs3aMessage {
                        source_network: self.cfg.network.clone(),
                        destination_network: self.cfg.network.clone(),
                        body: Fs3aBody::StateFetchReq {
                            user_id: user,
                            app_id: self.cfg.app_id.clone(),
                            streamed: false,
                        },
                    });
                    ctx.send(&self.cfg.ams.clone(), &msg).unwrap();
                }
            }
            Message::Ctrl(CtrlMessage::SessionFreeze { user_id }) => {
                if let Some(sid) = self.sessions.remove(&user_id) {
                    self.session_user.remove(&sid);
                }
            }
            Message::Ctrl(CtrlMessage::AmsRegisterAck { .. })
            | Message::Ctrl(CtrlMessage::StateStoreAck { .. }) => {}
            Message::Fs3a(f) => {
                let dest = f.destination_network.clone();
                match f.body {
                    // Serve our state to a fetcher (the request's source
                    // network is where the answer goes).
                    Fs3aBody::StateFetchReq { user_id, streamed, .. } => {
                        self.serve_fetch(ctx, from, f.source_network, user_id, streamed);
                    }
                    Fs3aBody::StateChunkReq { user_id, offset, .. } => {
                        let Some(s) = self.states.get(&user_id) else {
                            ctx.audit("chunk request for missing state");
                            return;
                        };
                        let off = offset as usize;
                        let end = (off + self.cfg.chunk_size).min(s.blob.len());
                        let msg = Message::Fs3a(Fs3aMessage {
                            source_network: self.cfg.network.clone(),
                            destination_network: f.source_network,
                            body: Fs3aBody::StateChunkResp {
                                user_id,
                                app_id: self.cfg.app_id.clone(),
                                offset,
                                total_len: s.blob.len() as u64,
                                data: s.blob[off..end].to_vec(),
                            },
                        });
                        ctx.send(from, &msg).unwrap();
                    }
                    // Delivery from our own AMS (handover step 10).
                    Fs3aBody::StateFetchResp { user_id, version, data, .. } => {
                        debug_assert_eq!(dest, self.cfg.network);
                        if version > 0 {
                            let newer = self.states.get(&user_id).map_or(true, |s| version > s.version);
                            if newer {
                                self.states.insert(
                                    user_id.clone(),
                                    AppState {
                                        version,
                                        blob: data,
                                        updated_at_ms: ctx.now(),
                                    },
                                );
                            }
                            ctx.mark("m2_end");
                        }
                        if let Some((ue, _)) = self.pending_resume.remove(&user_id) {
                            ctx.send(&ue, &Message::App(AppMessage::Data {
                                payload: vec![b'd'; 64],
                            }))
                            .unwrap();
                        }
                    }
                    other => ctx.audit(&format!("unexpected federation body {other:?}")),
                }
            }
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// AMS — host-level application mobility service
// ---------------------------------------------------------------------------

/// A neighbour platform's interest in one (user, app) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityWatch {
    pub source_network: String,
    pub source_platform: String,
    pub created_at_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateSource {
    Federation,
    Cloud { store: String },
}

pub struct AmsConfig {
    pub network: String,
    pub amc: String,
    pub manager: String,
    /// app_id -> app server endpoint on this platform.
    pub apps: HashMap<String, String>,
    pub state_prefetch: bool,
    pub state_source: StateSource,
    pub watch_ttl_ms: f64,
}

struct FetchProgress {
    buf: Vec<u8>,
    version: u64,
    source_network: String,
}

/// Host-level mobility service: installs watches advertised by neighbours,
/// fetches state when a watched UE arrives (pull or prefetch-push), serves
/// fetches for its own platform's apps, and hands delivered blobs to apps.
pub struct Ams {
    id: String,
    cfg: AmsConfig,
    watches: HashMap<(Imsi, String), MobilityWatch>,
    fetches: HashMap<(Imsi, String), FetchProgress>,
}

impl Ams {
    pub fn new(id: &str, cfg: AmsConfig) -> Self {
        Ams {
            id: id.to_string(),
            cfg,
            watches: HashMap::new(),
            fetches: HashMap::new(),
        }
    }

    pub fn watches(&self) -> &HashMap<(Imsi, String), MobilityWatch> {
        &self.watches
    }

    fn start_fetch(&mut self, ctx: &mut dyn Ctx, user: Imsi, app: String, source_network: String) {
        ctx.mark("m2_start");
        self.fetches.insert(
            (user.clone(), app.clone()),
            FetchProgress {
                buf: Vec::new(),
                version: 0,
                source_network: source_network.clone(),
            },
        );
        let (target, streamed, dest) = match &self.cfg.state_source {
            StateSource::Cloud { store } => (store.clone(), false, "cloud".to_string()),
            // A prefetch push is pipelined; an on-demand pull is chunked.
            StateSource::Federation => {
                (self.cfg.amc.clone(), self.cfg.state_prefetch, source_network)
            }
        };
        let msg = Message::Fs3a(Fs3aMessage {
            source_network: self.cfg.network.clone(),
            destination_network: dest,
            body: Fs3aBody::StateFetchReq {
                user_id: user,
                app_id: app,
                streamed,
            },
        });
        ctx.send(&target, &msg).unwrap();
    }

    fn deliver(&mut self, ctx: &mut dyn Ctx, user: Imsi, app: String, version: u64, blob: Vec<u8>) {
        self.fetches.remove(&(user.clone(), app.clone()));
        let Some(app_ep) = self.cfg.apps.get(&app).cloned() else {
            ctx.audit(&format!("no app endpoint for {app}"));
            return;
        };
        let total = blob.len() as u64;
        let msg = Message::Fs3a(Fs3aMessage {
            source_network: self.cfg.network.clone(),
            destination_network: self.cfg.network.clone(),
            body: Fs3aBody::StateFetchResp {
                user_id: user,
                app_id: app,
                version,
                total_len: total,
                data: blob,
                streamed: false,
            },
        });
        // Local handoff: the blob is already on this platform, the app
        // receives it by reference rather than over a serialized copy.
        ctx.send_streamed(&app_ep, &msg).unwrap();
    }

    fn continue_pull(&mut self, ctx: &mut dyn Ctx, user: Imsi, app: String, total_len: u64) {
        let p = &self.fetches[&(user.clone(), app.clone())];
        let (target, dest) = match &self.cfg.state_source {
            StateSource::Cloud { store } => (store.clone(), "cloud".to_string()),
            StateSource::Federation => (self.cfg.amc.clone(), p.source_network.clone()),
        };
        if (p.buf.len() as u64) < total_len {
            let msg = Message::Fs3a(Fs3aMessage {
                source_network: self.cfg.network.clone(),
                destination_network: dest,
                body: Fs3aBody::StateChunkReq {
                    user_id: user,
                    app_id: app,
                    offset: p.buf.len() as u64,
                },
            });
            ctx.send(&target, &msg).unwrap();
        } else {
            let p = self.fetches.remove(&(user.clone(), app.clone())).unwrap();
            self.fetches.insert((user.clone(), app.clone()), FetchProgress {
                buf: Vec::new(),
                version: p.version,
                source_network: p.source_network.clone(),
            });
            self.deliver(ctx, user, app, p.version, p.buf);
        }
    }
}

impl Entity for Ams {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            // Source side, setup step 2: the app registers its user.
            Message::Ctrl(CtrlMessage::AmsRegister { user_id, app_id }) => {
                ctx.send(from, &Message::Ctrl(CtrlMessage::AmsRegisterAck {
                    user_id: user_id.clone(),
                    app_id: app_id.clone(),
                }))
                .unwrap();
                let msg = Message::Fs3a(Fs3aMessage {
                    source_network: self.cfg.network.clone(),
                    destination_network: self.cfg.network.clone(),
                    body: Fs3aBody::MobilityAdvertise {
                        user_id,
                        app_id,
                        source_network: self.cfg.network.clone(),
                        source_platform: self.cfg.network.clone(),
                    },
                });
                ctx.send(&self.cfg.amc.clone(), &msg).unwrap();
            }
            Message::Fs3a(f) => {
                let inbound_from_app = self.cfg.apps.values().any(|a| a == from);
                match f.body {
                    // Target side, setup step 5: install the watch and file
                    // it with the MEC manager.
                    Fs3aBody::MobilityAdvertise {
                        user_id,
                        app_id,
                        source_network,
                        source_platform,
                    } => {
                        self.watches.insert(
                            (user_id.clone(), app_id.clone()),
                            MobilityWatch {
                                source_network,
                                source_platform,
                                created_at_ms: ctx.now(),
                            },
                        );
                        let msg = Message::Fs3a(Fs3aMessage {
                            source_network: self.cfg.network.clone(),
                            destination_network: self.cfg.network.clone(),
                            body: Fs3aBody::WatchRequest {
                                user_id,
                                requester: self.id.clone(),
                            },
                        });
                        ctx.send(&self.cfg.manager.clone(), &msg).unwrap();
                    }
                    // Handover step 7: the manager saw the watched UE.
                    Fs3aBody::UeArrivalNotice { user_id, .. } => {
                        ctx.mark("m3_end");
                        let hits: Vec<_> = self
                            .watches
                            .keys()
                            .filter(|(u, _)| u == &user_id)
                            .cloned()
                            .collect();
                        if hits.is_empty() {
                            ctx.audit(&format!("arrival notice without watch for {user_id}"));
                        }
                        for (user, app) in hits {
                            let w = self.watches.remove(&(user.clone(), app.clone())).unwrap();
                            // Watches age out lazily: an arrival past the
                            // advertisement's TTL no longer triggers a fetch.
                            if ctx.now() - w.created_at_ms > self.cfg.watch_ttl_ms {
                                ctx.audit(&format!("watch expired for {user}/{app}"));
                                continue;
                            }
                            self.start_fetch(ctx, user, app, w.source_network);
                        }
                    }
                    Fs3aBody::StateFetchReq { user_id, app_id, streamed } => {
                        if inbound_from_app {
                            // The app asked at resume time. If a transfer is
                            // already in flight the delivery will follow; in
                            // cloud mode this is the fetch trigger; otherwise
                            // there is nothing to restore.
                            let key = (user_id.clone(), app_id.clone());
                            if self.fetches.contains_key(&key) {
                                return;
                            }
                            if let StateSource::Cloud { .. } = self.cfg.state_source {
                                self.start_fetch(ctx, user_id, app_id, "cloud".into());
                            } else {
                                self.deliver(ctx, user_id, app_id, 0, Vec::new());
                            }
                        } else {
                            // Handover step 8, source side: route the fetch
                            // to the app's state interface.
                            match self.cfg.apps.get(&app_id).cloned() {
                                Some(app_ep) => {
                                    let fwd = Message::Fs3a(Fs3aMessage {
                                        source_network: f.source_network,
                                        destination_network: f.destination_network,
                                        body: Fs3aBody::StateFetchReq {
                                            user_id,
                                            app_id,
                                            streamed,
                                        },
                                    });
                                    ctx.send(&app_ep, &fwd).unwrap();
                                }
                                None => ctx.audit(&format!("fetch for unknown app {app_id}")),
                            }
                        }
                    }
                    Fs3aBody::StateFetchResp {
                        user_id,
                        app_id,
                        version,
                        total_len,
                        data,
                        streamed,
                    } => {
                        if f.destination_network != self.cfg.network {
                            // Source side: our app answers a foreign fetch;
                            // relay outwards through the AMC.
                            let out = Message::Fs3a(Fs3aMessage {
                                source_network: f.source_network,
                                destination_network: f.destination_network,
                                body: Fs3aBody::StateFetchResp {
                                    user_id,
                                    app_id,
                                    version,
                                    total_len,
                                    data,
                                    streamed,
                                },
                            });
                            if streamed {
                                ctx.send_streamed(&self.cfg.amc.clone(), &out).unwrap();
                            } else {
                                ctx.send(&self.cfg.amc.clone(), &out).unwrap();
                            }
                            return;
                        }
                        // Target side: first slice (or whole stream) of an
                        // in-flight fetch.
                        let key = (user_id.clone(), app_id.clone());
                        let Some(p) = self.fetches.get_mut(&key) else {
                            ctx.audit(&format!("state response without fetch for {user_id}"));
                            return;
                        };
                        p.version = version;
                        if streamed || version == 0 {
                            let p = self.fetches.remove(&key).unwrap();
                            drop(p);
                            self.fetches.remove(&key);
                            self.deliver(ctx, user_id, app_id, version, data);
                        } else {
                            p.buf.extend_from_slice(&data);
                            self.continue_pull(ctx, user_id, app_id, total_len);
                        }
                    }
                    Fs3aBody::StateChunkReq { user_id, app_id, offset } => {
                        // Source side: paginated pull passing through.
                        match self.cfg.apps.get(&app_id).cloned() {
                            Some(app_ep) => {
                                let fwd = Message::Fs3a(Fs3aMessage {
                                    source_network: f.source_network,
                                    destination_network: f.destination_network,
                                    body: Fs3aBody::StateChunkReq {
                                        user_id,
                                        app_id,
                                        offset,
                                    },
                                });
                                ctx.send(&app_ep, &fwd).unwrap();
                            }
                            None => ctx.audit(&format!("chunk for unknown app {app_id}")),
                        }
                    }
                    Fs3aBody::StateChunkResp {
                        user_id,
                        app_id,
                        offset,
                        total_len,
                        data,
                    } => {
                        if f.destination_network != self.cfg.network {
                            let out = Message::Fs3a(Fs3aMessage {
                                source_network: f.source_network,
                                destination_network: f.destination_network,
                                body: Fs3aBody::StateChunkResp {
                                    user_id,
                                    app_id,
                                    offset,
                                    total_len,
                                    data,
                                },
                            });
                            ctx.send(&self.cfg.amc.clone(), &out).unwrap();
                            return;
                        }
                        let key = (user_id.clone(), app_id.clone());
                        let Some(p) = self.fetches.get_mut(&key) else {
                            ctx.audit(&format!("chunk response without fetch for {user_id}"));
                            return;
                        };
                        p.buf.extend_from_slice(&data);
                        self.continue_pull(ctx, user_id, app_id, total_len);
                    }
                    other => ctx.audit(&format!("unexpected federation body {other:?}")),
                }
            }
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// AMC — system-level application mobility coordinator
// ---------------------------------------------------------------------------

pub struct AmcConfig {
    pub network: String,
    pub ams: String,
    pub proxy: String,
    /// Neighbouring platform networks to advertise towards.
    pub neighbors: Vec<String>,
}

/// System-level coordinator: fans mobility advertisements out to neighbour
/// platforms (crossing the proxy for foreign ones) and shuttles federation
/// state traffic between the local AMS and the proxy.
pub struct Amc {
    id: String,
    cfg: AmcConfig,
}

impl Amc {
    pub fn new(id: &str, cfg: AmcConfig) -> Self {
        Amc { id: id.to_string(), cfg }
    }

    fn forward(&self, ctx: &mut dyn Ctx, target: &str, msg: &Message, streamed: bool) {
        if streamed {
            ctx.send_streamed(target, msg).unwrap();
        } else {
            ctx.send(target, msg).unwrap();
        }
    }
}

impl Entity for Amc {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        let Message::Fs3a(f) = &msg else {
            ctx.audit(&format!("unexpected message 0x{:02x}", msg.msg_type()));
            return;
        };
        let streamed = matches!(f.body, Fs3aBody::StateFetchResp { streamed: true, .. });
        if from == self.cfg.ams {
            if let Fs3aBody::MobilityAdvertise { .. } = &f.body {
                // Setup step 4: advertise to every neighbour platform.
                if self.cfg.neighbors.is_empty() {
                    ctx.audit("no neighbour platforms configured");
                    return;
                }
                for n in self.cfg.neighbors.clone() {
                    if n == self.cfg.network {
                        continue;
                    }
                    let out = Message::Fs3a(Fs3aMessage {
                        source_network: self.cfg.network.clone(),
                        destination_network: n,
                        body: f.body.clone(),
                    });
                    ctx.send(&self.cfg.proxy.clone(), &out).unwrap();
                }
                return;
            }
            if f.destination_network == self.cfg.network {
                ctx.audit("local federation frame looped to coordinator");
                return;
            }
            self.forward(ctx, &self.cfg.proxy.clone(), &msg, streamed);
        } else {
            // Inbound from the proxy: everything lands at the AMS.
            self.forward(ctx, &self.cfg.ams.clone(), &msg, streamed);
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// Cloud state store
// ---------------------------------------------------------------------------

/// Cloud-hosted state storage for the no-federation baseline: apps upload
/// on every change, the target AMS pulls over the cloud link in chunks.
pub struct CloudState {
    id: String,
    chunk_size: usize,
    states: HashMap<(Imsi, String), AppState>,
}

impl CloudState {
    pub fn new(id: &str, chunk_size: usize) -> Self {
        CloudState {
            id: id.to_string(),
            chunk_size,
            states: HashMap::new(),
        }
    }

    pub fn state_of(&self, user: &Imsi, app: &str) -> Option<&AppState> {
        self.states.get(&(user.clone(), app.to_string()))
    }
}

impl Entity for CloudState {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::Ctrl(CtrlMessage::StateStore {
                user_id,
                app_id,
                version,
                data,
                ..
            }) => {
                let key = (user_id.clone(), app_id.clone());
                let newer = self.states.get(&key).map_or(true, |s| version > s.version);
                if newer {
                    self.states.insert(key, AppState {
                        version,
                        blob: data,
                        updated_at_ms: ctx.now(),
                    });
                }
                ctx.send(from, &Message::Ctrl(CtrlMessage::StateStoreAck { user_id, app_id }))
                    .unwrap();
            }
            Message::Fs3a(f) => match f.body {
                Fs3aBody::StateFetchReq { user_id, app_id, streamed } => {
                    let key = (user_id.clone(), app_id.clone());
                    let body = match self.states.get(&key) {
                        None => Fs3aBody::StateFetchResp {
                            user_id,
                            app_id,
                            version: 0,
                            total_len: 0,
                            data: Vec::new(),
                            streamed: false,
                        },
                        Some(s) => {
                            ctx.mark("m2_resp_start");
                            let end = if streamed {
                                s.blob.len()
                            } else {
                                self.chunk_size.min(s.blob.len())
                            };
                            Fs3aBody::StateFetchResp {
                                user_id,
                                app_id,
                                version: s.version,
                                total_len: s.blob.len() as u64,
                                data: s.blob[..end].to_vec(),
                                streamed,
                            }
                        }
                    };
                    let out = Message::Fs3a(Fs3aMessage {
                        source_network: "cloud".into(),
                        destination_network: f.source_network,
                        body,
                    });
                    ctx.send(from, &out).unwrap();
                }
                Fs3aBody::StateChunkReq { user_id, app_id, offset } => {
                    let key = (user_id.clone(), app_id.clone());
                    let Some(s) = self.states.get(&key) else {
                        ctx.audit("chunk request for missing state");
                        return;
                    };
                    let off = offset as usize;
                    let end = (off + self.chunk_size).min(s.blob.len());
                    let out = Message::Fs3a(Fs3aMessage {
                        source_network: "cloud".into(),
                        destination_network: f.source_network,
                        body: Fs3aBody::StateChunkResp {
                            user_id,
                            app_id,
                            offset,
                            total_len: s.blob.len() as u64,
                            data: s.blob[off..end].to_vec(),
                        },
                    });
                    ctx.send(from, &out).unwrap();
                }
                other => ctx.audit(&format!("unexpected federation body {other:?}")),
            },
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn token_key() -> Vec<u8> {
        b"per-app federation key".to_vec()
    }

    fn sample_token(now: u64) -> AccessToken {
        AccessToken::issue(
            "A",
            Imsi::new("001010000000001").unwrap(),
            "game",
            now,
            300_000,
            [7; 16],
            &token_key(),
        )
    }

    #[test]
    fn token_roundtrip_and_signature() {
        let t = sample_token(1000);
        let parsed = AccessToken::parse(&t.encode()).unwrap();
        assert_eq!(parsed, t);
        assert!(parsed.verify_signature(&token_key()));
    }

    #[test]
    fn tampered_token_fails_verification() {
        let t = sample_token(1000);
        let mut s = t.encode();
        // Flip one signature bit (last hex digit).
        let last = s.pop().unwrap();
        s.push(if last == '0' { '1' } else { '0' });
        let parsed = AccessToken::parse(&s).unwrap();
        assert!(!parsed.verify_signature(&token_key()));

        // Tampering with a covered field also breaks the signature.
        let mut t2 = t.clone();
        t2.subject = Imsi::new("001010000000002").unwrap();
        assert!(!t2.verify_signature(&token_key()));
    }

    #[test]
    fn precheck_distinguishes_failure_modes() {
        let authsrv = AuthServer::new(
            "A:auth",
            AuthServerConfig {
                issuer: "A".into(),
                manager: "A:mgr".into(),
                app_keys: [("game".to_string(), token_key())].into(),
                token_lifetime_ms: 300_000,
                seed: 1,
            },
        );
        let t = sample_token(1000);
        let enc = t.encode();
        assert!(authsrv.precheck_token(&enc, "game", 2000).is_ok());
        assert_eq!(
            authsrv.precheck_token(&enc, "game", 1000 + 300_000),
            Err(TokenError::Expired)
        );
        // A token claiming an audience we hold no key for cannot verify.
        let foreign = AccessToken::issue(
            "A",
            Imsi::new("001010000000001").unwrap(),
            "chess",
            1000,
            300_000,
            [7; 16],
            &token_key(),
        );
        assert_eq!(
            authsrv.precheck_token(&foreign.encode(), "chess", 2000),
            Err(TokenError::BadSignature)
        );
        assert_eq!(
            authsrv.precheck_token("v1|garbage", "game", 2000),
            Err(TokenError::Malformed)
        );
    }

    #[test]
    fn audience_mismatch_detected_with_shared_key() {
        // Two apps that happen to share a key: the audience check still
        // refuses cross-app presentation.
        let authsrv = AuthServer::new(
            "A:auth",
            AuthServerConfig {
                issuer: "A".into(),
                manager: "A:mgr".into(),
                app_keys: [
                    ("game".to_string(), token_key()),
                    ("chess".to_string(), token_key()),
                ]
                .into(),
                token_lifetime_ms: 300_000,
                seed: 1,
            },
        );
        let t = sample_token(1000);
        assert_eq!(
            authsrv.precheck_token(&t.encode(), "chess", 2000),
            Err(TokenError::AudienceMismatch)
        );
    }

    #[test]
    fn update_state_requires_session_and_increments_version() {
        let mut app = AppServer::new(
            "A:app:game",
            AppServerConfig {
                network: "A".into(),
                app_id: "game".into(),
                authsrv: "A:auth".into(),
                manager: "A:mgr".into(),
                ams: "A:ams".into(),
                state_backend: StateBackend::Federation,
                chunk_size: 1024,
            },
        );
        let user = Imsi::new("001010000000001").unwrap();
        assert_eq!(app.update_state(&user, vec![1], 0.0), Err(MecError::NoSession));
        app.sessions.insert(user.clone(), 1);
        assert_eq!(app.update_state(&user, vec![1], 1.0), Ok(1));
        assert_eq!(app.update_state(&user, Vec::new(), 2.0), Ok(2)); // empty blob is legal
        assert_eq!(app.state_of(&user).unwrap().version, 2);
    }

    #[test]
    fn manager_resolves_identity_by_ip() {
        let mut mgr = Manager::new(
            "A:mgr",
            ManagerConfig {
                network: "A".into(),
                plmn: "00101".into(),
                proxy: "A:proxy".into(),
                ams: "A:ams".into(),
                apps: vec![],
                plmn_to_network: [("00101".to_string(), "A".to_string())].into(),
                subscription_prefetch: false,
                state_prefetch: false,
            },
        );
        let imsi = Imsi::new("001010000000001").unwrap();
        let ip = Ipv4(0x0a000001);
        assert_eq!(mgr.resolve_identity(ip), Err(MecError::UnknownSourceIp));
        mgr.contexts.push(UeContext {
            imsi: imsi.clone(),
            teid: 7,
            ue_ip: ip,
            home_plmn: "00101".into(),
            active: true,
            attached_at_ms: 0.0,
        });
        assert_eq!(mgr.resolve_identity(ip), Err(MecError::SubscriptionPending));
        mgr.preload_local(SubscriptionRecord {
            imsi: imsi.clone(),
            home_plmn: "00101".into(),
            mec_entitlement: true,
            apn: "internet".into(),
            qos: "default".into(),
        });
        assert_eq!(mgr.resolve_identity(ip), Ok((imsi, true)));
    }
}
