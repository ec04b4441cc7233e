//! Minimal LTE control plane: UE, eNB, MME and HSS entities per network,
//! implementing an EPS-AKA style attach with mutual authentication. In the
//! roaming case the visited MME reaches the home HSS through the federation
//! proxy; the S1 leg between eNB and MME is identical either way, and every
//! S1 message is mirrored to the serving network's MEC manager tap.

use std::any::Any;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::crypto::{derive_autn, derive_res, tags_equal};
use crate::netsim::{Command, Ctx, Entity};
use crate::wire::{AppMessage, Imsi, Ipv4, Message, S1Message, S6aMessage};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CellularError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(Imsi),
    #[error("network authentication failure: {0}")]
    NetworkAuthFailure(String),
    #[error("challenge response mismatch")]
    ResFailure,
    #[error("not attached")]
    NotAttached,
}

/// One authentication vector, as produced by the home HSS.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthVector {
    pub rand: [u8; 16],
    pub xres: [u8; 8],
    pub autn: [u8; 16],
    pub sqn: u64,
}

/// Subscription data served by the HSS and cached by MEC datastores.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriptionRecord {
    pub imsi: Imsi,
    pub home_plmn: String,
    pub mec_entitlement: bool,
    pub apn: String,
    pub qos: String,
}

/// Verify a network challenge and compute the response. The subscriber
/// accepts only challenges whose `autn` verifies under its key and whose
/// sequence number is strictly fresher than anything seen before (replay
/// defense).
pub fn ue_answer_challenge(
    k: &[u8],
    last_sqn: u64,
    rand: &[u8; 16],
    autn: &[u8; 16],
    sqn: u64,
) -> Result<[u8; 8], CellularError> {
    let expected = derive_autn(k, rand, sqn);
    if !tags_equal(&expected, autn) {
        return Err(CellularError::NetworkAuthFailure("autn does not verify".into()));
    }
    if sqn <= last_sqn {
        return Err(CellularError::NetworkAuthFailure("stale sequence number".into()));
    }
    Ok(derive_res(k, rand))
}

// ---------------------------------------------------------------------------
// HSS
// ---------------------------------------------------------------------------

struct HssSubscriber {
    k: [u8; 32],
    sqn: u64,
    sub: SubscriptionRecord,
}

/// Home subscriber database: holds permanent keys and subscription records,
/// answers AIR/ULR (directly for local MMEs, through the proxy for visited
/// ones — it cannot tell the difference).
pub struct Hss {
    id: String,
    subscribers: HashMap<Imsi, HssSubscriber>,
    rng: ChaCha8Rng,
}

impl Hss {
    pub fn new(id: &str, seed: u64) -> Self {
        Hss {
            id: id.to_string(),
            subscribers: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn provision(&mut self, imsi: Imsi, k: [u8; 32], sub: SubscriptionRecord) {
        self.subscribers.insert(imsi, HssSubscriber { k, sqn: 0, sub });
    }

    /// Generate `count` fresh vectors, advancing the stored sequence number.
    pub fn generate_vectors(
        &mut self,
        imsi: &Imsi,
        count: usize,
    ) -> Result<Vec<AuthVector>, CellularError> {
        let s = self
            .subscribers
            .get_mut(imsi)
            .ok_or_else(|| CellularError::UnknownSubscriber(imsi.clone()))?;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            s.sqn += 1;
            let rand: [u8; 16] = self.rng.gen();
            out.push(AuthVector {
                rand,
                xres: derive_res(&s.k, &rand),
                autn: derive_autn(&s.k, &rand, s.sqn),
                sqn: s.sqn,
            });
        }
        Ok(out)
    }

    pub fn subscription(&self, imsi: &Imsi) -> Option<&SubscriptionRecord> {
        self.subscribers.get(imsi).map(|s| &s.sub)
    }
}

impl Entity for Hss {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::S6a(S6aMessage::Air { imsi, .. }) => match self.generate_vectors(&imsi, 1) {
                Ok(mut v) => {
                    let v = v.pop().unwrap();
                    let aia = S6aMessage::Aia {
                        rand: v.rand,
                        xres: v.xres,
                        autn: v.autn,
                        sqn: v.sqn,
                    };
                    ctx.send(from, &Message::S6a(aia)).unwrap();
                }
                Err(e) => ctx.audit(&format!("AIR rejected: {e}")),
            },
            Message::S6a(S6aMessage::Ulr { imsi, .. }) => {
                let ula = match self.subscribers.get(&imsi) {
                    Some(s) => S6aMessage::Ula {
                        result: 0,
                        imsi: imsi.clone(),
                        home_plmn: s.sub.home_plmn.clone(),
                        mec_entitlement: s.sub.mec_entitlement,
                        apn: s.sub.apn.clone(),
                        qos: s.sub.qos.clone(),
                    },
                    None => S6aMessage::Ula {
                        result: 1,
                        imsi: imsi.clone(),
                        home_plmn: String::new(),
                        mec_entitlement: false,
                        apn: String::new(),
                        qos: String::new(),
                    },
                };
                ctx.send(from, &Message::S6a(ula)).unwrap();
            }
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// UE
// ---------------------------------------------------------------------------

struct LoginPlan {
    app: String,
    app_id: String,
    authsrv: Option<String>,
}

/// Subscriber terminal. Holds the permanent key, answers AKA challenges,
/// performs application login (OIDC or token presentation) and resumes the
/// application session.
pub struct Ue {
    id: String,
    imsi: Imsi,
    k: [u8; 32],
    last_sqn: u64,
    enb: Option<String>,
    teid: Option<u32>,
    ip: Option<Ipv4>,
    token: Option<String>,
    session: Option<u64>,
    login: Option<LoginPlan>,
    auto_login: Option<LoginPlan>,
}

impl Ue {
    pub fn new(id: &str, imsi: Imsi, k: [u8; 32]) -> Self {
        Ue {
            id: id.to_string(),
            imsi,
            k,
            last_sqn: 0,
            enb: None,
            teid: None,
            ip: None,
            token: None,
            session: None,
            login: None,
            auto_login: None,
        }
    }

    fn begin_login(&mut self, ctx: &mut dyn Ctx, plan: LoginPlan) {
        ctx.mark("u2_start");
        let Some(ip) = self.ip else {
            ctx.audit("login requested while not attached");
            return;
        };
        match &plan.authsrv {
            Some(a) => {
                let msg = Message::App(AppMessage::OidcAuthRequest {
                    client_id: plan.app_id.clone(),
                    redirect_ref: self.id.clone(),
                    source_ip: ip,
                });
                ctx.send(a, &msg).unwrap();
            }
            None => match &self.token {
                Some(t) => {
                    let msg = Message::App(AppMessage::TokenPresent {
                        token: t.clone(),
                        source_ip: ip,
                    });
                    ctx.send(&plan.app, &msg).unwrap();
                }
                None => ctx.audit("token reuse requested but no token stored"),
            },
        }
        self.login = Some(plan);
    }

    pub fn imsi(&self) -> &Imsi {
        &self.imsi
    }

    pub fn ip(&self) -> Option<Ipv4> {
        self.ip
    }

    pub fn token(&self) -> Option<&str> {
        self.token.as_deref()
    }

    pub fn session(&self) -> Option<u64> {
        self.session
    }

    pub fn is_attached(&self) -> bool {
        self.teid.is_some()
    }
}

impl Entity for Ue {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_command(&mut self, ctx: &mut dyn Ctx, cmd: Command) {
        match cmd {
            Command::StartAttach { enb } => {
                self.enb = Some(enb.clone());
                ctx.mark("u1_start");
                let msg = Message::S1(S1Message::InitialUeMessage {
                    imsi: self.imsi.clone(),
                });
                ctx.send(&enb, &msg).unwrap();
            }
            Command::StartLogin { app, app_id, authsrv } => {
                self.begin_login(ctx, LoginPlan { app, app_id, authsrv });
            }
            Command::PlanLogin { app, app_id, authsrv } => {
                self.auto_login = Some(LoginPlan { app, app_id, authsrv });
            }
            Command::Detach => match (self.enb.clone(), self.teid) {
                (Some(enb), Some(teid)) => {
                    let msg = Message::S1(S1Message::UeContextRelease {
                        teid,
                        reason: "detach".into(),
                    });
                    ctx.send(&enb, &msg).unwrap();
                    ctx.mark("detached");
                    self.enb = None;
                    self.teid = None;
                    self.ip = None;
                    self.session = None;
                    // The token survives the move: reuse across operators.
                }
                _ => ctx.audit("detach while not attached"),
            },
            other => ctx.audit(&format!("unsupported command {other:?}")),
        }
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        match msg {
            Message::S1(S1Message::AuthenticationRequest { rand, autn, sqn }) => {
                match ue_answer_challenge(&self.k, self.last_sqn, &rand, &autn, sqn) {
                    Ok(res) => {
                        self.last_sqn = sqn;
                        let msg = Message::S1(S1Message::AuthenticationResponse { res });
                        ctx.send(from, &msg).unwrap();
                    }
                    Err(e) => ctx.audit(&format!("challenge rejected: {e}")),
                }
            }
            Message::S1(S1Message::InitialContextSetupRequest { teid, ue_ip }) => {
                self.teid = Some(teid);
                self.ip = Some(ue_ip);
                ctx.send(from, &Message::S1(S1Message::InitialContextSetupResponse))
                    .unwrap();
                if let Some(plan) = self.auto_login.take() {
                    self.begin_login(ctx, plan);
                }
            }
            Message::S1(S1Message::ContextModification { teid, new_ip }) => {
                if self.teid == Some(teid) {
                    self.ip = Some(new_ip);
                }
            }
            Message::App(AppMessage::OidcConsentRequest { client_id, .. }) => {
                // The simulated user always approves; withholding consent is
                // exercised directly against the auth server in tests.
                let msg = Message::App(AppMessage::OidcConsent {
                    client_id,
                    source_ip: self.ip.expect("attached during login"),
                    granted: true,
                });
                ctx.send(from, &msg).unwrap();
            }
            Message::App(AppMessage::OidcAuthResponse { token }) => {
                self.token = Some(token.clone());
                let plan = self.login.as_ref().expect("OIDC response without login plan");
                let msg = Message::App(AppMessage::TokenPresent {
                    token,
                    source_ip: self.ip.expect("attached during login"),
                });
                ctx.send(&plan.app, &msg).unwrap();
            }
            Message::App(AppMessage::LoginOk { session_id }) => {
                self.session = Some(session_id);
                ctx.mark("u2_end");
                let msg = Message::App(AppMessage::Resume { session_id });
                ctx.send(from, &msg).unwrap();
            }
            Message::App(AppMessage::Data { .. }) => ctx.mark("u3_end"),
            other => ctx.audit(&format!("unexpected message 0x{:02x}", other.msg_type())),
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// eNB
// ---------------------------------------------------------------------------

/// Base station: relays between the UE and the MME, mirroring every S1
/// message to the MEC manager tap. One signalling procedure at a time per
/// eNB (scenarios drive UEs sequentially).
pub struct Enb {
    id: String,
    mme: String,
    tap: String,
    current_ue: Option<String>,
    teid_to_ue: HashMap<u32, String>,
}

impl Enb {
    pub fn new(id: &str, mme: &str, tap: &str) -> Self {
        Enb {
            id: id.to_string(),
            mme: mme.to_string(),
            tap: tap.to_string(),
            current_ue: None,
            teid_to_ue: HashMap::new(),
        }
    }
}

impl Entity for Enb {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, from: &str, msg: Message) {
        if from == self.mme {
            // Downlink: mirror to the tap, then forward towards the UE.
            ctx.send(&self.tap, &msg).unwrap();
            match &msg {
                Message::S1(S1Message::InitialContextSetupRequest { teid, .. }) => {
                    let ue = self.current_ue.clone().expect("context setup without procedure");
                    self.teid_to_ue.insert(*teid, ue.clone());
                    ctx.send(&ue, &msg).unwrap();
                }
                Message::S1(S1Message::ContextModification { teid, .. })
                | Message::S1(S1Message::UeContextRelease { teid, .. }) => {
                    match self.teid_to_ue.get(teid) {
                        Some(ue) => ctx.send(&ue.clone(), &msg).unwrap(),
                        None => ctx.audit(&format!("downlink for unknown teid {teid}")),
                    }
                }
                _ => {
                    match self.current_ue.clone() {
                        Some(ue) => ctx.send(&ue, &msg).unwrap(),
                        None => ctx.audit("downlink with no UE in procedure"),
                    }
                }
            }
        } else {
            // Uplink from a UE: forward to the MME and mirror to the tap.
            match &msg {
                Message::S1(S1Message::InitialUeMessage { .. }) => {
                    self.current_ue = Some(from.to_string());
                }
                Message::S1(S1Message::UeContextRelease { teid, .. }) => {
                    self.teid_to_ue.remove(teid);
                    if self.current_ue.as_deref() == Some(from) {
                        self.current_ue = None;
                    }
                }
                _ => {}
            }
            ctx.send(&self.mme, &msg).unwrap();
            ctx.send(&self.tap, &msg).unwrap();
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

// ---------------------------------------------------------------------------
// MME
// ---------------------------------------------------------------------------

struct MmeUeContext {
    imsi: Imsi,
    teid: u32,
    ip: Ipv4,
    active: bool,
}

struct PendingAuth {
    imsi: Imsi,
    xres: Option<[u8; 8]>,
}

/// Mobility management entity: runs the attach state machine, requesting
/// vectors from the local HSS or — when the IMSI's PLMN prefix is foreign —
/// from the home HSS through the federation proxy.
pub struct Mme {
    id: String,
    plmn: String,
    enb: String,
    hss: String,
    proxy: String,
    teid_next: u32,
    ip_base: u32,
    ip_next: u32,
    contexts: Vec<MmeUeContext>,
    pending: Option<PendingAuth>,
}

impl Mme {
    pub fn new(id: &str, plmn: &str, enb: &str, hss: &str, proxy: &str, ip_base: u32) -> Self {
        Mme {
            id: id.to_string(),
            plmn: plmn.to_string(),
            enb: enb.to_string(),
            hss: hss.to_string(),
            proxy: proxy.to_string(),
            teid_next: 1,
            ip_base,
            ip_next: 1,
            contexts: Vec::new(),
            pending: None,
        }
    }

    fn auth_peer(&self, imsi: &Imsi) -> String {
        if imsi.plmn_prefix() == self.plmn {
            self.hss.clone()
        } else {
            self.proxy.clone()
        }
    }

    fn alloc_ip(&mut self) -> Ipv4 {
        // Addresses are never reused, which trivially satisfies the
        // no-two-active-UEs-share-an-ip rule.
        let ip = Ipv4(self.ip_base + self.ip_next);
        self.ip_next += 1;
        ip
    }

    pub fn active_context(&self, imsi: &Imsi) -> Option<(u32, Ipv4)> {
        self.contexts
            .iter()
            .find(|c| c.active && &c.imsi == imsi)
            .map(|c| (c.teid, c.ip))
    }
}

impl Entity for Mme {
    fn id(&self) -> &str {
        &self.id
    }

    fn handle_command(&mut self, ctx: &mut dyn Ctx, cmd: Command) {
        match cmd {
            Command::RotateIp { imsi } => {
                let new_ip = self.alloc_ip();
                match self.contexts.iter_mut().find(|c| c.active && c.imsi == imsi) {
                    Some(c) => {
                        c.ip = new_ip;
                        let msg = Message::S1(S1Message::ContextModification {
                            teid: c.teid,
                            new_ip,
                        });
                        ctx.send(&self.enb, &msg).unwrap();
                    }
                    None => ctx.audit(&format!("ip rotation for inactive imsi {imsi}")),
                }
            }
            other => ctx.audit(&format!("unsupported command {other:?}")),
        }
    }

    fn handle_message(&mut self, ctx: &mut dyn Ctx, _from: &str, msg: Message) {
        match msg {
            Message::S1(S1Message::InitialUeMessage { imsi }) => {
                let peer = self.auth_peer(&imsi);
                let air = Message::S6a(S6aMessage::Air {
                    imsi: imsi.clone(),
                    visited_plmn: self.plmn.clone(),
                });
                self.pending = Some(PendingAuth { imsi, xres: None });
                ctx.send(&peer, &air).unwrap();
            }
            Message::S6a(S6aMessage::Aia { rand, xres, autn, sqn }) => {
                let Some(p) = self.pending.as_mut() else {
                    ctx.audit("AIA with no pending attach");
                    return;
                };
                p.xres = Some(xres);
                let msg = Message::S1(S1Message::AuthenticationRequest { rand, autn, sqn });
                ctx.send(&self.enb, &msg).unwrap();
            }
            Message::S1(S1Message::AuthenticationResponse { res }) => {
                let Some(p) = self.pending.as_ref() else {
                    ctx.audit("authentication response with no pending attach");
                    return;
                };
                match p.xres {
                    Some(xres) if tags_equal(&xres, &res) => {
                        let peer = self.auth_peer(&p.imsi);
                        let ulr = Message::S6a(S6aMessage::Ulr {
                            imsi: p.imsi.clone(),
                            mme_id: self.id.clone(),
                        });
                        ctx.send(&peer, &ulr).unwrap();
                    }
                    _ => {
                        ctx.audit("challenge response mismatch; attach aborted");
                        self.pending = None;
                    }
                }
            }
            Message::S6a(S6aMessage::Ula { result, imsi, .. }) => {
                if result != 0 {
                    ctx.audit(&format!("update location failed for {imsi} ({result})"));
                    self.pending = None;
                    return;
                }
                let teid = self.teid_next;
                self.teid_next += 1;
                let ip = self.alloc_ip();
                self.contexts.push(MmeUeContext {
                    imsi,
                    teid,
                    ip,
                    active: true,
                });
                let msg = Message::S1(S1Message::InitialContextSetupRequest { teid, ue_ip: ip });
                ctx.send(&self.enb, &msg).unwrap();
            }
            Message::S1(S1Message::InitialContextSetupResponse) => {
                ctx.mark("u1_end");
                self.pending = None;
            }
            Message::S1(S1Message::UeContextRelease { teid, .. }) => {
                match self.contexts.iter_mut().find(|c| c.active && c.teid == teid) {
                    Some(c) => c.active = false,
                    None => ctx.audit(&format!("release for unknown teid {teid}")),
                }
            }
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

    fn test_sub(imsi: &Imsi) -> SubscriptionRecord {
        SubscriptionRecord {
            imsi: imsi.clone(),
            home_plmn: imsi.plmn_prefix().to_string(),
            mec_entitlement: true,
            apn: "internet".into(),
            qos: "default".into(),
        }
    }

    #[test]
    fn unknown_imsi_rejected() {
        let mut hss = Hss::new("A:hss", 1);
        let imsi = Imsi::new("001010000000001").unwrap();
        assert_eq!(
            hss.generate_vectors(&imsi, 1),
            Err(CellularError::UnknownSubscriber(imsi))
        );
    }

    #[test]
    fn successive_vectors_fresh_rand_and_increasing_sqn() {
        let mut hss = Hss::new("A:hss", 1);
        let imsi = Imsi::new("001010000000001").unwrap();
        hss.provision(imsi.clone(), [9; 32], test_sub(&imsi));
        let a = hss.generate_vectors(&imsi, 1).unwrap().remove(0);
        let b = hss.generate_vectors(&imsi, 1).unwrap().remove(0);
        assert_ne!(a.rand, b.rand);
        assert!(b.sqn > a.sqn);
    }

    #[test]
    fn challenge_roundtrip_and_tamper_and_replay() {
        let mut hss = Hss::new("A:hss", 2);
        let imsi = Imsi::new("001010000000001").unwrap();
        let k = [5u8; 32];
        hss.provision(imsi.clone(), k, test_sub(&imsi));
        let v = hss.generate_vectors(&imsi, 1).unwrap().remove(0);

        // Genuine challenge: response matches the HSS-held xres.
        let res = ue_answer_challenge(&k, 0, &v.rand, &v.autn, v.sqn).unwrap();
        assert_eq!(res, v.xres);

        // One flipped autn bit fails network authentication.
        let mut bad = v.autn;
        bad[0] ^= 1;
        assert!(matches!(
            ue_answer_challenge(&k, 0, &v.rand, &bad, v.sqn),
            Err(CellularError::NetworkAuthFailure(_))
        ));

        // Replaying the vector after it was consumed is stale.
        assert!(matches!(
            ue_answer_challenge(&k, v.sqn, &v.rand, &v.autn, v.sqn),
            Err(CellularError::NetworkAuthFailure(_))
        ));
    }

    #[test]
    fn vector_generation_matches_derivations() {
        let mut hss = Hss::new("A:hss", 3);
        let imsi = Imsi::new("001010000000001").unwrap();
        let k = [0u8; 32];
        hss.provision(imsi.clone(), k, test_sub(&imsi));
        let v = hss.generate_vectors(&imsi, 1).unwrap().remove(0);
        assert_eq!(v.xres, derive_res(&k, &v.rand));
        assert_eq!(v.autn, derive_autn(&k, &v.rand, v.sqn));
    }
}
