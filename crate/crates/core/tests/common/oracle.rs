//! Independent timing oracle: predicts every stage boundary of a scenario
//! run by walking the protocol flow by hand, with its own link arithmetic
//! and first-use bookkeeping. The production wire codec is used only to
//! measure frame sizes; everything else is re-derived from the scenario
//! definition, so a disagreement beyond float noise means the simulator
//! and the documented flow have diverged.

#![allow(dead_code)]

use std::collections::{HashMap, HashSet};

use fs3a_core::harness::config::{
    AuthMode, AuthPlacement, ScenarioConfig, ScenarioSpec, StateMode, StatePath, SubscriptionMode,
};
use fs3a_core::harness::scenario::{
    ams_id, amc_id, app_id, auth_id, enb_id, hss_id, mgr_id, mme_id, proxy_id, state_blob,
    CLOUD_STORE, UE_ID,
};
use fs3a_core::wire::{
    encode_frame, AppMessage, CtrlMessage, Fs3aBody, Fs3aMessage, Imsi, Ipv4, Message, S1Message,
    S6aMessage,
};

pub struct Prediction {
    pub phase_start_ms: f64,
    /// Stage name -> (start, end), relative to the roaming-phase start.
    pub stages: HashMap<String, (f64, f64)>,
    pub total_ms: f64,
}

// ---------------------------------------------------------------------------
// Link model (own arithmetic, own warm-connection set)
// ---------------------------------------------------------------------------

struct Net {
    links: HashMap<(String, String), (f64, f64)>,
    warm: HashSet<(String, String)>,
}

fn key(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl Net {
    fn add(&mut self, a: &str, b: &str, lat: f64, bw: f64) {
        self.links.insert(key(a, b), (lat, bw));
    }

    fn cost(&mut self, a: &str, b: &str, bytes: usize) -> f64 {
        let k = key(a, b);
        let (lat, bw) = *self
            .links
            .get(&k)
            .unwrap_or_else(|| panic!("oracle has no link {a} <-> {b}"));
        let first = self.warm.insert(k);
        let setup = if first { 2.0 * lat } else { 0.0 };
        lat + (bytes as f64 * 8.0) / (bw * 1000.0) + setup
    }

    /// Store-and-forward leg carrying `msg`.
    fn leg(&mut self, t: f64, a: &str, b: &str, msg: &Message) -> f64 {
        let bytes = encode_frame(msg).unwrap().len();
        t + self.cost(a, b, bytes)
    }

    /// Pipelined relay leg: propagation only, still pays connection setup.
    fn sleg(&mut self, t: f64, a: &str, b: &str) -> f64 {
        t + self.cost(a, b, 0)
    }
}

/// Mirror of the scenario topology (the topology is part of the scenario
/// definition; only timing is being cross-checked).
fn build_net(cfg: &ScenarioConfig, spec: &ScenarioSpec) -> Net {
    let mut net = Net {
        links: HashMap::new(),
        warm: HashSet::new(),
    };
    let lat = &cfg.latency;
    let bw = &cfg.bandwidth;
    for n in cfg.networks.iter().map(|n| n.id.as_str()) {
        net.add(UE_ID, &enb_id(n), lat.ue_enb, bw.default);
        net.add(&enb_id(n), &mme_id(n), lat.enb_epc, bw.default);
        net.add(&enb_id(n), &mgr_id(n), lat.enb_mec, bw.default);
        net.add(&mme_id(n), &hss_id(n), lat.epc_intra, bw.default);
        net.add(&mme_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        net.add(&hss_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        net.add(&mgr_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        net.add(&amc_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        net.add(&mgr_id(n), &ams_id(n), lat.intra_mec, bw.intra_mec);
        net.add(&ams_id(n), &amc_id(n), lat.intra_mec, bw.intra_mec);
        for a in &cfg.apps {
            let app = app_id(n, &a.id);
            net.add(&mgr_id(n), &app, lat.intra_mec, bw.intra_mec);
            net.add(&app, &ams_id(n), lat.intra_mec, bw.intra_mec);
            net.add(UE_ID, &app, lat.ue_app, bw.default);
        }
        match spec.auth_server {
            AuthPlacement::Mec => {
                net.add(&auth_id(n), &mgr_id(n), lat.intra_mec, bw.intra_mec);
                net.add(UE_ID, &auth_id(n), lat.ue_app, bw.default);
                for a in &cfg.apps {
                    net.add(&auth_id(n), &app_id(n, &a.id), lat.intra_mec, bw.intra_mec);
                }
            }
            AuthPlacement::Cloud => {
                net.add(&auth_id(n), &mgr_id(n), lat.cloud, bw.cloud);
                net.add(UE_ID, &auth_id(n), lat.cloud, bw.cloud);
                for a in &cfg.apps {
                    net.add(&auth_id(n), &app_id(n, &a.id), lat.cloud, bw.cloud);
                }
            }
        }
        if spec.state_path == StatePath::Cloud {
            for a in &cfg.apps {
                net.add(&app_id(n, &a.id), CLOUD_STORE, lat.cloud, bw.cloud);
            }
            net.add(&ams_id(n), CLOUD_STORE, lat.cloud, bw.cloud);
        }
    }
    for (i, a) in cfg.networks.iter().enumerate() {
        for b in cfg.networks.iter().skip(i + 1) {
            net.add(&proxy_id(&a.id), &proxy_id(&b.id), lat.trunk, bw.trunk);
            // Inter-proxy trunks are persistent: no first-use handshake.
            net.warm.insert(key(&proxy_id(&a.id), &proxy_id(&b.id)));
        }
    }
    net
}

// ---------------------------------------------------------------------------
// Representative messages (only their encoded size matters; variable-length
// fields carry values of the exact lengths the entities produce)
// ---------------------------------------------------------------------------

struct Msgs {
    imsi: Imsi,
    home: String,
    visited: String,
    home_plmn: String,
    visited_plmn: String,
    app: String,
    blob: Vec<u8>,
}

impl Msgs {
    fn new(cfg: &ScenarioConfig, state_size: usize) -> Self {
        Msgs {
            imsi: Imsi::new(&cfg.subscribers[0].imsi).unwrap(),
            home: cfg.networks[0].id.clone(),
            visited: cfg.networks[1].id.clone(),
            home_plmn: cfg.networks[0].plmn.clone(),
            visited_plmn: cfg.networks[1].plmn.clone(),
            app: cfg.apps[0].id.clone(),
            blob: state_blob(cfg.seed, state_size),
        }
    }

    fn token(&self, issuer: &str) -> String {
        // Same shape and field lengths as a real token, dummy values.
        format!(
            "v1|{}|{}|{}|{:016x}|{:016x}|{}|{}",
            issuer,
            self.imsi,
            self.app,
            0u64,
            0u64,
            "00".repeat(16),
            "aa".repeat(32),
        )
    }

    fn ium(&self) -> Message {
        Message::S1(S1Message::InitialUeMessage {
            imsi: self.imsi.clone(),
        })
    }
    fn auth_req(&self) -> Message {
        Message::S1(S1Message::AuthenticationRequest {
            rand: [0; 16],
            autn: [0; 16],
            sqn: 1,
        })
    }
    fn auth_resp(&self) -> Message {
        Message::S1(S1Message::AuthenticationResponse { res: [0; 8] })
    }
    fn icsreq(&self) -> Message {
        Message::S1(S1Message::InitialContextSetupRequest {
            teid: 1,
            ue_ip: Ipv4(0),
        })
    }
    fn icsresp(&self) -> Message {
        Message::S1(S1Message::InitialContextSetupResponse)
    }
    fn release(&self) -> Message {
        Message::S1(S1Message::UeContextRelease {
            teid: 1,
            reason: "detach".into(),
        })
    }
    fn air(&self, visited_plmn: &str) -> Message {
        Message::S6a(S6aMessage::Air {
            imsi: self.imsi.clone(),
            visited_plmn: visited_plmn.into(),
        })
    }
    fn aia(&self) -> Message {
        Message::S6a(S6aMessage::Aia {
            rand: [0; 16],
            xres: [0; 8],
            autn: [0; 16],
            sqn: 1,
        })
    }
    fn ulr(&self, mme: &str) -> Message {
        Message::S6a(S6aMessage::Ulr {
            imsi: self.imsi.clone(),
            mme_id: mme.into(),
        })
    }
    fn ula(&self) -> Message {
        Message::S6a(S6aMessage::Ula {
            result: 0,
            imsi: self.imsi.clone(),
            home_plmn: self.home_plmn.clone(),
            mec_entitlement: true,
            apn: "internet".into(),
            qos: "default".into(),
        })
    }
    fn oidc_req(&self) -> Message {
        Message::App(AppMessage::OidcAuthRequest {
            client_id: self.app.clone(),
            redirect_ref: UE_ID.into(),
            source_ip: Ipv4(0),
        })
    }
    fn consent_req(&self) -> Message {
        Message::App(AppMessage::OidcConsentRequest {
            client_id: self.app.clone(),
            scope: "openid state".into(),
        })
    }
    fn consent(&self) -> Message {
        Message::App(AppMessage::OidcConsent {
            client_id: self.app.clone(),
            source_ip: Ipv4(0),
            granted: true,
        })
    }
    fn oidc_resp(&self, issuer: &str) -> Message {
        Message::App(AppMessage::OidcAuthResponse {
            token: self.token(issuer),
        })
    }
    fn token_present(&self, issuer: &str) -> Message {
        Message::App(AppMessage::TokenPresent {
            token: self.token(issuer),
            source_ip: Ipv4(0),
        })
    }
    fn login_ok(&self) -> Message {
        Message::App(AppMessage::LoginOk { session_id: 1 })
    }
    fn resume(&self) -> Message {
        Message::App(AppMessage::Resume { session_id: 1 })
    }
    fn data(&self) -> Message {
        Message::App(AppMessage::Data {
            payload: vec![b'd'; 64],
        })
    }
    fn lookup_req(&self) -> Message {
        Message::Ctrl(CtrlMessage::IdentityLookupReq {
            source_ip: Ipv4(0),
            app_id: self.app.clone(),
        })
    }
    fn lookup_resp(&self) -> Message {
        Message::Ctrl(CtrlMessage::IdentityLookupResp {
            result: 0,
            imsi: self.imsi.clone(),
            entitled: true,
            source_ip: Ipv4(0),
        })
    }
    fn check_req(&self, issuer: &str) -> Message {
        Message::Ctrl(CtrlMessage::TokenCheckReq {
            token: self.token(issuer),
            source_ip: Ipv4(0),
            app_id: self.app.clone(),
        })
    }
    fn check_resp(&self) -> Message {
        Message::Ctrl(CtrlMessage::TokenCheckResp {
            result: 0,
            imsi: self.imsi.clone(),
            source_ip: Ipv4(0),
        })
    }
    fn session_notice(&self) -> Message {
        Message::Ctrl(CtrlMessage::SessionNotice {
            user_id: self.imsi.clone(),
            app_id: self.app.clone(),
        })
    }
    fn freeze(&self) -> Message {
        Message::Ctrl(CtrlMessage::SessionFreeze {
            user_id: self.imsi.clone(),
        })
    }
    fn ams_register(&self) -> Message {
        Message::Ctrl(CtrlMessage::AmsRegister {
            user_id: self.imsi.clone(),
            app_id: self.app.clone(),
        })
    }
    fn ams_ack(&self) -> Message {
        Message::Ctrl(CtrlMessage::AmsRegisterAck {
            user_id: self.imsi.clone(),
            app_id: self.app.clone(),
        })
    }
    fn state_store(&self) -> Message {
        Message::Ctrl(CtrlMessage::StateStore {
            user_id: self.imsi.clone(),
            app_id: self.app.clone(),
            version: 1,
            total_len: self.blob.len() as u64,
            data: self.blob.clone(),
        })
    }
    fn store_ack(&self) -> Message {
        Message::Ctrl(CtrlMessage::StateStoreAck {
            user_id: self.imsi.clone(),
            app_id: self.app.clone(),
        })
    }

    fn fs3a(&self, src: &str, dst: &str, body: Fs3aBody) -> Message {
        Message::Fs3a(Fs3aMessage {
            source_network: src.into(),
            destination_network: dst.into(),
            body,
        })
    }
    fn advertise(&self, src: &str, dst: &str) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::MobilityAdvertise {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                source_network: self.home.clone(),
                source_platform: self.home.clone(),
            },
        )
    }
    fn watch_req(&self, net: &str, requester: &str) -> Message {
        self.fs3a(
            net,
            net,
            Fs3aBody::WatchRequest {
                user_id: self.imsi.clone(),
                requester: requester.into(),
            },
        )
    }
    fn arrival(&self, net: &str) -> Message {
        self.fs3a(
            net,
            net,
            Fs3aBody::UeArrivalNotice {
                user_id: self.imsi.clone(),
                platform: net.into(),
            },
        )
    }
    fn sub_fetch_req(&self, src: &str, dst: &str) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::SubscriptionFetchReq {
                imsi: self.imsi.clone(),
            },
        )
    }
    fn sub_fetch_resp(&self, src: &str, dst: &str) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::SubscriptionFetchResp {
                result: 0,
                imsi: self.imsi.clone(),
                home_plmn: self.home_plmn.clone(),
                mec_entitlement: true,
                apn: "internet".into(),
                qos: "default".into(),
            },
        )
    }
    fn state_fetch_req(&self, src: &str, dst: &str, streamed: bool) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::StateFetchReq {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                streamed,
            },
        )
    }
    fn empty_fetch_resp(&self, src: &str, dst: &str) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::StateFetchResp {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                version: 0,
                total_len: 0,
                data: Vec::new(),
                streamed: false,
            },
        )
    }
    fn state_fetch_resp(&self, src: &str, dst: &str, data: &[u8], streamed: bool) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::StateFetchResp {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                version: 1,
                total_len: self.blob.len() as u64,
                data: data.to_vec(),
                streamed,
            },
        )
    }
    fn chunk_req(&self, src: &str, dst: &str) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::StateChunkReq {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                offset: 0,
            },
        )
    }
    fn chunk_resp(&self, src: &str, dst: &str, data: &[u8]) -> Message {
        self.fs3a(
            src,
            dst,
            Fs3aBody::StateChunkResp {
                user_id: self.imsi.clone(),
                app_id: self.app.clone(),
                offset: 0,
                total_len: self.blob.len() as u64,
                data: data.to_vec(),
            },
        )
    }
}

// ---------------------------------------------------------------------------
// The walk
// ---------------------------------------------------------------------------

pub fn predict(cfg: &ScenarioConfig, spec: &ScenarioSpec) -> Prediction {
    predict_sized(cfg, spec, cfg.state_size_bytes)
}

pub fn predict_sized(cfg: &ScenarioConfig, spec: &ScenarioSpec, state_size: usize) -> Prediction {
    let mut net = build_net(cfg, spec);
    let m = Msgs::new(cfg, state_size);
    let hn = m.home.clone();
    let vn = m.visited.clone();
    let (ue, enb_h, mme_h, hss_h) = (UE_ID, enb_id(&hn), mme_id(&hn), hss_id(&hn));
    let (mgr_h, auth_h, app_h, ams_h, amc_h) = (
        mgr_id(&hn),
        auth_id(&hn),
        app_id(&hn, &m.app),
        ams_id(&hn),
        amc_id(&hn),
    );
    let (enb_v, mme_v, mgr_v, auth_v, app_v, ams_v, amc_v) = (
        enb_id(&vn),
        mme_id(&vn),
        mgr_id(&vn),
        auth_id(&vn),
        app_id(&vn, &m.app),
        ams_id(&vn),
        amc_id(&vn),
    );
    let (px_h, px_v) = (proxy_id(&hn), proxy_id(&vn));
    let chunks: Vec<&[u8]> = m.blob.chunks(cfg.chunk_size).collect();

    // ---- act one: home attach ----------------------------------------
    let mut t = 0.0;
    t = net.leg(t, ue, &enb_h, &m.ium());
    net.leg(t, &enb_h, &mgr_h, &m.ium()); // tap mirror
    t = net.leg(t, &enb_h, &mme_h, &m.ium());
    t = net.leg(t, &mme_h, &hss_h, &m.air(&m.home_plmn));
    t = net.leg(t, &hss_h, &mme_h, &m.aia());
    t = net.leg(t, &mme_h, &enb_h, &m.auth_req());
    net.leg(t, &enb_h, &mgr_h, &m.auth_req());
    t = net.leg(t, &enb_h, ue, &m.auth_req());
    t = net.leg(t, ue, &enb_h, &m.auth_resp());
    net.leg(t, &enb_h, &mgr_h, &m.auth_resp());
    t = net.leg(t, &enb_h, &mme_h, &m.auth_resp());
    t = net.leg(t, &mme_h, &hss_h, &m.ulr(&mme_h));
    t = net.leg(t, &hss_h, &mme_h, &m.ula());
    t = net.leg(t, &mme_h, &enb_h, &m.icsreq());
    net.leg(t, &enb_h, &mgr_h, &m.icsreq()); // tap: context assembled, no watch
    t = net.leg(t, &enb_h, ue, &m.icsreq());
    t = net.leg(t, ue, &enb_h, &m.icsresp());
    net.leg(t, &enb_h, &mgr_h, &m.icsresp());
    t = net.leg(t, &enb_h, &mme_h, &m.icsresp()); // home u1_end, step makespan

    // ---- act one: home OIDC login -------------------------------------
    t = net.leg(t, ue, &auth_h, &m.oidc_req());
    t = net.leg(t, &auth_h, &mgr_h, &m.lookup_req());
    t = net.leg(t, &mgr_h, &auth_h, &m.lookup_resp());
    t = net.leg(t, &auth_h, ue, &m.consent_req());
    t = net.leg(t, ue, &auth_h, &m.consent());
    t = net.leg(t, &auth_h, ue, &m.oidc_resp(&hn));
    t = net.leg(t, ue, &app_h, &m.token_present(&hn));
    t = net.leg(t, &app_h, &auth_h, &m.check_req(&hn));
    t = net.leg(t, &auth_h, &mgr_h, &m.lookup_req());
    t = net.leg(t, &mgr_h, &auth_h, &m.lookup_resp());
    t = net.leg(t, &auth_h, &app_h, &m.check_resp());
    net.leg(t, &app_h, &mgr_h, &m.session_notice()); // branch, no watch
    t = net.leg(t, &app_h, ue, &m.login_ok());
    t = net.leg(t, ue, &app_h, &m.resume());
    // No state yet: the app asks its mobility service. With a cloud store
    // the service checks the (still empty) store; otherwise it answers
    // empty straight away. Either way the handoff back is by reference.
    t = net.leg(t, &app_h, &ams_h, &m.state_fetch_req(&hn, &hn, false));
    if spec.state_path == StatePath::Cloud {
        t = net.leg(t, &ams_h, CLOUD_STORE, &m.state_fetch_req(&hn, "cloud", false));
        t = net.leg(t, CLOUD_STORE, &ams_h, &m.empty_fetch_resp("cloud", &hn));
    }
    t = net.sleg(t, &ams_h, &app_h);
    t = net.leg(t, &app_h, ue, &m.data());

    // ---- act one: state build-up, advertisement, detach ----------------
    if spec.state_path == StatePath::Cloud {
        let up = net.leg(t, &app_h, CLOUD_STORE, &m.state_store());
        t = net.leg(up, CLOUD_STORE, &app_h, &m.store_ack());
    }
    if spec.state_path == StatePath::Federation {
        let reg = net.leg(t, &app_h, &ams_h, &m.ams_register());
        let ack = net.leg(reg, &ams_h, &app_h, &m.ams_ack());
        let mut adv = net.leg(reg, &ams_h, &amc_h, &m.advertise(&hn, &hn));
        adv = net.leg(adv, &amc_h, &px_h, &m.advertise(&hn, &vn));
        adv = net.leg(adv, &px_h, &px_v, &m.advertise(&hn, &vn));
        adv = net.leg(adv, &px_v, &amc_v, &m.advertise(&hn, &vn));
        adv = net.leg(adv, &amc_v, &ams_v, &m.advertise(&hn, &vn));
        adv = net.leg(adv, &ams_v, &mgr_v, &m.watch_req(&vn, &ams_v));
        t = adv.max(ack);
    }
    let rel = net.leg(t, ue, &enb_h, &m.release());
    let rel_mme = net.leg(rel, &enb_h, &mme_h, &m.release());
    let rel_tap = net.leg(rel, &enb_h, &mgr_h, &m.release());
    let rel_frz = net.leg(rel_tap, &mgr_h, &app_h, &m.freeze());
    let phase_start = rel_mme.max(rel_frz) + 1.0;

    // ---- act two: roaming attach ---------------------------------------
    let subscription_prefetch = spec.subscription_fetch == SubscriptionMode::Prefetch;
    let state_prefetch = spec.state_fetch == StateMode::Prefetch;

    let mut t = phase_start; // u1_start
    t = net.leg(t, ue, &enb_v, &m.ium());
    net.leg(t, &enb_v, &mgr_v, &m.ium());
    t = net.leg(t, &enb_v, &mme_v, &m.ium());
    // S6a over the federation proxies.
    t = net.leg(t, &mme_v, &px_v, &m.air(&m.visited_plmn));
    t = net.leg(t, &px_v, &px_h, &m.air(&m.visited_plmn));
    t = net.leg(t, &px_h, &hss_h, &m.air(&m.visited_plmn));
    t = net.leg(t, &hss_h, &px_h, &m.aia());
    t = net.leg(t, &px_h, &px_v, &m.aia());
    t = net.leg(t, &px_v, &mme_v, &m.aia());
    t = net.leg(t, &mme_v, &enb_v, &m.auth_req());
    net.leg(t, &enb_v, &mgr_v, &m.auth_req());
    t = net.leg(t, &enb_v, ue, &m.auth_req());
    t = net.leg(t, ue, &enb_v, &m.auth_resp());
    net.leg(t, &enb_v, &mgr_v, &m.auth_resp());
    t = net.leg(t, &enb_v, &mme_v, &m.auth_resp());
    t = net.leg(t, &mme_v, &px_v, &m.ulr(&mme_v));
    t = net.leg(t, &px_v, &px_h, &m.ulr(&mme_v));
    t = net.leg(t, &px_h, &hss_h, &m.ulr(&mme_v));
    t = net.leg(t, &hss_h, &px_h, &m.ula());
    t = net.leg(t, &px_h, &px_v, &m.ula());
    t = net.leg(t, &px_v, &mme_v, &m.ula());
    t = net.leg(t, &mme_v, &enb_v, &m.icsreq());
    let t_tap = net.leg(t, &enb_v, &mgr_v, &m.icsreq());
    let u2_start = net.leg(t, &enb_v, ue, &m.icsreq()); // login fires here
    let mut t = u2_start;
    t = net.leg(t, ue, &enb_v, &m.icsresp());
    net.leg(t, &enb_v, &mgr_v, &m.icsresp());
    let u1_end = net.leg(t, &enb_v, &mme_v, &m.icsresp());

    // M1: subscription fetch. Either off the tap (prefetch) or lazily at
    // the first identity lookup. m1_done is the instant the visited
    // manager can answer lookups.
    let mut m1: Option<(f64, f64)> = None;
    let run_m1 = |net: &mut Net, start: f64| -> f64 {
        let mut f = net.leg(start, &mgr_v, &px_v, &m.sub_fetch_req(&vn, &hn));
        f = net.leg(f, &px_v, &px_h, &m.sub_fetch_req(&vn, &hn));
        f = net.leg(f, &px_h, &mgr_h, &m.sub_fetch_req(&vn, &hn));
        f = net.leg(f, &mgr_h, &px_h, &m.sub_fetch_resp(&hn, &vn));
        f = net.leg(f, &px_h, &px_v, &m.sub_fetch_resp(&hn, &vn));
        net.leg(f, &px_v, &mgr_v, &m.sub_fetch_resp(&hn, &vn))
    };
    if subscription_prefetch {
        let end = run_m1(&mut net, t_tap);
        m1 = Some((t_tap, end));
    }

    // Authentication chain, starting the instant the UE has service.
    let mut answer_lookup = |net: &mut Net, t_req_at_auth: f64| -> f64 {
        let arr = net.leg(t_req_at_auth, &auth_v, &mgr_v, &m.lookup_req());
        let m1_done = match m1 {
            Some((_, end)) => end,
            None => {
                // On-demand: the first lookup starts the fetch.
                let end = run_m1(net, arr);
                m1 = Some((arr, end));
                end
            }
        };
        let depart = if arr >= m1_done { arr } else { m1_done };
        net.leg(depart, &mgr_v, &auth_v, &m.lookup_resp())
    };

    let mut t = u2_start;
    let issuer = match spec.auth_mode {
        AuthMode::Reauth => {
            t = net.leg(t, ue, &auth_v, &m.oidc_req());
            t = answer_lookup(&mut net, t);
            t = net.leg(t, &auth_v, ue, &m.consent_req());
            t = net.leg(t, ue, &auth_v, &m.consent());
            t = net.leg(t, &auth_v, ue, &m.oidc_resp(&vn));
            vn.clone()
        }
        AuthMode::TokenReuse => hn.clone(),
    };
    t = net.leg(t, ue, &app_v, &m.token_present(&issuer));
    t = net.leg(t, &app_v, &auth_v, &m.check_req(&issuer));
    t = answer_lookup(&mut net, t);
    t = net.leg(t, &auth_v, &app_v, &m.check_resp());
    let u3_start = t;
    let t_notice = net.leg(u3_start, &app_v, &mgr_v, &m.session_notice());
    let u2_end = net.leg(u3_start, &app_v, ue, &m.login_ok());
    let t_resume = net.leg(u2_end, ue, &app_v, &m.resume());

    // State mobility. Walked after the auth chain because the app's
    // resume-time fetch probe and the AMS delivery race for first use of
    // the app<->AMS link; connection setup is charged at send time, so the
    // earlier sender pays it.
    let mut m3: Option<(f64, f64)> = None;
    #[allow(unused_assignments)]
    let mut m2: Option<(f64, f64)> = None;
    let mut m2_resp_start = f64::NAN;
    #[allow(unused_assignments)]
    let mut state_at_app = f64::INFINITY; // when the visited app holds state
    match (spec.state_path, state_prefetch) {
        (StatePath::Federation, true) => {
            // Prefetch push, triggered off the tap.
            let m3_start = t_tap;
            let m3_end = net.leg(m3_start, &mgr_v, &ams_v, &m.arrival(&vn));
            m3 = Some((m3_start, m3_end));
            let m2_start = m3_end;
            let req = m.state_fetch_req(&vn, &hn, true);
            let mut f = net.leg(m2_start, &ams_v, &amc_v, &req);
            f = net.leg(f, &amc_v, &px_v, &req);
            f = net.leg(f, &px_v, &px_h, &req);
            f = net.leg(f, &px_h, &amc_h, &req);
            f = net.leg(f, &amc_h, &ams_h, &req);
            f = net.leg(f, &ams_h, &app_h, &req);
            m2_resp_start = f;
            // The origin serializes the push once; relays pipeline it.
            let resp = m.state_fetch_resp(&hn, &vn, &m.blob, true);
            f = net.leg(f, &app_h, &ams_h, &resp);
            f = net.sleg(f, &ams_h, &amc_h);
            f = net.sleg(f, &amc_h, &px_h);
            f = net.sleg(f, &px_h, &px_v);
            f = net.sleg(f, &px_v, &amc_v);
            f = net.sleg(f, &amc_v, &ams_v);
            if t_resume < f {
                // The resume landed before delivery: the app probes its AMS.
                net.leg(t_resume, &app_v, &ams_v, &m.state_fetch_req(&vn, &vn, false));
            }
            f = net.sleg(f, &ams_v, &app_v);
            m2 = Some((m2_start, f));
            state_at_app = f;
        }
        (StatePath::Federation, false) => {
            // Chunked pull, triggered by the session notice.
            let m3_start = t_notice;
            let m3_end = net.leg(m3_start, &mgr_v, &ams_v, &m.arrival(&vn));
            m3 = Some((m3_start, m3_end));
            let m2_start = m3_end;
            let req = m.state_fetch_req(&vn, &hn, false);
            let mut f = net.leg(m2_start, &ams_v, &amc_v, &req);
            f = net.leg(f, &amc_v, &px_v, &req);
            f = net.leg(f, &px_v, &px_h, &req);
            f = net.leg(f, &px_h, &amc_h, &req);
            f = net.leg(f, &amc_h, &ams_h, &req);
            f = net.leg(f, &ams_h, &app_h, &req);
            for (i, chunk) in chunks.iter().enumerate() {
                if i > 0 {
                    // Next-chunk request, visited AMS -> home app.
                    let creq = m.chunk_req(&vn, &hn);
                    f = net.leg(f, &ams_v, &amc_v, &creq);
                    f = net.leg(f, &amc_v, &px_v, &creq);
                    f = net.leg(f, &px_v, &px_h, &creq);
                    f = net.leg(f, &px_h, &amc_h, &creq);
                    f = net.leg(f, &amc_h, &ams_h, &creq);
                    f = net.leg(f, &ams_h, &app_h, &creq);
                }
                let resp = if i == 0 {
                    m.state_fetch_resp(&hn, &vn, chunk, false)
                } else {
                    m.chunk_resp(&hn, &vn, chunk)
                };
                f = net.leg(f, &app_h, &ams_h, &resp);
                f = net.leg(f, &ams_h, &amc_h, &resp);
                f = net.leg(f, &amc_h, &px_h, &resp);
                f = net.leg(f, &px_h, &px_v, &resp);
                f = net.leg(f, &px_v, &amc_v, &resp);
                f = net.leg(f, &amc_v, &ams_v, &resp);
            }
            if t_resume < f {
                net.leg(t_resume, &app_v, &ams_v, &m.state_fetch_req(&vn, &vn, false));
            }
            f = net.sleg(f, &ams_v, &app_v); // local handoff
            m2 = Some((m2_start, f));
            state_at_app = f;
        }
        (StatePath::Cloud, _) => {
            // Nothing happens until the app misses its state at resume time.
            let t_miss = net.leg(t_resume, &app_v, &ams_v, &m.state_fetch_req(&vn, &vn, false));
            let m2_start = t_miss;
            let mut f = net.leg(m2_start, &ams_v, CLOUD_STORE, &m.state_fetch_req(&vn, "cloud", false));
            for (i, chunk) in chunks.iter().enumerate() {
                if i > 0 {
                    f = net.leg(f, &ams_v, CLOUD_STORE, &m.chunk_req(&vn, "cloud"));
                }
                let resp = if i == 0 {
                    m.state_fetch_resp("cloud", &vn, chunk, false)
                } else {
                    m.chunk_resp("cloud", &vn, chunk)
                };
                f = net.leg(f, CLOUD_STORE, &ams_v, &resp);
            }
            f = net.sleg(f, &ams_v, &app_v);
            m2 = Some((m2_start, f));
            state_at_app = f;
        }
    }

    let data_depart = if state_at_app.is_finite() && state_at_app > t_resume {
        state_at_app
    } else {
        t_resume
    };
    let u3_end = net.leg(data_depart, &app_v, ue, &m.data());

    // ---- assemble ------------------------------------------------------
    let rel = |x: f64| x - phase_start;
    let mut stages = HashMap::new();
    stages.insert("attach".to_string(), (0.0, rel(u1_end)));
    stages.insert("auth".to_string(), (rel(u2_start), rel(u2_end)));
    stages.insert("resumption".to_string(), (rel(u3_start), rel(u3_end)));
    if let Some((s, e)) = m1 {
        stages.insert("subscription".to_string(), (rel(s), rel(e)));
    }
    if let Some((s, e)) = m2 {
        let start = if state_prefetch && spec.state_path == StatePath::Federation {
            m2_resp_start
        } else {
            s
        };
        stages.insert("state".to_string(), (rel(start), rel(e)));
    }
    if let Some((s, e)) = m3 {
        stages.insert("notify".to_string(), (rel(s), rel(e)));
    }
    Prediction {
        phase_start_ms: phase_start,
        stages,
        total_ms: rel(u3_end),
    }
}
