//! Wire framing for every inter-entity message.
//!
//! A frame is `length (u32, big-endian) || msg_type (1 byte) || body`, where
//! `length` counts the body bytes plus the type byte. The body is a canonical
//! field map: one `key=value` line per field, keys sorted lexicographically,
//! values percent-escaped so the body stays valid UTF-8. Numeric fields use
//! fixed-width lowercase hex, which makes every frame's byte length a pure
//! function of the message shape (not of field values) — scenario traces stay
//! byte-stable across runs.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

/// Hard cap on the frame length field: the largest legitimate payload is a
/// 10 MB state blob plus headers.
pub const MAX_FRAME_LEN: u32 = 16 * 1024 * 1024;

/// Frame header size: 4 length bytes + 1 msg_type byte.
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    /// A field violates its type invariant (e.g. a 14-digit IMSI).
    #[error("invariant violation: {0}")]
    InvariantViolation(String),
    /// Bad length, unknown msg_type, non-canonical body, duplicate keys.
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    /// Short input; the value is the number of further bytes required.
    #[error("need {0} more bytes")]
    NeedMoreBytes(usize),
}

// ---------------------------------------------------------------------------
// Domain newtypes
// ---------------------------------------------------------------------------

/// 15-digit permanent subscriber identity. The leading 5 digits are the PLMN
/// prefix used for home-network routing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Imsi(String);

impl Imsi {
    pub fn new(s: &str) -> Result<Self, WireError> {
        if s.len() != 15 || !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(WireError::InvariantViolation(format!(
                "imsi must be 15 decimal digits, got {s:?}"
            )));
        }
        Ok(Imsi(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Leading 5 digits, the home-operator routing key.
    pub fn plmn_prefix(&self) -> &str {
        &self.0[..5]
    }
}

impl fmt::Display for Imsi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// IPv4 address, encoded on the wire as 8 hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Ipv4(pub u32);

impl fmt::Display for Ipv4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let b = self.0.to_be_bytes();
        write!(f, "{}.{}.{}.{}", b[0], b[1], b[2], b[3])
    }
}

// ---------------------------------------------------------------------------
// Messages
// ---------------------------------------------------------------------------

/// S1-lite control messages (eNB <-> MME, mirrored to the MEC manager tap).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum S1Message {
    InitialUeMessage {
        imsi: Imsi,
    },
    AuthenticationRequest {
        rand: [u8; 16],
        autn: [u8; 16],
        /// Carried alongside the challenge; integrity-covered by `autn`.
        sqn: u64,
    },
    AuthenticationResponse {
        res: [u8; 8],
    },
    InitialContextSetupRequest {
        teid: u32,
        ue_ip: Ipv4,
    },
    InitialContextSetupResponse,
    UeContextRelease {
        teid: u32,
        reason: String,
    },
    /// Periodic IP rotation; the tap updates its context in place.
    ContextModification {
        teid: u32,
        new_ip: Ipv4,
    },
}

/// S6a-lite messages (MME <-> HSS, relayed by the proxy when roaming).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum S6aMessage {
    Air {
        imsi: Imsi,
        visited_plmn: String,
    },
    /// One auth vector per answer.
    Aia {
        rand: [u8; 16],
        xres: [u8; 8],
        autn: [u8; 16],
        sqn: u64,
    },
    Ulr {
        imsi: Imsi,
        mme_id: String,
    },
    /// result 0 carries a subscription record; any other value is an error code.
    Ula {
        result: u32,
        imsi: Imsi,
        home_plmn: String,
        mec_entitlement: bool,
        apn: String,
        qos: String,
    },
}

/// Federation messages relayed between MEC systems. Every message carries
/// source and destination network headers used by relay routing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fs3aMessage {
    pub source_network: String,
    pub destination_network: String,
    pub body: Fs3aBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fs3aBody {
    SubscriptionFetchReq {
        imsi: Imsi,
    },
    SubscriptionFetchResp {
        result: u32,
        imsi: Imsi,
        home_plmn: String,
        mec_entitlement: bool,
        apn: String,
        qos: String,
    },
    MobilityAdvertise {
        user_id: Imsi,
        app_id: String,
        source_network: String,
        source_platform: String,
    },
    WatchRequest {
        user_id: Imsi,
        requester: String,
    },
    UeArrivalNotice {
        user_id: Imsi,
        platform: String,
    },
    /// `streamed` asks the source for a pipelined push of the whole blob;
    /// otherwise the state is pulled chunk by chunk.
    StateFetchReq {
        user_id: Imsi,
        app_id: String,
        streamed: bool,
    },
    /// First (or only) slice of the state blob. `streamed` marks a pipelined
    /// push: relays forward it without store-and-forward re-serialization.
    StateFetchResp {
        user_id: Imsi,
        app_id: String,
        version: u64,
        total_len: u64,
        data: Vec<u8>,
        streamed: bool,
    },
    StateChunkReq {
        user_id: Imsi,
        app_id: String,
        offset: u64,
    },
    StateChunkResp {
        user_id: Imsi,
        app_id: String,
        offset: u64,
        total_len: u64,
        data: Vec<u8>,
    },
    NetworkRegister {
        network_id: String,
        address: String,
    },
}

/// Application-layer messages between the UE, the auth server and app servers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AppMessage {
    LoginStart {
        app_id: String,
    },
    /// `source_ip` models the transport-level source address the server
    /// would observe on a real socket; the simulator has no IP layer, so the
    /// address travels as an explicit field.
    OidcAuthRequest {
        client_id: String,
        redirect_ref: String,
        source_ip: Ipv4,
    },
    /// Auth server -> UE after the subscriber's identity has been resolved:
    /// the user must approve releasing it to the requesting application
    /// before a token is issued.
    OidcConsentRequest {
        client_id: String,
        scope: String,
    },
    OidcConsent {
        client_id: String,
        source_ip: Ipv4,
        granted: bool,
    },
    OidcAuthResponse {
        token: String,
    },
    TokenPresent {
        token: String,
        source_ip: Ipv4,
    },
    LoginOk { session_id: u64 },
    Resume { session_id: u64 },
    Data { payload: Vec<u8> },
}

/// Intra-system control messages (identity lookups, token introspection,
/// mobility registration, cloud state storage).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CtrlMessage {
    IdentityLookupReq {
        source_ip: Ipv4,
        app_id: String,
    },
    /// `source_ip` echoes the request and correlates concurrent lookups.
    IdentityLookupResp {
        result: u32,
        imsi: Imsi,
        entitled: bool,
        source_ip: Ipv4,
    },
    TokenCheckReq {
        token: String,
        source_ip: Ipv4,
        app_id: String,
    },
    /// On success `imsi` is the verified subject; `source_ip` echoes the
    /// request for correlation.
    TokenCheckResp {
        result: u32,
        imsi: Imsi,
        source_ip: Ipv4,
    },
    AmsRegister {
        user_id: Imsi,
        app_id: String,
    },
    AmsRegisterAck {
        user_id: Imsi,
        app_id: String,
    },
    /// App server -> MEC manager: an authenticated session was established.
    SessionNotice {
        user_id: Imsi,
        app_id: String,
    },
    /// MEC manager -> app servers: the UE released its context; freeze its
    /// sessions (state is kept for later handover).
    SessionFreeze {
        user_id: Imsi,
    },
    StateStore {
        user_id: Imsi,
        app_id: String,
        version: u64,
        total_len: u64,
        data: Vec<u8>,
    },
    StateStoreAck {
        user_id: Imsi,
        app_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    S1(S1Message),
    S6a(S6aMessage),
    Fs3a(Fs3aMessage),
    App(AppMessage),
    Ctrl(CtrlMessage),
}

// msg_type codes. Unique across the whole protocol; unknown codes are a hard
// decode error.
pub mod codes {
    pub const INITIAL_UE_MESSAGE: u8 = 0x10;
    pub const AUTHENTICATION_REQUEST: u8 = 0x11;
    pub const AUTHENTICATION_RESPONSE: u8 = 0x12;
    pub const INITIAL_CONTEXT_SETUP_REQUEST: u8 = 0x13;
    pub const INITIAL_CONTEXT_SETUP_RESPONSE: u8 = 0x14;
    pub const UE_CONTEXT_RELEASE: u8 = 0x15;
    pub const CONTEXT_MODIFICATION: u8 = 0x16;

    pub const AIR: u8 = 0x20;
    pub const AIA: u8 = 0x21;
    pub const ULR: u8 = 0x22;
    pub const ULA: u8 = 0x23;

    pub const SUBSCRIPTION_FETCH_REQ: u8 = 0x30;
    pub const SUBSCRIPTION_FETCH_RESP: u8 = 0x31;
    pub const MOBILITY_ADVERTISE: u8 = 0x32;
    pub const WATCH_REQUEST: u8 = 0x33;
    pub const UE_ARRIVAL_NOTICE: u8 = 0x34;
    pub const STATE_FETCH_REQ: u8 = 0x35;
    pub const STATE_FETCH_RESP: u8 = 0x36;
    pub const NETWORK_REGISTER: u8 = 0x37;
    pub const STATE_CHUNK_REQ: u8 = 0x38;
    pub const STATE_CHUNK_RESP: u8 = 0x39;

    pub const LOGIN_START: u8 = 0x40;
    pub const OIDC_AUTH_REQUEST: u8 = 0x41;
    pub const OIDC_AUTH_RESPONSE: u8 = 0x42;
    pub const TOKEN_PRESENT: u8 = 0x43;
    pub const LOGIN_OK: u8 = 0x44;
    pub const RESUME: u8 = 0x45;
    pub const DATA: u8 = 0x46;
    pub const OIDC_CONSENT_REQUEST: u8 = 0x47;
    pub const OIDC_CONSENT: u8 = 0x48;

    pub const IDENTITY_LOOKUP_REQ: u8 = 0x50;
    pub const IDENTITY_LOOKUP_RESP: u8 = 0x51;
    pub const TOKEN_CHECK_REQ: u8 = 0x52;
    pub const TOKEN_CHECK_RESP: u8 = 0x53;
    pub const AMS_REGISTER: u8 = 0x54;
    pub const AMS_REGISTER_ACK: u8 = 0x55;
    pub const SESSION_NOTICE: u8 = 0x56;
    pub const SESSION_FREEZE: u8 = 0x57;
    pub const STATE_STORE: u8 = 0x58;
    pub const STATE_STORE_ACK: u8 = 0x59;
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use codes::*;
        match self {
            Message::S1(m) => match m {
                S1Message::InitialUeMessage { .. } => INITIAL_UE_MESSAGE,
                S1Message::AuthenticationRequest { .. } => AUTHENTICATION_REQUEST,
                S1Message::AuthenticationResponse { .. } => AUTHENTICATION_RESPONSE,
                S1Message::InitialContextSetupRequest { .. } => INITIAL_CONTEXT_SETUP_REQUEST,
                S1Message::InitialContextSetupResponse => INITIAL_CONTEXT_SETUP_RESPONSE,
                S1Message::UeContextRelease { .. } => UE_CONTEXT_RELEASE,
                S1Message::ContextModification { .. } => CONTEXT_MODIFICATION,
            },
            Message::S6a(m) => match m {
                S6aMessage::Air { .. } => AIR,
                S6aMessage::Aia { .. } => AIA,
                S6aMessage::Ulr { .. } => ULR,
                S6aMessage::Ula { .. } => ULA,
            },
            Message::Fs3a(m) => match &m.body {
                Fs3aBody::SubscriptionFetchReq { .. } => SUBSCRIPTION_FETCH_REQ,
                Fs3aBody::SubscriptionFetchResp { .. } => SUBSCRIPTION_FETCH_RESP,
                Fs3aBody::MobilityAdvertise { .. } => MOBILITY_ADVERTISE,
                Fs3aBody::WatchRequest { .. } => WATCH_REQUEST,
                Fs3aBody::UeArrivalNotice { .. } => UE_ARRIVAL_NOTICE,
                Fs3aBody::StateFetchReq { .. } => STATE_FETCH_REQ,
                Fs3aBody::StateFetchResp { .. } => STATE_FETCH_RESP,
                Fs3aBody::StateChunkReq { .. } => STATE_CHUNK_REQ,
                Fs3aBody::StateChunkResp { .. } => STATE_CHUNK_RESP,
                Fs3aBody::NetworkRegister { .. } => NETWORK_REGISTER,
            },
            Message::App(m) => match m {
                AppMessage::LoginStart { .. } => LOGIN_START,
                AppMessage::OidcAuthRequest { .. } => OIDC_AUTH_REQUEST,
                AppMessage::OidcConsentRequest { .. } => OIDC_CONSENT_REQUEST,
                AppMessage::OidcConsent { .. } => OIDC_CONSENT,
                AppMessage::OidcAuthResponse { .. } => OIDC_AUTH_RESPONSE,
                AppMessage::TokenPresent { .. } => TOKEN_PRESENT,
                AppMessage::LoginOk { .. } => LOGIN_OK,
                AppMessage::Resume { .. } => RESUME,
                AppMessage::Data { .. } => DATA,
            },
            Message::Ctrl(m) => match m {
                CtrlMessage::IdentityLookupReq { .. } => IDENTITY_LOOKUP_REQ,
                CtrlMessage::IdentityLookupResp { .. } => IDENTITY_LOOKUP_RESP,
                CtrlMessage::TokenCheckReq { .. } => TOKEN_CHECK_REQ,
                CtrlMessage::TokenCheckResp { .. } => TOKEN_CHECK_RESP,
                CtrlMessage::AmsRegister { .. } => AMS_REGISTER,
                CtrlMessage::AmsRegisterAck { .. } => AMS_REGISTER_ACK,
                CtrlMessage::SessionNotice { .. } => SESSION_NOTICE,
                CtrlMessage::SessionFreeze { .. } => SESSION_FREEZE,
                CtrlMessage::StateStore { .. } => STATE_STORE,
                CtrlMessage::StateStoreAck { .. } => STATE_STORE_ACK,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Canonical field map
// ---------------------------------------------------------------------------

fn escape_into(out: &mut Vec<u8>, raw: &[u8]) {
    for &b in raw {
        match b {
            b'%' | b'=' | b'\n' => {
                out.push(b'%');
                out.push(hex_digit(b >> 4));
                out.push(hex_digit(b & 0xf));
            }
            0x20..=0x7e => out.push(b),
            _ => {
                out.push(b'%');
                out.push(hex_digit(b >> 4));
                out.push(hex_digit(b & 0xf));
            }
        }
    }
}

fn hex_digit(v: u8) -> u8 {
    match v {
        0..=9 => b'0' + v,
        _ => b'a' + (v - 10),
    }
}

fn unhex_digit(b: u8) -> Result<u8, WireError> {
    match b {
        b'0'..=b'9' => Ok(b - b'0'),
        b'a'..=b'f' => Ok(b - b'a' + 10),
        _ => Err(WireError::MalformedFrame("bad hex digit in escape".into())),
    }
}

fn unescape(raw: &[u8]) -> Result<Vec<u8>, WireError> {
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        let b = raw[i];
        if b == b'%' {
            if i + 2 >= raw.len() + 1 && i + 2 > raw.len() - 1 {
                // fallthrough to bounds check below
            }
            if i + 2 >= raw.len() {
                return Err(WireError::MalformedFrame("truncated escape".into()));
            }
            out.push(unhex_digit(raw[i + 1])? << 4 | unhex_digit(raw[i + 2])?);
            i += 3;
        } else {
            out.push(b);
            i += 1;
        }
    }
    Ok(out)
}

fn hex_encode(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for &b in bytes {
        s.push(hex_digit(b >> 4) as char);
        s.push(hex_digit(b & 0xf) as char);
    }
    s
}

fn hex_decode(s: &str) -> Result<Vec<u8>, WireError> {
    let b = s.as_bytes();
    if b.len() % 2 != 0 {
        return Err(WireError::MalformedFrame("odd-length hex field".into()));
    }
    let mut out = Vec::with_capacity(b.len() / 2);
    for pair in b.chunks(2) {
        out.push(unhex_digit(pair[0])? << 4 | unhex_digit(pair[1])?);
    }
    Ok(out)
}

/// Builder/reader for the canonical body. Values are raw bytes; escaping is
/// applied only at serialization time.
#[derive(Default)]
struct Fields {
    map: BTreeMap<String, Vec<u8>>,
}

impl Fields {
    fn new() -> Self {
        Self::default()
    }

    fn put(&mut self, key: &str, value: impl Into<Vec<u8>>) {
        self.map.insert(key.to_string(), value.into());
    }

    fn put_str(&mut self, key: &str, value: &str) {
        self.put(key, value.as_bytes().to_vec());
    }

    fn put_u64(&mut self, key: &str, value: u64) {
        self.put_str(key, &format!("{value:016x}"));
    }

    fn put_u32(&mut self, key: &str, value: u32) {
        self.put_str(key, &format!("{value:08x}"));
    }

    fn put_bool(&mut self, key: &str, value: bool) {
        self.put_str(key, if value { "1" } else { "0" });
    }

    fn put_hex(&mut self, key: &str, value: &[u8]) {
        self.put_str(key, &hex_encode(value));
    }

    fn put_ip(&mut self, key: &str, value: Ipv4) {
        self.put_u32(key, value.0);
    }

    fn serialize(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (k, v) in &self.map {
            out.extend_from_slice(k.as_bytes());
            out.push(b'=');
            escape_into(&mut out, v);
            out.push(b'\n');
        }
        out
    }

    fn parse(body: &[u8]) -> Result<Self, WireError> {
        let mut map = BTreeMap::new();
        let mut last_key: Option<String> = None;
        if body.is_empty() {
            return Ok(Fields { map });
        }
        if *body.last().unwrap() != b'\n' {
            return Err(WireError::MalformedFrame("body missing final newline".into()));
        }
        for line in body[..body.len() - 1].split(|&b| b == b'\n') {
            let eq = line
                .iter()
                .position(|&b| b == b'=')
                .ok_or_else(|| WireError::MalformedFrame("line without separator".into()))?;
            let key = std::str::from_utf8(&line[..eq])
                .map_err(|_| WireError::MalformedFrame("non-utf8 key".into()))?;
            if key.is_empty()
                || !key
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
            {
                return Err(WireError::MalformedFrame(format!("bad key {key:?}")));
            }
            // Strictly increasing keys: enforces both sorted order and
            // uniqueness, i.e. the canonical form.
            if let Some(prev) = &last_key {
                if key <= prev.as_str() {
                    return Err(WireError::MalformedFrame(
                        "keys not in canonical sorted order".into(),
                    ));
                }
            }
            let value = unescape(&line[eq + 1..])?;
            last_key = Some(key.to_string());
            map.insert(key.to_string(), value);
        }
        Ok(Fields { map })
    }

    fn take(&mut self, key: &str) -> Result<Vec<u8>, WireError> {
        self.map
            .remove(key)
            .ok_or_else(|| WireError::MalformedFrame(format!("missing field {key}")))
    }

    fn take_str(&mut self, key: &str) -> Result<String, WireError> {
        String::from_utf8(self.take(key)?)
            .map_err(|_| WireError::MalformedFrame(format!("field {key} is not utf-8")))
    }

    fn take_u64(&mut self, key: &str) -> Result<u64, WireError> {
        let s = self.take_str(key)?;
        if s.len() != 16 {
            return Err(WireError::MalformedFrame(format!("field {key} not 16 hex chars")));
        }
        u64::from_str_radix(&s, 16)
            .map_err(|_| WireError::MalformedFrame(format!("field {key} not hex")))
    }

    fn take_u32(&mut self, key: &str) -> Result<u32, WireError> {
        let s = self.take_str(key)?;
        if s.len() != 8 {
            return Err(WireError::MalformedFrame(format!("field {key} not 8 hex chars")));
        }
        u32::from_str_radix(&s, 16)
            .map_err(|_| WireError::MalformedFrame(format!("field {key} not hex")))
    }

    fn take_bool(&mut self, key: &str) -> Result<bool, WireError> {
        match self.take_str(key)?.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(WireError::MalformedFrame(format!(
                "field {key} not a boolean: {other:?}"
            ))),
        }
    }

    fn take_ip(&mut self, key: &str) -> Result<Ipv4, WireError> {
        Ok(Ipv4(self.take_u32(key)?))
    }

    fn take_imsi(&mut self, key: &str) -> Result<Imsi, WireError> {
        let s = self.take_str(key)?;
        Imsi::new(&s).map_err(|_| WireError::MalformedFrame(format!("field {key} is not an imsi")))
    }

    fn take_array<const N: usize>(&mut self, key: &str) -> Result<[u8; N], WireError> {
        let v = hex_decode(&self.take_str(key)?)?;
        v.try_into()
            .map_err(|_| WireError::MalformedFrame(format!("field {key} has wrong length")))
    }

    fn finish(self) -> Result<(), WireError> {
        if let Some(key) = self.map.keys().next() {
            return Err(WireError::MalformedFrame(format!("unknown field {key}")));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Encode
// ---------------------------------------------------------------------------

fn check_network_id(id: &str, what: &str) -> Result<(), WireError> {
    if id.is_empty() || id.contains('|') {
        return Err(WireError::InvariantViolation(format!("bad {what}: {id:?}")));
    }
    Ok(())
}

fn message_fields(msg: &Message) -> Result<Fields, WireError> {
    let mut f = Fields::new();
    match msg {
        Message::S1(m) => match m {
            S1Message::InitialUeMessage { imsi } => {
                f.put_str("imsi", imsi.as_str());
            }
            S1Message::AuthenticationRequest { rand, autn, sqn } => {
                f.put_hex("rand", rand);
                f.put_hex("autn", autn);
                f.put_u64("sqn", *sqn);
            }
            S1Message::AuthenticationResponse { res } => {
                f.put_hex("res", res);
            }
            S1Message::InitialContextSetupRequest { teid, ue_ip } => {
                if *teid == 0 {
                    return Err(WireError::InvariantViolation(
                        "teid must be nonzero for an established context".into(),
                    ));
                }
                f.put_u32("teid", *teid);
                f.put_ip("ue_ip", *ue_ip);
            }
            S1Message::InitialContextSetupResponse => {}
            S1Message::UeContextRelease { teid, reason } => {
                f.put_u32("teid", *teid);
                f.put_str("reason", reason);
            }
            S1Message::ContextModification { teid, new_ip } => {
                f.put_u32("teid", *teid);
                f.put_ip("new_ip", *new_ip);
            }
        },
        Message::S6a(m) => match m {
            S6aMessage::Air { imsi, visited_plmn } => {
                f.put_str("imsi", imsi.as_str());
                f.put_str("visited_plmn", visited_plmn);
            }
            S6aMessage::Aia { rand, xres, autn, sqn } => {
                f.put_hex("rand", rand);
                f.put_hex("xres", xres);
                f.put_hex("autn", autn);
                f.put_u64("sqn", *sqn);
            }
            S6aMessage::Ulr { imsi, mme_id } => {
                f.put_str("imsi", imsi.as_str());
                f.put_str("mme_id", mme_id);
            }
            S6aMessage::Ula {
                result,
                imsi,
                home_plmn,
                mec_entitlement,
                apn,
                qos,
            } => {
                f.put_u32("result", *result);
                f.put_str("imsi", imsi.as_str());
                f.put_str("home_plmn", home_plmn);
                f.put_bool("mec_entitlement", *mec_entitlement);
                f.put_str("apn", apn);
                f.put_str("qos", qos);
            }
        },
        Message::Fs3a(m) => {
            check_network_id(&m.source_network, "source_network")?;
            check_network_id(&m.destination_network, "destination_network")?;
            f.put_str("src_net", &m.source_network);
            f.put_str("dst_net", &m.destination_network);
            match &m.body {
                Fs3aBody::SubscriptionFetchReq { imsi } => {
                    f.put_str("imsi", imsi.as_str());
                }
                Fs3aBody::SubscriptionFetchResp {
                    result,
                    imsi,
                    home_plmn,
                    mec_entitlement,
                    apn,
                    qos,
                } => {
                    f.put_u32("result", *result);
                    f.put_str("imsi", imsi.as_str());
                    f.put_str("home_plmn", home_plmn);
                    f.put_bool("mec_entitlement", *mec_entitlement);
                    f.put_str("apn", apn);
                    f.put_str("qos", qos);
                }
                Fs3aBody::MobilityAdvertise {
                    user_id,
                    app_id,
                    source_network,
                    source_platform,
                } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("app_id", app_id);
                    f.put_str("adv_source_network", source_network);
                    f.put_str("source_platform", source_platform);
                }
                Fs3aBody::WatchRequest { user_id, requester } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("requester", requester);
                }
                Fs3aBody::UeArrivalNotice { user_id, platform } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("platform", platform);
                }
                Fs3aBody::StateFetchReq { user_id, app_id, streamed } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("app_id", app_id);
                    f.put_bool("streamed", *streamed);
                }
                Fs3aBody::StateFetchResp {
                    user_id,
                    app_id,
                    version,
                    total_len,
                    data,
                    streamed,
                } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("app_id", app_id);
                    f.put_u64("version", *version);
                    f.put_u64("total_len", *total_len);
                    f.put("data", data.clone());
                    f.put_bool("streamed", *streamed);
                }
                Fs3aBody::StateChunkReq { user_id, app_id, offset } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("app_id", app_id);
                    f.put_u64("offset", *offset);
                }
                Fs3aBody::StateChunkResp {
                    user_id,
                    app_id,
                    offset,
                    total_len,
                    data,
                } => {
                    f.put_str("user_id", user_id.as_str());
                    f.put_str("app_id", app_id);
                    f.put_u64("offset", *offset);
                    f.put_u64("total_len", *total_len);
                    f.put("data", data.clone());
                }
                Fs3aBody::NetworkRegister { network_id, address } => {
                    check_network_id(network_id, "network_id")?;
                    f.put_str("network_id", network_id);
                    f.put_str("address", address);
                }
            }
        }
        Message::App(m) => match m {
            AppMessage::LoginStart { app_id } => {
                f.put_str("app_id", app_id);
            }
            AppMessage::OidcAuthRequest {
                client_id,
                redirect_ref,
                source_ip,
            } => {
                f.put_str("client_id", client_id);
                f.put_str("redirect_ref", redirect_ref);
                f.put_ip("source_ip", *source_ip);
            }
            AppMessage::OidcConsentRequest { client_id, scope } => {
                f.put_str("client_id", client_id);
                f.put_str("scope", scope);
            }
            AppMessage::OidcConsent {
                client_id,
                source_ip,
                granted,
            } => {
                f.put_str("client_id", client_id);
                f.put_ip("source_ip", *source_ip);
                f.put_bool("granted", *granted);
            }
            AppMessage::OidcAuthResponse { token } => {
                f.put_str("token", token);
            }
            AppMessage::TokenPresent { token, source_ip } => {
                f.put_str("token", token);
                f.put_ip("source_ip", *source_ip);
            }
            AppMessage::LoginOk { session_id } => {
                f.put_u64("session_id", *session_id);
            }
            AppMessage::Resume { session_id } => {
                f.put_u64("session_id", *session_id);
            }
            AppMessage::Data { payload } => {
                f.put("payload", payload.clone());
            }
        },
        Message::Ctrl(m) => match m {
            CtrlMessage::IdentityLookupReq { source_ip, app_id } => {
                f.put_ip("source_ip", *source_ip);
                f.put_str("app_id", app_id);
            }
            CtrlMessage::IdentityLookupResp {
                result,
                imsi,
                entitled,
                source_ip,
            } => {
                f.put_u32("result", *result);
                f.put_str("imsi", imsi.as_str());
                f.put_bool("entitled", *entitled);
                f.put_ip("source_ip", *source_ip);
            }
            CtrlMessage::TokenCheckReq { token, source_ip, app_id } => {
                f.put_str("token", token);
                f.put_ip("source_ip", *source_ip);
                f.put_str("app_id", app_id);
            }
            CtrlMessage::TokenCheckResp { result, imsi, source_ip } => {
                f.put_u32("result", *result);
                f.put_str("imsi", imsi.as_str());
                f.put_ip("source_ip", *source_ip);
            }
            CtrlMessage::AmsRegister { user_id, app_id } => {
                f.put_str("user_id", user_id.as_str());
                f.put_str("app_id", app_id);
            }
            CtrlMessage::AmsRegisterAck { user_id, app_id } => {
                f.put_str("user_id", user_id.as_str());
                f.put_str("app_id", app_id);
            }
            CtrlMessage::SessionNotice { user_id, app_id } => {
                f.put_str("user_id", user_id.as_str());
                f.put_str("app_id", app_id);
            }
            CtrlMessage::SessionFreeze { user_id } => {
                f.put_str("user_id", user_id.as_str());
            }
            CtrlMessage::StateStore {
                user_id,
                app_id,
                version,
                total_len,
                data,
            } => {
                f.put_str("user_id", user_id.as_str());
                f.put_str("app_id", app_id);
                f.put_u64("version", *version);
                f.put_u64("total_len", *total_len);
                f.put("data", data.clone());
            }
            CtrlMessage::StateStoreAck { user_id, app_id } => {
                f.put_str("user_id", user_id.as_str());
                f.put_str("app_id", app_id);
            }
        },
    }
    Ok(f)
}

/// Encode a message as a single frame. Deterministic: identical messages
/// always produce identical bytes.
pub fn encode_frame(msg: &Message) -> Result<Vec<u8>, WireError> {
    let body = message_fields(msg)?.serialize();
    let length = body.len() as u64 + 1;
    if length > MAX_FRAME_LEN as u64 {
        return Err(WireError::InvariantViolation(format!(
            "frame length {length} exceeds cap {MAX_FRAME_LEN}"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len());
    out.extend_from_slice(&(length as u32).to_be_bytes());
    out.push(msg.msg_type());
    out.extend_from_slice(&body);
    Ok(out)
}

// ---------------------------------------------------------------------------
// Decode
// ---------------------------------------------------------------------------

fn decode_body(msg_type: u8, body: &[u8]) -> Result<Message, WireError> {
    use codes::*;
    let mut f = Fields::parse(body)?;
    let msg = match msg_type {
        INITIAL_UE_MESSAGE => Message::S1(S1Message::InitialUeMessage {
            imsi: f.take_imsi("imsi")?,
        }),
        AUTHENTICATION_REQUEST => Message::S1(S1Message::AuthenticationRequest {
            rand: f.take_array("rand")?,
            autn: f.take_array("autn")?,
            sqn: f.take_u64("sqn")?,
        }),
        AUTHENTICATION_RESPONSE => Message::S1(S1Message::AuthenticationResponse {
            res: f.take_array("res")?,
        }),
        INITIAL_CONTEXT_SETUP_REQUEST => {
            let teid = f.take_u32("teid")?;
            if teid == 0 {
                return Err(WireError::MalformedFrame("zero teid in context setup".into()));
            }
            Message::S1(S1Message::InitialContextSetupRequest {
                teid,
                ue_ip: f.take_ip("ue_ip")?,
            })
        }
        INITIAL_CONTEXT_SETUP_RESPONSE => Message::S1(S1Message::InitialContextSetupResponse),
        UE_CONTEXT_RELEASE => Message::S1(S1Message::UeContextRelease {
            teid: f.take_u32("teid")?,
            reason: f.take_str("reason")?,
        }),
        CONTEXT_MODIFICATION => Message::S1(S1Message::ContextModification {
            teid: f.take_u32("teid")?,
            new_ip: f.take_ip("new_ip")?,
        }),
        AIR => Message::S6a(S6aMessage::Air {
            imsi: f.take_imsi("imsi")?,
            visited_plmn: f.take_str("visited_plmn")?,
        }),
        AIA => Message::S6a(S6aMessage::Aia {
            rand: f.take_array("rand")?,
            xres: f.take_array("xres")?,
            autn: f.take_array("autn")?,
            sqn: f.take_u64("sqn")?,
        }),
        ULR => Message::S6a(S6aMessage::Ulr {
            imsi: f.take_imsi("imsi")?,
            mme_id: f.take_str("mme_id")?,
        }),
        ULA => Message::S6a(S6aMessage::Ula {
            result: f.take_u32("result")?,
            imsi: f.take_imsi("imsi")?,
            home_plmn: f.take_str("home_plmn")?,
            mec_entitlement: f.take_bool("mec_entitlement")?,
            apn: f.take_str("apn")?,
            qos: f.take_str("qos")?,
        }),
        SUBSCRIPTION_FETCH_REQ..=NETWORK_REGISTER | STATE_CHUNK_REQ | STATE_CHUNK_RESP => {
            let source_network = f.take_str("src_net")?;
            let destination_network = f.take_str("dst_net")?;
            let body = match msg_type {
                SUBSCRIPTION_FETCH_REQ => Fs3aBody::SubscriptionFetchReq {
                    imsi: f.take_imsi("imsi")?,
                },
                SUBSCRIPTION_FETCH_RESP => Fs3aBody::SubscriptionFetchResp {
                    result: f.take_u32("result")?,
                    imsi: f.take_imsi("imsi")?,
                    home_plmn: f.take_str("home_plmn")?,
                    mec_entitlement: f.take_bool("mec_entitlement")?,
                    apn: f.take_str("apn")?,
                    qos: f.take_str("qos")?,
                },
                MOBILITY_ADVERTISE => Fs3aBody::MobilityAdvertise {
                    user_id: f.take_imsi("user_id")?,
                    app_id: f.take_str("app_id")?,
                    source_network: f.take_str("adv_source_network")?,
                    source_platform: f.take_str("source_platform")?,
                },
                WATCH_REQUEST => Fs3aBody::WatchRequest {
                    user_id: f.take_imsi("user_id")?,
                    requester: f.take_str("requester")?,
                },
                UE_ARRIVAL_NOTICE => Fs3aBody::UeArrivalNotice {
                    user_id: f.take_imsi("user_id")?,
                    platform: f.take_str("platform")?,
                },
                STATE_FETCH_REQ => Fs3aBody::StateFetchReq {
                    user_id: f.take_imsi("user_id")?,
                    app_id: f.take_str("app_id")?,
                    streamed: f.take_bool("streamed")?,
                },
                STATE_FETCH_RESP => Fs3aBody::StateFetchResp {
                    user_id: f.take_imsi("user_id")?,
                    app_id: f.take_str("app_id")?,
                    version: f.take_u64("version")?,
                    total_len: f.take_u64("total_len")?,
                    data: f.take("data")?,
                    streamed: f.take_bool("streamed")?,
                },
                STATE_CHUNK_REQ => Fs3aBody::StateChunkReq {
                    user_id: f.take_imsi("user_id")?,
                    app_id: f.take_str("app_id")?,
                    offset: f.take_u64("offset")?,
                },
                STATE_CHUNK_RESP => Fs3aBody::StateChunkResp {
                    user_id: f.take_imsi("user_id")?,
                    app_id: f.take_str("app_id")?,
                    offset: f.take_u64("offset")?,
                    total_len: f.take_u64("total_len")?,
                    data: f.take("data")?,
                },
                NETWORK_REGISTER => Fs3aBody::NetworkRegister {
                    network_id: f.take_str("network_id")?,
                    address: f.take_str("address")?,
                },
                _ => unreachable!(),
            };
            Message::Fs3a(Fs3aMessage {
                source_network,
                destination_network,
                body,
            })
        }
        LOGIN_START => Message::App(AppMessage::LoginStart {
            app_id: f.take_str("app_id")?,
        }),
        OIDC_AUTH_REQUEST => Message::App(AppMessage::OidcAuthRequest {
            client_id: f.take_str("client_id")?,
            redirect_ref: f.take_str("redirect_ref")?,
            source_ip: f.take_ip("source_ip")?,
        }),
        OIDC_CONSENT_REQUEST => Message::App(AppMessage::OidcConsentRequest {
            client_id: f.take_str("client_id")?,
            scope: f.take_str("scope")?,
        }),
        OIDC_CONSENT => Message::App(AppMessage::OidcConsent {
            client_id: f.take_str("client_id")?,
            source_ip: f.take_ip("source_ip")?,
            granted: f.take_bool("granted")?,
        }),
        OIDC_AUTH_RESPONSE => Message::App(AppMessage::OidcAuthResponse {
            token: f.take_str("token")?,
        }),
        TOKEN_PRESENT => Message::App(AppMessage::TokenPresent {
            token: f.take_str("token")?,
            source_ip: f.take_ip("source_ip")?,
        }),
        LOGIN_OK => Message::App(AppMessage::LoginOk {
            session_id: f.take_u64("session_id")?,
        }),
        RESUME => Message::App(AppMessage::Resume {
            session_id: f.take_u64("session_id")?,
        }),
        DATA => Message::App(AppMessage::Data {
            payload: f.take("payload")?,
        }),
        IDENTITY_LOOKUP_REQ => Message::Ctrl(CtrlMessage::IdentityLookupReq {
            source_ip: f.take_ip("source_ip")?,
            app_id: f.take_str("app_id")?,
        }),
        IDENTITY_LOOKUP_RESP => Message::Ctrl(CtrlMessage::IdentityLookupResp {
            result: f.take_u32("result")?,
            imsi: f.take_imsi("imsi")?,
            entitled: f.take_bool("entitled")?,
            source_ip: f.take_ip("source_ip")?,
        }),
        TOKEN_CHECK_REQ => Message::Ctrl(CtrlMessage::TokenCheckReq {
            token: f.take_str("token")?,
            source_ip: f.take_ip("source_ip")?,
            app_id: f.take_str("app_id")?,
        }),
        TOKEN_CHECK_RESP => Message::Ctrl(CtrlMessage::TokenCheckResp {
            result: f.take_u32("result")?,
            imsi: f.take_imsi("imsi")?,
            source_ip: f.take_ip("source_ip")?,
        }),
        AMS_REGISTER => Message::Ctrl(CtrlMessage::AmsRegister {
            user_id: f.take_imsi("user_id")?,
            app_id: f.take_str("app_id")?,
        }),
        AMS_REGISTER_ACK => Message::Ctrl(CtrlMessage::AmsRegisterAck {
            user_id: f.take_imsi("user_id")?,
            app_id: f.take_str("app_id")?,
        }),
        SESSION_NOTICE => Message::Ctrl(CtrlMessage::SessionNotice {
            user_id: f.take_imsi("user_id")?,
            app_id: f.take_str("app_id")?,
        }),
        SESSION_FREEZE => Message::Ctrl(CtrlMessage::SessionFreeze {
            user_id: f.take_imsi("user_id")?,
        }),
        STATE_STORE => Message::Ctrl(CtrlMessage::StateStore {
            user_id: f.take_imsi("user_id")?,
            app_id: f.take_str("app_id")?,
            version: f.take_u64("version")?,
            total_len: f.take_u64("total_len")?,
            data: f.take("data")?,
        }),
        STATE_STORE_ACK => Message::Ctrl(CtrlMessage::StateStoreAck {
            user_id: f.take_imsi("user_id")?,
            app_id: f.take_str("app_id")?,
        }),
        other => {
            return Err(WireError::MalformedFrame(format!(
                "unknown msg_type 0x{other:02x}"
            )))
        }
    };
    f.finish()?;
    Ok(msg)
}

/// Decode one frame from the front of `bytes`. Returns the message and the
/// number of bytes consumed, enabling streaming decode of concatenated
/// frames; trailing bytes are untouched. Total over arbitrary input.
pub fn decode_frame(bytes: &[u8]) -> Result<(Message, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::NeedMoreBytes(HEADER_LEN - bytes.len()));
    }
    let length = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    if length == 0 || length > MAX_FRAME_LEN {
        return Err(WireError::MalformedFrame(format!("bad length field {length}")));
    }
    let total = 4 + length as usize;
    if bytes.len() < total {
        return Err(WireError::NeedMoreBytes(total - bytes.len()));
    }
    let msg = decode_body(bytes[4], &bytes[5..total])?;
    Ok((msg, total))
}
