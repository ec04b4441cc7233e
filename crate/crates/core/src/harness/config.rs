//! Scenario configuration: topology parameters, subscribers, applications
//! and the four protocol toggles, loadable from TOML.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::Imsi;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse failed: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("bad hex in field {0}")]
    BadHex(String),
    #[error("unknown scenario code {0:?} (expected e.g. \"MPT\")")]
    BadCode(String),
    #[error("network {0:?} not defined")]
    UnknownNetwork(String),
    #[error("{0}")]
    Invalid(String),
}

/// One-way propagation latencies, in milliseconds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Latencies {
    /// UE radio leg to the base station.
    pub ue_enb: f64,
    /// Base station backhaul to the core.
    pub enb_epc: f64,
    /// Base station to the co-located MEC platform (the S1 tap path).
    pub enb_mec: f64,
    /// Inside the core (MME to HSS).
    pub epc_intra: f64,
    /// Network edge elements (MME, HSS, manager, AMC) to the proxy.
    pub edge_proxy: f64,
    /// Between services on one MEC platform.
    pub intra_mec: f64,
    /// Full UE-to-MEC-application path (radio plus backhaul plus platform).
    pub ue_app: f64,
    /// Proxy-to-proxy interconnect between operators.
    pub trunk: f64,
    /// Anything to a central-cloud service.
    pub cloud: f64,
}

/// Link bandwidths, in Mbit/s.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bandwidths {
    pub default: f64,
    pub intra_mec: f64,
    pub trunk: f64,
    pub cloud: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkCfg {
    pub id: String,
    /// Five-digit PLMN (MCC+MNC) owned by this operator.
    pub plmn: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriberCfg {
    pub imsi: String,
    /// Permanent key, 64 hex digits.
    pub k_hex: String,
    /// Network id of the home operator.
    pub home: String,
    pub mec_entitlement: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppCfg {
    pub id: String,
    /// Federation-shared token MAC key for this application, hex.
    pub key_hex: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthPlacement {
    Cloud,
    Mec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubscriptionMode {
    OnDemand,
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateMode {
    /// Chunked pull, started when the platform learns of the arrival.
    OnArrival,
    /// Pipelined push, started off the S1 tap during attach.
    Prefetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthMode {
    Reauth,
    TokenReuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatePath {
    /// State moves between operators through the federation proxies.
    Federation,
    /// State is staged in a central cloud store (the no-federation baseline).
    Cloud,
}

/// The four protocol toggles plus the state transport, i.e. one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub auth_server: AuthPlacement,
    pub subscription_fetch: SubscriptionMode,
    pub state_fetch: StateMode,
    pub auth_mode: AuthMode,
    pub state_path: StatePath,
}

impl ScenarioSpec {
    /// Three-letter auth-scenario code: placement (C/M), subscription
    /// handling (U for on-demand, P for prefetch), re-auth vs token
    /// reuse (A/T). State handling is held at the federated default.
    pub fn from_code(code: &str) -> Result<Self, ConfigError> {
        let bad = || ConfigError::BadCode(code.to_string());
        let b = code.as_bytes();
        if b.len() != 3 {
            return Err(bad());
        }
        Ok(ScenarioSpec {
            auth_server: match b[0] {
                b'C' => AuthPlacement::Cloud,
                b'M' => AuthPlacement::Mec,
                _ => return Err(bad()),
            },
            subscription_fetch: match b[1] {
                b'U' => SubscriptionMode::OnDemand,
                b'P' => SubscriptionMode::Prefetch,
                _ => return Err(bad()),
            },
            state_fetch: StateMode::Prefetch,
            auth_mode: match b[2] {
                b'A' => AuthMode::Reauth,
                b'T' => AuthMode::TokenReuse,
                _ => return Err(bad()),
            },
            state_path: StatePath::Federation,
        })
    }

    pub fn code(&self) -> String {
        format!(
            "{}{}{}",
            match self.auth_server {
                AuthPlacement::Cloud => 'C',
                AuthPlacement::Mec => 'M',
            },
            match self.subscription_fetch {
                SubscriptionMode::OnDemand => 'U',
                SubscriptionMode::Prefetch => 'P',
            },
            match self.auth_mode {
                AuthMode::Reauth => 'A',
                AuthMode::TokenReuse => 'T',
            }
        )
    }

    pub const ALL_AUTH_CODES: [&'static str; 8] =
        ["CUA", "CUT", "CPA", "CPT", "MUA", "MUT", "MPA", "MPT"];
}

/// Everything a scenario run needs: topology numbers, principals, toggles.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Slice size for chunked state pulls, bytes.
    pub chunk_size: usize,
    pub token_lifetime_ms: u64,
    pub watch_ttl_ms: f64,
    /// Application state blob size, bytes (sweeps override per run).
    pub state_size_bytes: usize,
    pub latency: Latencies,
    pub bandwidth: Bandwidths,
    #[serde(rename = "network")]
    pub networks: Vec<NetworkCfg>,
    #[serde(rename = "subscriber")]
    pub subscribers: Vec<SubscriberCfg>,
    #[serde(rename = "app")]
    pub apps: Vec<AppCfg>,
    pub scenario: ScenarioSpec,
}

fn unhex(field: &str, s: &str) -> Result<Vec<u8>, ConfigError> {
    if s.len() % 2 != 0 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(ConfigError::BadHex(field.to_string()));
    }
    Ok((0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).unwrap())
        .collect())
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.networks.len() < 2 {
            return Err(ConfigError::Invalid(
                "at least two networks are required".into(),
            ));
        }
        for s in &self.subscribers {
            Imsi::new(&s.imsi)
                .map_err(|e| ConfigError::Invalid(format!("subscriber imsi: {e}")))?;
            if self.subscriber_key(s).is_err() {
                return Err(ConfigError::BadHex(format!("subscriber {} k_hex", s.imsi)));
            }
            if !self.networks.iter().any(|n| n.id == s.home) {
                return Err(ConfigError::UnknownNetwork(s.home.clone()));
            }
        }
        for a in &self.apps {
            unhex("app key_hex", &a.key_hex)?;
        }
        Ok(())
    }

    pub fn subscriber_key(&self, s: &SubscriberCfg) -> Result<[u8; 32], ConfigError> {
        unhex("k_hex", &s.k_hex)?
            .try_into()
            .map_err(|_| ConfigError::BadHex(format!("subscriber {} k_hex", s.imsi)))
    }

    pub fn app_key(&self, a: &AppCfg) -> Vec<u8> {
        unhex("key_hex", &a.key_hex).expect("validated at load")
    }

    pub fn network(&self, id: &str) -> Result<&NetworkCfg, ConfigError> {
        self.networks
            .iter()
            .find(|n| n.id == id)
            .ok_or_else(|| ConfigError::UnknownNetwork(id.to_string()))
    }
}

impl Default for ScenarioConfig {
    /// Desk-scale two-operator topology. The link numbers are calibrated so
    /// the relative results (stage orderings and latency-reduction ratios)
    /// mirror a lab-scale federation testbed: a slow UE-to-application data
    /// path, a distant central cloud, co-located MEC services, and a modest
    /// inter-operator trunk.
    fn default() -> Self {
        ScenarioConfig {
            seed: 42,
            chunk_size: 512 * 1024,
            token_lifetime_ms: 300_000,
            watch_ttl_ms: 86_400_000.0,
            state_size_bytes: 1_000_000,
            latency: Latencies {
                ue_enb: 2.0,
                enb_epc: 40.0,
                enb_mec: 1.0,
                epc_intra: 1.0,
                edge_proxy: 2.0,
                intra_mec: 1.0,
                ue_app: 50.0,
                trunk: 20.0,
                cloud: 100.0,
            },
            bandwidth: Bandwidths {
                default: 1000.0,
                intra_mec: 1000.0,
                trunk: 1000.0,
                cloud: 100.0,
            },
            networks: vec![
                NetworkCfg {
                    id: "opA".into(),
                    plmn: "00101".into(),
                },
                NetworkCfg {
                    id: "opB".into(),
                    plmn: "00102".into(),
                },
            ],
            subscribers: vec![
                SubscriberCfg {
                    imsi: "001010000000001".into(),
                    k_hex: "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f"
                        .into(),
                    home: "opA".into(),
                    mec_entitlement: true,
                },
                SubscriberCfg {
                    imsi: "001020000000001".into(),
                    k_hex: "202122232425262728292a2b2c2d2e2f303132333435363738393a3b3c3d3e3f"
                        .into(),
                    home: "opB".into(),
                    mec_entitlement: true,
                },
            ],
            apps: vec![AppCfg {
                id: "game".into(),
                key_hex: "6665646572617465642d6170702d6b65792d30316665646572617465642d6170"
                    .into(),
            }],
            scenario: ScenarioSpec {
                auth_server: AuthPlacement::Mec,
                subscription_fetch: SubscriptionMode::Prefetch,
                state_fetch: StateMode::Prefetch,
                auth_mode: AuthMode::TokenReuse,
                state_path: StatePath::Federation,
            },
        }
    }
}
