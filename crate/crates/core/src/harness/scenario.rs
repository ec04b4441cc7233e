//! Topology construction and the roaming journey driver.
//!
//! Every scenario runs the same two-act journey: the subscriber attaches
//! and logs in at home, builds up application state, then detaches and
//! reappears under the visited operator. Only the roaming act is measured;
//! the home act exists to put tokens, advertisements and state in place.

use std::collections::HashMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cellular::{Enb, Hss, Mme, SubscriptionRecord, Ue};
use crate::fedproxy::{LocalEndpoints, Proxy};
use crate::mecsys::{
    Ams, AmsConfig, Amc, AmcConfig, AppServer, AppServerConfig, AuthServer, AuthServerConfig,
    CloudState, Manager, ManagerConfig, StateBackend, StateSource,
};
use crate::netsim::loopback::run_loopback;
use crate::netsim::{Command, Entity, Mark, NetError, Sim};
use crate::wire::Imsi;

use super::config::{
    AuthMode, AuthPlacement, ConfigError, ScenarioConfig, ScenarioSpec, StateMode, StatePath,
    SubscriptionMode,
};
use super::report::{assemble_report, LatencyReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("scenario precondition failed: {0}")]
    Precondition(String),
}

pub const UE_ID: &str = "ue1";
pub const CLOUD_STORE: &str = "cloud:store";

pub fn enb_id(net: &str) -> String {
    format!("{net}:enb")
}
pub fn mme_id(net: &str) -> String {
    format!("{net}:mme")
}
pub fn hss_id(net: &str) -> String {
    format!("{net}:hss")
}
pub fn proxy_id(net: &str) -> String {
    format!("{net}:proxy")
}
pub fn mgr_id(net: &str) -> String {
    format!("{net}:mgr")
}
pub fn auth_id(net: &str) -> String {
    format!("{net}:auth")
}
pub fn app_id(net: &str, app: &str) -> String {
    format!("{net}:app:{app}")
}
pub fn ams_id(net: &str) -> String {
    format!("{net}:ams")
}
pub fn amc_id(net: &str) -> String {
    format!("{net}:amc")
}

/// Build the full two-operator (or larger) simulation for one scenario.
pub fn build_sim(cfg: &ScenarioConfig, spec: &ScenarioSpec) -> Result<Sim, HarnessError> {
    let mut sim = Sim::new();
    let lat = &cfg.latency;
    let bw = &cfg.bandwidth;

    let plmn_to_network: std::collections::HashMap<String, String> = cfg
        .networks
        .iter()
        .map(|n| (n.plmn.clone(), n.id.clone()))
        .collect();
    let app_keys: std::collections::HashMap<String, Vec<u8>> = cfg
        .apps
        .iter()
        .map(|a| (a.id.clone(), cfg.app_key(a)))
        .collect();

    for (i, net) in cfg.networks.iter().enumerate() {
        let n = &net.id;
        let mut hss = Hss::new(&hss_id(n), cfg.seed.wrapping_add(i as u64));
        let mut mgr = Manager::new(
            &mgr_id(n),
            ManagerConfig {
                network: n.clone(),
                plmn: net.plmn.clone(),
                proxy: proxy_id(n),
                ams: ams_id(n),
                apps: cfg.apps.iter().map(|a| app_id(n, &a.id)).collect(),
                plmn_to_network: plmn_to_network.clone(),
                subscription_prefetch: spec.subscription_fetch == SubscriptionMode::Prefetch,
                state_prefetch: spec.state_fetch == StateMode::Prefetch,
            },
        );
        for s in cfg.subscribers.iter().filter(|s| &s.home == n) {
            let imsi = Imsi::new(&s.imsi).expect("validated at load");
            let record = SubscriptionRecord {
                imsi: imsi.clone(),
                home_plmn: net.plmn.clone(),
                mec_entitlement: s.mec_entitlement,
                apn: "internet".into(),
                qos: "default".into(),
            };
            hss.provision(imsi, cfg.subscriber_key(s)?, record.clone());
            mgr.preload_local(record);
        }

        let mme = Mme::new(
            &mme_id(n),
            &net.plmn,
            &enb_id(n),
            &hss_id(n),
            &proxy_id(n),
            0x0a00_0000 + ((i as u32 + 1) << 16),
        );
        let enb = Enb::new(&enb_id(n), &mme_id(n), &mgr_id(n));

        let mut proxy = Proxy::new(
            &proxy_id(n),
            n,
            LocalEndpoints {
                mme: mme_id(n),
                hss: hss_id(n),
                manager: mgr_id(n),
                amc: amc_id(n),
            },
        );
        for peer in &cfg.networks {
            proxy
                .register_network(&peer.id, &peer.plmn, &proxy_id(&peer.id))
                .expect("distinct prefixes validated at load");
        }

        let auth = AuthServer::new(
            &auth_id(n),
            AuthServerConfig {
                issuer: n.clone(),
                manager: mgr_id(n),
                app_keys: app_keys.clone(),
                token_lifetime_ms: cfg.token_lifetime_ms,
                seed: cfg.seed.wrapping_add(100 + i as u64),
            },
        );

        for a in &cfg.apps {
            let app = AppServer::new(
                &app_id(n, &a.id),
                AppServerConfig {
                    network: n.clone(),
                    app_id: a.id.clone(),
                    authsrv: auth_id(n),
                    manager: mgr_id(n),
                    ams: ams_id(n),
                    state_backend: match spec.state_path {
                        StatePath::Federation => StateBackend::Federation,
                        StatePath::Cloud => StateBackend::Cloud {
                            store: CLOUD_STORE.into(),
                        },
                    },
                    chunk_size: cfg.chunk_size,
                },
            );
            sim.add_entity(Box::new(app));
        }

        let ams = Ams::new(
            &ams_id(n),
            AmsConfig {
                network: n.clone(),
                amc: amc_id(n),
                manager: mgr_id(n),
                apps: cfg
                    .apps
                    .iter()
                    .map(|a| (a.id.clone(), app_id(n, &a.id)))
                    .collect(),
                state_prefetch: spec.state_fetch == StateMode::Prefetch,
                state_source: match spec.state_path {
                    StatePath::Federation => StateSource::Federation,
                    StatePath::Cloud => StateSource::Cloud {
                        store: CLOUD_STORE.into(),
                    },
                },
                watch_ttl_ms: cfg.watch_ttl_ms,
            },
        );
        let amc = Amc::new(
            &amc_id(n),
            AmcConfig {
                network: n.clone(),
                ams: ams_id(n),
                proxy: proxy_id(n),
                neighbors: cfg
                    .networks
                    .iter()
                    .filter(|o| &o.id != n)
                    .map(|o| o.id.clone())
                    .collect(),
            },
        );

        sim.add_entity(Box::new(hss));
        sim.add_entity(Box::new(mme));
        sim.add_entity(Box::new(enb));
        sim.add_entity(Box::new(proxy));
        sim.add_entity(Box::new(mgr));
        sim.add_entity(Box::new(auth));
        sim.add_entity(Box::new(ams));
        sim.add_entity(Box::new(amc));

        // Cellular control plane.
        sim.add_link(UE_ID, &enb_id(n), lat.ue_enb, bw.default);
        sim.add_link(&enb_id(n), &mme_id(n), lat.enb_epc, bw.default);
        sim.add_link(&enb_id(n), &mgr_id(n), lat.enb_mec, bw.default);
        sim.add_link(&mme_id(n), &hss_id(n), lat.epc_intra, bw.default);
        // Edge elements to the federation proxy.
        sim.add_link(&mme_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        sim.add_link(&hss_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        sim.add_link(&mgr_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        sim.add_link(&amc_id(n), &proxy_id(n), lat.edge_proxy, bw.default);
        // Platform-internal mesh.
        sim.add_link(&mgr_id(n), &ams_id(n), lat.intra_mec, bw.intra_mec);
        sim.add_link(&ams_id(n), &amc_id(n), lat.intra_mec, bw.intra_mec);
        for a in &cfg.apps {
            let app = app_id(n, &a.id);
            sim.add_link(&mgr_id(n), &app, lat.intra_mec, bw.intra_mec);
            sim.add_link(&app, &ams_id(n), lat.intra_mec, bw.intra_mec);
            // The user plane UE<->application path, collapsed to one link.
            sim.add_link(UE_ID, &app, lat.ue_app, bw.default);
        }
        // Auth server placement decides its link latencies.
        match spec.auth_server {
            AuthPlacement::Mec => {
                sim.add_link(&auth_id(n), &mgr_id(n), lat.intra_mec, bw.intra_mec);
                sim.add_link(UE_ID, &auth_id(n), lat.ue_app, bw.default);
                for a in &cfg.apps {
                    sim.add_link(&auth_id(n), &app_id(n, &a.id), lat.intra_mec, bw.intra_mec);
                }
            }
            AuthPlacement::Cloud => {
                sim.add_link(&auth_id(n), &mgr_id(n), lat.cloud, bw.cloud);
                sim.add_link(UE_ID, &auth_id(n), lat.cloud, bw.cloud);
                for a in &cfg.apps {
                    sim.add_link(&auth_id(n), &app_id(n, &a.id), lat.cloud, bw.cloud);
                }
            }
        }
        if spec.state_path == StatePath::Cloud {
            for a in &cfg.apps {
                sim.add_link(&app_id(n, &a.id), CLOUD_STORE, lat.cloud, bw.cloud);
            }
            sim.add_link(&ams_id(n), CLOUD_STORE, lat.cloud, bw.cloud);
        }
    }

    // Proxy interconnect mesh. The trunks are persistent by design — the
    // operators keep them up independently of any subscriber's movements —
    // so they never pay the first-use handshake.
    for (i, a) in cfg.networks.iter().enumerate() {
        for b in cfg.networks.iter().skip(i + 1) {
            sim.add_link(&proxy_id(&a.id), &proxy_id(&b.id), lat.trunk, bw.trunk);
            sim.establish(&proxy_id(&a.id), &proxy_id(&b.id));
        }
    }

    if spec.state_path == StatePath::Cloud {
        sim.add_entity(Box::new(CloudState::new(CLOUD_STORE, cfg.chunk_size)));
    }

    Ok(sim)
}

/// Deterministic state blob: same seed, same bytes, every run. Drawn from
/// an escape-free alphabet so the wire encoding carries it byte-for-byte;
/// the frame cap then admits the largest configured blobs with only header
/// overhead on top.
pub fn state_blob(seed: u64, len: usize) -> Vec<u8> {
    const ALPHABET: &[u8; 64] =
        b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+-";
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4154_4542_4c4f);
    let mut blob = vec![0u8; len];
    rng.fill_bytes(&mut blob);
    for b in &mut blob {
        *b = ALPHABET[(*b & 0x3f) as usize];
    }
    blob
}

/// A finished run: the timeline, the phase boundary, and the simulator
/// itself for deeper inspection (traces, audits, entity state).
pub struct ScenarioOutcome {
    pub report: LatencyReport,
    pub phase_start_ms: f64,
    pub sim: Sim,
}

/// Run the standard journey for `spec`, measuring the roaming act.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    spec: &ScenarioSpec,
    label: &str,
) -> Result<ScenarioOutcome, HarnessError> {
    run_scenario_sized(cfg, spec, label, cfg.state_size_bytes)
}

/// Same, with the state blob size overridden (used by the size sweep).
pub fn run_scenario_sized(
    cfg: &ScenarioConfig,
    spec: &ScenarioSpec,
    label: &str,
    state_size: usize,
) -> Result<ScenarioOutcome, HarnessError> {
    let home = &cfg.networks[0].id;
    let visited = &cfg.networks[1].id;
    let sub = cfg
        .subscribers
        .iter()
        .find(|s| &s.home == home)
        .ok_or_else(|| HarnessError::Precondition(format!("no subscriber homed in {home}")))?;
    let imsi = Imsi::new(&sub.imsi).expect("validated at load");
    let app = cfg
        .apps
        .first()
        .ok_or_else(|| HarnessError::Precondition("no application configured".into()))?;

    let mut sim = build_sim(cfg, spec)?;
    sim.add_entity(Box::new(Ue::new(UE_ID, imsi.clone(), cfg.subscriber_key(sub)?)));

    // Act one, at home: attach, log in, build state, then leave. The home
    // login always runs the full OIDC exchange — that is where the token
    // a token-reuse scenario presents later comes from.
    sim.schedule_command(
        sim.now(),
        UE_ID,
        Command::StartAttach { enb: enb_id(home) },
    );
    sim.run_until_idle()?;
    if !ue_attached(&sim) {
        return Err(HarnessError::Precondition("home attach failed".into()));
    }
    sim.schedule_command(
        sim.now(),
        UE_ID,
        Command::StartLogin {
            app: app_id(home, &app.id),
            app_id: app.id.clone(),
            authsrv: Some(auth_id(home)),
        },
    );
    sim.run_until_idle()?;
    sim.schedule_command(
        sim.now(),
        &app_id(home, &app.id),
        Command::UpdateState {
            user_id: imsi.clone(),
            blob: state_blob(cfg.seed, state_size),
        },
    );
    sim.run_until_idle()?;
    if spec.state_path == StatePath::Federation {
        sim.schedule_command(
            sim.now(),
            &app_id(home, &app.id),
            Command::Advertise {
                user_id: imsi.clone(),
            },
        );
        sim.run_until_idle()?;
    }
    sim.schedule_command(sim.now(), UE_ID, Command::Detach);
    sim.run_until_idle()?;

    // Act two, roaming: reattach under the visited operator with the login
    // armed to fire the moment service is back.
    let phase_start = sim.now() + 1.0;
    sim.schedule_command(
        phase_start,
        UE_ID,
        Command::PlanLogin {
            app: app_id(visited, &app.id),
            app_id: app.id.clone(),
            authsrv: match spec.auth_mode {
                AuthMode::Reauth => Some(auth_id(visited)),
                AuthMode::TokenReuse => None,
            },
        },
    );
    sim.schedule_command(
        phase_start,
        UE_ID,
        Command::StartAttach {
            enb: enb_id(visited),
        },
    );
    sim.run_until_idle()?;

    let report = assemble_report(
        label,
        sim.marks(),
        phase_start,
        spec.state_fetch == StateMode::Prefetch && spec.state_path == StatePath::Federation,
    );
    Ok(ScenarioOutcome {
        report,
        phase_start_ms: phase_start,
        sim,
    })
}

fn ue_attached(sim: &Sim) -> bool {
    sim.entity(UE_ID)
        .and_then(|e| e.as_any().downcast_ref::<Ue>())
        .map(Ue::is_attached)
        .unwrap_or(false)
}

/// Outcome of a wall-clock run over localhost sockets. The stage timeline
/// has the same shape as the simulated one, but its numbers are real
/// elapsed milliseconds: they are reported, never asserted.
pub struct LoopbackOutcome {
    pub report: LatencyReport,
    pub phase_start_ms: f64,
    pub wall_ms: f64,
    pub audits: Vec<String>,
    /// Final entity states, keyed by id, for post-run inspection.
    pub entities: HashMap<String, Box<dyn Entity>>,
}

/// Run the standard journey over the loopback socket transport.
pub fn run_scenario_loopback(
    cfg: &ScenarioConfig,
    spec: &ScenarioSpec,
    label: &str,
) -> Result<LoopbackOutcome, HarnessError> {
    let home = &cfg.networks[0].id;
    let visited = &cfg.networks[1].id;
    let sub = cfg
        .subscribers
        .iter()
        .find(|s| &s.home == home)
        .ok_or_else(|| HarnessError::Precondition(format!("no subscriber homed in {home}")))?;
    let imsi = Imsi::new(&sub.imsi).expect("validated at load");
    let app = cfg
        .apps
        .first()
        .ok_or_else(|| HarnessError::Precondition("no application configured".into()))?;

    let mut sim = build_sim(cfg, spec)?;
    sim.add_entity(Box::new(Ue::new(UE_ID, imsi.clone(), cfg.subscriber_key(sub)?)));
    let (mut entities, links) = sim.into_parts();

    // The same journey as the simulated run, step by step; each step is one
    // drive to quiescence over real sockets.
    let mut steps: Vec<Vec<(String, Command)>> = vec![
        vec![(UE_ID.into(), Command::StartAttach { enb: enb_id(home) })],
        vec![(
            UE_ID.into(),
            Command::StartLogin {
                app: app_id(home, &app.id),
                app_id: app.id.clone(),
                authsrv: Some(auth_id(home)),
            },
        )],
        vec![(
            app_id(home, &app.id),
            Command::UpdateState {
                user_id: imsi.clone(),
                blob: state_blob(cfg.seed, cfg.state_size_bytes),
            },
        )],
    ];
    if spec.state_path == StatePath::Federation {
        steps.push(vec![(
            app_id(home, &app.id),
            Command::Advertise {
                user_id: imsi.clone(),
            },
        )]);
    }
    steps.push(vec![(UE_ID.into(), Command::Detach)]);
    steps.push(vec![
        (
            UE_ID.into(),
            Command::PlanLogin {
                app: app_id(visited, &app.id),
                app_id: app.id.clone(),
                authsrv: match spec.auth_mode {
                    AuthMode::Reauth => Some(auth_id(visited)),
                    AuthMode::TokenReuse => None,
                },
            },
        ),
        (
            UE_ID.into(),
            Command::StartAttach {
                enb: enb_id(visited),
            },
        ),
    ]);

    let last = steps.len() - 1;
    let mut marks: Vec<Mark> = Vec::new();
    let mut audits: Vec<String> = Vec::new();
    let mut elapsed = 0.0;
    let mut phase_start = 0.0;
    for (i, kickoff) in steps.into_iter().enumerate() {
        if i == last {
            phase_start = elapsed;
        }
        let run = run_loopback(entities, &links, kickoff);
        marks.extend(run.marks.into_iter().map(|m| Mark {
            at_ms: elapsed + m.at_ms,
            ..m
        }));
        audits.extend(run.audits);
        elapsed += run.wall_ms;
        if i == 0 {
            let attached = run
                .entities
                .get(UE_ID)
                .and_then(|e| e.as_any().downcast_ref::<Ue>())
                .map(Ue::is_attached)
                .unwrap_or(false);
            if !attached {
                return Err(HarnessError::Precondition("home attach failed".into()));
            }
        }
        entities = run.entities.into_values().collect::<Vec<Box<dyn Entity>>>();
    }

    let report = assemble_report(
        label,
        &marks,
        phase_start,
        spec.state_fetch == StateMode::Prefetch && spec.state_path == StatePath::Federation,
    );
    Ok(LoopbackOutcome {
        report,
        phase_start_ms: phase_start,
        wall_ms: elapsed,
        audits,
        entities: entities
            .into_iter()
            .map(|e| (e.id().to_string(), e))
            .collect(),
    })
}

/// All eight authentication scenarios (placement x subscription x auth),
/// with state handling held at the federated prefetch default.
pub fn run_auth_matrix(cfg: &ScenarioConfig) -> Result<Vec<ScenarioOutcome>, HarnessError> {
    ScenarioSpec::ALL_AUTH_CODES
        .iter()
        .map(|code| {
            let spec = ScenarioSpec::from_code(code)?;
            run_scenario(cfg, &spec, code)
        })
        .collect()
}

/// The three state-mobility paths compared by the size sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateRoute {
    /// Central cloud store, fetched on demand.
    Cloud,
    /// Federation proxies, fetched on demand.
    Proxy,
    /// Federation proxies, prefetched on arrival.
    ProxyPrefetch,
}

impl StateRoute {
    pub const ALL: [StateRoute; 3] =
        [StateRoute::Cloud, StateRoute::Proxy, StateRoute::ProxyPrefetch];

    pub fn label(&self) -> &'static str {
        match self {
            StateRoute::Cloud => "cloud",
            StateRoute::Proxy => "proxy",
            StateRoute::ProxyPrefetch => "proxy_prefetch",
        }
    }

    /// Everything except the state handling is pinned to the fastest auth
    /// scenario so the sweep isolates state mobility.
    pub fn spec(&self) -> ScenarioSpec {
        let mut spec = ScenarioSpec::from_code("MPT").expect("static code");
        match self {
            StateRoute::Cloud => {
                spec.state_path = StatePath::Cloud;
                spec.state_fetch = StateMode::OnArrival;
            }
            StateRoute::Proxy => spec.state_fetch = StateMode::OnArrival,
            StateRoute::ProxyPrefetch => {}
        }
        spec
    }
}

/// One row of the state-size sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub route: StateRoute,
    pub size_bytes: usize,
    /// User-visible state transfer time (the M2 stage).
    pub state_ms: f64,
    pub total_ms: f64,
}

pub fn run_state_sweep(
    cfg: &ScenarioConfig,
    sizes: &[usize],
) -> Result<Vec<SweepRow>, HarnessError> {
    let mut rows = Vec::new();
    for &size in sizes {
        for route in StateRoute::ALL {
            let label = format!("{}:{}", route.label(), size);
            let out = run_scenario_sized(cfg, &route.spec(), &label, size)?;
            let state_ms = out.report.duration("state").ok_or_else(|| {
                HarnessError::Precondition(format!("no state stage in {label}"))
            })?;
            rows.push(SweepRow {
                route,
                size_bytes: size,
                state_ms,
                total_ms: out.report.total_ms,
            });
        }
    }
    Ok(rows)
}

/// The three end-to-end comparison scenarios: (1) everything in the cloud,
/// (2) federated MEC with on-demand fetching, (3) federated MEC with
/// prefetching and token reuse.
pub fn interruption_spec(which: u8) -> Result<ScenarioSpec, HarnessError> {
    let spec = match which {
        1 => {
            let mut s = ScenarioSpec::from_code("CUA")?;
            s.state_path = StatePath::Cloud;
            s.state_fetch = StateMode::OnArrival;
            s
        }
        2 => {
            let mut s = ScenarioSpec::from_code("MUA")?;
            s.state_fetch = StateMode::OnArrival;
            s
        }
        3 => ScenarioSpec::from_code("MPT")?,
        other => {
            return Err(HarnessError::Precondition(format!(
                "unknown interruption scenario {other} (expected 1..=3)"
            )))
        }
    };
    Ok(spec)
}

pub fn run_interruption(cfg: &ScenarioConfig, which: u8) -> Result<ScenarioOutcome, HarnessError> {
    let spec = interruption_spec(which)?;
    run_scenario(cfg, &spec, &format!("scenario{which}"))
}
