//! Real-socket transport: the same entities, driven over localhost TCP
//! streams with length-prefixed frames instead of the virtual clock.
//!
//! Each entity gets a listener; frames are read by per-connection reader
//! threads and funnelled into a single dispatch loop, so handlers still run
//! one at a time exactly as in the simulator. Wall-clock timings from this
//! mode are reported only — they are never asserted anywhere.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration, Instant};

use crate::wire::{decode_frame, encode_frame, Message, WireError};

use super::{Command, Ctx, Entity, Mark, NetError};

enum Delivery {
    Frame { to: String, from: String, msg: Message },
    Command { to: String, cmd: Command },
}

/// Result of one loopback run: wall-clock marks plus total duration.
pub struct LoopbackRun {
    pub marks: Vec<Mark>,
    pub audits: Vec<String>,
    pub wall_ms: f64,
    pub entities: HashMap<String, Box<dyn Entity>>,
}

struct LoopCtx<'a> {
    me: String,
    start: Instant,
    addrs: &'a HashMap<String, SocketAddr>,
    links: &'a HashSet<(String, String)>,
    conns: &'a mut HashMap<(String, String), TcpStream>,
    inflight: &'a Arc<AtomicI64>,
    tx: &'a mpsc::Sender<Delivery>,
    marks: &'a mut Vec<Mark>,
    audits: &'a mut Vec<String>,
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl LoopCtx<'_> {
    fn send_impl(&mut self, to: &str, msg: &Message) -> Result<(), NetError> {
        if !self.links.contains(&pair(&self.me, to)) {
            return Err(NetError::NoRoute {
                from: self.me.clone(),
                to: to.to_string(),
            });
        }
        let addr = self
            .addrs
            .get(to)
            .ok_or_else(|| NetError::UnknownEndpoint(to.to_string()))?;
        let key = (self.me.clone(), to.to_string());
        if !self.conns.contains_key(&key) {
            let mut stream = TcpStream::connect(addr)
                .map_err(|_| NetError::UnknownEndpoint(to.to_string()))?;
            // Handshake: announce who is talking on this connection.
            let id = self.me.as_bytes();
            let mut hello = vec![id.len() as u8];
            hello.extend_from_slice(id);
            stream.write_all(&hello).expect("loopback handshake write");
            self.conns.insert(key.clone(), stream);
        }
        let frame = encode_frame(msg).expect("messages built by entities are well-formed");
        self.inflight.fetch_add(1, Ordering::SeqCst);
        self.conns
            .get_mut(&key)
            .unwrap()
            .write_all(&frame)
            .expect("loopback frame write");
        Ok(())
    }
}

impl Ctx for LoopCtx<'_> {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1000.0
    }

    fn send(&mut self, to: &str, msg: &Message) -> Result<(), NetError> {
        self.send_impl(to, msg)
    }

    fn send_streamed(&mut self, to: &str, msg: &Message) -> Result<(), NetError> {
        // Real sockets are already streams; no distinction here.
        self.send_impl(to, msg)
    }

    fn schedule(&mut self, delay_ms: f64, cmd: Command) {
        let to = self.me.clone();
        self.schedule_for(&to, delay_ms, cmd);
    }

    fn schedule_for(&mut self, to: &str, delay_ms: f64, cmd: Command) {
        self.inflight.fetch_add(1, Ordering::SeqCst);
        let tx = self.tx.clone();
        let to = to.to_string();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_secs_f64(delay_ms.max(0.0) / 1000.0));
            let _ = tx.send(Delivery::Command { to, cmd });
        });
    }

    fn mark(&mut self, label: &str) {
        self.marks.push(Mark {
            at_ms: self.now(),
            entity: self.me.clone(),
            label: label.to_string(),
        });
    }

    fn audit(&mut self, entry: &str) {
        self.audits.push(format!("[{:.3}] {}: {}", self.now(), self.me, entry));
    }
}

fn spawn_reader(owner: String, mut stream: TcpStream, tx: mpsc::Sender<Delivery>) {
    std::thread::spawn(move || {
        // Handshake: one length byte then the peer id.
        let mut len = [0u8; 1];
        if stream.read_exact(&mut len).is_err() {
            return;
        }
        let mut id = vec![0u8; len[0] as usize];
        if stream.read_exact(&mut id).is_err() {
            return;
        }
        let from = String::from_utf8_lossy(&id).into_owned();

        let mut buf: Vec<u8> = Vec::new();
        let mut chunk = [0u8; 64 * 1024];
        loop {
            match decode_frame(&buf) {
                Ok((msg, consumed)) => {
                    buf.drain(..consumed);
                    if tx
                        .send(Delivery::Frame {
                            to: owner.clone(),
                            from: from.clone(),
                            msg,
                        })
                        .is_err()
                    {
                        return;
                    }
                    continue;
                }
                Err(WireError::NeedMoreBytes(_)) => {}
                Err(_) => return, // malformed peer; drop the connection
            }
            match stream.read(&mut chunk) {
                Ok(0) | Err(_) => return,
                Ok(n) => buf.extend_from_slice(&chunk[..n]),
            }
        }
    });
}

/// Drive `entities` over localhost sockets until no message is in flight.
/// `links` lists allowed endpoint pairs (latency/bandwidth are ignored —
/// real sockets provide the timing). `kickoff` commands start the scenario.
pub fn run_loopback(
    entities: Vec<Box<dyn Entity>>,
    links: &[(String, String)],
    kickoff: Vec<(String, Command)>,
) -> LoopbackRun {
    let start = Instant::now();
    let (tx, rx) = mpsc::channel::<Delivery>();
    let inflight = Arc::new(AtomicI64::new(0));

    let mut addrs = HashMap::new();
    let mut owned: HashMap<String, Box<dyn Entity>> = HashMap::new();
    for e in entities {
        let id = e.id().to_string();
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback listener");
        addrs.insert(id.clone(), listener.local_addr().unwrap());
        let tx_acc = tx.clone();
        let owner = id.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                match stream {
                    Ok(s) => spawn_reader(owner.clone(), s, tx_acc.clone()),
                    Err(_) => return,
                }
            }
        });
        owned.insert(id, e);
    }

    let link_set: HashSet<(String, String)> =
        links.iter().map(|(a, b)| pair(a, b)).collect();

    for (to, cmd) in kickoff {
        inflight.fetch_add(1, Ordering::SeqCst);
        tx.send(Delivery::Command { to, cmd }).unwrap();
    }

    let mut conns = HashMap::new();
    let mut marks = Vec::new();
    let mut audits = Vec::new();

    while inflight.load(Ordering::SeqCst) > 0 {
        let delivery = match rx.recv_timeout(Duration::from_secs(30)) {
            Ok(d) => d,
            Err(_) => break, // stalled peer; report what we have
        };
        let (to, work): (String, Box<dyn FnOnce(&mut dyn Entity, &mut dyn Ctx)>) = match delivery {
            Delivery::Frame { to, from, msg } => (
                to,
                Box::new(move |e, ctx| e.handle_message(ctx, &from, msg)),
            ),
            Delivery::Command { to, cmd } => {
                (to, Box::new(move |e, ctx| e.handle_command(ctx, cmd)))
            }
        };
        let Some(mut entity) = owned.remove(&to) else {
            inflight.fetch_sub(1, Ordering::SeqCst);
            continue;
        };
        {
            let mut ctx = LoopCtx {
                me: to.clone(),
                start,
                addrs: &addrs,
                links: &link_set,
                conns: &mut conns,
                inflight: &inflight,
                tx: &tx,
                marks: &mut marks,
                audits: &mut audits,
            };
            work(entity.as_mut(), &mut ctx);
        }
        owned.insert(to, entity);
        inflight.fetch_sub(1, Ordering::SeqCst);
    }

    LoopbackRun {
        marks,
        audits,
        wall_ms: start.elapsed().as_secs_f64() * 1000.0,
        entities: owned,
    }
}
