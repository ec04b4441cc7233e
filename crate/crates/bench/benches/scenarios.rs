//! Criterion benchmarks: wire codec throughput and full scenario runs.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};

use fs3a_core::harness::{run_scenario, ScenarioConfig, ScenarioSpec};
use fs3a_core::wire::{
    decode_frame, encode_frame, AppMessage, Fs3aBody, Fs3aMessage, Imsi, Ipv4, Message, S1Message,
    S6aMessage,
};

fn sample_messages() -> Vec<Message> {
    let imsi = Imsi::new("001010000000001").unwrap();
    vec![
        Message::S1(S1Message::InitialUeMessage { imsi: imsi.clone() }),
        Message::S6a(S6aMessage::Aia {
            rand: [7; 16],
            xres: [3; 8],
            autn: [9; 16],
            sqn: 42,
        }),
        Message::App(AppMessage::TokenPresent {
            token: "opA|001010000000001|game|0|300000|0123456789abcdef0123456789abcdef".into(),
            source_ip: Ipv4(0xc0a8_0001),
        }),
        Message::Fs3a(Fs3aMessage {
            source_network: "opB".into(),
            destination_network: "opA".into(),
            body: Fs3aBody::StateChunkResp {
                user_id: imsi,
                app_id: "game".into(),
                offset: 0,
                total_len: 4096,
                data: vec![0x41; 4096],
            },
        }),
    ]
}

fn bench_codec(c: &mut Criterion) {
    let msgs = sample_messages();
    let frames: Vec<Vec<u8>> = msgs.iter().map(|m| encode_frame(m).unwrap()).collect();
    let bytes: usize = frames.iter().map(Vec::len).sum();

    let mut g = c.benchmark_group("codec");
    g.throughput(Throughput::Bytes(bytes as u64));
    g.bench_function("encode", |b| {
        b.iter(|| {
            for m in &msgs {
                std::hint::black_box(encode_frame(m).unwrap());
            }
        })
    });
    g.bench_function("decode", |b| {
        b.iter(|| {
            for f in &frames {
                std::hint::black_box(decode_frame(f).unwrap());
            }
        })
    });
    g.finish();
}

fn bench_scenarios(c: &mut Criterion) {
    let cfg = ScenarioConfig::default();
    let mut g = c.benchmark_group("scenario");
    g.sample_size(20);
    for code in ["CUA", "MPT"] {
        let spec = ScenarioSpec::from_code(code).unwrap();
        g.bench_function(code, |b| {
            b.iter_batched(
                || (cfg.clone(), spec.clone()),
                |(cfg, spec)| run_scenario(&cfg, &spec, code).unwrap(),
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, bench_codec, bench_scenarios);
criterion_main!(benches);
