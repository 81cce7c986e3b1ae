use smsplit::simulator::{run, EngineKind, SimConfig};
use smsplit::workload::{generate_trace, read_trace, write_trace, Stop, WorkloadSpec};

const ENGINES: [EngineKind; 4] = [
    EngineKind::Nexus,
    EngineKind::MonolithicChunked,
    EngineKind::StaticPartition(50),
    EngineKind::EngineLevelDisagg,
];

fn trace(preset: &str, rate: f64, n: usize, seed: u64) -> Vec<smsplit::domain::Request> {
    generate_trace(&WorkloadSpec::preset(preset, rate, Stop::Count(n), seed).unwrap()).unwrap()
}

#[test]
fn every_engine_completes_with_sane_timing() {
    let cfg = SimConfig::preset("8b", "l20").unwrap();
    let t = trace("mixed", 2.0, 80, 7);
    for e in ENGINES {
        let out = run(e, &t, &cfg).unwrap();
        assert!(out.all_completed(), "{e}");
        for r in &out.requests {
            let first = r.first_token_s.unwrap();
            let fin = r.finish_s.unwrap();
            assert!(first >= r.arrival_s && fin >= first, "{e} request {}", r.id);
            assert_eq!(r.emissions.len() as u64, r.output_len);
            assert!(r.emissions.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

#[test]
fn runs_are_deterministic() {
    let cfg = SimConfig::preset("3b", "l20").unwrap();
    let t = trace("arxiv", 4.0, 60, 2);
    let a = run(EngineKind::Nexus, &t, &cfg).unwrap();
    let b = run(EngineKind::Nexus, &t, &cfg).unwrap();
    assert_eq!(
        serde_json::to_string(&a.report).unwrap(),
        serde_json::to_string(&b.report).unwrap()
    );
    assert_eq!(a.events.len(), b.events.len());
}

#[test]
fn nexus_adapts_the_split() {
    let cfg = SimConfig::preset("8b", "l20").unwrap();
    let out = run(EngineKind::Nexus, &trace("long-data", 2.0, 60, 1), &cfg).unwrap();
    assert!(!out.decisions.is_empty());
    assert!(out.switches > 0);
}

#[test]
fn trace_roundtrip_large() {
    let t = trace("mixed", 50.0, 100_000, 9);
    let start = std::time::Instant::now();
    let mut buf = Vec::new();
    write_trace(&mut buf, &t).unwrap();
    let back = read_trace(std::io::Cursor::new(buf)).unwrap();
    assert_eq!(back.len(), t.len());
    for (a, b) in t.iter().zip(&back) {
        assert_eq!((a.id, a.arrival_s, a.prompt_len, a.output_len), (b.id, b.arrival_s, b.prompt_len, b.output_len));
    }
    assert!(start.elapsed().as_secs() < 30, "roundtrip took {:?}", start.elapsed());
}
