mod common;

use std::io::Write;
use std::sync::{Arc, Mutex};

use thinkstream_core::atdm::{run_episode, AtdmConfig, EventKind, TelemetryEvent};
use thinkstream_core::backend::ScriptedOracle;
use thinkstream_core::config::EngineConfig;
use thinkstream_core::eval::{
    evaluate, generate_dataset, generate_feature_stream, hpsi_inspect, BackendChoice, DatasetOptions,
};

#[derive(Clone, Default)]
struct Buffer(Arc<Mutex<Vec<u8>>>);

impl Write for Buffer {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn generated_dataset_evaluates_as_scripted() {
    let dir = tempfile::tempdir().unwrap();
    let opts = DatasetOptions {
        seed: 3,
        count: 8,
        unresolvable: 2,
        drops: 3,
        ..DatasetOptions::default()
    };
    let m = generate_dataset(dir.path(), &opts).unwrap();
    assert_eq!(m.episodes.iter().filter(|e| !e.resolvable).count(), 2);
    let report = evaluate(dir.path(), &BackendChoice::Scripted, AtdmConfig::default()).unwrap();
    let a = &report.aggregates;
    assert_eq!((a.total, a.answered, a.unresolved, a.failed), (8, 6, 2, 0));
    assert_eq!(a.accuracy, 0.75);
    assert_eq!(a.median_delta, Some(0.0));
    let reflected: usize = report.episodes.iter().map(|r| r.reflections).sum();
    assert_eq!(reflected, 3);
}

#[test]
fn same_seed_same_dataset() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let opts = DatasetOptions::default();
    generate_dataset(a.path(), &opts).unwrap();
    generate_dataset(b.path(), &opts).unwrap();
    for f in ["manifest.json", "ep_004/script.json", "ep_004/stream.jsonl"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn telemetry_is_ndjson_in_stream_time() {
    let dir = common::fixtures().join("drops/ep_000");
    let stream =
        thinkstream_core::stream::load_stream(&dir.join("stream.jsonl"), thinkstream_core::stream::IngestMode::Caption)
            .unwrap();
    let episode = thinkstream_core::stream::QueryEpisode::load(&dir.join("episode.json")).unwrap();
    let oracle = ScriptedOracle::from_file(&dir.join("script.json")).unwrap();
    let buf = Buffer::default();
    let trace = run_episode(&stream, &episode, &oracle, AtdmConfig::default(), Some(Box::new(buf.clone()))).unwrap();
    let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
    let events: Vec<TelemetryEvent> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(events, trace.events);
    assert_eq!(events[0].event, EventKind::Part1);
    assert_eq!(events.last().unwrap().event, EventKind::Answer);
    assert!(events.iter().all(|e| e.t >= episode.t_q && e.t <= stream.end_time()));
    assert_eq!(trace.count(EventKind::Reflect), 1);
}

#[test]
fn inspection_reports_ratio_and_levels_ablation() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = EngineConfig::default();
    let stream = generate_feature_stream(5, 3, 16, 4, 16, 2.0).unwrap();
    let full = hpsi_inspect(&cfg, &stream, dir.path()).unwrap();
    assert_eq!(full.compression_ratio, 0.0625);
    assert_eq!(full.sequence_len, 2 + 3 * (64 + 24) + 2);

    cfg.schedule = cfg.schedule.with_levels(2).unwrap();
    let two = hpsi_inspect(&cfg, &stream, dir.path()).unwrap();
    assert_eq!(two.sequence_len, 2 + 3 * (64 + 20) + 2);
    assert_eq!(two.compression_ratio, 8.0 / 64.0);
}

#[test]
fn shipped_report_aggregates_recompute_from_rows() {
    let text = std::fs::read_to_string(common::fixtures().join("suite/report.json")).unwrap();
    let report: thinkstream_core::eval::EvalReport = serde_json::from_str(&text).unwrap();
    assert_eq!(thinkstream_core::eval::Aggregates::from_rows(&report.episodes), report.aggregates);
    assert_eq!(report.accuracy_convention, thinkstream_core::eval::ACCURACY_CONVENTION);
}
