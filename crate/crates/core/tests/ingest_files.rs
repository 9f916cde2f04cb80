use std::path::PathBuf;

use sha2::Digest as _;

use trailchain::ingest::{events_digest, events_to_string, parse_events, read_events, write_events, EventAction};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn fixture_timeline_is_clean() {
    let log = read_events(&fixture("events.jsonl")).unwrap();
    assert_eq!(log.events.len(), 500);
    assert!(log.skipped.is_empty());
    assert!(log.events.windows(2).all(|w| w[0].timestamp <= w[1].timestamp));
    let raw = std::fs::read(fixture("events.jsonl")).unwrap();
    assert_eq!(events_digest(&log.events).as_bytes()[..], sha2::Sha256::digest(&raw)[..]);
    assert_eq!(events_digest(&log.events).to_hex(), "0efc17703c1659c975a44165dfd14ddfd4362c8943aa71ac498fe6ad8c7665cc");
}

#[test]
fn exporter_output_is_accepted() {
    let log = read_events(&fixture("exporter_sample.jsonl")).unwrap();
    assert!(log.skipped.is_empty(), "{:?}", log.skipped);
    let ts: Vec<u64> = log.events.iter().map(|e| e.timestamp).collect();
    assert_eq!(ts, vec![1546300800, 1546300900, 1546304400]);
    assert_eq!(log.events[2].action, EventAction::Update);
    assert_eq!(log.events[0].publisher_hint, "Felix Yan");
    let bzr = log.events[1].recipe().unwrap();
    assert_eq!((bzr.name.as_str(), bzr.version.as_str(), bzr.release), ("bzr", "2.7.0", 5));
    assert_eq!(bzr.sources.len(), 2);
    assert_eq!(log.events[0].recipe().unwrap().name, "python-six");
}

#[test]
fn written_timeline_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("timeline.jsonl");
    let log = read_events(&fixture("exporter_sample.jsonl")).unwrap();
    write_events(&out, &log.events).unwrap();
    let again = read_events(&out).unwrap();
    assert_eq!(again.events, log.events);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text, events_to_string(&log.events));
    assert!(text.lines().all(|l| l.starts_with("{\"action\":")));
}

#[test]
fn malformed_lines_are_counted() {
    let good = events_to_string(&read_events(&fixture("exporter_sample.jsonl")).unwrap().events);
    let text = format!(
        "{good}not json\n{{\"action\":\"add\",\"author\":\"x\",\"path\":\"p\",\"text\":\"pkgname=a\\npkgver=1\\npkgrel=1\\n\",\"ts\":0}}\n\
         {{\"action\":\"add\",\"author\":\"x\",\"path\":\"p\",\"text\":\"no recipe here\",\"ts\":5}}\n\
         {{\"action\":\"delete\",\"author\":\"x\",\"path\":\"p\",\"text\":\"\",\"ts\":5}}\n\n"
    );
    let log = parse_events(&text);
    assert_eq!(log.events.len(), 3);
    assert_eq!(log.skipped.len(), 4);
    assert_eq!(log.skipped.iter().map(|s| s.line).collect::<Vec<_>>(), vec![4, 5, 6, 7]);
}
