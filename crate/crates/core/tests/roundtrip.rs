use std::sync::OnceLock;

use proptest::prelude::*;
use trailchain::chain::verify_chain;
use trailchain::crypto::hash_bytes;
use trailchain::model::{block_digest, from_line, to_line, Block, PopularitySnapshot};
use trailchain::pod::{prepare_delivery, restore_package, ConfirmOutcome, DownloadLedger};
use trailchain::sim::{run, synth, Roster, SimConfig, TrailSpec};

fn small_config() -> SimConfig {
    SimConfig {
        master_seed: 8,
        users_per_trail: 2,
        min_blocks: 10,
        trails: vec![
            TrailSpec::new("archlinux", Some(".*")),
            TrailSpec::new("perl", Some("perl")),
            TrailSpec::new("pypy", Some("py")),
        ],
        ..SimConfig::default()
    }
}

fn templates() -> &'static Vec<Block> {
    static BLOCKS: OnceLock<Vec<Block>> = OnceLock::new();
    BLOCKS.get_or_init(|| {
        let events = synth::generate_events(4, 40, 1_546_300_800, 900);
        run(&small_config(), &events).unwrap().chain.into_blocks()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn block_line_round_trip(
        pick in 0usize..1000,
        number in any::<u64>(),
        timestamp in any::<u64>(),
        pops in prop::collection::btree_map("[a-z]{1,8}", 0.0f64..100.0, 0..6),
        downloads in prop::collection::btree_map("[a-z]{1,8}", any::<u64>(), 0..6),
    ) {
        let t = templates();
        let mut block = t[pick % t.len()].clone();
        block.number = number;
        block.timestamp = timestamp;
        block.popularity = PopularitySnapshot(pops);
        block.downloads = downloads;
        block.seal_hash();
        let line = to_line(&block);
        prop_assert!(!line.contains('\n'));
        let back = from_line(&line).unwrap();
        prop_assert_eq!(&back, &block);
        prop_assert_eq!(to_line(&back), line);
        prop_assert_eq!(block_digest(&back), block.hash);
    }

    #[test]
    fn pod_round_trip(pkg in prop::collection::vec(any::<u8>(), 1..3000), seed in any::<u64>(), chunk in 1usize..64) {
        let (tampered, rec) = prepare_delivery(&pkg, "t", seed, chunk).unwrap();
        prop_assert_eq!(tampered.len(), pkg.len() + chunk);
        prop_assert!(rec.offset <= pkg.len());
        let id = rec.id;
        let mut ledger = DownloadLedger::new();
        ledger.open(rec);
        let outcome = ledger.confirm_download(&id, &hash_bytes(&tampered));
        let ConfirmOutcome::Confirmed { offset, length } = outcome else {
            return Err(TestCaseError::fail(format!("{outcome:?}")));
        };
        prop_assert_eq!(restore_package(&tampered, offset, length).unwrap(), pkg);
        prop_assert_eq!(ledger.interval_count("t"), 1);
    }
}

#[test]
fn template_chain_is_valid() {
    let report = verify_chain(templates(), &Roster::new(&small_config()).scheme());
    assert!(report.is_valid(), "{:?}", report.violations);
}
