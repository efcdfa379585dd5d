use std::collections::{BTreeMap, BTreeSet};

use egomem::corpus::{bucket_start, Timestamp};
use egomem::fixture::planted_fixture;
use egomem::memory::{parse_integration, AgentMemoryEntry};
use egomem::{build_memory, AgentId, BuildOptions, MemoryRef, MemoryStore, MockBackend, PromptSet};

#[test]
fn build_counts_match_an_independent_tally() {
    let fx = planted_fixture(5);
    let (store, report) =
        build_memory(&MockBackend::new(5), &fx.roster, &fx.captions, &BuildOptions::default()).unwrap();

    let mut pairs: BTreeSet<(AgentId, Timestamp)> = BTreeSet::new();
    let mut buckets: BTreeSet<Timestamp> = BTreeSet::new();
    for c in &fx.captions {
        let s = c.interval.start();
        let b = Timestamp::from_hms(s.day(), s.hours(), s.minutes() / 10 * 10, 0).unwrap();
        pairs.insert((c.agent.clone(), b));
        buckets.insert(b);
    }
    assert_eq!(report.buckets, buckets.len());
    assert_eq!(report.agent_entries, pairs.len());
    assert_eq!(store.shared().len(), buckets.len());
    assert!(report.rejected.is_empty() && report.skipped.is_empty());
    for (agent, entries) in store.per_agent() {
        let want = pairs.iter().filter(|(a, _)| a == agent).count();
        assert_eq!(entries.len(), want, "{agent}");
        assert!(entries.windows(2).all(|w| w[0].interval < w[1].interval));
    }
}

#[test]
fn agent_entries_concatenate_their_bucket_captions() {
    let fx = planted_fixture(6);
    let (store, _) = build_memory(&MockBackend::new(6), &fx.roster, &fx.captions, &BuildOptions::default()).unwrap();
    for ev in &fx.evidence {
        for site in &ev.sites {
            let entry = store
                .agent_entries(&site.agent)
                .iter()
                .find(|e| e.interval.start() == site.bucket)
                .expect("entry for planted bucket");
            assert!(entry.text.contains(&site.text));
        }
    }
    for e in store.per_agent().values().flatten() {
        assert_eq!(bucket_start(e.interval.start(), 10), e.interval.start());
    }
}

#[test]
fn parallel_build_equals_serial_build() {
    let fx = planted_fixture(8);
    let backend = MockBackend::new(8);
    let serial = build_memory(&backend, &fx.roster, &fx.captions, &BuildOptions::default())
        .unwrap()
        .0;
    let opts = BuildOptions {
        max_inflight: 4,
        ..BuildOptions::default()
    };
    let parallel = build_memory(&backend, &fx.roster, &fx.captions, &opts).unwrap().0;
    assert_eq!(serial.shared(), parallel.shared());
    assert_eq!(serial.per_agent(), parallel.per_agent());
}

#[test]
fn save_and_load_preserve_retrieval() {
    let fx = planted_fixture(9);
    let (store, _) = build_memory(&MockBackend::new(9), &fx.roster, &fx.captions, &BuildOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    store.save(dir.path()).unwrap();
    for f in ["store.json", "shared.jsonl"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let loaded = MemoryStore::load(dir.path()).unwrap();
    assert_eq!(loaded.shared(), store.shared());
    assert_eq!(loaded.per_agent(), store.per_agent());
    assert_eq!(loaded.roster(), store.roster());
    for item in &fx.items {
        assert_eq!(
            loaded.shared_index().top_n(&item.question, 20),
            store.shared_index().top_n(&item.question, 20)
        );
    }
}

#[test]
fn restriction_keeps_only_leading_agents() {
    let fx = planted_fixture(10);
    let backend = MockBackend::new(10);
    let (store, _) = build_memory(&backend, &fx.roster, &fx.captions, &BuildOptions::default()).unwrap();
    let (small, report) = store.restricted_to_first(&backend, &PromptSet::default(), 2).unwrap();
    let kept: Vec<&AgentId> = small.per_agent().keys().collect();
    assert_eq!(kept, vec![&fx.roster.agents[0].id, &fx.roster.agents[1].id]);
    assert_eq!(report.events, small.shared().len());
    let allowed: BTreeSet<&str> = ["Jake", "Alice"].into();
    for ev in small.shared() {
        assert!(ev.who.iter().all(|w| allowed.contains(w.as_str())), "{:?}", ev.who);
    }
    let flat = small.flat_index().unwrap();
    assert!(flat
        .payloads()
        .iter()
        .all(|r| matches!(r, MemoryRef::Agent { agent, .. } if kept.contains(&agent))));
}

#[test]
fn integration_parsing_rejects_incomplete_events() {
    let fx = planted_fixture(0);
    let bucket = egomem::corpus::bucket_interval(Timestamp::from_hms(1, 10, 0, 0).unwrap(), 10);
    let text = r#"{"events":[
        {"when":"DAY1_10000000","what":"cooking","where":"kitchen","who":["Jake"],"how":"together"},
        {"when":"DAY1_10000000","what":"reading","who":["Alice"],"how":"alone"},
        {"when":"DAY1_10000000","what":"singing","where":"hall","who":["Zed"],"how":"loudly"}
    ]}"#;
    let integ = parse_integration(text, bucket, &fx.roster);
    assert_eq!(integ.events.len(), 2);
    assert_eq!(integ.rejected.len(), 1);
    assert!(integ.rejected[0].contains("where"), "{:?}", integ.rejected);
    assert_eq!(integ.flagged.len(), 1);
    let ids: Vec<&str> = integ.events.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids.len(), ids.iter().collect::<BTreeSet<_>>().len());
}

#[test]
fn empty_shared_memory_is_an_error() {
    let fx = planted_fixture(0);
    let err = MemoryStore::from_parts(
        fx.roster.clone(),
        10,
        Default::default(),
        Vec::new(),
        BTreeMap::<AgentId, Vec<AgentMemoryEntry>>::new(),
    )
    .err()
    .unwrap();
    assert!(err.to_string().contains("no memory"));
}
