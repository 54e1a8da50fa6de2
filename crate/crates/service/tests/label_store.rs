use std::io::Write;

use proptest::prelude::*;
use weldqa::store::{LabelStore, StoreError};
use weldqa_core::{ConsensusRule, Verdict};

use Verdict::{Erroneous as E, Faultless as F};

fn open(dir: &tempfile::TempDir, quorum: usize, relabel: bool) -> LabelStore {
    LabelStore::open(dir.path().join("labels.jsonl"), ConsensusRule::new(quorum).unwrap(), relabel).unwrap()
}

#[test]
fn three_two_split_reaches_majority() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir, 5, false);
    for (i, v) in [E, E, E, F].into_iter().enumerate() {
        let o = s.vote("a", &format!("x{i}"), v).unwrap();
        assert_eq!(o.record.consensus, None, "no consensus below quorum");
    }
    let o = s.vote("a", "x4", F).unwrap();
    assert_eq!(o.record.consensus, Some(E));
    assert_eq!(o.record.tally(), (2, 3));
}

#[test]
fn replacement_is_flagged_and_counted_once() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir, 5, false);
    for (i, v) in [E, E, F, F].into_iter().enumerate() {
        assert_eq!(s.vote("a", &format!("x{}", i + 1), v).unwrap().replaced, None);
    }
    let o = s.vote("a", "x2", F).unwrap();
    assert_eq!(o.replaced, Some(E));
    assert_eq!(o.record.tally(), (3, 1));
    assert_eq!(o.record.consensus, None);
}

#[test]
fn locked_scan_rejects_votes_unless_relabel_allowed() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir, 1, false);
    s.vote("a", "x", E).unwrap();
    assert!(matches!(s.vote("a", "y", F), Err(StoreError::Locked(_))));
    drop(s);

    let mut s = open(&dir, 1, true);
    let o = s.vote("a", "x", F).unwrap();
    assert_eq!(o.record.consensus, Some(F));
}

#[test]
fn replay_reconstructs_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir, 3, false);
    s.vote("a", "x", E).unwrap();
    s.vote("b", "x", F).unwrap();
    s.vote("a", "y", E).unwrap();
    s.vote("a", "z", F).unwrap();
    s.vote("b", "x", E).unwrap();
    let before: Vec<_> = s.records().cloned().collect();
    drop(s);
    let s = open(&dir, 3, false);
    let after: Vec<_> = s.records().cloned().collect();
    assert_eq!(before, after);
    assert_eq!(s.get("a").unwrap().consensus, Some(E));
    assert!(s.has_consensus("a"));
    assert!(!s.has_consensus("b"));
}

#[test]
fn torn_final_line_is_dropped_on_replay() {
    let dir = tempfile::tempdir().unwrap();
    let mut s = open(&dir, 5, false);
    s.vote("a", "x", E).unwrap();
    drop(s);
    let path = dir.path().join("labels.jsonl");
    std::fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .unwrap()
        .write_all(br#"{"scan_id":"a","vo"#)
        .unwrap();
    let mut s = open(&dir, 5, false);
    assert_eq!(s.get("a").unwrap().votes.len(), 1);
    s.vote("a", "y", F).unwrap();
    drop(s);
    let s = open(&dir, 5, false);
    assert_eq!(s.get("a").unwrap().tally(), (1, 1));
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("labels.jsonl"), "not json\n{}\n").unwrap();
    let r = LabelStore::open(dir.path().join("labels.jsonl"), ConsensusRule::default(), false);
    assert!(matches!(r, Err(StoreError::Corrupt { line: 1, .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn consensus_is_order_independent_and_replay_exact(
        votes in prop::collection::vec((0usize..3, 0usize..7, any::<bool>()), 1..30),
        quorum in 1usize..6,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut s = open(&dir, quorum, true);
        let mut forward = Vec::new();
        for (scan, expert, e) in &votes {
            let v = if *e { E } else { F };
            s.vote(&format!("s{scan}"), &format!("x{expert}"), v).unwrap();
            forward.push((*scan, *expert, v));
        }
        let state: Vec<_> = s.records().cloned().collect();
        drop(s);
        prop_assert_eq!(&open(&dir, quorum, true).records().cloned().collect::<Vec<_>>(), &state);

        // the final vote multiset, replayed in reverse order of first
        // appearance, gives the same consensus
        let mut last = std::collections::BTreeMap::new();
        for (scan, expert, v) in &forward {
            last.insert((*scan, *expert), *v);
        }
        let dir2 = tempfile::tempdir().unwrap();
        let mut s2 = open(&dir2, quorum, true);
        for ((scan, expert), v) in last.iter().rev() {
            s2.vote(&format!("s{scan}"), &format!("x{expert}"), *v).unwrap();
        }
        for r in &state {
            let other = s2.get(&r.scan_id).unwrap();
            prop_assert_eq!(&other.votes, &r.votes);
            prop_assert_eq!(other.consensus, r.consensus);
        }
    }
}
