use std::collections::BTreeSet;

use polystore::hashring::NodeId;
use polystore::versioning::{
    optimistic_put, resolve_siblings, Causality, OptimisticLock, VectorClock, VersionChain, VersionError,
    VersionedValue,
};
use proptest::prelude::*;

fn clock() -> impl Strategy<Value = VectorClock> {
    proptest::collection::btree_map("[a-e]", 0u64..5, 0..5).prop_map(VectorClock::from_entries)
}

fn version() -> impl Strategy<Value = VersionedValue> {
    (clock(), "[a-z]{0,4}").prop_map(|(c, v)| VersionedValue::new(v.into_bytes(), c))
}

fn clocks(vs: &[VersionedValue]) -> BTreeSet<String> {
    vs.iter().map(|v| v.clock.canonical()).collect()
}

proptest! {
    #[test]
    fn canonical_form_parses_back(c in clock()) {
        let back: VectorClock = c.canonical().parse().unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn compare_agrees_with_pointwise_order(a in clock(), b in clock()) {
        let nodes: BTreeSet<&NodeId> = a.entries().chain(b.entries()).map(|(n, _)| n).collect();
        let le = nodes.iter().all(|n| a.get(n) <= b.get(n));
        let ge = nodes.iter().all(|n| a.get(n) >= b.get(n));
        let want = match (le, ge) {
            (true, true) => Causality::Equal,
            (true, false) => Causality::Before,
            (false, true) => Causality::After,
            _ => Causality::Concurrent,
        };
        prop_assert_eq!(a.compare(&b), want);
        prop_assert_eq!(a.descends(&b), ge);
    }

    #[test]
    fn merge_is_the_join(a in clock(), b in clock(), c in clock()) {
        let m = a.merge(&b);
        prop_assert!(m.descends(&a) && m.descends(&b));
        prop_assert_eq!(c.descends(&a) && c.descends(&b), c.descends(&m));
        prop_assert_eq!(a.merge(&b).merge(&c), a.merge(&b.merge(&c)));
    }

    #[test]
    fn siblings_are_the_undominated_versions(vs in proptest::collection::vec(version(), 1..12)) {
        let got = resolve_siblings(&vs).unwrap();
        let want: BTreeSet<String> = vs
            .iter()
            .filter(|v| !vs.iter().any(|o| o.clock.compare(&v.clock) == Causality::After))
            .map(|v| v.clock.canonical())
            .collect();
        prop_assert_eq!(clocks(&got), want);
        // Survivors are pairwise concurrent.
        for (i, x) in got.iter().enumerate() {
            for y in &got[i + 1..] {
                prop_assert_eq!(x.clock.compare(&y.clock), Causality::Concurrent);
            }
        }
    }

    #[test]
    fn merging_in_any_order_gives_the_same_siblings(
        left in proptest::collection::vec(version(), 0..6),
        right in proptest::collection::vec(version(), 0..6),
    ) {
        let mut a = VersionChain::new("k");
        a.merge_versions(&left);
        a.merge_versions(&right);
        let mut b = VersionChain::new("k");
        b.merge_versions(&right);
        b.merge_versions(&left);
        prop_assert_eq!(clocks(&a.siblings()), clocks(&b.siblings()));
        // A second delivery changes nothing.
        prop_assert!(!a.merge_versions(&left));
    }

    #[test]
    fn chain_retention_keeps_siblings(limit in 1usize..5, writes in 1usize..20) {
        let mut chain = VersionChain::with_retention("k", limit);
        let me = NodeId::from("a");
        for i in 0..writes {
            let ctx = chain.current_clock();
            chain.put(&ctx, format!("v{i}"), &me).unwrap();
        }
        prop_assert!(chain.len() <= limit.max(1));
        prop_assert_eq!(chain.head().unwrap().value.clone(), format!("v{}", writes - 1).into_bytes());
    }
}

#[test]
fn stale_context_is_rejected() {
    let (a, b) = (NodeId::from("a"), NodeId::from("b"));
    let mut chain = VersionChain::new("k");
    let first = chain.put(&VectorClock::new(), "v1", &a).unwrap().clock.clone();
    chain.put(&first, "v2", &b).unwrap();
    let err = chain.put(&first, "v3", &a).unwrap_err();
    assert!(matches!(err, VersionError::StaleWrite { .. }));
    assert!(chain.delete(&VectorClock::new(), &a).is_err());
    let ctx = chain.current_clock();
    assert!(chain.delete(&ctx, &a).unwrap().tombstone);
}

#[test]
fn concurrent_versions_meet_through_merge() {
    let mut chain = VersionChain::new("k");
    let base = chain.put(&VectorClock::new(), "v0", &NodeId::from("a")).unwrap().clock.clone();
    let left = VersionedValue::new("left", base.increment(&NodeId::from("b")));
    let right = VersionedValue::new("right", base.increment(&NodeId::from("c")));
    chain.apply_replicated(&base, left).unwrap();
    // A replica holding a version the writer never saw refuses the write...
    assert!(chain.apply_replicated(&base, right.clone()).is_err());
    // ...but repair folds it in as a sibling.
    assert!(chain.merge_versions(&[right]));
    let values: BTreeSet<Vec<u8>> = chain.siblings().into_iter().map(|v| v.value).collect();
    assert_eq!(values, BTreeSet::from([b"left".to_vec(), b"right".to_vec()]));
    let ctx = chain.current_clock();
    chain.put(&ctx, "resolved", &NodeId::from("a")).unwrap();
    assert_eq!(chain.siblings().len(), 1);
}

#[test]
fn optimistic_lock_counts_versions() {
    let lock = optimistic_put(OptimisticLock::default(), 0).unwrap();
    assert_eq!(lock.version, 1);
    assert!(optimistic_put(lock, 0).is_err());
}
