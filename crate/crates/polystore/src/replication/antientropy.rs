use std::collections::BTreeMap;

use super::{ReplicaStore, ReplicationError};
use crate::versioning::VersionedValue;

/// Per-key summary exchanged first: the sorted canonical clocks of the
/// sibling set. Clocks are unique per write, so equal summaries mean equal
/// sibling sets.
pub type KeyDigest = BTreeMap<Vec<u8>, Vec<String>>;

pub fn digest_of<'a, I>(entries: I) -> KeyDigest
where
    I: IntoIterator<Item = (&'a Vec<u8>, &'a Vec<VersionedValue>)>,
{
    entries
        .into_iter()
        .map(|(k, sibs)| {
            let mut clocks: Vec<String> = sibs.iter().map(|v| v.clock.canonical()).collect();
            clocks.sort();
            (k.clone(), clocks)
        })
        .collect()
}

/// What the receiving side of a digest sends back and asks for.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExchangePlan {
    pub send: Vec<(Vec<u8>, Vec<VersionedValue>)>,
    pub want: Vec<Vec<u8>>,
}

pub fn plan_exchange(
    remote: &KeyDigest,
    local: &BTreeMap<Vec<u8>, Vec<VersionedValue>>,
) -> ExchangePlan {
    let local_digest = digest_of(local.iter());
    let mut plan = ExchangePlan::default();
    for (key, clocks) in &local_digest {
        match remote.get(key) {
            None => plan.send.push((key.clone(), local[key].clone())),
            Some(theirs) if theirs != clocks => {
                plan.send.push((key.clone(), local[key].clone()));
                plan.want.push(key.clone());
            }
            Some(_) => {}
        }
    }
    for key in remote.keys() {
        if !local_digest.contains_key(key) {
            plan.want.push(key.clone());
        }
    }
    plan.want.sort();
    plan
}

fn bucket_entries(
    store: &ReplicaStore,
    bucket: &str,
    filter: &dyn Fn(&[u8]) -> bool,
) -> Result<BTreeMap<Vec<u8>, Vec<VersionedValue>>, ReplicationError> {
    let mut out = BTreeMap::new();
    for key in store.keys(bucket)? {
        if filter(&key) {
            let sibs = store.siblings(bucket, &key)?;
            out.insert(key, sibs);
        }
    }
    Ok(out)
}

/// Reconcile one bucket between two stores directly. Keys failing `filter`
/// are left alone. Returns how many key records crossed in either direction.
pub fn anti_entropy_sync(
    a: &mut ReplicaStore,
    b: &mut ReplicaStore,
    bucket: &str,
    filter: &dyn Fn(&[u8]) -> bool,
) -> Result<usize, ReplicationError> {
    let a_entries = bucket_entries(a, bucket, filter)?;
    let b_entries = bucket_entries(b, bucket, filter)?;
    let plan = plan_exchange(&digest_of(a_entries.iter()), &b_entries);
    for (key, versions) in &plan.send {
        a.merge(bucket, key, versions)?;
    }
    let mut exchanged = plan.send.len();
    for key in &plan.want {
        if let Some(versions) = a_entries.get(key) {
            b.merge(bucket, key, versions)?;
            exchanged += 1;
        }
    }
    Ok(exchanged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::MemoryBackend;

    fn store() -> ReplicaStore {
        ReplicaStore::new(Box::new(MemoryBackend::new()))
    }

    fn v(value: &str, clock: &str) -> VersionedValue {
        VersionedValue::new(value, clock.parse().unwrap())
    }

    #[test]
    fn sync_converges_both_sides() {
        let mut a = store();
        let mut b = store();
        a.merge("bk", b"only-a", &[v("1", "a:1")]).unwrap();
        b.merge("bk", b"only-b", &[v("2", "b:1")]).unwrap();
        a.merge("bk", b"both", &[v("x", "a:2")]).unwrap();
        b.merge("bk", b"both", &[v("y", "b:2")]).unwrap();
        a.merge("bk", b"same", &[v("s", "a:3")]).unwrap();
        b.merge("bk", b"same", &[v("s", "a:3")]).unwrap();

        let moved = anti_entropy_sync(&mut a, &mut b, "bk", &|_| true).unwrap();
        assert_eq!(moved, 4);
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
        assert_eq!(a.siblings("bk", b"both").unwrap().len(), 2);
        assert_eq!(anti_entropy_sync(&mut a, &mut b, "bk", &|_| true).unwrap(), 0);
    }

    #[test]
    fn filter_limits_scope() {
        let mut a = store();
        let mut b = store();
        a.merge("bk", b"skip", &[v("1", "a:1")]).unwrap();
        assert_eq!(anti_entropy_sync(&mut a, &mut b, "bk", &|k| k != b"skip").unwrap(), 0);
        assert!(b.keys("bk").unwrap().is_empty());
    }
}
