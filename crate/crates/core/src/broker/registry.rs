use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, RwLock};
use std::time::Duration;

use crate::classad::{parse_ad, ClassAd, Expr, Value};
use crate::util::{atomic_write, now_ms};

use super::BrokerError;

pub const DEFAULT_TTL: Duration = Duration::from_secs(120);

#[derive(Debug, Clone)]
struct Entry {
    ad: ClassAd,
    last_update: u64,
    /// Fixture ads describe the static site and never expire.
    fixed: bool,
}

/// Resources known to the broker, keyed by `Id`.
#[derive(Debug, Clone)]
pub struct Registry {
    inner: Arc<RwLock<BTreeMap<String, Entry>>>,
    ttl_ms: u64,
}

/// An immutable view of the fresh resources at one instant.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub ces: BTreeMap<String, ClassAd>,
    pub ses: BTreeMap<String, ClassAd>,
}

impl Snapshot {
    pub fn from_ads(ads: impl IntoIterator<Item = ClassAd>) -> Snapshot {
        let mut s = Snapshot::default();
        for ad in ads {
            let id = ad.get_text("Id").unwrap_or_default();
            match ad.get_text("Type").as_deref() {
                Some("SE") => s.ses.insert(id, ad),
                _ => s.ces.insert(id, ad),
            };
        }
        s
    }
}

/// Checks the conventional resource attributes.
pub fn validate_resource(ad: &ClassAd) -> Result<(), BrokerError> {
    let mut v = Vec::new();
    let int = |name: &str| match ad.eval_attr(name) {
        Value::Integer(i) => Some(i),
        _ => None,
    };
    match ad.get_text("Id") {
        Some(id) if !id.is_empty() => {}
        _ => v.push("Id must be a non-empty string".to_string()),
    }
    match ad.get_text("Type").as_deref() {
        Some("CE") => {
            if ad.get_text("Status").is_none() {
                v.push("Status must be a string".into());
            }
            if ad.get_text("OwnerGroup").is_none() {
                v.push("OwnerGroup must be a string".into());
            }
            let free = int("FreeCPUs");
            let total = int("TotalCPUs");
            match free {
                Some(f) if f >= 0 => {}
                _ => v.push("FreeCPUs must be an integer >= 0".into()),
            }
            match total {
                Some(t) if t >= 1 => {}
                _ => v.push("TotalCPUs must be an integer >= 1".into()),
            }
            if let (Some(f), Some(t)) = (free, total) {
                if f > t {
                    v.push(format!("FreeCPUs ({f}) exceeds TotalCPUs ({t})"));
                }
            }
            match int("PricePerCpuSecond") {
                Some(p) if p >= 0 => {}
                _ => v.push("PricePerCpuSecond must be an integer >= 0".into()),
            }
            if ad.contains("CloseSEs") {
                let ok = match ad.eval_attr("CloseSEs") {
                    Value::List(items) => items.iter().all(|i| i.as_str().is_some()),
                    _ => false,
                };
                if !ok {
                    v.push("CloseSEs must be a list of strings".into());
                }
            }
        }
        Some("SE") => match int("AvailableSpace") {
            Some(s) if s >= 0 => {}
            _ => v.push("AvailableSpace must be an integer >= 0".into()),
        },
        _ => v.push("Type must be \"CE\" or \"SE\"".into()),
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(BrokerError::InvalidAd(v))
    }
}

/// `CloseSEs` of a CE ad as strings.
pub fn close_ses(ce: &ClassAd) -> Vec<String> {
    match ce.eval_attr("CloseSEs") {
        Value::List(items) => items
            .iter()
            .filter_map(|i| i.as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    }
}

impl Registry {
    pub fn new(ttl: Duration) -> Registry {
        Registry {
            inner: Arc::default(),
            ttl_ms: ttl.as_millis() as u64,
        }
    }

    pub fn ttl(&self) -> Duration {
        Duration::from_millis(self.ttl_ms)
    }

    fn put(&self, ad: ClassAd, last_update: u64, fixed: bool) -> Result<(), BrokerError> {
        validate_resource(&ad)?;
        let id = ad.get_text("Id").unwrap_or_default();
        self.inner.write().unwrap().insert(
            id,
            Entry {
                ad,
                last_update,
                fixed,
            },
        );
        Ok(())
    }

    /// Inserts or replaces a resource, marking it fresh now.
    pub fn upsert_resource(&self, ad: ClassAd) -> Result<(), BrokerError> {
        self.upsert_at(ad, now_ms())
    }

    pub fn upsert_at(&self, mut ad: ClassAd, last_update: u64) -> Result<(), BrokerError> {
        ad.set("LastUpdate", Expr::int(last_update as i64));
        self.put(ad, last_update, false)
    }

    /// Inserts a fixture resource that is exempt from expiry.
    pub fn upsert_fixed(&self, ad: ClassAd) -> Result<(), BrokerError> {
        self.put(ad, now_ms(), true)
    }

    pub fn remove(&self, id: &str) -> bool {
        self.inner.write().unwrap().remove(id).is_some()
    }

    pub fn get(&self, id: &str) -> Option<ClassAd> {
        self.inner.read().unwrap().get(id).map(|e| e.ad.clone())
    }

    /// Every resource, fresh or not, by Id.
    pub fn list(&self) -> Vec<ClassAd> {
        self.inner
            .read()
            .unwrap()
            .values()
            .map(|e| e.ad.clone())
            .collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        self.snapshot_at(now_ms())
    }

    pub fn snapshot_at(&self, now: u64) -> Snapshot {
        let map = self.inner.read().unwrap();
        Snapshot::from_ads(
            map.values()
                .filter(|e| e.fixed || now.saturating_sub(e.last_update) <= self.ttl_ms)
                .map(|e| e.ad.clone()),
        )
    }

    /// Loads every `*.ad` file in `dir`. Fixture files are marked fixed;
    /// otherwise the `LastUpdate` attribute gives the freshness time.
    pub fn load_dir(&self, dir: &Path, fixed: bool) -> Result<usize, BrokerError> {
        let mut n = 0;
        let entries = match fs::read_dir(dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
            Err(e) => return Err(BrokerError::Storage(e.to_string())),
        };
        let mut paths: Vec<_> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ad"))
            .collect();
        paths.sort();
        for p in paths {
            let text = fs::read_to_string(&p).map_err(|e| BrokerError::Storage(e.to_string()))?;
            let ad = parse_ad(&text).map_err(|e| {
                BrokerError::InvalidAd(vec![format!("{}: {e}", p.display())])
            })?;
            if fixed {
                self.upsert_fixed(ad)?;
            } else {
                let ts = ad.get_int("LastUpdate").unwrap_or(0).max(0) as u64;
                let id = ad.get_text("Id").unwrap_or_default();
                // never let an old file roll back a newer in-memory update
                let newer = self
                    .inner
                    .read()
                    .unwrap()
                    .get(&id)
                    .is_some_and(|e| !e.fixed && e.last_update > ts);
                if !newer {
                    self.upsert_at(ad, ts)?;
                }
            }
            n += 1;
        }
        Ok(n)
    }
}

/// Publishes a resource ad to a heartbeat directory.
pub fn publish_ad(dir: &Path, mut ad: ClassAd, last_update: u64) -> std::io::Result<()> {
    ad.set("LastUpdate", Expr::int(last_update as i64));
    let id = ad.get_text("Id").unwrap_or_default();
    atomic_write(&dir.join(format!("{id}.ad")), ad.to_pretty().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ce(id: &str, free: i64, total: i64) -> ClassAd {
        parse_ad(&format!(
            r#"[ Id = "{id}"; Type = "CE"; Status = "Production"; FreeCPUs = {free};
                 TotalCPUs = {total}; OwnerGroup = "g"; PricePerCpuSecond = 1; ]"#
        ))
        .unwrap()
    }

    #[test]
    fn upsert_replaces() {
        let r = Registry::new(DEFAULT_TTL);
        r.upsert_resource(ce("CE1", 4, 4)).unwrap();
        r.upsert_resource(ce("CE1", 2, 4)).unwrap();
        let all = r.list();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].get_int("FreeCPUs"), Some(2));
    }

    #[test]
    fn free_above_total_rejected() {
        let r = Registry::new(DEFAULT_TTL);
        let err = r.upsert_resource(ce("CE1", 5, 4)).unwrap_err();
        assert!(matches!(err, BrokerError::InvalidAd(v) if v[0].contains("exceeds")));
    }

    #[test]
    fn stale_entries_leave_the_snapshot() {
        let r = Registry::new(Duration::from_secs(120));
        r.upsert_at(ce("CE1", 1, 1), 1_000).unwrap();
        r.upsert_fixed(ce("CE2", 1, 1)).unwrap();
        assert_eq!(r.snapshot_at(100_000).ces.len(), 2);
        let later = r.snapshot_at(1_000 + 121_000);
        assert_eq!(later.ces.keys().collect::<Vec<_>>(), vec!["CE2"]);
    }

    #[test]
    fn heartbeat_files_round_trip() {
        let d = tempfile::tempdir().unwrap();
        publish_ad(d.path(), ce("CE9", 1, 2), 42).unwrap();
        let r = Registry::new(DEFAULT_TTL);
        assert_eq!(r.load_dir(d.path(), false).unwrap(), 1);
        assert_eq!(r.get("CE9").unwrap().get_int("LastUpdate"), Some(42));
    }
}
