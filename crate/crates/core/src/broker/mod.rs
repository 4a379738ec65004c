//! Resource broker: registry, matchmaking, ranking, pluggable selection and
//! gangmatching.

mod registry;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classad::{evaluate_multi_scope, match_two, rank_in, rank_of, Expr, MatchContext};
use crate::helper::{Helper, HelperError};
use crate::jdl::{validate_job_text, JobDescription};

pub use registry::{close_ses, publish_ad, validate_resource, Registry, Snapshot, DEFAULT_TTL};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BrokerError {
    #[error("invalid resource ad: {}", .0.join("; "))]
    InvalidAd(Vec<String>),
    #[error("no matching resources")]
    NoMatchingResources,
    #[error("unknown strategy '{0}'")]
    UnknownStrategy(String),
    #[error("strategy '{0}' is not supported")]
    Unsupported(String),
    #[error("storage error: {0}")]
    Storage(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub job_id: String,
    pub ce_id: String,
    pub rank: f64,
    pub se_id: Option<String>,
    pub strategy: String,
}

/// One rankable option: a CE, optionally paired with an SE.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub ce_id: String,
    pub se_id: Option<String>,
    pub rank: f64,
}

/// A selection policy over candidates already sorted best first.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &str;
    /// Index into `ranked`, which is never empty.
    fn choose(&self, ranked: &[Candidate], seed: u64) -> usize;
}

pub struct Best;

impl Strategy for Best {
    fn name(&self) -> &str {
        "best"
    }
    fn choose(&self, _ranked: &[Candidate], _seed: u64) -> usize {
        0
    }
}

/// Picks uniformly among candidates within 10% of the top rank.
pub struct Fuzzy {
    pub fraction: f64,
}

impl Default for Fuzzy {
    fn default() -> Fuzzy {
        Fuzzy { fraction: 0.9 }
    }
}

impl Fuzzy {
    /// Lowest rank still eligible. Written as `max - (1-f)|max|` so that a
    /// negative top rank still admits itself.
    pub fn threshold(&self, max: f64) -> f64 {
        max - (1.0 - self.fraction) * max.abs()
    }
}

impl Strategy for Fuzzy {
    fn name(&self) -> &str {
        "fuzzy"
    }
    fn choose(&self, ranked: &[Candidate], seed: u64) -> usize {
        let cut = self.threshold(ranked[0].rank);
        let eligible = ranked.iter().take_while(|c| c.rank >= cut).count().max(1);
        StdRng::seed_from_u64(seed).gen_range(0..eligible)
    }
}

/// Compute elements whose ads match the job both ways, Id ascending.
pub fn find_matches(job: &JobDescription, snap: &Snapshot) -> Vec<String> {
    snap.ces
        .iter()
        .filter(|(_, ce)| match_two(&job.ad, ce))
        .map(|(id, _)| id.clone())
        .collect()
}

fn sort_candidates(c: &mut [Candidate]) {
    c.sort_by(|a, b| {
        b.rank
            .total_cmp(&a.rank)
            .then_with(|| a.ce_id.cmp(&b.ce_id))
            .then_with(|| a.se_id.cmp(&b.se_id))
    });
}

/// Ranks the given CEs best first; ties go to the smaller Id.
pub fn rank_matches(job: &JobDescription, ce_ids: &[String], snap: &Snapshot) -> Vec<(String, f64)> {
    let mut c: Vec<Candidate> = ce_ids
        .iter()
        .filter_map(|id| {
            let ce = snap.ces.get(id)?;
            Some(Candidate {
                ce_id: id.clone(),
                se_id: None,
                rank: rank_of(&job.ad, ce).value,
            })
        })
        .collect();
    sort_candidates(&mut c);
    c.into_iter().map(|c| (c.ce_id, c.rank)).collect()
}

/// Every (CE, close SE) pair satisfying the job's requirements, ranked.
pub fn gang_candidates(job: &JobDescription, snap: &Snapshot) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (ce_id, ce) in &snap.ces {
        for se_id in close_ses(ce) {
            let Some(se) = snap.ses.get(&se_id) else { continue };
            let ctx = MatchContext::new(&job.ad)
                .bind("ce", ce)
                .bind("se", se)
                .bind("other", ce);
            if !evaluate_multi_scope(&job.requirements, &ctx).is_true() {
                continue;
            }
            out.push(Candidate {
                ce_id: ce_id.clone(),
                se_id: Some(se_id),
                rank: rank_in(&job.ad, &ctx).value,
            });
        }
    }
    sort_candidates(&mut out);
    out
}

pub fn is_gang_job(job: &JobDescription) -> bool {
    job.requirements.references_scope("se")
}

/// Ids listed in the job's `ExcludedCEs` attribute.
fn excluded(job: &JobDescription) -> Vec<String> {
    match job.ad.eval_attr("ExcludedCEs") {
        crate::classad::Value::List(items) => items
            .iter()
            .filter_map(|v| v.as_str().map(str::to_string))
            .collect(),
        _ => Vec::new(),
    }
}

#[derive(Clone)]
pub struct Broker {
    registry: Registry,
    strategies: BTreeMap<String, Arc<dyn Strategy>>,
    strategy: String,
    seed: Option<u64>,
}

impl Broker {
    pub fn new(registry: Registry) -> Broker {
        let mut b = Broker {
            registry,
            strategies: BTreeMap::new(),
            strategy: "best".into(),
            seed: None,
        };
        b.register(Arc::new(Best));
        b.register(Arc::new(Fuzzy::default()));
        b
    }

    pub fn register(&mut self, s: Arc<dyn Strategy>) {
        self.strategies.insert(s.name().to_string(), s);
    }

    /// Sets the strategy used by [`Helper::resolve`].
    pub fn with_strategy(mut self, name: &str, seed: Option<u64>) -> Result<Broker, BrokerError> {
        self.strategy_named(name)?;
        self.strategy = name.to_string();
        self.seed = seed;
        Ok(self)
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    fn strategy_named(&self, name: &str) -> Result<Arc<dyn Strategy>, BrokerError> {
        if name == "economic" {
            return Err(BrokerError::Unsupported(name.into()));
        }
        self.strategies
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::UnknownStrategy(name.into()))
    }

    pub fn select_resource(
        &self,
        job: &JobDescription,
        strategy: &str,
        seed: Option<u64>,
    ) -> Result<MatchResult, BrokerError> {
        self.select_in(job, &self.registry.snapshot(), strategy, seed)
    }

    /// Selection against an explicit snapshot. Gang jobs (requirements
    /// mentioning `se.`) go through pair matching.
    pub fn select_in(
        &self,
        job: &JobDescription,
        snap: &Snapshot,
        strategy: &str,
        seed: Option<u64>,
    ) -> Result<MatchResult, BrokerError> {
        let strat = self.strategy_named(strategy)?;
        let skip = excluded(job);
        let mut ranked: Vec<Candidate> = if is_gang_job(job) {
            gang_candidates(job, snap)
        } else {
            rank_matches(job, &find_matches(job, snap), snap)
                .into_iter()
                .map(|(ce_id, rank)| Candidate {
                    ce_id,
                    se_id: None,
                    rank,
                })
                .collect()
        };
        ranked.retain(|c| !skip.contains(&c.ce_id));
        if ranked.is_empty() {
            return Err(BrokerError::NoMatchingResources);
        }
        let job_id = job.ad.get_text("JobId").unwrap_or_default();
        let seed = seed.unwrap_or_else(|| {
            let h = Sha256::digest(job_id.as_bytes());
            u64::from_be_bytes(h[..8].try_into().unwrap())
        });
        let pick = ranked.swap_remove(strat.choose(&ranked, seed).min(ranked.len() - 1));
        Ok(MatchResult {
            job_id,
            ce_id: pick.ce_id,
            rank: pick.rank,
            se_id: pick.se_id,
            strategy: strategy.to_string(),
        })
    }

    pub fn gang_match(
        &self,
        job: &JobDescription,
        strategy: &str,
        seed: Option<u64>,
    ) -> Result<MatchResult, BrokerError> {
        let strat = self.strategy_named(strategy)?;
        let ranked = gang_candidates(job, &self.registry.snapshot());
        if ranked.is_empty() {
            return Err(BrokerError::NoMatchingResources);
        }
        let pick = &ranked[strat.choose(&ranked, seed.unwrap_or(0)).min(ranked.len() - 1)];
        Ok(MatchResult {
            job_id: job.ad.get_text("JobId").unwrap_or_default(),
            ce_id: pick.ce_id.clone(),
            rank: pick.rank,
            se_id: pick.se_id.clone(),
            strategy: strategy.to_string(),
        })
    }

    /// Adds `SubmitTo` (and `ChosenSE`) to a job. Already resolved JDL is
    /// returned unchanged.
    pub fn helper_resolve(&self, jdl: &str) -> Result<String, HelperError> {
        let job = validate_job_text(jdl).map_err(|v| HelperError::Invalid(v.to_string()))?;
        if job.submit_to().is_some() {
            return Ok(jdl.to_string());
        }
        let m = self
            .select_resource(&job, &self.strategy, self.seed)
            .map_err(|e| match e {
                BrokerError::NoMatchingResources => HelperError::NoMatchingResources,
                other => HelperError::Other(other.to_string()),
            })?;
        let mut ad = job.ad;
        ad.set("SubmitTo", Expr::text(m.ce_id));
        if let Some(se) = m.se_id {
            ad.set("ChosenSE", Expr::text(se));
        }
        Ok(ad.to_pretty())
    }
}

impl Helper for Broker {
    fn name(&self) -> &str {
        "broker"
    }
    fn resolve(&self, jdl: &str) -> Result<String, HelperError> {
        self.helper_resolve(jdl)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classad::{parse_ad, ClassAd};

    fn ce(id: &str, free: i64, close: &[&str]) -> ClassAd {
        let close: Vec<String> = close.iter().map(|s| format!("\"{s}\"")).collect();
        parse_ad(&format!(
            r#"[ Id = "{id}"; Type = "CE"; Status = "Production"; FreeCPUs = {free};
                 TotalCPUs = 16; OwnerGroup = "g"; PricePerCpuSecond = 1;
                 CloseSEs = {{ {} }}; ]"#,
            close.join(", ")
        ))
        .unwrap()
    }

    fn se(id: &str, space: i64) -> ClassAd {
        parse_ad(&format!(r#"[ Id = "{id}"; Type = "SE"; AvailableSpace = {space}; ]"#)).unwrap()
    }

    fn job(extra: &str) -> JobDescription {
        validate_job_text(&format!("[ Executable = \"/bin/true\"; {extra} ]")).unwrap()
    }

    fn broker(ads: Vec<ClassAd>) -> Broker {
        let r = Registry::new(DEFAULT_TTL);
        for a in ads {
            r.upsert_resource(a).unwrap();
        }
        Broker::new(r)
    }

    #[test]
    fn find_matches_fixture() {
        let b = broker(vec![ce("CE1", 4, &[]), ce("CE2", 0, &[])]);
        let j = job(r#"Requirements = other.Status == "Production" && other.FreeCPUs > 0;"#);
        assert_eq!(find_matches(&j, &b.registry().snapshot()), vec!["CE1"]);
        assert!(find_matches(&j, &Snapshot::default()).is_empty());
        assert!(find_matches(&job("Requirements = false;"), &b.registry().snapshot()).is_empty());
    }

    #[test]
    fn ranking_and_ties() {
        let b = broker(vec![ce("CE1", 4, &[]), ce("CE3", 7, &[]), ce("CEa", 7, &[])]);
        let j = job("");
        let snap = b.registry().snapshot();
        let ids = find_matches(&j, &snap);
        assert_eq!(
            rank_matches(&j, &ids, &snap),
            vec![("CE3".into(), 7.0), ("CEa".into(), 7.0), ("CE1".into(), 4.0)]
        );
        assert_eq!(b.select_resource(&j, "best", None).unwrap().ce_id, "CE3");
    }

    #[test]
    fn fuzzy_is_deterministic_given_seed() {
        let b = broker(vec![ce("A", 10, &[]), ce("B", 10, &[]), ce("C", 9, &[]), ce("D", 1, &[])]);
        let j = job("");
        let x = b.select_resource(&j, "fuzzy", Some(7)).unwrap();
        let y = b.select_resource(&j, "fuzzy", Some(7)).unwrap();
        assert_eq!(x, y);
        for seed in 0..50 {
            let c = b.select_resource(&j, "fuzzy", Some(seed)).unwrap().ce_id;
            assert_ne!(c, "D");
        }
    }

    #[test]
    fn fuzzy_threshold_with_negative_ranks() {
        let f = Fuzzy::default();
        assert_eq!(f.threshold(10.0), 9.0);
        assert!(f.threshold(-10.0) <= -10.0);
    }

    #[test]
    fn strategies_by_name() {
        let b = broker(vec![ce("CE1", 1, &[])]);
        let j = job("");
        assert!(matches!(b.select_resource(&j, "economic", None), Err(BrokerError::Unsupported(_))));
        assert!(matches!(b.select_resource(&j, "nope", None), Err(BrokerError::UnknownStrategy(_))));
        assert!(matches!(
            b.select_resource(&job("Requirements = false;"), "best", None),
            Err(BrokerError::NoMatchingResources)
        ));
    }

    #[test]
    fn gang_matching() {
        let req = "Requirements = se.AvailableSpace >= 500 && ce.FreeCPUs > 0;";
        let b = broker(vec![ce("CE1", 4, &["SE1"]), se("SE1", 1000), ce("CE2", 4, &[])]);
        let m = b.gang_match(&job(req), "best", None).unwrap();
        assert_eq!((m.ce_id.as_str(), m.se_id.as_deref()), ("CE1", Some("SE1")));
        let small = broker(vec![ce("CE1", 4, &["SE1"]), se("SE1", 100)]);
        assert_eq!(small.gang_match(&job(req), "best", None), Err(BrokerError::NoMatchingResources));
    }

    #[test]
    fn excluded_ces_are_skipped() {
        let b = broker(vec![ce("CE1", 9, &[]), ce("CE2", 1, &[])]);
        let j = job(r#"ExcludedCEs = { "CE1" };"#);
        assert_eq!(b.select_resource(&j, "best", None).unwrap().ce_id, "CE2");
    }

    #[test]
    fn helper_resolve_contract() {
        let b = broker(vec![ce("CE1", 2, &[])]);
        let out = b.resolve("[ Executable = \"/bin/true\"; ]").unwrap();
        let resolved = validate_job_text(&out).unwrap();
        assert_eq!(resolved.submit_to().as_deref(), Some("CE1"));
        assert_eq!(b.resolve(&out).unwrap(), out);
        assert_eq!(
            b.resolve("[ Executable = \"/bin/true\"; Requirements = false; ]"),
            Err(HelperError::NoMatchingResources)
        );
    }
}
