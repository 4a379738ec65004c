//! Closed-economy credit ledger. Balances are never stored; they are folded
//! from initial funding and the append-only ledger file.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classad::{parse_ad, Expr};
use crate::util::{complete_lines, now_ms, open_locked_append};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AccountKind {
    User,
    Group,
    Resource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub id: String,
    pub kind: AccountKind,
    pub funding: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Transfer,
    Charge,
    /// A charge that could not be paid; moves nothing.
    Deficit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub entry_id: String,
    pub kind: EntryKind,
    pub from: String,
    pub to: String,
    pub amount: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpu_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_per_cpu_second: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default)]
    pub memo: String,
    pub ts: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum AccountingError {
    #[error("ledger storage error: {0}")]
    Storage(#[from] std::io::Error),
    #[error("unknown account {0}")]
    UnknownAccount(String),
    #[error("insufficient credits in {account}: balance {balance}, needed {needed}")]
    InsufficientCredits {
        account: String,
        balance: u64,
        needed: u64,
    },
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("bad accounts file: {0}")]
    BadAccounts(String),
}

pub type Result<T> = std::result::Result<T, AccountingError>;

/// Result of a job charge.
#[derive(Debug, Clone, PartialEq)]
pub struct Charge {
    pub entry: LedgerEntry,
    /// True when an earlier charge for the same job attempt was found.
    pub duplicate: bool,
}

/// `ceil(cpu_seconds * price)`, at least one credit.
pub fn job_cost(cpu_seconds: f64, price: u64) -> u64 {
    let raw = (cpu_seconds.max(0.0) * price as f64).ceil();
    (raw as u64).max(1)
}

/// Parses `[ Accounts = { [ Id = "..."; Kind = "User"; Funding = 100; ], ... }; ]`.
pub fn parse_accounts(text: &str) -> Result<Vec<Account>> {
    let bad = |m: String| AccountingError::BadAccounts(m);
    let ad = parse_ad(text).map_err(|e| bad(e.to_string()))?;
    let Some(Expr::List(items)) = ad.get("Accounts") else {
        return Err(bad("Accounts must be a list of records".into()));
    };
    let mut out = Vec::new();
    for item in items {
        let Expr::Record(r) = item else {
            return Err(bad("Accounts must be a list of records".into()));
        };
        let id = r.get_text("Id").ok_or_else(|| bad("account without Id".into()))?;
        let kind = match r.get_text("Kind").as_deref() {
            Some("User") | None => AccountKind::User,
            Some("Group") => AccountKind::Group,
            Some("Resource") => AccountKind::Resource,
            Some(k) => return Err(bad(format!("account {id}: unknown Kind {k}"))),
        };
        let funding = r.get_int("Funding").unwrap_or(0);
        if funding < 0 {
            return Err(bad(format!("account {id}: negative Funding")));
        }
        out.push(Account {
            id,
            kind,
            funding: funding as u64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct Ledger {
    path: PathBuf,
    accounts: BTreeMap<String, Account>,
}

fn parse_entries(buf: &[u8]) -> Vec<LedgerEntry> {
    complete_lines(buf)
        .0
        .into_iter()
        .filter(|l| !l.is_empty())
        .filter_map(|l| serde_json::from_slice(l).ok())
        .collect()
}

/// Folds `entries` over initial funding.
pub fn replay(accounts: &[Account], entries: &[LedgerEntry]) -> BTreeMap<String, i128> {
    let mut bal: BTreeMap<String, i128> = accounts
        .iter()
        .map(|a| (a.id.clone(), a.funding as i128))
        .collect();
    for e in entries {
        *bal.entry(e.from.clone()).or_default() -= e.amount as i128;
        *bal.entry(e.to.clone()).or_default() += e.amount as i128;
    }
    bal
}

impl Ledger {
    pub fn open(path: impl Into<PathBuf>, accounts: Vec<Account>) -> Result<Ledger> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(Ledger {
            path,
            accounts: accounts.into_iter().map(|a| (a.id.clone(), a)).collect(),
        })
    }

    /// Opens the ledger with accounts from a bootstrap file, or none if the
    /// file does not exist.
    pub fn open_with_accounts_file(path: impl Into<PathBuf>, accounts_file: &Path) -> Result<Ledger> {
        let accounts = match fs::read_to_string(accounts_file) {
            Ok(t) => parse_accounts(&t)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        Ledger::open(path, accounts)
    }

    pub fn accounts(&self) -> Vec<Account> {
        self.accounts.values().cloned().collect()
    }

    pub fn initial_total(&self) -> u64 {
        self.accounts.values().map(|a| a.funding).sum()
    }

    pub fn entries(&self) -> Result<Vec<LedgerEntry>> {
        match fs::read(&self.path) {
            Ok(b) => Ok(parse_entries(&b)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    fn locked<T>(&self, f: impl FnOnce(&[LedgerEntry]) -> Result<(Option<LedgerEntry>, T)>) -> Result<T> {
        let mut file = open_locked_append(&self.path)?;
        let mut buf = Vec::new();
        file.seek(SeekFrom::Start(0))?;
        file.read_to_end(&mut buf)?;
        let (_, used) = complete_lines(&buf);
        if used < buf.len() {
            file.set_len(used as u64)?;
            buf.truncate(used);
        }
        let entries = parse_entries(&buf);
        let (new, out) = f(&entries)?;
        if let Some(mut e) = new {
            e.entry_id = format!("e-{}", entries.len() + 1);
            let mut line = serde_json::to_vec(&e).map_err(std::io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        Ok(out)
    }

    fn balance_in(&self, entries: &[LedgerEntry], id: &str) -> Result<u64> {
        let acct = self
            .accounts
            .get(id)
            .ok_or_else(|| AccountingError::UnknownAccount(id.to_string()))?;
        let mut b = acct.funding as i128;
        for e in entries {
            if e.from == id {
                b -= e.amount as i128;
            }
            if e.to == id {
                b += e.amount as i128;
            }
        }
        Ok(b.max(0) as u64)
    }

    pub fn balance(&self, id: &str) -> Result<u64> {
        self.balance_in(&self.entries()?, id)
    }

    /// Entries touching `id`, oldest first.
    pub fn statement(&self, id: &str) -> Result<Vec<LedgerEntry>> {
        if !self.accounts.contains_key(id) {
            return Err(AccountingError::UnknownAccount(id.to_string()));
        }
        let mut v: Vec<_> = self
            .entries()?
            .into_iter()
            .filter(|e| e.from == id || e.to == id)
            .collect();
        v.sort_by_key(|e| e.ts);
        Ok(v)
    }

    pub fn balances(&self) -> Result<BTreeMap<String, u64>> {
        let entries = self.entries()?;
        self.accounts
            .keys()
            .map(|id| Ok((id.clone(), self.balance_in(&entries, id)?)))
            .collect()
    }

    pub fn transfer(&self, from: &str, to: &str, amount: u64, memo: &str) -> Result<String> {
        if amount == 0 {
            return Err(AccountingError::NonPositiveAmount);
        }
        self.locked(|entries| {
            let have = self.balance_in(entries, from)?;
            self.balance_in(entries, to)?;
            if have < amount {
                return Err(AccountingError::InsufficientCredits {
                    account: from.to_string(),
                    balance: have,
                    needed: amount,
                });
            }
            let e = LedgerEntry {
                entry_id: String::new(),
                kind: EntryKind::Transfer,
                from: from.to_string(),
                to: to.to_string(),
                amount,
                job_id: None,
                cpu_seconds: None,
                price_per_cpu_second: None,
                key: None,
                memo: memo.to_string(),
                ts: now_ms(),
            };
            Ok((Some(e), format!("e-{}", entries.len() + 1)))
        })
    }

    /// Charges `user` for a job attempt and pays `owner_group`. Charging the
    /// same attempt again returns the first entry. An unpayable charge is
    /// recorded as a zero-amount deficit.
    pub fn charge_job(
        &self,
        job_id: &str,
        attempt: u32,
        user: &str,
        owner_group: &str,
        price: u64,
        cpu_seconds: f64,
    ) -> Result<Charge> {
        let key = format!("charge:{job_id}:{attempt}");
        let cost = job_cost(cpu_seconds, price);
        self.locked(|entries| {
            if let Some(prev) = entries.iter().find(|e| e.key.as_deref() == Some(&key)) {
                return Ok((
                    None,
                    Charge {
                        entry: prev.clone(),
                        duplicate: true,
                    },
                ));
            }
            let shortfall = match (self.balance_in(entries, user), self.balance_in(entries, owner_group)) {
                (Ok(b), Ok(_)) if b >= cost => None,
                (Ok(b), Ok(_)) => Some(format!("insufficient credits: balance {b}, cost {cost}")),
                (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
            };
            let mut e = LedgerEntry {
                entry_id: String::new(),
                kind: EntryKind::Charge,
                from: user.to_string(),
                to: owner_group.to_string(),
                amount: cost,
                job_id: Some(job_id.to_string()),
                cpu_seconds: Some(cpu_seconds),
                price_per_cpu_second: Some(price),
                key: Some(key.clone()),
                memo: format!("job {job_id} attempt {attempt}"),
                ts: now_ms(),
            };
            if let Some(why) = shortfall {
                e.kind = EntryKind::Deficit;
                e.amount = 0;
                e.memo = format!("{}: {why}", e.memo);
            }
            let mut out = e.clone();
            out.entry_id = format!("e-{}", entries.len() + 1);
            Ok((
                Some(e),
                Charge {
                    entry: out,
                    duplicate: false,
                },
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> (tempfile::TempDir, Ledger) {
        let d = tempfile::tempdir().unwrap();
        let accounts = parse_accounts(
            r#"[ Accounts = {
                   [ Id = "group"; Kind = "Group"; Funding = 100; ],
                   [ Id = "user"; Kind = "User"; Funding = 0; ],
                   [ Id = "alice"; Kind = "User"; Funding = 100; ],
                   [ Id = "site"; Kind = "Group"; Funding = 0; ]
               }; ]"#,
        )
        .unwrap();
        let l = Ledger::open(d.path().join("accounting/ledger.log"), accounts).unwrap();
        (d, l)
    }

    #[test]
    fn transfer_moves_credits() {
        let (_d, l) = ledger();
        l.transfer("group", "user", 40, "allocation").unwrap();
        assert_eq!((l.balance("group").unwrap(), l.balance("user").unwrap()), (60, 40));
        assert_eq!(l.entries().unwrap().len(), 1);
    }

    #[test]
    fn overdraft_and_zero_rejected() {
        let (_d, l) = ledger();
        assert!(matches!(
            l.transfer("group", "user", 200, ""),
            Err(AccountingError::InsufficientCredits { .. })
        ));
        assert!(matches!(l.transfer("group", "user", 0, ""), Err(AccountingError::NonPositiveAmount)));
        assert!(matches!(l.transfer("group", "nobody", 1, ""), Err(AccountingError::UnknownAccount(_))));
        assert_eq!(l.balance("group").unwrap(), 100);
        assert!(l.entries().unwrap().is_empty());
    }

    #[test]
    fn cost_rule() {
        assert_eq!(job_cost(3.2, 2), 7);
        assert_eq!(job_cost(0.1, 1), 1);
        assert_eq!(job_cost(2.0, 3), 6);
    }

    #[test]
    fn charging_is_idempotent() {
        let (_d, l) = ledger();
        let a = l.charge_job("j1", 1, "alice", "site", 2, 3.2).unwrap();
        let b = l.charge_job("j1", 1, "alice", "site", 2, 3.2).unwrap();
        assert!(!a.duplicate && b.duplicate);
        assert_eq!(a.entry.entry_id, b.entry.entry_id);
        assert_eq!(l.balance("alice").unwrap(), 93);
        assert_eq!(l.balance("site").unwrap(), 7);
        l.charge_job("j1", 2, "alice", "site", 2, 3.2).unwrap();
        assert_eq!(l.balance("alice").unwrap(), 86);
    }

    #[test]
    fn unpayable_charge_is_a_deficit() {
        let (_d, l) = ledger();
        let c = l.charge_job("j1", 1, "user", "site", 5, 10.0).unwrap();
        assert_eq!((c.entry.kind, c.entry.amount), (EntryKind::Deficit, 0));
        assert_eq!(l.balance("user").unwrap(), 0);
    }

    #[test]
    fn statement_fold_matches_balance() {
        let (_d, l) = ledger();
        l.transfer("group", "alice", 10, "").unwrap();
        l.charge_job("j", 1, "alice", "site", 1, 4.5).unwrap();
        let mut b: i64 = 100;
        for e in l.statement("alice").unwrap() {
            if e.to == "alice" {
                b += e.amount as i64;
            }
            if e.from == "alice" {
                b -= e.amount as i64;
            }
        }
        assert_eq!(b as u64, l.balance("alice").unwrap());
        assert!(matches!(l.statement("ghost"), Err(AccountingError::UnknownAccount(_))));
    }
}
