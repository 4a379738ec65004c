use proptest::prelude::*;
use wms_core::accounting::{job_cost, replay, Account, AccountKind, EntryKind, Ledger};

fn accounts() -> Vec<Account> {
    [("alice", AccountKind::User, 500), ("bob", AccountKind::User, 40), ("physics", AccountKind::Group, 1000), ("ce", AccountKind::Resource, 0)]
        .into_iter()
        .map(|(id, kind, funding)| Account { id: id.into(), kind, funding })
        .collect()
}

const IDS: [&str; 5] = ["alice", "bob", "physics", "ce", "ghost"];

#[derive(Debug, Clone)]
enum Op {
    Transfer(usize, usize, u64),
    Charge(u8, u32, usize, usize, u64, u32),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..5usize, 0..5usize, 0u64..300).prop_map(|(a, b, n)| Op::Transfer(a, b, n)),
        (0u8..6, 1u32..3, 0..5usize, 0..5usize, 0u64..5, 0u32..4000)
            .prop_map(|(j, at, u, g, p, ms)| Op::Charge(j, at, u, g, p, ms)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn money_is_conserved_and_replayable(ops in prop::collection::vec(op(), 0..40)) {
        let d = tempfile::tempdir().unwrap();
        let ledger = Ledger::open(d.path().join("ledger.log"), accounts()).unwrap();
        let total = ledger.initial_total();
        prop_assert_eq!(total, 1540);
        let mut charged = std::collections::BTreeMap::new();
        for op in ops {
            match op {
                Op::Transfer(a, b, n) => {
                    let before = ledger.balances().unwrap();
                    let r = ledger.transfer(IDS[a], IDS[b], n, "t");
                    let ok = n > 0 && a < 4 && b < 4 && before[IDS[a]] >= n;
                    prop_assert_eq!(r.is_ok(), ok, "transfer {} -> {} of {}: {:?}", IDS[a], IDS[b], n, r);
                }
                Op::Charge(j, at, u, g, price, ms) => {
                    let job = format!("job{j}");
                    let secs = ms as f64 / 1000.0;
                    if let Ok(c) = ledger.charge_job(&job, at, IDS[u], IDS[g], price, secs) {
                        let first = charged.entry((job, at)).or_insert_with(|| c.entry.clone());
                        // a repeated charge returns the first entry and moves nothing
                        prop_assert_eq!(&c.entry, &*first);
                        if c.entry.kind == EntryKind::Charge && !c.duplicate {
                            prop_assert_eq!(c.entry.amount, job_cost(secs, price));
                        }
                    }
                }
            }
            let balances = ledger.balances().unwrap();
            prop_assert_eq!(balances.values().sum::<u64>(), total);
        }
        let reopened = Ledger::open(d.path().join("ledger.log"), accounts()).unwrap();
        let entries = reopened.entries().unwrap();
        let replayed = replay(&accounts(), &entries);
        for (id, b) in reopened.balances().unwrap() {
            prop_assert_eq!(replayed[&id], b as i128);
        }
        let keys: Vec<_> = entries.iter().filter_map(|e| e.key.clone()).collect();
        let unique: std::collections::BTreeSet<_> = keys.iter().collect();
        prop_assert_eq!(keys.len(), unique.len());
    }

    #[test]
    fn cost_is_the_ceiling_with_a_floor_of_one(ms in 0u64..100_000, price in 0u64..50) {
        let cost = job_cost(ms as f64 / 1000.0, price);
        // integer oracle: ceil(ms * price / 1000), at least 1
        let want = ((ms * price).div_ceil(1000)).max(1);
        prop_assert_eq!(cost, want);
    }
}
