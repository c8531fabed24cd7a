use std::collections::BTreeMap;

use proptest::prelude::*;
use verifsim_core::accounting::{reconcile, AccountingParams, Amount};
use verifsim_core::attest::{boot_chip, check_counter_continuity, issue_certificate, WorkloadCertificate};
use verifsim_core::detnet::fixtures::training_declaration;
use verifsim_core::model::{
    aggregate_report, canonical_decode, canonical_encode, commit, Evidence, Measure, Overall, Rational, Seed, SubgoalId, Verdict,
    WorkloadDeclaration,
};
use verifsim_core::nettap::{message, tap_sample, MessageKind};
use verifsim_core::reexec::select_segments;
use verifsim_core::scenarios::inject_covert;

fn certs(n: u64) -> Vec<WorkloadCertificate> {
    let fw = commit(b"fw");
    let mut chip = boot_chip("chip-p", fw, &[fw]).unwrap();
    (0..n).map(|i| issue_certificate(&mut chip, commit(&i.to_be_bytes()), commit(b"r"), Rational::new(1, 10)).unwrap()).collect()
}

fn verdict(status: u8) -> Verdict {
    let e = Evidence::note("p.check", "x");
    match status {
        0 => Verdict::pass(e),
        1 => Verdict::fail(e),
        _ => Verdict::inconclusive(e),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aggregation_follows_weakest_link(cells in prop::collection::vec(prop::collection::vec(0u8..3, 0..4), 7)) {
        let mut map = BTreeMap::new();
        for (id, statuses) in SubgoalId::ALL.into_iter().zip(&cells) {
            map.insert(id, statuses.iter().map(|&s| verdict(s)).collect());
        }
        let expected = if cells.iter().flatten().any(|&s| s == 1) {
            Overall::NonCompliant
        } else if cells.iter().all(|c| c.contains(&0)) {
            Overall::Compliant
        } else {
            Overall::Inconclusive
        };
        prop_assert_eq!(aggregate_report(map).overall, expected);
    }

    #[test]
    fn any_deletion_breaks_counter_continuity(n in 1u64..12, mask in any::<u16>()) {
        let all = certs(n);
        let kept: Vec<_> = all.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, c)| c.clone()).collect();
        let verdict = check_counter_continuity(&kept, n);
        prop_assert_eq!(verdict.is_pass(), kept.len() == all.len());
    }

    #[test]
    fn tap_log_is_an_ordered_subset(len in 0usize..200, num in 1u64..10, seed in any::<u64>()) {
        let stream: Vec<_> = (0..len as u64).map(|t| message(t, 0, 1, MessageKind::GradientAllreduce, &t.to_be_bytes())).collect();
        let p = Rational::new(num, 10);
        let log = tap_sample(&stream, p, &Seed::from_u64(seed)).unwrap();
        prop_assert!(log.entries.windows(2).all(|w| w[0].index < w[1].index));
        for e in &log.entries {
            prop_assert_eq!(&stream[e.index as usize], &e.message);
        }
        let full = tap_sample(&stream, Rational::from_integer(1), &Seed::from_u64(seed)).unwrap();
        prop_assert_eq!(full.entries.len(), len);
    }

    #[test]
    fn more_accounted_work_never_hurts(total in 1u64..1_000_000, bound in 0u64..1000, a in 0u64..1_000_000, extra in 0u64..1000) {
        let params = AccountingParams::default();
        let amt = |x: u64| Amount::from_integer(x as u128);
        let before = reconcile(amt(total), amt(bound), &[amt(a)], &params);
        let after = reconcile(amt(total), amt(bound), &[amt(a), amt(extra)], &params);
        prop_assert!(!(before.is_pass() && after.is_fail()));
    }

    #[test]
    fn segment_sample_is_distinct_and_in_range(count in 1u32..64, k in 1u32..64, seed in any::<u64>()) {
        let k = k.min(count);
        let s = select_segments(count, &Seed::from_u64(seed), k).unwrap();
        prop_assert_eq!(s.indices.len(), k as usize);
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.indices.iter().all(|&i| i < count));
    }

    #[test]
    fn declarations_round_trip(seed in any::<u64>()) {
        let d = training_declaration(seed);
        let bytes = canonical_encode(&d).unwrap();
        let back: WorkloadDeclaration = canonical_decode(&bytes).unwrap();
        prop_assert_eq!(canonical_encode(&back).unwrap(), bytes);
        prop_assert_eq!(back, d);
    }

    #[test]
    fn covert_injection_adds_exactly_m(m in 1u32..100, ticks in 1u64..500, seed in any::<u64>()) {
        let mut stream: Vec<_> = (0..20u64).map(|t| message(t * 3, 0, 1, MessageKind::GradientAllreduce, &t.to_be_bytes())).collect();
        inject_covert(&mut stream, m, &Seed::from_u64(seed), 2, ticks);
        prop_assert_eq!(stream.len(), 20 + m as usize);
        prop_assert_eq!(stream.iter().filter(|x| x.kind == MessageKind::Other).count(), m as usize);
        prop_assert!(stream.windows(2).all(|w| w[0].tick <= w[1].tick));
        prop_assert!(stream.iter().all(|x| x.src_node != x.dst_node));
    }
}

#[test]
fn reordered_counters_fail() {
    let mut c = certs(4);
    c.swap(1, 2);
    let v = check_counter_continuity(&c, 4);
    assert!(v.is_fail());
    assert_eq!(v.find("counter.out_of_order").map(|e| &e.measured), Some(&Measure::count(2)));
}
