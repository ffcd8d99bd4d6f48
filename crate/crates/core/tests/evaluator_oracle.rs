//! Ranking and metrics against exhaustive enumeration of candidate orderings.

mod common;

use std::collections::BTreeSet;

use kbc_core::data::{Dataset, RawTriple, Split};
use kbc_core::eval::{
    default_buckets, evaluate, filtered_rank, indegree_report, LinkScorer, MetricReport,
};
use kbc_core::Result;
use ndarray::Array2;

#[test]
fn weak_ordering_counts() {
    // ordered Bell numbers
    let counts: Vec<usize> = (1..=6).map(|n| common::weak_orderings(n).len()).collect();
    assert_eq!(counts, vec![1, 3, 13, 75, 541, 4683]);
}

#[test]
fn brute_force_reference_examples() {
    let none = BTreeSet::new();
    assert_eq!(common::brute_force_rank(&[0.9, 0.5, 0.1], 1, &none), 2);
    assert_eq!(
        common::brute_force_rank(&[0.9, 0.5, 0.1], 1, &[0].into()),
        1
    );
    assert_eq!(common::brute_force_rank(&[1.0; 5], 0, &none), 3);
    assert_eq!(common::brute_force_rank(&[1.0; 4], 0, &none), 3);
}

#[test]
fn filtered_rank_matches_enumeration_up_to_six() {
    let (cases, mismatch) =
        common::exhaustive_rank_check(6, |s, g, f| filtered_rank(s, g, Some(f)).unwrap());
    assert!(mismatch.is_none(), "{mismatch:?}");
    assert!(cases > 100_000);
}

/// Scores from a fixed table with many ties.
struct TableScorer {
    n: usize,
}

impl LinkScorer for TableScorer {
    fn num_entities(&self) -> usize {
        self.n
    }

    fn score_batch(&self, queries: &[(usize, usize)]) -> Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((queries.len(), self.n), |(b, o)| {
            let (s, r) = queries[b];
            ((s * 7 + r * 3 + o * 5) % 4) as f64
        }))
    }
}

fn seven_entity_kg() -> Dataset {
    let t = |h: usize, r: usize, o: usize, s| {
        RawTriple::new(&format!("e{h}"), &format!("r{r}"), &format!("e{o}"), s)
    };
    let train: Vec<RawTriple> = (0..7)
        .flat_map(|i| {
            [
                t(i, i % 2, (i + 1) % 7, Split::Train),
                t(i, 2, (i + 3) % 7, Split::Train),
            ]
        })
        .collect();
    let valid = vec![t(0, 0, 4, Split::Valid), t(5, 1, 2, Split::Valid)];
    let test = vec![
        t(1, 0, 5, Split::Test),
        t(2, 2, 6, Split::Test),
        t(6, 1, 1, Split::Test),
        t(3, 0, 0, Split::Test),
    ];
    Dataset::build(&train, &valid, &test, None).unwrap()
}

#[test]
fn evaluate_matches_enumerated_reference() {
    let data = seven_entity_kg();
    let scorer = TableScorer {
        n: data.vocab.num_entities(),
    };
    for split in [Split::Valid, Split::Test] {
        let (report, ranks) = evaluate(&data.store, split, &scorer, &data.filter).unwrap();
        let queries: Vec<_> = data.store.split(split).copied().collect();
        assert_eq!(ranks.len(), queries.len());
        let mut want = Vec::new();
        for (q, got) in queries.iter().zip(&ranks) {
            let scores = scorer.score_batch(&[(q.subject, q.relation)]).unwrap();
            let known: BTreeSet<usize> = data
                .filter
                .objects(q.subject, q.relation)
                .cloned()
                .unwrap_or_default();
            let r = common::brute_force_rank(scores.row(0).as_slice().unwrap(), q.object, &known);
            assert_eq!(got.rank, r);
            want.push(r);
        }
        let n = want.len() as f64;
        let mrr = want.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
        let hits = |k| want.iter().filter(|&&r| r <= k).count() as f64 / n;
        assert!((report.mrr - mrr).abs() < 1e-15);
        assert_eq!(
            (report.hits1, report.hits3, report.hits10),
            (hits(1), hits(3), hits(10))
        );
        assert!(report.hits1 <= report.hits3 && report.hits3 <= report.hits10);
        // reciprocal queries are included
        assert_eq!(
            report.count,
            2 * data
                .store
                .split(split)
                .filter(|t| t.relation < data.vocab.num_graph_relations())
                .count()
        );
    }
}

#[test]
fn evaluate_rejects_empty_split() {
    let t = |h: &str, o: &str, s| RawTriple::new(h, "r", o, s);
    let data = Dataset::build(&[t("a", "b", Split::Train)], &[], &[], None).unwrap();
    assert!(evaluate(
        &data.store,
        Split::Test,
        &TableScorer { n: 2 },
        &data.filter
    )
    .is_err());
}

#[test]
fn bucket_partition_on_real_degrees() {
    let data = seven_entity_kg();
    let scorer = TableScorer { n: 7 };
    let (global, ranks) = evaluate(&data.store, Split::Test, &scorer, &data.filter).unwrap();
    let degrees = kbc_core::data::node_degrees(&data.store, &data.vocab);
    let buckets = kbc_core::eval::parse_buckets("0-4,4-5,5-inf").unwrap();
    let rep = indegree_report(&ranks, &degrees, &buckets).unwrap();
    let n: usize = rep.iter().map(|b| b.report.count).sum();
    assert_eq!(n, global.count);
    let mean = |f: fn(&MetricReport) -> f64| {
        rep.iter()
            .map(|b| f(&b.report) * b.report.count as f64)
            .sum::<f64>()
            / n as f64
    };
    assert!((mean(|r| r.mrr) - global.mrr).abs() < 1e-12);
    assert!((mean(|r| r.hits10) - global.hits10).abs() < 1e-12);
    let all = indegree_report(&ranks, &degrees, &default_buckets()).unwrap();
    assert_eq!(all[0].report, global);
}
