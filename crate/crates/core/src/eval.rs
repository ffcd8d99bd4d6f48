//! Filtered ranking metrics and the indegree breakdown.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::{FilterIndex, Split, Triple, TripleStore};
use crate::error::{Error, Result};

/// Anything that scores `(subject, relation)` queries against every entity.
pub trait LinkScorer: Sync {
    fn num_entities(&self) -> usize;
    /// `B × N` scores, higher is better.
    fn score_batch(&self, queries: &[(usize, usize)]) -> Result<Array2<f64>>;
}

/// Rank of `gold` among `scores` after removing every id in `filter` other
/// than `gold`. Ties share the mean position, rounded half up:
/// `1 + #greater + ceil(#equal / 2)`.
pub fn filtered_rank(
    scores: &[f64],
    gold: usize,
    filter: Option<&BTreeSet<usize>>,
) -> Result<usize> {
    let Some(&g) = scores.get(gold) else {
        return Err(Error::Invalid(format!(
            "gold id {gold} out of range for {} candidates",
            scores.len()
        )));
    };
    if g.is_nan() {
        return Err(Error::NonFinite(format!("score of gold entity {gold}")));
    }
    let (mut greater, mut equal) = (0usize, 0usize);
    for (i, &s) in scores.iter().enumerate() {
        if i == gold || filter.is_some_and(|f| f.contains(&i)) {
            continue;
        }
        if s > g {
            greater += 1;
        } else if s == g {
            equal += 1;
        }
    }
    Ok(1 + greater + equal.div_ceil(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankResult {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub rank: usize,
    pub candidates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub count: usize,
    pub mrr: f64,
    pub hits1: f64,
    pub hits3: f64,
    pub hits10: f64,
}

impl MetricReport {
    /// Metrics over a list of ranks. An empty list gives all zeros.
    pub fn from_ranks(ranks: impl IntoIterator<Item = usize>) -> Self {
        let (mut n, mut rr, mut h1, mut h3, mut h10) = (0usize, 0.0, 0usize, 0usize, 0usize);
        for r in ranks {
            n += 1;
            rr += 1.0 / r as f64;
            h1 += usize::from(r <= 1);
            h3 += usize::from(r <= 3);
            h10 += usize::from(r <= 10);
        }
        if n == 0 {
            return MetricReport::default();
        }
        let d = n as f64;
        MetricReport {
            count: n,
            mrr: rr / d,
            hits1: h1 as f64 / d,
            hits3: h3 as f64 / d,
            hits10: h10 as f64 / d,
        }
    }
}

pub const EVAL_BATCH: usize = 128;

/// Ranks every query in `queries` (gold = object) with filtering from `filter`.
/// Batches are scored in parallel and gathered in input order.
pub fn rank_triples(
    queries: &[Triple],
    scorer: &dyn LinkScorer,
    filter: &FilterIndex,
) -> Result<Vec<RankResult>> {
    let n = scorer.num_entities();
    let chunks: Vec<Result<Vec<RankResult>>> = queries
        .par_chunks(EVAL_BATCH)
        .map(|chunk| {
            let pairs: Vec<(usize, usize)> =
                chunk.iter().map(|t| (t.subject, t.relation)).collect();
            let scores = scorer.score_batch(&pairs)?;
            if scores.dim() != (chunk.len(), n) {
                return Err(Error::shape(
                    "rank_triples",
                    format!(
                        "scorer returned {:?} for {} queries",
                        scores.shape(),
                        chunk.len()
                    ),
                ));
            }
            chunk
                .iter()
                .zip(scores.rows())
                .map(|(t, row)| {
                    let known = filter.objects(t.subject, t.relation);
                    let row = row.to_vec();
                    let rank = filtered_rank(&row, t.object, known)?;
                    let removed =
                        known.map_or(0, |k| k.iter().filter(|&&o| o != t.object && o < n).count());
                    Ok(RankResult {
                        subject: t.subject,
                        relation: t.relation,
                        object: t.object,
                        rank,
                        candidates: n - removed,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(queries.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Filtered metrics over every non-attribute triple of `split`, reciprocal
/// queries included.
pub fn evaluate(
    store: &TripleStore,
    split: Split,
    scorer: &dyn LinkScorer,
    filter: &FilterIndex,
) -> Result<(MetricReport, Vec<RankResult>)> {
    let queries: Vec<Triple> = store
        .split(split)
        .filter(|t| !t.attribute)
        .copied()
        .collect();
    if queries.is_empty() {
        return Err(Error::Invalid(format!("split '{split}' has no triples")));
    }
    let ranks = rank_triples(&queries, scorer, filter)?;
    Ok((
        MetricReport::from_ranks(ranks.iter().map(|r| r.rank)),
        ranks,
    ))
}

/// Half-open degree range `[lo, hi)`; `hi = None` is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Bucket {
    pub lo: usize,
    pub hi: Option<usize>,
}

impl Bucket {
    pub fn contains(&self, d: usize) -> bool {
        d >= self.lo && self.hi.is_none_or(|h| d < h)
    }

    fn hi_label(&self) -> String {
        self.hi.map_or_else(|| "inf".to_string(), |h| h.to_string())
    }
}

/// `[0,100), [100,200), [200,300), [300,400), [400,500), [500,1000), [1000,inf)`.
pub fn default_buckets() -> Vec<Bucket> {
    let edges = [0, 100, 200, 300, 400, 500, 1000];
    let mut out: Vec<Bucket> = edges
        .windows(2)
        .map(|w| Bucket {
            lo: w[0],
            hi: Some(w[1]),
        })
        .collect();
    out.push(Bucket { lo: 1000, hi: None });
    out
}

/// Parses `lo-hi` ranges separated by commas; `hi` may be `inf`.
pub fn parse_buckets(s: &str) -> Result<Vec<Bucket>> {
    s.split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Invalid(format!("bucket '{part}' is not lo-hi")))?;
            let lo = lo
                .trim()
                .parse()
                .map_err(|_| Error::Invalid(format!("bad bucket bound '{lo}'")))?;
            let hi = match hi.trim() {
                "inf" | "max" => None,
                h => Some(
                    h.parse()
                        .map_err(|_| Error::Invalid(format!("bad bucket bound '{h}'")))?,
                ),
            };
            Ok(Bucket { lo, hi })
        })
        .collect()
}

fn check_buckets(buckets: &[Bucket]) -> Result<()> {
    if buckets.is_empty() {
        return Err(Error::Invalid("no buckets given".into()));
    }
    let mut sorted = buckets.to_vec();
    sorted.sort_by_key(|b| b.lo);
    for b in &sorted {
        if b.hi.is_some_and(|h| h <= b.lo) {
            return Err(Error::Invalid(format!(
                "empty bucket [{}, {})",
                b.lo,
                b.hi_label()
            )));
        }
    }
    for w in sorted.windows(2) {
        if w[0].hi.is_none_or(|h| h > w[1].lo) {
            return Err(Error::Invalid(format!(
                "buckets [{}, {}) and [{}, {}) overlap",
                w[0].lo,
                w[0].hi_label(),
                w[1].lo,
                w[1].hi_label()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketReport {
    pub bucket: Bucket,
    pub report: MetricReport,
}

/// Groups ranked queries by the training degree of their gold entity.
/// Queries whose degree falls in no bucket are left out.
pub fn indegree_report(
    ranks: &[RankResult],
    degrees: &[usize],
    buckets: &[Bucket],
) -> Result<Vec<BucketReport>> {
    check_buckets(buckets)?;
    let mut per: Vec<Vec<usize>> = vec![Vec::new(); buckets.len()];
    for r in ranks {
        let d = *degrees
            .get(r.object)
            .ok_or_else(|| Error::Invalid(format!("no degree for entity {}", r.object)))?;
        if let Some(i) = buckets.iter().position(|b| b.contains(d)) {
            per[i].push(r.rank);
        }
    }
    Ok(buckets
        .iter()
        .zip(per)
        .map(|(&bucket, rs)| BucketReport {
            bucket,
            report: MetricReport::from_ranks(rs),
        })
        .collect())
}

pub const REPORT_CSV_HEADER: &str = "bucket_lo,bucket_hi,n,hits10,hits3,hits1,mrr";

fn csv_row(out: &mut String, lo: &str, hi: &str, r: &MetricReport) {
    let _ = writeln!(
        out,
        "{lo},{hi},{},{:.6},{:.6},{:.6},{:.6}",
        r.count, r.hits10, r.hits3, r.hits1, r.mrr
    );
}

/// CSV with an `all,all` row for the whole split followed by one row per bucket.
pub fn report_csv(overall: &MetricReport, buckets: &[BucketReport]) -> String {
    let mut out = String::from(REPORT_CSV_HEADER);
    out.push('\n');
    csv_row(&mut out, "all", "all", overall);
    for b in buckets {
        csv_row(
            &mut out,
            &b.bucket.lo.to_string(),
            &b.bucket.hi_label(),
            &b.report,
        );
    }
    out
}

pub fn report_text(overall: &MetricReport, buckets: &[BucketReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "indegree", "n", "hits@10", "hits@3", "hits@1", "mrr"
    );
    let mut line = |label: String, r: &MetricReport| {
        let _ = writeln!(
            out,
            "{label:<14} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.count, r.hits10, r.hits3, r.hits1, r.mrr
        );
    };
    line("all".into(), overall);
    for b in buckets {
        line(
            format!("[{}, {})", b.bucket.lo, b.bucket.hi_label()),
            &b.report,
        );
    }
    out
}
