#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use kbc_core::graph::RelationAdjacency;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference rank: average 1-based position of `gold` over every strict
/// ordering of the surviving candidates that sorts scores descending, rounded
/// half up. Candidates with equal scores may appear in any relative order.
pub fn brute_force_rank(scores: &[f64], gold: usize, filter: &BTreeSet<usize>) -> usize {
    let kept: Vec<usize> = (0..scores.len())
        .filter(|&i| i == gold || !filter.contains(&i))
        .collect();
    let mut perm = kept.clone();
    let (mut total, mut count) = (0usize, 0usize);
    permute(&mut perm, 0, &mut |p| {
        if p.windows(2).all(|w| scores[w[0]] >= scores[w[1]]) {
            total += p.iter().position(|&i| i == gold).unwrap() + 1;
            count += 1;
        }
    });
    // round half up of total / count
    (2 * total + count) / (2 * count)
}

fn permute(v: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

/// Random multi-relational graph with `n` nodes, `t` edge types and roughly `m` edges.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, t: usize, m: usize) -> RelationAdjacency {
    let edges: Vec<(usize, usize, usize)> = (0..m)
        .map(|_| {
            (
                rng.random_range(0..n),
                rng.random_range(0..n),
                rng.random_range(0..t),
            )
        })
        .collect();
    RelationAdjacency::from_edges(n, t, &edges).unwrap()
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

pub const FB_ENTITIES: usize = 14_541;
pub const FB_RELATIONS: usize = 237;
pub const FB_TRAIN: usize = 272_115;
pub const FB_VALID: usize = 17_535;
pub const FB_TEST: usize = 20_466;
pub const ATTR_TRIPLES: usize = 78_334;
pub const ATTR_ENTITIES: usize = 7_589;
pub const ATTR_RELATIONS: usize = 247;
pub const ATTR_TYPES: usize = 203;

pub struct ShapedFiles {
    pub train: PathBuf,
    pub valid: PathBuf,
    pub test: PathBuf,
    pub attributes: PathBuf,
}

fn write_triples(path: &Path, triples: &[(String, String, String)]) {
    let mut s = String::with_capacity(triples.len() * 32);
    for (h, r, t) in triples {
        let _ = writeln!(s, "{h}\t{r}\t{t}");
    }
    fs::write(path, s).unwrap();
}

/// Writes split and attribute files with the published size profile of the
/// attribute-augmented FB15k-237: every entity and relation occurs in train,
/// splits hold exactly the listed number of distinct triples, and the
/// attribute file covers exactly the listed entities, relations and types.
pub fn write_fb15k_attr_shaped(dir: &Path, seed: u64) -> ShapedFiles {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ent = |i: usize| format!("/m/e{i}");
    let rel = |i: usize| format!("/rel/r{i}");
    let mut seen = HashSet::new();
    let mut split = |rng: &mut ChaCha8Rng, target: usize, seed_rows: Vec<(usize, usize, usize)>| {
        let mut out = Vec::with_capacity(target);
        for k in seed_rows {
            if seen.insert(k) {
                out.push(k);
            }
        }
        while out.len() < target {
            let k = (
                rng.random_range(0..FB_ENTITIES),
                rng.random_range(0..FB_RELATIONS),
                rng.random_range(0..FB_ENTITIES),
            );
            if seen.insert(k) {
                out.push(k);
            }
        }
        out.into_iter()
            .map(|(h, r, t)| (ent(h), rel(r), ent(t)))
            .collect::<Vec<_>>()
    };
    let cover: Vec<_> = (0..FB_ENTITIES)
        .map(|i| (i, i % FB_RELATIONS, (i + 1) % FB_ENTITIES))
        .collect();
    let train = split(&mut rng, FB_TRAIN, cover);
    let valid = split(&mut rng, FB_VALID, Vec::new());
    let test = split(&mut rng, FB_TEST, Vec::new());

    let mut attr_seen = HashSet::new();
    let mut attrs = Vec::with_capacity(ATTR_TRIPLES);
    for i in 0..ATTR_ENTITIES.max(ATTR_RELATIONS).max(ATTR_TYPES) {
        let k = (i % ATTR_ENTITIES, i % ATTR_RELATIONS, i % ATTR_TYPES);
        if attr_seen.insert(k) {
            attrs.push(k);
        }
    }
    while attrs.len() < ATTR_TRIPLES {
        let k = (
            rng.random_range(0..ATTR_ENTITIES),
            rng.random_range(0..ATTR_RELATIONS),
            rng.random_range(0..ATTR_TYPES),
        );
        if attr_seen.insert(k) {
            attrs.push(k);
        }
    }
    // attribute holders are spread across the entity id range
    let holder = |i: usize| ent(i * FB_ENTITIES / ATTR_ENTITIES);
    let attrs: Vec<_> = attrs
        .into_iter()
        .map(|(e, r, t)| (holder(e), format!("/attr/a{r}"), format!("type{t}")))
        .collect();

    let files = ShapedFiles {
        train: dir.join("train.txt"),
        valid: dir.join("valid.txt"),
        test: dir.join("test.txt"),
        attributes: dir.join("attributes.txt"),
    };
    write_triples(&files.train, &train);
    write_triples(&files.valid, &valid);
    write_triples(&files.test, &test);
    write_triples(&files.attributes, &attrs);
    files
}

/// Every weak ordering of `n` items as a score vector with levels `0..k`,
/// each level used at least once.
pub fn weak_orderings(n: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let total = n.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        let levels: Vec<usize> = (0..n)
            .map(|_| {
                let d = c % n;
                c /= n;
                d
            })
            .collect();
        let top = levels.iter().copied().max().unwrap_or(0);
        if (0..=top).all(|l| levels.contains(&l)) {
            out.push(levels.iter().map(|&l| l as f64).collect());
        }
    }
    out
}

/// Compares `rank_fn` with [`brute_force_rank`] on every weak ordering of up
/// to `max_n` candidates, every gold position and every filter subset.
/// Returns (cases checked, first mismatch).
pub fn exhaustive_rank_check(
    max_n: usize,
    rank_fn: impl Fn(&[f64], usize, &BTreeSet<usize>) -> usize,
) -> (usize, Option<String>) {
    let mut cases = 0;
    for n in 1..=max_n {
        for scores in weak_orderings(n) {
            for gold in 0..n {
                for mask in 0u32..(1 << n) {
                    if mask & (1 << gold) != 0 {
                        continue;
                    }
                    let filter: BTreeSet<usize> =
                        (0..n).filter(|&i| mask & (1 << i) != 0).collect();
                    let got = rank_fn(&scores, gold, &filter);
                    let want = brute_force_rank(&scores, gold, &filter);
                    cases += 1;
                    if got != want {
                        return (
                            cases,
                            Some(format!(
                                "scores {scores:?} gold {gold} filter {filter:?}: {got} vs {want}"
                            )),
                        );
                    }
                }
            }
        }
    }
    (cases, None)
}
