//! Triple ingestion, vocabularies, reciprocal relations, attribute nodes and
//! the filtered-candidate index.

mod prepared;

pub use prepared::{Dataset, DatasetStats};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Prefix given to attribute-type nodes so they never collide with entity names.
pub const ATTRIBUTE_NODE_PREFIX: &str = "attr:";
/// Suffix appended to a relation name to form its reciprocal.
pub const RECIPROCAL_SUFFIX: &str = "_inv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "valid" | "validation" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split '{other}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of a triple file, still in string form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub split: Split,
}

impl RawTriple {
    pub fn new(head: &str, relation: &str, tail: &str, split: Split) -> Self {
        RawTriple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            split,
        }
    }
}

/// Reads a tab-separated `head<TAB>relation<TAB>tail` file. Blank lines are skipped.
pub fn parse_triples(path: impl AsRef<Path>, split: Split) -> Result<Vec<RawTriple>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_triples_str(&text, split).map_err(|(line, message)| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    })
}

pub(crate) fn parse_triples_str(
    text: &str,
    split: Split,
) -> std::result::Result<Vec<RawTriple>, (usize, String)> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err((
                i + 1,
                format!("expected 3 tab-separated fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err((i + 1, "empty field".to_string()));
        }
        out.push(RawTriple::new(fields[0], fields[1], fields[2], split));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntityKind {
    Entity,
    Attribute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelationKind {
    Base,
    Attribute,
    Reciprocal,
}

impl EntityKind {
    pub(crate) fn name(self) -> &'static str {
        match self {
            EntityKind::Entity => "entity",
            EntityKind::Attribute => "attribute",
        }
    }
}

impl RelationKind {
    pub(crate) fn name(self) -> &'static str {
        match self {
            RelationKind::Base => "base",
            RelationKind::Attribute => "attribute",
            RelationKind::Reciprocal => "reciprocal",
        }
    }
}

/// Dense 0-based ids for entities and relations, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entity_names: Vec<String>,
    entity_kinds: Vec<EntityKind>,
    entity_index: HashMap<String, usize>,
    relation_names: Vec<String>,
    relation_kinds: Vec<RelationKind>,
    relation_index: HashMap<String, usize>,
    // relations [0, base) are base + attribute; [base, 2*base) their reciprocals
    base_relations: usize,
    reciprocal: bool,
}

impl Vocabulary {
    pub fn num_entities(&self) -> usize {
        self.entity_names.len()
    }

    /// All relation types, reciprocals included.
    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// Relation types that define graph edges (base and attribute, no reciprocals).
    pub fn num_graph_relations(&self) -> usize {
        if self.reciprocal {
            self.base_relations
        } else {
            self.relation_names.len()
        }
    }

    pub fn has_reciprocals(&self) -> bool {
        self.reciprocal
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_index.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn entity_kind(&self, id: usize) -> EntityKind {
        self.entity_kinds[id]
    }

    pub fn relation_kind(&self, id: usize) -> RelationKind {
        self.relation_kinds[id]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// The reciprocal of `relation`, if reciprocals have been added.
    pub fn reciprocal_of(&self, relation: usize) -> Option<usize> {
        if !self.reciprocal {
            return None;
        }
        if relation < self.base_relations {
            Some(relation + self.base_relations)
        } else {
            Some(relation - self.base_relations)
        }
    }

    pub fn count_entities(&self, kind: EntityKind) -> usize {
        self.entity_kinds.iter().filter(|&&k| k == kind).count()
    }

    pub fn count_relations(&self, kind: RelationKind) -> usize {
        self.relation_kinds.iter().filter(|&&k| k == kind).count()
    }

    fn intern_entity(&mut self, name: &str, kind: EntityKind) -> usize {
        if let Some(&id) = self.entity_index.get(name) {
            return id;
        }
        let id = self.entity_names.len();
        self.entity_names.push(name.to_string());
        self.entity_kinds.push(kind);
        self.entity_index.insert(name.to_string(), id);
        id
    }

    fn intern_relation(&mut self, name: &str, kind: RelationKind) -> usize {
        if let Some(&id) = self.relation_index.get(name) {
            return id;
        }
        let id = self.relation_names.len();
        self.relation_names.push(name.to_string());
        self.relation_kinds.push(kind);
        self.relation_index.insert(name.to_string(), id);
        id
    }

    /// Decodes an encoded triple back to its strings.
    pub fn decode(&self, t: &Triple) -> (String, String, String) {
        (
            self.entity_names[t.subject].clone(),
            self.relation_names[t.relation].clone(),
            self.entity_names[t.object].clone(),
        )
    }

    pub(crate) fn from_parts(
        entities: Vec<(String, EntityKind)>,
        relations: Vec<(String, RelationKind)>,
        reciprocal: bool,
    ) -> Result<Self> {
        let mut v = Vocabulary::default();
        for (name, kind) in entities {
            if v.entity_index.contains_key(&name) {
                return Err(Error::Invalid(format!("duplicate entity name '{name}'")));
            }
            v.intern_entity(&name, kind);
        }
        for (name, kind) in relations {
            if v.relation_index.contains_key(&name) {
                return Err(Error::Invalid(format!("duplicate relation name '{name}'")));
            }
            v.intern_relation(&name, kind);
        }
        if reciprocal {
            let n = v.relation_names.len();
            if n % 2 != 0 {
                return Err(Error::Invalid(
                    "reciprocal vocabulary must have an even relation count".into(),
                ));
            }
            v.base_relations = n / 2;
            v.reciprocal = true;
        } else {
            v.base_relations = v.relation_names.len();
        }
        Ok(v)
    }
}

/// Assigns ids to every entity and relation appearing in the given splits.
///
/// Ids follow first appearance, scanning train, then valid, then test, and
/// within a line head before tail.
pub fn build_vocab(
    train: &[RawTriple],
    valid: &[RawTriple],
    test: &[RawTriple],
) -> Result<Vocabulary> {
    if train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut vocab = Vocabulary::default();
    for t in train.iter().chain(valid).chain(test) {
        vocab.intern_entity(&t.head, EntityKind::Entity);
        vocab.intern_relation(&t.relation, RelationKind::Base);
        vocab.intern_entity(&t.tail, EntityKind::Entity);
    }
    vocab.base_relations = vocab.relation_names.len();
    Ok(vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Triple {
    pub subject: usize,
    pub relation: usize,
    pub object: usize,
    pub split: Split,
    /// True when the triple was derived from an attribute file.
    pub attribute: bool,
}

/// Integer-encoded triples with split labels. No duplicate (s, r, o) within a split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripleStore {
    triples: Vec<Triple>,
}

impl TripleStore {
    /// Encodes raw triples against `vocab`, dropping repeats within a split.
    pub fn encode(vocab: &Vocabulary, raw: &[RawTriple]) -> Result<TripleStore> {
        let mut seen = HashSet::new();
        let mut triples = Vec::with_capacity(raw.len());
        for t in raw {
            let s = vocab.entity_id(&t.head).ok_or_else(|| Error::UnknownName {
                kind: "entity",
                name: t.head.clone(),
            })?;
            let r = vocab
                .relation_id(&t.relation)
                .ok_or_else(|| Error::UnknownName {
                    kind: "relation",
                    name: t.relation.clone(),
                })?;
            let o = vocab.entity_id(&t.tail).ok_or_else(|| Error::UnknownName {
                kind: "entity",
                name: t.tail.clone(),
            })?;
            if seen.insert((s, r, o, t.split)) {
                triples.push(Triple {
                    subject: s,
                    relation: r,
                    object: o,
                    split: t.split,
                    attribute: false,
                });
            }
        }
        Ok(TripleStore { triples })
    }

    pub(crate) fn from_triples(triples: Vec<Triple>) -> TripleStore {
        TripleStore { triples }
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Triple> + '_ {
        self.triples.iter().filter(move |t| t.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Checks every id against the vocabulary and the no-duplicate rule.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.triples {
            if t.subject >= vocab.num_entities()
                || t.object >= vocab.num_entities()
                || t.relation >= vocab.num_relations()
            {
                return Err(Error::Invalid(format!(
                    "triple {t:?} out of vocabulary bounds"
                )));
            }
            if !seen.insert((t.subject, t.relation, t.object, t.split)) {
                return Err(Error::Invalid(format!("duplicate triple {t:?}")));
            }
        }
        Ok(())
    }
}

/// Adds `r_inv` for every relation and `(o, r_inv, s)` for every triple.
///
/// Reciprocal relation `r` gets id `r + R` where `R` is the relation count
/// before the call. Fails if reciprocals were already added.
pub fn add_reciprocal(
    store: TripleStore,
    mut vocab: Vocabulary,
) -> Result<(TripleStore, Vocabulary)> {
    if vocab.reciprocal {
        return Err(Error::Invalid("reciprocal relations already added".into()));
    }
    let base = vocab.relation_names.len();
    for r in 0..base {
        let mut name = format!("{}{}", vocab.relation_names[r], RECIPROCAL_SUFFIX);
        while vocab.relation_index.contains_key(&name) {
            name.push_str(RECIPROCAL_SUFFIX);
        }
        let id = vocab.intern_relation(&name, RelationKind::Reciprocal);
        debug_assert_eq!(id, r + base);
    }
    vocab.base_relations = base;
    vocab.reciprocal = true;

    let mut triples = store.triples;
    let originals = triples.len();
    triples.reserve(originals);
    for i in 0..originals {
        let t = triples[i];
        triples.push(Triple {
            subject: t.object,
            relation: t.relation + base,
            object: t.subject,
            split: t.split,
            attribute: t.attribute,
        });
    }
    Ok((TripleStore { triples }, vocab))
}

/// Outcome of [`merge_attributes`].
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributeReport {
    pub input: usize,
    pub retained: usize,
    pub dropped_unknown_entity: usize,
    pub duplicates: usize,
    pub new_nodes: usize,
    pub new_relations: usize,
}

/// Merges `(entity, attribute-relation, attribute-type)` triples into the
/// training split. Each distinct attribute type becomes a single new node
/// named `attr:<type>`; triples whose entity is unknown are dropped.
pub fn merge_attributes(
    store: TripleStore,
    mut vocab: Vocabulary,
    attributes: &[RawTriple],
) -> Result<(TripleStore, Vocabulary, AttributeReport)> {
    if vocab.reciprocal {
        return Err(Error::Invalid(
            "attributes must be merged before reciprocal relations are added".into(),
        ));
    }
    let mut report = AttributeReport {
        input: attributes.len(),
        ..Default::default()
    };
    let mut triples = store.triples;
    let mut seen: HashSet<(usize, usize, usize)> = triples
        .iter()
        .filter(|t| t.split == Split::Train)
        .map(|t| (t.subject, t.relation, t.object))
        .collect();
    let entities_before = vocab.num_entities();
    let relations_before = vocab.num_relations();

    for a in attributes {
        let entity = match vocab.entity_id(&a.head) {
            Some(id) if vocab.entity_kind(id) == EntityKind::Entity => id,
            _ => {
                report.dropped_unknown_entity += 1;
                continue;
            }
        };
        let relation = vocab.intern_relation(&a.relation, RelationKind::Attribute);
        let node_name = format!("{ATTRIBUTE_NODE_PREFIX}{}", a.tail);
        let node = vocab.intern_entity(&node_name, EntityKind::Attribute);
        if !seen.insert((entity, relation, node)) {
            report.duplicates += 1;
            continue;
        }
        triples.push(Triple {
            subject: entity,
            relation,
            object: node,
            split: Split::Train,
            attribute: true,
        });
        report.retained += 1;
    }
    vocab.base_relations = vocab.relation_names.len();
    report.new_nodes = vocab.num_entities() - entities_before;
    report.new_relations = vocab.num_relations() - relations_before;
    Ok((TripleStore { triples }, vocab, report))
}

/// Map from `(subject, relation)` to every object known true for it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterIndex {
    map: BTreeMap<(usize, usize), BTreeSet<usize>>,
}

impl FilterIndex {
    /// Objects known for `(subject, relation)`; empty when the pair never occurs.
    pub fn objects(&self, subject: usize, relation: usize) -> Option<&BTreeSet<usize>> {
        self.map.get(&(subject, relation))
    }

    pub fn contains(&self, subject: usize, relation: usize, object: usize) -> bool {
        self.map
            .get(&(subject, relation))
            .is_some_and(|s| s.contains(&object))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &BTreeSet<usize>)> {
        self.map.iter()
    }
}

/// Filter index over all splits. Build it after reciprocals are added so
/// head-prediction queries are covered as object queries.
pub fn build_filter_index(store: &TripleStore) -> FilterIndex {
    build_filter_index_for(store, &Split::ALL)
}

/// Filter index restricted to the given splits.
pub fn build_filter_index_for(store: &TripleStore, splits: &[Split]) -> FilterIndex {
    let mut map: BTreeMap<(usize, usize), BTreeSet<usize>> = BTreeMap::new();
    for t in store.triples.iter().filter(|t| splits.contains(&t.split)) {
        map.entry((t.subject, t.relation))
            .or_default()
            .insert(t.object);
    }
    FilterIndex { map }
}

/// Number of training-graph edges touching each node, counting each
/// non-reciprocal train triple once per distinct endpoint.
pub fn node_degrees(store: &TripleStore, vocab: &Vocabulary) -> Vec<usize> {
    let mut deg = vec![0usize; vocab.num_entities()];
    let graph_relations = vocab.num_graph_relations();
    for t in store.split(Split::Train) {
        if t.relation >= graph_relations {
            continue;
        }
        deg[t.subject] += 1;
        if t.object != t.subject {
            deg[t.object] += 1;
        }
    }
    deg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(h: &str, r: &str, t: &str) -> RawTriple {
        RawTriple::new(h, r, t, Split::Train)
    }

    #[test]
    fn parses_tab_separated_lines() {
        let got = parse_triples_str("a\tr1\tb\n", Split::Train).unwrap();
        assert_eq!(got, vec![raw("a", "r1", "b")]);
    }

    #[test]
    fn empty_input_gives_no_triples() {
        assert!(parse_triples_str("", Split::Test).unwrap().is_empty());
        assert!(parse_triples_str("\n\n", Split::Test).unwrap().is_empty());
    }

    #[test]
    fn crlf_and_whitespace_are_trimmed() {
        let got = parse_triples_str(" a \tr1\tb \r\nc\tr2\td\r\n", Split::Valid).unwrap();
        assert_eq!(got[0].head, "a");
        assert_eq!(got[0].tail, "b");
        assert_eq!(got[1].tail, "d");
    }

    #[test]
    fn arity_violation_reports_line() {
        let err = parse_triples_str("a\tr\tb\na\tr1\n", Split::Train).unwrap_err();
        assert_eq!(err.0, 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = parse_triples("/nonexistent/triples.tsv", Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn smallest_graph_vocab() {
        let v = build_vocab(&[raw("a", "r", "b")], &[], &[]).unwrap();
        assert_eq!(v.num_entities(), 2);
        assert_eq!(v.num_relations(), 1);
        assert_eq!(v.entity_id("a"), Some(0));
        assert_eq!(v.entity_id("b"), Some(1));
    }

    #[test]
    fn vocab_requires_training_triples() {
        assert!(build_vocab(&[], &[raw("a", "r", "b")], &[]).is_err());
    }

    #[test]
    fn vocab_covers_all_splits() {
        let train = vec![raw("a", "r", "b")];
        let valid = vec![RawTriple::new("c", "q", "a", Split::Valid)];
        let test = vec![RawTriple::new("d", "r", "e", Split::Test)];
        let v = build_vocab(&train, &valid, &test).unwrap();
        assert_eq!(v.num_entities(), 5);
        assert_eq!(v.num_relations(), 2);
        assert_eq!(v.entity_names(), &["a", "b", "c", "d", "e"]);
    }

    #[test]
    fn encode_dedupes_within_split_only() {
        let raws = vec![
            raw("a", "r", "b"),
            raw("a", "r", "b"),
            RawTriple::new("a", "r", "b", Split::Test),
        ];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        assert_eq!(store.len(), 2);
        store.validate(&v).unwrap();
    }

    #[test]
    fn reciprocal_doubles_relations_and_triples() {
        let raws = vec![raw("a", "r", "b"), raw("b", "s", "c")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (store, v) = add_reciprocal(store, v).unwrap();
        assert_eq!(v.num_relations(), 4);
        assert_eq!(v.num_graph_relations(), 2);
        assert_eq!(store.len(), 4);
        let r_inv = v.relation_id("r_inv").unwrap();
        assert_eq!(v.reciprocal_of(0), Some(r_inv));
        assert_eq!(v.reciprocal_of(r_inv), Some(0));
        let a = v.entity_id("a").unwrap();
        let b = v.entity_id("b").unwrap();
        assert!(store
            .triples()
            .iter()
            .any(|t| t.subject == b && t.relation == r_inv && t.object == a));
    }

    #[test]
    fn reciprocal_twice_is_rejected() {
        let raws = vec![raw("a", "r", "b")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (store, v) = add_reciprocal(store, v).unwrap();
        assert!(add_reciprocal(store, v).is_err());
    }

    #[test]
    fn reciprocal_name_avoids_collisions() {
        let raws = vec![raw("a", "r", "b"), raw("a", "r_inv", "b")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (_, v) = add_reciprocal(store, v).unwrap();
        assert_eq!(v.relation_name(2), "r_inv_inv");
        assert_eq!(v.relation_name(3), "r_inv_inv_inv");
    }

    #[test]
    fn attribute_type_becomes_one_node() {
        let raws = vec![raw("tom", "knows", "ann")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let attrs = vec![
            raw("tom", "person.gender", "gender"),
            raw("ann", "person.gender", "gender"),
            raw("nobody", "person.gender", "gender"),
        ];
        let (store, v, report) = merge_attributes(store, v, &attrs).unwrap();
        assert_eq!(report.new_nodes, 1);
        assert_eq!(report.retained, 2);
        assert_eq!(report.dropped_unknown_entity, 1);
        assert_eq!(v.num_entities(), 3);
        assert_eq!(v.num_relations(), 2);
        assert_eq!(store.count(Split::Train), 3);
        assert!(store
            .triples()
            .iter()
            .filter(|t| t.attribute)
            .all(|t| t.split == Split::Train));
        let node = v.entity_id("attr:gender").unwrap();
        assert_eq!(v.entity_kind(node), EntityKind::Attribute);
    }

    #[test]
    fn no_attributes_is_identity() {
        let raws = vec![raw("tom", "knows", "ann")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (s2, v2, report) = merge_attributes(store.clone(), v.clone(), &[]).unwrap();
        assert_eq!(s2, store);
        assert_eq!(v2, v);
        assert_eq!(report.retained, 0);
    }

    #[test]
    fn attributes_after_reciprocals_rejected() {
        let raws = vec![raw("a", "r", "b")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (store, v) = add_reciprocal(store, v).unwrap();
        assert!(merge_attributes(store, v, &[raw("a", "x", "y")]).is_err());
    }

    #[test]
    fn filter_index_collects_objects() {
        let raws = vec![
            raw("a", "r", "b"),
            raw("a", "r", "c"),
            RawTriple::new("x", "q", "y", Split::Test),
        ];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let idx = build_filter_index(&store);
        let (a, r) = (v.entity_id("a").unwrap(), v.relation_id("r").unwrap());
        let objs: Vec<usize> = idx.objects(a, r).unwrap().iter().copied().collect();
        assert_eq!(
            objs,
            vec![v.entity_id("b").unwrap(), v.entity_id("c").unwrap()]
        );
        assert!(idx.objects(v.entity_id("b").unwrap(), r).is_none());
        let (x, q, y) = (
            v.entity_id("x").unwrap(),
            v.relation_id("q").unwrap(),
            v.entity_id("y").unwrap(),
        );
        assert!(idx.contains(x, q, y));
        let train_only = build_filter_index_for(&store, &[Split::Train]);
        assert!(!train_only.contains(x, q, y));
    }

    #[test]
    fn degrees_ignore_reciprocals() {
        let raws = vec![raw("a", "r", "b"), raw("a", "s", "c"), raw("a", "t", "a")];
        let v = build_vocab(&raws, &[], &[]).unwrap();
        let store = TripleStore::encode(&v, &raws).unwrap();
        let (store, v) = add_reciprocal(store, v).unwrap();
        assert_eq!(node_degrees(&store, &v), vec![3, 1, 1]);
    }
}
