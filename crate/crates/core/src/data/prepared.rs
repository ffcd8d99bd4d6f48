use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    add_reciprocal, build_filter_index, build_vocab, merge_attributes, parse_triples,
    AttributeReport, EntityKind, FilterIndex, RawTriple, RelationKind, Split, Triple, TripleStore,
    Vocabulary,
};
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// A fully prepared dataset: reciprocals added, attributes merged, filter built.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub store: TripleStore,
    pub filter: FilterIndex,
    pub attributes: Option<AttributeReport>,
}

/// Counts reported for a prepared dataset. Edge counts exclude reciprocals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetStats {
    pub entities: usize,
    pub attribute_nodes: usize,
    pub relations: usize,
    pub attribute_relations: usize,
    pub relations_with_reciprocals: usize,
    pub train_edges: usize,
    pub valid_edges: usize,
    pub test_edges: usize,
    pub attribute_triples: usize,
    pub dropped_attribute_triples: usize,
}

impl DatasetStats {
    pub fn to_text(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{},{}", k.replace(' ', "_").to_lowercase(), v);
        }
        out
    }

    fn rows(&self) -> Vec<(&'static str, usize)> {
        vec![
            ("Entities", self.entities),
            ("Attribute nodes", self.attribute_nodes),
            ("Relations", self.relations),
            ("Attribute relations", self.attribute_relations),
            (
                "Relations with reciprocals",
                self.relations_with_reciprocals,
            ),
            ("Train edges", self.train_edges),
            ("Val edges", self.valid_edges),
            ("Test edges", self.test_edges),
            ("Attribute triples", self.attribute_triples),
            ("Dropped attribute triples", self.dropped_attribute_triples),
        ]
    }
}

impl Dataset {
    /// Builds a dataset from parsed splits and optional attribute triples.
    pub fn build(
        train: &[RawTriple],
        valid: &[RawTriple],
        test: &[RawTriple],
        attributes: Option<&[RawTriple]>,
    ) -> Result<Dataset> {
        let vocab = build_vocab(train, valid, test)?;
        let all: Vec<RawTriple> = train.iter().chain(valid).chain(test).cloned().collect();
        let store = TripleStore::encode(&vocab, &all)?;
        let (store, vocab, report) = match attributes {
            Some(attrs) => {
                let (s, v, r) = merge_attributes(store, vocab, attrs)?;
                (s, v, Some(r))
            }
            None => (store, vocab, None),
        };
        let (store, vocab) = add_reciprocal(store, vocab)?;
        let filter = build_filter_index(&store);
        Ok(Dataset {
            vocab,
            store,
            filter,
            attributes: report,
        })
    }

    /// Parses the three split files (and attributes, if given) and builds the dataset.
    pub fn from_files(
        train: &Path,
        valid: &Path,
        test: &Path,
        attributes: Option<&Path>,
    ) -> Result<Dataset> {
        let tr = parse_triples(train, Split::Train)?;
        let va = parse_triples(valid, Split::Valid)?;
        let te = parse_triples(test, Split::Test)?;
        let attrs = attributes
            .map(|p| parse_triples(p, Split::Train))
            .transpose()?;
        Dataset::build(&tr, &va, &te, attrs.as_deref())
    }

    pub fn stats(&self) -> DatasetStats {
        let graph = self.vocab.num_graph_relations();
        let base_edges = |split| {
            self.store
                .split(split)
                .filter(|t| t.relation < graph)
                .count()
        };
        DatasetStats {
            entities: self.vocab.num_entities(),
            attribute_nodes: self.vocab.count_entities(EntityKind::Attribute),
            relations: graph,
            attribute_relations: self.vocab.count_relations(RelationKind::Attribute),
            relations_with_reciprocals: self.vocab.num_relations(),
            train_edges: base_edges(Split::Train),
            valid_edges: base_edges(Split::Valid),
            test_edges: base_edges(Split::Test),
            attribute_triples: self
                .store
                .split(Split::Train)
                .filter(|t| t.attribute && t.relation < graph)
                .count(),
            dropped_attribute_triples: self
                .attributes
                .as_ref()
                .map_or(0, |r| r.dropped_unknown_entity + r.duplicates),
        }
    }

    /// Writes the vocabulary, encoded store, filter index and statistics into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };

        let mut meta = String::new();
        let _ = writeln!(meta, "format={FORMAT_VERSION}");
        let _ = writeln!(meta, "reciprocal={}", self.vocab.has_reciprocals());
        write("meta.txt", meta)?;

        let mut ents = String::new();
        for (i, name) in self.vocab.entity_names().iter().enumerate() {
            let _ = writeln!(ents, "{name}\t{}", self.vocab.entity_kind(i).name());
        }
        write("entities.tsv", ents)?;

        let mut rels = String::new();
        for (i, name) in self.vocab.relation_names().iter().enumerate() {
            let _ = writeln!(rels, "{name}\t{}", self.vocab.relation_kind(i).name());
        }
        write("relations.tsv", rels)?;

        let mut trip = String::new();
        for t in self.store.triples() {
            let _ = writeln!(
                trip,
                "{}\t{}\t{}\t{}\t{}",
                t.split,
                t.subject,
                t.relation,
                t.object,
                u8::from(t.attribute)
            );
        }
        write("triples.tsv", trip)?;

        let mut filt = String::new();
        for ((s, r), objs) in self.filter.iter() {
            let list: Vec<String> = objs.iter().map(|o| o.to_string()).collect();
            let _ = writeln!(filt, "{s}\t{r}\t{}", list.join(","));
        }
        write("filter.tsv", filt)?;

        let stats = self.stats();
        write("stats.txt", stats.to_text())?;
        write("stats.csv", stats.to_csv())?;
        Ok(())
    }

    /// Loads a directory written by [`Dataset::save`].
    pub fn load(dir: &Path) -> Result<Dataset> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let perr = |name: &str, line: usize, message: String| Error::Parse {
            path: dir.join(name),
            line,
            message,
        };

        let mut reciprocal = None;
        for (i, line) in read("meta.txt")?.lines().enumerate() {
            match line.split_once('=') {
                Some(("format", v)) => {
                    if v.trim() != FORMAT_VERSION.to_string() {
                        return Err(perr("meta.txt", i + 1, format!("unsupported format {v}")));
                    }
                }
                Some(("reciprocal", v)) => reciprocal = Some(v.trim() == "true"),
                _ => {}
            }
        }
        let reciprocal =
            reciprocal.ok_or_else(|| perr("meta.txt", 0, "missing reciprocal flag".into()))?;

        let mut entities = Vec::new();
        for (i, line) in read("entities.tsv")?.lines().enumerate() {
            let (name, kind) = line
                .rsplit_once('\t')
                .ok_or_else(|| perr("entities.tsv", i + 1, "expected name<TAB>kind".into()))?;
            let kind = match kind {
                "entity" => EntityKind::Entity,
                "attribute" => EntityKind::Attribute,
                k => return Err(perr("entities.tsv", i + 1, format!("bad kind '{k}'"))),
            };
            entities.push((name.to_string(), kind));
        }
        let mut relations = Vec::new();
        for (i, line) in read("relations.tsv")?.lines().enumerate() {
            let (name, kind) = line
                .rsplit_once('\t')
                .ok_or_else(|| perr("relations.tsv", i + 1, "expected name<TAB>kind".into()))?;
            let kind = match kind {
                "base" => RelationKind::Base,
                "attribute" => RelationKind::Attribute,
                "reciprocal" => RelationKind::Reciprocal,
                k => return Err(perr("relations.tsv", i + 1, format!("bad kind '{k}'"))),
            };
            relations.push((name.to_string(), kind));
        }
        let vocab = Vocabulary::from_parts(entities, relations, reciprocal)?;

        let mut triples = Vec::new();
        for (i, line) in read("triples.tsv")?.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(perr("triples.tsv", i + 1, "expected 5 fields".into()));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| perr("triples.tsv", i + 1, e.to_string()))
            };
            triples.push(Triple {
                split: Split::parse(f[0])?,
                subject: num(f[1])?,
                relation: num(f[2])?,
                object: num(f[3])?,
                attribute: f[4] == "1",
            });
        }
        let store = TripleStore::from_triples(triples);
        store.validate(&vocab)?;
        let filter = build_filter_index(&store);
        Ok(Dataset {
            vocab,
            store,
            filter,
            attributes: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(h: &str, r: &str, t: &str, s: Split) -> RawTriple {
        RawTriple::new(h, r, t, s)
    }

    fn toy() -> Dataset {
        let train = vec![
            raw("a", "r", "b", Split::Train),
            raw("b", "s", "c", Split::Train),
        ];
        let valid = vec![raw("a", "r", "c", Split::Valid)];
        let test = vec![raw("c", "s", "a", Split::Test)];
        let attrs = vec![raw("a", "color", "red", Split::Train)];
        Dataset::build(&train, &valid, &test, Some(&attrs)).unwrap()
    }

    #[test]
    fn stats_count_base_edges() {
        let d = toy();
        let s = d.stats();
        assert_eq!(s.entities, 4);
        assert_eq!(s.attribute_nodes, 1);
        assert_eq!(s.relations, 3);
        assert_eq!(s.relations_with_reciprocals, 6);
        assert_eq!(s.train_edges, 3);
        assert_eq!(s.valid_edges, 1);
        assert_eq!(s.test_edges, 1);
        assert_eq!(s.attribute_triples, 1);
        assert!(s.to_csv().starts_with("statistic,value\nentities,4\n"));
    }

    #[test]
    fn save_load_round_trip() {
        let d = toy();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.vocab, d.vocab);
        assert_eq!(back.store, d.store);
        assert_eq!(back.filter, d.filter);
        // saving again yields identical bytes
        let dir2 = tempfile::tempdir().unwrap();
        back.save(dir2.path()).unwrap();
        for f in ["entities.tsv", "relations.tsv", "triples.tsv", "filter.tsv"] {
            assert_eq!(
                fs::read(dir.path().join(f)).unwrap(),
                fs::read(dir2.path().join(f)).unwrap(),
                "{f}"
            );
        }
    }

    #[test]
    fn decode_round_trips_strings() {
        let d = toy();
        let t = d.store.triples()[0];
        assert_eq!(
            d.vocab.decode(&t),
            ("a".to_string(), "r".to_string(), "b".to_string())
        );
    }
}
