//! Triple storage: edgelist ingestion, multi-source merge, concept subgraphs
//! and dense vocabularies.
//!
//! Edgelists are UTF-8 TSV, one `head<TAB>relation<TAB>tail` per line.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("empty graph")]
    EmptyGraph,
    #[error("unknown source tag {0:?}")]
    UnknownSource(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Where a triple came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Metathesaurus,
    SemanticNetwork,
    Other,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Metathesaurus, Source::SemanticNetwork, Source::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Metathesaurus => "metathesaurus",
            Source::SemanticNetwork => "semantic-network",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = KgError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "metathesaurus" | "meta" => Ok(Source::Metathesaurus),
            "semantic-network" | "sn" => Ok(Source::SemanticNetwork),
            "other" => Ok(Source::Other),
            _ => Err(KgError::UnknownSource(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Triple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub source: Source,
}

impl Triple {
    pub fn new(head: &str, relation: &str, tail: &str, source: Source) -> Self {
        Triple {
            head: head.to_string(),
            relation: relation.to_string(),
            tail: tail.to_string(),
            source,
        }
    }

    /// The identity used for deduplication; the source tag is not part of it.
    pub fn key(&self) -> (&str, &str, &str) {
        (&self.head, &self.relation, &self.tail)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TripleSet {
    pub triples: Vec<Triple>,
    pub deduplicated: bool,
}

/// A triple after vocabulary lookup.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IndexedTriple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl IndexedTriple {
    pub fn new(head: usize, relation: usize, tail: usize) -> Self {
        IndexedTriple { head, relation, tail }
    }
}

/// Parse an edgelist. A stream with no triples is an empty set, not an error.
pub fn load_edgelist<R: BufRead>(reader: R, source: Source) -> Result<TripleSet, KgError> {
    let mut triples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::Malformed {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(KgError::Malformed { line: i + 1, reason: "empty field".into() });
        }
        triples.push(Triple::new(fields[0], fields[1], fields[2], source));
    }
    Ok(TripleSet { triples, deduplicated: false })
}

pub fn parse_edgelist(text: &str, source: Source) -> Result<TripleSet, KgError> {
    load_edgelist(text.as_bytes(), source)
}

/// Union of two sets, deduplicated on (head, relation, tail). The first-seen
/// source tag wins, `a` before `b`.
pub fn merge(a: &TripleSet, b: &TripleSet) -> TripleSet {
    let mut out = TripleSet {
        triples: a.triples.iter().chain(&b.triples).cloned().collect(),
        deduplicated: false,
    };
    out.dedup();
    out
}

impl TripleSet {
    pub fn new(triples: Vec<Triple>) -> Self {
        TripleSet { triples, deduplicated: false }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Drop repeated (head, relation, tail) keys, keeping the first occurrence.
    pub fn dedup(&mut self) {
        let mut seen = HashSet::new();
        self.triples.retain(|t| {
            seen.insert((t.head.clone(), t.relation.clone(), t.tail.clone()))
        });
        self.deduplicated = true;
    }

    pub fn deduped(mut self) -> Self {
        self.dedup();
        self
    }

    /// Triples whose head and tail are both in `concepts`.
    pub fn extract_subgraph(&self, concepts: &HashSet<String>) -> TripleSet {
        TripleSet {
            triples: self
                .triples
                .iter()
                .filter(|t| concepts.contains(&t.head) && concepts.contains(&t.tail))
                .cloned()
                .collect(),
            deduplicated: self.deduplicated,
        }
    }

    pub fn entities(&self) -> BTreeSet<&str> {
        self.triples
            .iter()
            .flat_map(|t| [t.head.as_str(), t.tail.as_str()])
            .collect()
    }

    pub fn build_vocabs(&self) -> Result<(Vocab, Vocab), KgError> {
        if self.is_empty() {
            return Err(KgError::EmptyGraph);
        }
        let entities = Vocab::from_names(self.triples.iter().flat_map(|t| [&t.head, &t.tail]));
        let relations = Vocab::from_names(self.triples.iter().map(|t| &t.relation));
        Ok((entities, relations))
    }

    /// Map every triple through the vocabularies. Unknown names are skipped.
    pub fn index(&self, entities: &Vocab, relations: &Vocab) -> Vec<IndexedTriple> {
        self.triples
            .iter()
            .filter_map(|t| {
                Some(IndexedTriple::new(
                    entities.get(&t.head)?,
                    relations.get(&t.relation)?,
                    entities.get(&t.tail)?,
                ))
            })
            .collect()
    }

    pub fn stats(&self) -> KgStats {
        let mut per_source: BTreeMap<Source, usize> = Source::ALL.iter().map(|&s| (s, 0)).collect();
        let mut degree: HashMap<&str, usize> = HashMap::new();
        let mut relations = HashSet::new();
        for t in &self.triples {
            *per_source.entry(t.source).or_default() += 1;
            *degree.entry(&t.head).or_default() += 1;
            *degree.entry(&t.tail).or_default() += 1;
            relations.insert(t.relation.as_str());
        }
        let degrees: Vec<usize> = degree.values().copied().collect();
        let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
        for &d in &degrees {
            *histogram.entry(d).or_default() += 1;
        }
        KgStats {
            entities: degree.len(),
            relations: relations.len(),
            triples: self.len(),
            triples_per_source: per_source.into_iter().map(|(s, n)| (s.as_str().to_string(), n)).collect(),
            degree: DegreeSummary {
                min: degrees.iter().copied().min().unwrap_or(0),
                max: degrees.iter().copied().max().unwrap_or(0),
                mean: if degrees.is_empty() {
                    0.0
                } else {
                    degrees.iter().sum::<usize>() as f64 / degrees.len() as f64
                },
                histogram,
            },
        }
    }

    /// Write as TSV sorted by (head, relation, tail). The output is independent
    /// of input order.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut keys: Vec<_> = self.triples.iter().map(Triple::key).collect();
        keys.sort_unstable();
        keys.dedup();
        for (h, r, t) in keys {
            writeln!(w, "{h}\t{r}\t{t}")?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut buf = Vec::new();
        self.write_tsv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("triples are UTF-8")
    }
}

/// Degree counts an entity picks up as head or tail; a self-loop counts twice.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DegreeSummary {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// degree -> number of entities with that degree
    pub histogram: BTreeMap<usize, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KgStats {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub triples_per_source: BTreeMap<String, usize>,
    pub degree: DegreeSummary,
}

/// Bijection between identifier strings and `0..n`, assigned in sorted order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let sorted: BTreeSet<String> = names.into_iter().map(|s| s.as_ref().to_string()).collect();
        let names: Vec<String> = sorted.into_iter().collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Vocab { names, index }
    }

    /// Keeps the given order; callers loading checkpoints rely on this.
    pub fn from_ordered(names: Vec<String>) -> Option<Self> {
        let index: HashMap<String, usize> =
            names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        (index.len() == names.len()).then_some(Vocab { names, index })
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(triples: &[(&str, &str, &str)]) -> TripleSet {
        TripleSet::new(triples.iter().map(|&(h, r, t)| Triple::new(h, r, t, Source::Other)).collect())
    }

    fn keys(g: &TripleSet) -> BTreeSet<(String, String, String)> {
        g.triples.iter().map(|t| (t.head.clone(), t.relation.clone(), t.tail.clone())).collect()
    }

    #[test]
    fn single_line() {
        let g = parse_edgelist("A\tisa\tB\n", Source::Metathesaurus).unwrap();
        assert_eq!(g.triples, vec![Triple::new("A", "isa", "B", Source::Metathesaurus)]);
    }

    #[test]
    fn empty_stream() {
        assert!(parse_edgelist("", Source::Other).unwrap().is_empty());
        assert!(parse_edgelist("# only a comment\n\n", Source::Other).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse_edgelist("A\tisa\tB\n# c\nA\tisa\n", Source::Other).unwrap_err();
        assert!(matches!(err, KgError::Malformed { line: 3, .. }), "{err}");
        let err = parse_edgelist("A\t\tB\n", Source::Other).unwrap_err();
        assert!(matches!(err, KgError::Malformed { line: 1, .. }));
    }

    #[test]
    fn duplicate_lines_collapse_on_dedup() {
        let text = "A\tisa\tB\nA\tisa\tB\nB\tisa\tC\n";
        let g = parse_edgelist(text, Source::Other).unwrap();
        let distinct: BTreeSet<&str> = text.lines().collect();
        assert_eq!(g.len(), 3);
        assert_eq!(g.deduped().len(), distinct.len());
    }

    #[test]
    fn merge_cases() {
        let ab = set(&[("A", "r", "B")]);
        assert_eq!(keys(&merge(&ab, &TripleSet::default())), keys(&ab));
        assert_eq!(merge(&ab, &ab).len(), 1);
        let ba = set(&[("B", "r", "A")]);
        assert_eq!(merge(&ab, &ba).len(), 2);
    }

    #[test]
    fn merge_keeps_first_source() {
        let a = parse_edgelist("A\tr\tB\n", Source::Metathesaurus).unwrap();
        let b = parse_edgelist("A\tr\tB\nB\tr\tC\n", Source::SemanticNetwork).unwrap();
        let m = merge(&a, &b);
        assert!(m.deduplicated);
        assert_eq!(m.triples[0].source, Source::Metathesaurus);
        assert_eq!(m.triples[1].source, Source::SemanticNetwork);
        let s = m.stats();
        assert_eq!(s.triples_per_source["metathesaurus"], 1);
        assert_eq!(s.triples_per_source["semantic-network"], 1);
    }

    #[test]
    fn subgraph_cases() {
        let g = set(&[("A", "r", "B"), ("A", "r", "C")]);
        assert!(g.extract_subgraph(&HashSet::new()).is_empty());
        let s: HashSet<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        assert_eq!(keys(&g.extract_subgraph(&s)), keys(&set(&[("A", "r", "B")])));
        let all: HashSet<String> = ["A", "B", "C", "D"].iter().map(|s| s.to_string()).collect();
        assert_eq!(g.extract_subgraph(&all), g);
    }

    #[test]
    fn vocab_sorted_order() {
        let (e, r) = set(&[("A", "r", "B")]).build_vocabs().unwrap();
        assert_eq!((e.get("A"), e.get("B"), r.get("r")), (Some(0), Some(1), Some(0)));
        let (e, _) = set(&[("B", "r", "A")]).build_vocabs().unwrap();
        assert_eq!((e.get("A"), e.get("B")), (Some(0), Some(1)));
        let (e, _) = set(&[("A", "r", "A")]).build_vocabs().unwrap();
        assert_eq!(e.len(), 1);
        assert!(matches!(TripleSet::default().build_vocabs(), Err(KgError::EmptyGraph)));
    }

    #[test]
    fn stats_counts() {
        let s = TripleSet::default().stats();
        assert_eq!((s.entities, s.relations, s.triples), (0, 0, 0));
        assert_eq!(s.degree.max, 0);
        let s = set(&[("A", "r", "B"), ("B", "s", "C")]).stats();
        assert_eq!((s.entities, s.relations, s.triples), (3, 2, 2));
        assert_eq!(s.degree.histogram[&1], 2);
        assert_eq!(s.degree.histogram[&2], 1);
    }

    #[test]
    fn tsv_is_sorted_and_order_independent() {
        let a = set(&[("B", "r", "A"), ("A", "s", "B"), ("A", "r", "C")]);
        let mut b = a.clone();
        b.triples.reverse();
        assert_eq!(a.to_tsv(), "A\tr\tC\nA\ts\tB\nB\tr\tA\n");
        assert_eq!(a.to_tsv(), b.to_tsv());
    }

    fn arb_set() -> impl Strategy<Value = TripleSet> {
        let name = prop::sample::select(vec!["A", "B", "C", "D", "E"]);
        let rel = prop::sample::select(vec!["isa", "part_of"]);
        prop::collection::vec((name.clone(), rel, name), 0..25)
            .prop_map(|v| set(&v))
    }

    fn arb_concepts() -> impl Strategy<Value = HashSet<String>> {
        prop::collection::hash_set(prop::sample::select(vec!["A", "B", "C", "D", "E"]), 0..5)
            .prop_map(|s| s.into_iter().map(str::to_string).collect())
    }

    proptest! {
        #[test]
        fn subgraph_subset_and_monotone(g in arb_set(), s1 in arb_concepts(), extra in arb_concepts()) {
            let s2: HashSet<String> = s1.union(&extra).cloned().collect();
            let r1 = keys(&g.extract_subgraph(&s1));
            let r2 = keys(&g.extract_subgraph(&s2));
            prop_assert!(r1.is_subset(&keys(&g)));
            prop_assert!(r1.is_subset(&r2));
        }

        #[test]
        fn merge_commutative_associative(a in arb_set(), b in arb_set(), c in arb_set()) {
            prop_assert_eq!(keys(&merge(&a, &b)), keys(&merge(&b, &a)));
            prop_assert_eq!(keys(&merge(&merge(&a, &b), &c)), keys(&merge(&a, &merge(&b, &c))));
            prop_assert_eq!(merge(&a, &b).len(), keys(&merge(&a, &b)).len());
        }

        #[test]
        fn vocabs_depend_only_on_set(g in arb_set()) {
            prop_assume!(!g.is_empty());
            let mut shuffled = g.clone();
            shuffled.triples.reverse();
            prop_assert_eq!(g.build_vocabs().unwrap(), shuffled.build_vocabs().unwrap());
        }

        #[test]
        fn tsv_round_trip(g in arb_set()) {
            let back = parse_edgelist(&g.to_tsv(), Source::Other).unwrap();
            prop_assert_eq!(keys(&back), keys(&g));
            prop_assert_eq!(back.to_tsv(), g.to_tsv());
        }
    }
}
