//! Datasets, accuracy, the synthetic corpus generator and the fusion ablation.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{Annotator, ConceptLexicon, NegationRules};
use crate::embed::{ContextProvider, EmbedError, Fuser, FusionConfig, KgEmbeddings, OovPolicy, StaticEmbeddingTable};
use crate::esim::{self, EncodedPair, Esim, EsimConfig, EsimError, Label, TrainReport};
use crate::kg::{self, Source, Triple, TripleSet};
use crate::kge::KgeTrainConfig;
use crate::seed;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("accuracy of an empty prediction set")]
    Empty,
    #[error("{predictions} predictions for {golds} gold labels")]
    LengthMismatch { predictions: usize, golds: usize },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Esim(#[from] EsimError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NliExample {
    pub premise: String,
    pub hypothesis: String,
    pub label: Label,
}

#[derive(Serialize, Deserialize)]
struct JsonlRecord<'a> {
    sentence1: std::borrow::Cow<'a, str>,
    sentence2: std::borrow::Cow<'a, str>,
    gold_label: std::borrow::Cow<'a, str>,
}

/// JSON Lines with `sentence1`, `sentence2` and `gold_label`; other fields are
/// ignored and blank lines skipped.
pub fn load_jsonl<R: BufRead>(reader: R) -> Result<Vec<NliExample>, HarnessError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| HarnessError::Parse { line: i + 1, reason };
        let rec: JsonlRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let label = rec.gold_label.parse::<Label>().map_err(bad)?;
        if rec.sentence1.trim().is_empty() || rec.sentence2.trim().is_empty() {
            return Err(bad("empty sentence".into()));
        }
        out.push(NliExample { premise: rec.sentence1.into_owned(), hypothesis: rec.sentence2.into_owned(), label });
    }
    Ok(out)
}

pub fn load_jsonl_file(path: &Path) -> Result<Vec<NliExample>, HarnessError> {
    load_jsonl(std::io::BufReader::new(fs::File::open(path)?))
}

pub fn write_jsonl<W: Write>(mut w: W, examples: &[NliExample]) -> Result<(), HarnessError> {
    for ex in examples {
        let rec = JsonlRecord {
            sentence1: ex.premise.as_str().into(),
            sentence2: ex.hypothesis.as_str().into(),
            gold_label: ex.label.as_str().into(),
        };
        let line = serde_json::to_string(&rec).map_err(|e| std::io::Error::other(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplits {
    pub train: Vec<NliExample>,
    pub dev: Vec<NliExample>,
    pub test: Vec<NliExample>,
}

pub fn accuracy(predictions: &[Label], golds: &[Label]) -> Result<f64, HarnessError> {
    if predictions.len() != golds.len() {
        return Err(HarnessError::LengthMismatch { predictions: predictions.len(), golds: golds.len() });
    }
    if golds.is_empty() {
        return Err(HarnessError::Empty);
    }
    let hits = predictions.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / golds.len() as f64)
}

// ---------------------------------------------------------------------------
// Synthetic corpus

pub const ISA: &str = "isa";
pub const OPPOSITE_OF: &str = "opposite_of";
pub const NEGATION_TRIGGER: &str = "no";

const TEMPLATE: [&str; 2] = ["patient", "has"];
const SYLLABLES: [&str; 16] =
    ["ka", "lo", "mi", "ren", "tu", "vas", "zo", "pel", "dri", "nok", "sa", "bri", "gum", "fe", "ta", "wix"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub concepts: usize,
    pub clusters: usize,
    pub isa_edges: usize,
    pub opposite_edges: usize,
    pub distractor_relations: usize,
    pub distractor_edges: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Probability that an example has one side rewritten as "patient has no X".
    pub flip_fraction: f64,
    /// Probability that a sentence gets a trailing filler word.
    pub filler_rate: f64,
    pub fillers: Vec<String>,
    /// Whether the negation trigger gets a contextual vector. When off the
    /// trigger is out of vocabulary for the contextual table.
    pub trigger_vector: bool,
    pub context_dim: usize,
    /// Contextual vector components are uniform in `[-context_scale, context_scale]`.
    pub context_scale: f32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            concepts: 60,
            clusters: 10,
            isa_edges: 120,
            opposite_edges: 120,
            distractor_relations: 2,
            distractor_edges: 60,
            train: 2000,
            dev: 300,
            test: 300,
            flip_fraction: 0.0,
            filler_rate: 0.3,
            fillers: ["today", "now", "again", "still", "recently"].map(String::from).to_vec(),
            trigger_vector: false,
            context_dim: 16,
            context_scale: 0.33,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Same-cluster and partner-cluster unordered pair counts.
    pub fn pair_capacity(&self) -> (usize, usize) {
        let k = self.clusters.max(1);
        let size = |c: usize| self.concepts / k + usize::from(c < self.concepts % k);
        let within = (0..k).map(|c| size(c) * size(c).saturating_sub(1) / 2).sum();
        let across = (0..k / 2).map(|p| size(2 * p) * size(2 * p + 1)).sum();
        (within, across)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSpec(m));
        if !(0.0..=1.0).contains(&self.flip_fraction) || !(0.0..=1.0).contains(&self.filler_rate) {
            return bad("fractions must lie in [0, 1]".into());
        }
        if self.context_dim == 0 {
            return bad("context_dim must be >= 1".into());
        }
        if !(self.context_scale.is_finite() && self.context_scale > 0.0) {
            return bad(format!("context_scale must be positive and finite, got {}", self.context_scale));
        }
        if self.concepts > 0 && !(1..=self.concepts).contains(&self.clusters) {
            return bad("clusters must lie in 1..=concepts".into());
        }
        let (within, across) = self.pair_capacity();
        if self.isa_edges > within {
            return bad(format!("{} is-a edges but only {within} same-cluster pairs", self.isa_edges));
        }
        if self.opposite_edges > across {
            return bad(format!("{} opposite-of edges but only {across} partner-cluster pairs", self.opposite_edges));
        }
        let ordered = self.concepts * self.concepts.saturating_sub(1);
        if self.distractor_edges > 0 && (self.distractor_relations == 0 || self.distractor_edges > ordered * self.distractor_relations) {
            return bad("distractor edges need distractor relations and enough concept pairs".into());
        }
        if self.filler_rate > 0.0 && self.fillers.is_empty() {
            return bad("filler_rate > 0 with no filler words".into());
        }
        if self.fillers.iter().any(|f| f.is_empty() || f.contains(char::is_whitespace)) {
            return bad("filler words must be single non-empty tokens".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticBundle {
    /// is-a and opposite-of edges.
    pub metathesaurus: TripleSet,
    /// Distractor relations.
    pub semantic_network: TripleSet,
    /// `(surface, concept id)`
    pub lexicon: Vec<(String, String)>,
    pub triggers: Vec<String>,
    pub vectors: Vec<(String, Vec<f32>)>,
    pub splits: DatasetSplits,
}

pub const BUNDLE_FILES: [&str; 8] = [
    "kg_metathesaurus.tsv",
    "kg_semantic_network.tsv",
    "lexicon.tsv",
    "triggers.txt",
    "vectors.txt",
    "train.jsonl",
    "dev.jsonl",
    "test.jsonl",
];

fn pseudo_words(n: usize, reserved: &HashSet<String>, rng: &mut impl Rng) -> Vec<String> {
    let mut seen = reserved.clone();
    let mut out = Vec::with_capacity(n);
    let mut syllables = 2;
    let mut misses = 0;
    while out.len() < n {
        let w: String = (0..syllables).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if seen.insert(w.clone()) {
            out.push(w);
            misses = 0;
        } else {
            misses += 1;
            if misses > 64 {
                syllables += 1;
                misses = 0;
            }
        }
    }
    out
}

type Pair = (usize, usize);

/// Splits `items` into train/dev/test shares proportional to the square
/// root of the example counts, so small splits still see enough distinct
/// pairs. Every split that needs examples gets at least one item when there
/// are enough to go round.
fn partition<T: Clone>(items: &[T], counts: [usize; 3]) -> [Vec<T>; 3] {
    let weights = counts.map(|c| (c as f64).sqrt());
    let total: f64 = weights.iter().sum();
    let mut out: [Vec<T>; 3] = Default::default();
    if total == 0.0 || items.is_empty() {
        return out;
    }
    let n = items.len();
    let mut sizes = weights.map(|w| (w * n as f64 / total).floor() as usize);
    for k in 0..3 {
        if counts[k] > 0 && sizes[k] == 0 {
            sizes[k] = 1;
        }
    }
    while sizes.iter().sum::<usize>() > n {
        let k = (0..3).max_by_key(|&k| sizes[k]).expect("three splits");
        sizes[k] -= 1;
    }
    let leftover = n - sizes.iter().sum::<usize>();
    let k = (0..3).rev().max_by_key(|&k| counts[k]).expect("three splits");
    sizes[k] += leftover;
    let mut start = 0;
    for k in 0..3 {
        out[k] = items[start..start + sizes[k]].to_vec();
        start += sizes[k];
    }
    out
}

struct PairPools {
    /// Ordered `(child, parent)`.
    isa: Vec<Pair>,
    opposite: Vec<Pair>,
    neutral: Vec<Pair>,
}

impl PairPools {
    fn is_empty(&self) -> bool {
        self.isa.is_empty() && self.opposite.is_empty() && self.neutral.is_empty()
    }
}

/// Builds the concept graph, the artifacts around it and the three splits.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticBundle, HarnessError> {
    spec.validate()?;
    let mut rng = seed::rng(seed::substream(spec.seed, "synth"));
    let n = spec.concepts;

    let mut reserved: HashSet<String> = TEMPLATE.iter().map(|s| s.to_string()).collect();
    reserved.insert(NEGATION_TRIGGER.to_string());
    reserved.extend(spec.fillers.iter().cloned());
    let surfaces = pseudo_words(n, &reserved, &mut rng);
    let ids: Vec<String> = (0..n).map(|i| format!("C{:04}", i + 1)).collect();

    // Concepts are dealt into clusters. Is-a edges stay inside a cluster,
    // opposite-of edges join a cluster to its partner (2k <-> 2k+1), and
    // neutral pairs come from clusters that are neither.
    let k = spec.clusters;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cluster = vec![0; n];
    for (pos, &c) in order.iter().enumerate() {
        cluster[c] = pos % k.max(1);
    }
    let partner = |c: usize| if c ^ 1 < k { Some(c ^ 1) } else { None };
    let mut within = Vec::new();
    let mut across = Vec::new();
    let mut neutral = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let (ca, cb) = (cluster[a], cluster[b]);
            if ca == cb {
                within.push((a, b));
            } else if partner(ca) == Some(cb) {
                across.push((a, b));
            } else {
                neutral.push((a, b));
            }
        }
    }
    within.shuffle(&mut rng);
    across.shuffle(&mut rng);
    neutral.shuffle(&mut rng);
    let isa: Vec<Pair> = within[..spec.isa_edges]
        .iter()
        .map(|&(a, b)| if rng.gen_bool(0.5) { (a, b) } else { (b, a) })
        .collect();
    let opposite: Vec<Pair> = across[..spec.opposite_edges].to_vec();

    let mut meta = Vec::new();
    for &(a, b) in &isa {
        meta.push(Triple::new(&ids[a], ISA, &ids[b], Source::Metathesaurus));
    }
    for &(a, b) in &opposite {
        meta.push(Triple::new(&ids[a], OPPOSITE_OF, &ids[b], Source::Metathesaurus));
        meta.push(Triple::new(&ids[b], OPPOSITE_OF, &ids[a], Source::Metathesaurus));
    }
    let mut sn = Vec::new();
    let mut seen = HashSet::new();
    while sn.len() < spec.distractor_edges {
        let r = rng.gen_range(0..spec.distractor_relations);
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b && seen.insert((a, r, b)) {
            sn.push(Triple::new(&ids[a], &format!("rel_{r}"), &ids[b], Source::SemanticNetwork));
        }
    }

    let counts = [spec.train, spec.dev, spec.test];
    let [isa_tr, isa_dev, isa_te] = partition(&isa, counts);
    let [opp_tr, opp_dev, opp_te] = partition(&opposite, counts);
    let [neu_tr, neu_dev, neu_te] = partition(&neutral, counts);
    let pools = [
        PairPools { isa: isa_tr, opposite: opp_tr, neutral: neu_tr },
        PairPools { isa: isa_dev, opposite: opp_dev, neutral: neu_dev },
        PairPools { isa: isa_te, opposite: opp_te, neutral: neu_te },
    ];
    let names = ["train", "dev", "test"];
    for k in 0..3 {
        if counts[k] > 0 && pools[k].is_empty() {
            return Err(HarnessError::InvalidSpec(format!("no concept pairs left for the {} split", names[k])));
        }
    }

    let sentence = |concept: usize, negated: bool, rng: &mut rand_chacha::ChaCha8Rng| {
        let mut words: Vec<&str> = TEMPLATE.to_vec();
        if negated {
            words.push(NEGATION_TRIGGER);
        }
        words.push(&surfaces[concept]);
        if spec.filler_rate > 0.0 && rng.gen_bool(spec.filler_rate) {
            words.push(spec.fillers.choose(rng).expect("validated non-empty"));
        }
        words.join(" ")
    };

    let mut splits: [Vec<NliExample>; 3] = Default::default();
    for k in 0..3 {
        let pool = &pools[k];
        let mut categories = Vec::new();
        if !pool.isa.is_empty() {
            categories.push(Label::Entailment);
        }
        if !pool.opposite.is_empty() {
            categories.push(Label::Contradiction);
        }
        if !pool.neutral.is_empty() {
            categories.push(Label::Neutral);
        }
        for _ in 0..counts[k] {
            let label = *categories.choose(&mut rng).expect("checked non-empty");
            let (a, b) = match label {
                Label::Entailment => *pool.isa.choose(&mut rng).expect("non-empty"),
                Label::Contradiction => *pool.opposite.choose(&mut rng).expect("non-empty"),
                Label::Neutral => *pool.neutral.choose(&mut rng).expect("non-empty"),
            };
            let (a, b) = if label != Label::Entailment && rng.gen_bool(0.5) { (b, a) } else { (a, b) };
            let flip = spec.flip_fraction > 0.0 && rng.gen_bool(spec.flip_fraction);
            let neg_premise = flip && rng.gen_bool(0.5);
            let premise = sentence(a, neg_premise, &mut rng);
            let hypothesis = sentence(b, flip && !neg_premise, &mut rng);
            let label = match (flip, label) {
                (true, Label::Entailment) => Label::Contradiction,
                (true, Label::Contradiction) => Label::Entailment,
                (_, l) => l,
            };
            splits[k].push(NliExample { premise, hypothesis, label });
        }
    }

    let mut words: Vec<String> = TEMPLATE.iter().map(|s| s.to_string()).collect();
    if spec.trigger_vector {
        words.push(NEGATION_TRIGGER.to_string());
    }
    words.extend(spec.fillers.iter().cloned());
    words.extend(surfaces.iter().cloned());
    let vectors = words
        .into_iter()
        .map(|w| {
            let v = (0..spec.context_dim).map(|_| rng.gen_range(-spec.context_scale..=spec.context_scale)).collect();
            (w, v)
        })
        .collect();

    let [train, dev, test] = splits;
    Ok(SyntheticBundle {
        metathesaurus: TripleSet::new(meta),
        semantic_network: TripleSet::new(sn),
        lexicon: surfaces.iter().cloned().zip(ids.iter().cloned()).collect(),
        triggers: vec![NEGATION_TRIGGER.to_string()],
        vectors,
        splits: DatasetSplits { train, dev, test },
    })
}

impl SyntheticBundle {
    pub fn kg(&self) -> TripleSet {
        kg::merge(&self.metathesaurus, &self.semantic_network)
    }

    pub fn annotator(&self) -> Annotator {
        let mut lex = ConceptLexicon::new();
        for (surface, id) in &self.lexicon {
            lex.insert(surface, id, None, 1.0).expect("generated surfaces are unique and non-empty");
        }
        Annotator::new(lex, NegationRules::new(&self.triggers, crate::annotate::DEFAULT_WINDOW))
    }

    pub fn context_table(&self) -> StaticEmbeddingTable {
        let dim = self.vectors.first().map_or(0, |(_, v)| v.len());
        let mut table = StaticEmbeddingTable::new(dim, OovPolicy::Zero);
        for (w, v) in &self.vectors {
            table.insert(w, v.clone());
        }
        table
    }

    /// Writes the [`BUNDLE_FILES`] into `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir)?;
        let file = |name: &str| -> std::io::Result<std::io::BufWriter<fs::File>> {
            Ok(std::io::BufWriter::new(fs::File::create(dir.join(name))?))
        };
        self.metathesaurus.write_tsv(file(BUNDLE_FILES[0])?)?;
        self.semantic_network.write_tsv(file(BUNDLE_FILES[1])?)?;
        let mut w = file(BUNDLE_FILES[2])?;
        for (surface, id) in &self.lexicon {
            writeln!(w, "{surface}\t{id}\t{id}\t1")?;
        }
        w.flush()?;
        let mut w = file(BUNDLE_FILES[3])?;
        for t in &self.triggers {
            writeln!(w, "{t}")?;
        }
        w.flush()?;
        let mut w = file(BUNDLE_FILES[4])?;
        for (word, v) in &self.vectors {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{word} {}", vals.join(" "))?;
        }
        w.flush()?;
        for (name, split) in BUNDLE_FILES[5..].iter().zip([&self.splits.train, &self.splits.dev, &self.splits.test]) {
            let mut w = file(name)?;
            write_jsonl(&mut w, split)?;
            w.flush()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Ablation

/// Upstream artifacts shared by every ablation row.
pub struct AblationArtifacts<'a> {
    pub annotator: &'a Annotator,
    pub context: &'a dyn ContextProvider,
    pub kg: &'a KgEmbeddings,
}

/// Annotated and fused split, with the indices of examples where either
/// side carries a negated concept.
pub struct EncodedSplit {
    pub pairs: Vec<EncodedPair>,
    pub negated: Vec<bool>,
}

pub fn encode_split(examples: &[NliExample], annotator: &Annotator, fuser: &Fuser<'_>) -> EncodedSplit {
    let mut pairs = Vec::with_capacity(examples.len());
    let mut negated = Vec::with_capacity(examples.len());
    for ex in examples {
        let p = annotator.annotate(&ex.premise);
        let h = annotator.annotate(&ex.hypothesis);
        negated.push(p.has_negation() || h.has_negation());
        pairs.push(EncodedPair {
            premise: fuser.fuse(&p.aligned()).rows,
            hypothesis: fuser.fuse(&h.aligned()).rows,
            label: ex.label,
        });
    }
    EncodedSplit { pairs, negated }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub config: String,
    pub accuracy: f64,
    /// Accuracy on test examples with a negated concept, when there are any.
    pub negated_accuracy: Option<f64>,
    pub negated_examples: usize,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "config,accuracy")?;
        for r in &self.rows {
            writeln!(w, "{},{}", r.config, r.accuracy)?;
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>9} {:>10}\n", "config", "accuracy", "negated");
        for r in &self.rows {
            let neg = r.negated_accuracy.map_or("-".to_string(), |a| format!("{:.2}%", 100.0 * a));
            s.push_str(&format!("{:<16} {:>8.2}% {:>10}\n", r.config, 100.0 * r.accuracy, neg));
        }
        s
    }
}

/// Trains one fusion configuration and scores it on the test split.
pub fn run_configuration(
    splits: &DatasetSplits,
    artifacts: &AblationArtifacts<'_>,
    fusion: FusionConfig,
    esim_config: &EsimConfig,
) -> Result<(Esim, TrainReport, AblationRow), HarnessError> {
    let kg = fusion.use_kg.then_some(artifacts.kg);
    let fuser = Fuser::new(artifacts.context, kg, fusion)?;
    let config = EsimConfig { input_dim: fuser.width(), ..esim_config.clone() };
    let train = encode_split(&splits.train, artifacts.annotator, &fuser);
    let dev = encode_split(&splits.dev, artifacts.annotator, &fuser);
    let test = encode_split(&splits.test, artifacts.annotator, &fuser);
    log::info!("training {} (input width {})", fusion.name(), config.input_dim);
    let (model, report) = esim::train_nli(&train.pairs, &dev.pairs, &config)?;
    let predicted = model.predict_all(&test.pairs)?;
    let golds: Vec<Label> = test.pairs.iter().map(|p| p.label).collect();
    let acc = accuracy(&predicted, &golds)?;
    let (np, ng): (Vec<Label>, Vec<Label>) = predicted
        .iter()
        .zip(&golds)
        .zip(&test.negated)
        .filter(|(_, &n)| n)
        .map(|((&p, &g), _)| (p, g))
        .unzip();
    let row = AblationRow {
        config: fusion.name().to_string(),
        accuracy: acc,
        negated_accuracy: accuracy(&np, &ng).ok(),
        negated_examples: ng.len(),
        best_epoch: report.best_epoch,
        epochs_run: report.stopped_at,
    };
    Ok((model, report, row))
}

/// The three rows base, w/KG and w/KG+sentiment, each trained from the same
/// seed.
pub fn run_ablation(
    splits: &DatasetSplits,
    artifacts: &AblationArtifacts<'_>,
    esim_config: &EsimConfig,
) -> Result<AblationReport, HarnessError> {
    let mut rows = Vec::with_capacity(3);
    for fusion in [FusionConfig::BASE, FusionConfig::WITH_KG, FusionConfig::WITH_KG_SENTIMENT] {
        rows.push(run_configuration(splits, artifacts, fusion, esim_config)?.2);
    }
    Ok(AblationReport { rows })
}

/// KGE settings sized for the default synthetic corpus on one CPU core.
pub fn desk_kge_config() -> KgeTrainConfig {
    KgeTrainConfig { dim: 16, learning_rate: 2.0, batch_size: 20, epochs: 400, negatives: 4, ..Default::default() }
}

/// ESIM settings sized for the default synthetic corpus. The long patience
/// rides out the loss plateau before the KG block starts being used.
pub fn desk_esim_config() -> EsimConfig {
    EsimConfig { hidden: 32, dropout: 0.3, learning_rate: 1.0, patience: 25, ..Default::default() }
}

/// Unordered concept-surface pairs of a split, as written in the sentences.
pub fn surface_pairs(examples: &[NliExample]) -> BTreeSet<(String, String)> {
    examples
        .iter()
        .map(|e| {
            let a = concept_word(&e.premise);
            let b = concept_word(&e.hypothesis);
            if a <= b { (a, b) } else { (b, a) }
        })
        .collect()
}

/// The concept surface in a generated sentence: the first word that is not
/// part of the template or the negation trigger.
fn concept_word(sentence: &str) -> String {
    sentence
        .split_whitespace()
        .find(|w| !TEMPLATE.contains(w) && *w != NEGATION_TRIGGER)
        .unwrap_or_default()
        .to_string()
}
