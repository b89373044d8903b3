//! DistMult embeddings: score, logistic loss, analytic gradients, negative
//! sampling, mini-batch SGD training, filtered link prediction and the text
//! checkpoint format.
//!
//! A triple scores `Σᵢ rᵢ·hᵢ·tᵢ`. Positives carry label +1 and corrupted
//! triples label −1; the per-triple loss is `log(1 + exp(−y·score))`.
//!
//! Tables are stored as `f32` for training. Every numeric routine is generic
//! over [`Float`], so the same code runs in `f64` for gradient checking.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{IndexedTriple, KgError, TripleSet, Vocab};
use crate::seed;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("index out of range: {what} {index} (size {size})")]
    IndexOutOfRange { what: &'static str, index: usize, size: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("entity count {0} is too small to corrupt a triple")]
    TooFewEntities(usize),
    #[error("empty graph")]
    EmptyGraph,
    #[error("empty test set")]
    EmptyTestSet,
    #[error("checkpoint line {line}: {reason}")]
    Checkpoint { line: usize, reason: String },
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KgeTrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Corrupted triples generated per positive.
    pub negatives: usize,
    pub seed: u64,
    /// Rescale touched entity rows to unit L2 norm after every update.
    pub renormalize: bool,
    pub init_scale: f64,
}

impl Default for KgeTrainConfig {
    fn default() -> Self {
        KgeTrainConfig {
            dim: 100,
            learning_rate: 1e-4,
            batch_size: 100,
            epochs: 100,
            negatives: 1,
            seed: 0,
            renormalize: false,
            init_scale: 1.0,
        }
    }
}

impl KgeTrainConfig {
    pub fn validate(&self) -> Result<(), KgeError> {
        let bad = |m: &str| Err(KgeError::InvalidConfig(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        // lr = 0 is accepted so a run can reproduce its initialization.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be positive");
        }
        Ok(())
    }
}

/// Entity and relation matrices, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<F = f32> {
    dim: usize,
    entities: Vec<F>,
    relations: Vec<F>,
}

impl<F: Float> EmbeddingTable<F> {
    pub fn from_rows(dim: usize, entities: Vec<F>, relations: Vec<F>) -> Result<Self, KgeError> {
        if dim == 0 || entities.len() % dim != 0 || relations.len() % dim != 0 {
            return Err(KgeError::InvalidConfig("row data is not a multiple of dim".into()));
        }
        Ok(EmbeddingTable { dim, entities, relations })
    }

    pub fn zeros(num_entities: usize, num_relations: usize, dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entities: vec![F::zero(); num_entities * dim],
            relations: vec![F::zero(); num_relations * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len() / self.dim
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len() / self.dim
    }

    pub fn entity(&self, i: usize) -> &[F] {
        &self.entities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation(&self, i: usize) -> &[F] {
        &self.relations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn entity_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.entities[i * self.dim..(i + 1) * self.dim]
    }

    pub fn relation_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.relations[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row(&self, kind: RowKind, i: usize) -> &[F] {
        match kind {
            RowKind::Entity => self.entity(i),
            RowKind::Relation => self.relation(i),
        }
    }

    pub fn row_mut(&mut self, kind: RowKind, i: usize) -> &mut [F] {
        match kind {
            RowKind::Entity => self.entity_mut(i),
            RowKind::Relation => self.relation_mut(i),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entities.iter().chain(&self.relations).all(|v| v.is_finite())
    }

    pub fn check_triple(&self, t: &IndexedTriple) -> Result<(), KgeError> {
        let ne = self.num_entities();
        let nr = self.num_relations();
        for (what, index, size) in [("head", t.head, ne), ("relation", t.relation, nr), ("tail", t.tail, ne)] {
            if index >= size {
                return Err(KgeError::IndexOutOfRange { what, index, size });
            }
        }
        Ok(())
    }

    /// DistMult score of an indexed triple. Indices must be in range.
    pub fn score_triple(&self, t: &IndexedTriple) -> F {
        score_unchecked(self.entity(t.head), self.relation(t.relation), self.entity(t.tail))
    }

    pub fn cast<G: Float>(&self) -> EmbeddingTable<G> {
        let conv = |v: &Vec<F>| v.iter().map(|x| G::from(*x).expect("finite cast")).collect();
        EmbeddingTable { dim: self.dim, entities: conv(&self.entities), relations: conv(&self.relations) }
    }
}

/// Uniform entries in `[−s, s]` with `s = init_scale / √dim`.
pub fn init_embeddings(
    num_entities: usize,
    num_relations: usize,
    config: &KgeTrainConfig,
) -> Result<EmbeddingTable<f32>, KgeError> {
    config.validate()?;
    if num_entities == 0 || num_relations == 0 {
        return Err(KgeError::InvalidConfig("entity and relation counts must be >= 1".into()));
    }
    let bound = (config.init_scale / (config.dim as f64).sqrt()) as f32;
    let mut rng = seed::rng(config.seed);
    let mut draw = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-bound..=bound)).collect() };
    let entities = draw(num_entities * config.dim);
    let relations = draw(num_relations * config.dim);
    Ok(EmbeddingTable { dim: config.dim, entities, relations })
}

pub fn score_unchecked<F: Float>(h: &[F], r: &[F], t: &[F]) -> F {
    h.iter().zip(r).zip(t).fold(F::zero(), |acc, ((&h, &r), &t)| acc + r * (h * t))
}

/// `Σᵢ rᵢ·hᵢ·tᵢ`.
pub fn score<F: Float>(h: &[F], r: &[F], t: &[F]) -> Result<F, KgeError> {
    if h.len() != r.len() {
        return Err(KgeError::DimensionMismatch(h.len(), r.len()));
    }
    if t.len() != r.len() {
        return Err(KgeError::DimensionMismatch(t.len(), r.len()));
    }
    Ok(score_unchecked(h, r, t))
}

/// Sign of a training triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign<F: Float>(self) -> F {
        match self {
            Polarity::Positive => F::one(),
            Polarity::Negative => -F::one(),
        }
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus<F: Float>(x: F) -> F {
    x.max(F::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<F: Float>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `log(1 + exp(−y·σ))`.
pub fn logistic_loss<F: Float>(sigma: F, label: Polarity) -> F {
    softplus(-label.sign::<F>() * sigma)
}

/// `∂loss/∂σ = −y·sigmoid(−y·σ)`.
pub fn loss_slope<F: Float>(sigma: F, label: Polarity) -> F {
    let y = label.sign::<F>();
    -y * sigmoid(-y * sigma)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RowKind {
    Entity,
    Relation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RowGradient<F> {
    pub kind: RowKind,
    pub row: usize,
    pub grad: Vec<F>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripleGradient<F> {
    pub score: F,
    pub loss: F,
    /// Head, relation, tail, in that order. A self-loop yields a single
    /// entity row holding the summed head and tail contributions.
    pub rows: Vec<RowGradient<F>>,
}

/// Loss of one labelled triple and its gradient w.r.t. the touched rows.
pub fn gradients<F: Float>(
    triple: &IndexedTriple,
    label: Polarity,
    table: &EmbeddingTable<F>,
) -> Result<TripleGradient<F>, KgeError> {
    table.check_triple(triple)?;
    let h = table.entity(triple.head);
    let r = table.relation(triple.relation);
    let t = table.entity(triple.tail);
    let sigma = score_unchecked(h, r, t);
    let slope = loss_slope(sigma, label);
    let mut grad_h: Vec<F> = r.iter().zip(t).map(|(&r, &t)| slope * r * t).collect();
    let grad_r: Vec<F> = h.iter().zip(t).map(|(&h, &t)| slope * h * t).collect();
    let grad_t: Vec<F> = r.iter().zip(h).map(|(&r, &h)| slope * r * h).collect();

    let mut rows = Vec::with_capacity(3);
    if triple.head == triple.tail {
        grad_h.iter_mut().zip(&grad_t).for_each(|(a, &b)| *a = *a + b);
        rows.push(RowGradient { kind: RowKind::Entity, row: triple.head, grad: grad_h });
        rows.push(RowGradient { kind: RowKind::Relation, row: triple.relation, grad: grad_r });
    } else {
        rows.push(RowGradient { kind: RowKind::Entity, row: triple.head, grad: grad_h });
        rows.push(RowGradient { kind: RowKind::Relation, row: triple.relation, grad: grad_r });
        rows.push(RowGradient { kind: RowKind::Entity, row: triple.tail, grad: grad_t });
    }
    Ok(TripleGradient { score: sigma, loss: logistic_loss(sigma, label), rows })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorruptSide {
    Head,
    Tail,
}

/// Replace one endpoint with a uniformly drawn different entity.
pub fn corrupt<R: Rng + ?Sized>(
    triple: &IndexedTriple,
    side: CorruptSide,
    num_entities: usize,
    rng: &mut R,
) -> Result<IndexedTriple, KgeError> {
    if num_entities < 2 {
        return Err(KgeError::TooFewEntities(num_entities));
    }
    let replaced = match side {
        CorruptSide::Head => triple.head,
        CorruptSide::Tail => triple.tail,
    };
    // Draw from n − 1 slots and skip over the replaced entity.
    let mut e = rng.gen_range(0..num_entities - 1);
    if e >= replaced {
        e += 1;
    }
    let mut out = *triple;
    match side {
        CorruptSide::Head => out.head = e,
        CorruptSide::Tail => out.tail = e,
    }
    Ok(out)
}

/// `k` corrupted copies of `triple`, each corrupting head or tail by a fair coin.
pub fn negative_sample<R: Rng + ?Sized>(
    triple: &IndexedTriple,
    num_entities: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<IndexedTriple>, KgeError> {
    if num_entities < 2 {
        return Err(KgeError::TooFewEntities(num_entities));
    }
    (0..k)
        .map(|_| {
            let side = if rng.gen_bool(0.5) { CorruptSide::Head } else { CorruptSide::Tail };
            corrupt(triple, side, num_entities, rng)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedTable {
    pub table: EmbeddingTable<f32>,
    /// Mean per-triple loss (positives and negatives) of each epoch.
    pub loss_log: Vec<f64>,
}

/// Mini-batch SGD over shuffled positives, each paired with
/// `config.negatives` corruptions. Gradients of a batch are taken against the
/// table as it stood at the start of the batch and averaged.
pub fn train(
    triples: &[IndexedTriple],
    num_entities: usize,
    num_relations: usize,
    config: &KgeTrainConfig,
) -> Result<TrainedTable, KgeError> {
    if triples.is_empty() {
        return Err(KgeError::EmptyGraph);
    }
    let mut table = init_embeddings(num_entities, num_relations, config)?;
    for t in triples {
        table.check_triple(t)?;
    }
    if num_entities < 2 {
        return Err(KgeError::TooFewEntities(num_entities));
    }
    // Initialization and sampling draw from separate streams so that changing
    // the epoch count does not perturb the initial table.
    let mut rng = seed::rng(seed::substream(config.seed, "kge-sampling"));
    let lr = config.learning_rate as f32;
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut loss_log = Vec::with_capacity(config.epochs.max(1));
    let mut accum: BTreeMap<(RowKind, usize), Vec<f32>> = BTreeMap::new();

    for _ in 0..config.epochs.max(1) {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        let mut epoch_count = 0usize;
        for batch in order.chunks(config.batch_size) {
            accum.clear();
            let mut batch_count = 0usize;
            for &i in batch {
                let pos = triples[i];
                let negs = negative_sample(&pos, num_entities, config.negatives, &mut rng)?;
                let labelled = std::iter::once((pos, Polarity::Positive))
                    .chain(negs.into_iter().map(|n| (n, Polarity::Negative)));
                for (t, label) in labelled {
                    let g = gradients(&t, label, &table)?;
                    epoch_loss += f64::from(g.loss);
                    batch_count += 1;
                    for row in g.rows {
                        let slot = accum
                            .entry((row.kind, row.row))
                            .or_insert_with(|| vec![0.0; config.dim]);
                        slot.iter_mut().zip(&row.grad).for_each(|(a, &g)| *a += g);
                    }
                }
            }
            epoch_count += batch_count;
            let step = lr / batch_count as f32;
            for (&(kind, row), grad) in &accum {
                let values = table.row_mut(kind, row);
                values.iter_mut().zip(grad).for_each(|(v, &g)| *v -= step * g);
                if config.renormalize && kind == RowKind::Entity {
                    let norm = values.iter().map(|v| v * v).sum::<f32>().sqrt();
                    if norm > 0.0 {
                        values.iter_mut().for_each(|v| *v /= norm);
                    }
                }
            }
        }
        loss_log.push(epoch_loss / epoch_count as f64);
    }
    Ok(TrainedTable { table, loss_log })
}

/// Trained embeddings together with the vocabularies that index them.
#[derive(Clone, Debug, PartialEq)]
pub struct KgeModel {
    pub entities: Vocab,
    pub relations: Vocab,
    pub table: EmbeddingTable<f32>,
}

impl KgeModel {
    pub fn train(g: &TripleSet, config: &KgeTrainConfig) -> Result<(KgeModel, Vec<f64>), KgeError> {
        if g.is_empty() {
            return Err(KgeError::EmptyGraph);
        }
        let (entities, relations) = g.build_vocabs()?;
        let indexed = g.index(&entities, &relations);
        let trained = train(&indexed, entities.len(), relations.len(), config)?;
        Ok((KgeModel { entities, relations, table: trained.table }, trained.loss_log))
    }

    pub fn entity_vector(&self, id: &str) -> Option<&[f32]> {
        self.entities.get(id).map(|i| self.table.entity(i))
    }

    /// Header `distmult <entities> <relations> <dim>`, then one line per
    /// entity row and per relation row, values with 9 significant digits.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), KgeError> {
        let t = &self.table;
        writeln!(w, "distmult {} {} {}", t.num_entities(), t.num_relations(), t.dim())?;
        let rows = self
            .entities
            .names()
            .iter()
            .enumerate()
            .map(|(i, n)| (n, t.entity(i)))
            .chain(self.relations.names().iter().enumerate().map(|(i, n)| (n, t.relation(i))));
        for (name, row) in rows {
            write!(w, "{name}")?;
            for v in row {
                write!(w, " {v:.8e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(reader: R) -> Result<KgeModel, KgeError> {
        let bad = |line: usize, reason: &str| KgeError::Checkpoint { line, reason: reason.to_string() };
        let mut lines = reader.lines();
        let header = lines.next().ok_or_else(|| bad(1, "missing header"))??;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "distmult" {
            return Err(bad(1, "expected `distmult <entities> <relations> <dim>`"));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| bad(1, "bad count in header"));
        let (ne, nr, dim) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if dim == 0 {
            return Err(bad(1, "dim must be >= 1"));
        }
        let mut names = Vec::with_capacity(ne + nr);
        let mut values = Vec::with_capacity((ne + nr) * dim);
        for (i, line) in lines.enumerate() {
            let line = line?;
            let lineno = i + 2;
            if line.is_empty() {
                continue;
            }
            if names.len() == ne + nr {
                return Err(bad(lineno, "more rows than the header declares"));
            }
            // Identifiers may contain spaces; the last `dim` fields are values.
            let mut parts: Vec<&str> = line.rsplitn(dim + 1, ' ').collect();
            if parts.len() != dim + 1 {
                return Err(bad(lineno, "wrong number of values"));
            }
            let name = parts.pop().expect("len checked");
            for p in parts.iter().rev() {
                let v: f32 = p.parse().map_err(|_| bad(lineno, "unparsable value"))?;
                if !v.is_finite() {
                    return Err(bad(lineno, "non-finite value"));
                }
                values.push(v);
            }
            names.push(name.to_string());
        }
        if names.len() != ne + nr {
            return Err(bad(names.len() + 2, "fewer rows than the header declares"));
        }
        let relation_names = names.split_off(ne);
        let entities = Vocab::from_ordered(names).ok_or_else(|| bad(1, "duplicate entity name"))?;
        let relations =
            Vocab::from_ordered(relation_names).ok_or_else(|| bad(1, "duplicate relation name"))?;
        let relation_values = values.split_off(ne * dim);
        let table = EmbeddingTable::from_rows(dim, values, relation_values)?;
        Ok(KgeModel { entities, relations, table })
    }
}

/// `epoch,mean_loss` with 1-based epochs.
pub fn write_loss_csv<W: Write>(mut w: W, loss_log: &[f64]) -> std::io::Result<()> {
    writeln!(w, "epoch,mean_loss")?;
    for (i, l) in loss_log.iter().enumerate() {
        writeln!(w, "{},{}", i + 1, l)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinkPredMetrics {
    pub mrr: f64,
    pub hits_at_1: f64,
    pub hits_at_3: f64,
    pub hits_at_10: f64,
    /// Test triples evaluated; each contributes a head and a tail query.
    pub triples: usize,
}

/// Filtered rank of the true entity: candidates that form other known-true
/// triples are skipped, and equal scores rank the lower entity index first.
fn filtered_rank<F: Float>(
    table: &EmbeddingTable<F>,
    t: &IndexedTriple,
    side: CorruptSide,
    known: &HashSet<IndexedTriple>,
) -> usize {
    let truth = match side {
        CorruptSide::Head => t.head,
        CorruptSide::Tail => t.tail,
    };
    let true_score = table.score_triple(t);
    let mut rank = 1;
    for e in 0..table.num_entities() {
        if e == truth {
            continue;
        }
        let mut cand = *t;
        match side {
            CorruptSide::Head => cand.head = e,
            CorruptSide::Tail => cand.tail = e,
        }
        if known.contains(&cand) {
            continue;
        }
        let s = table.score_triple(&cand);
        if s > true_score || (s == true_score && e < truth) {
            rank += 1;
        }
    }
    rank
}

pub fn evaluate_link_prediction<F: Float>(
    table: &EmbeddingTable<F>,
    test: &[IndexedTriple],
    known: &[IndexedTriple],
) -> Result<LinkPredMetrics, KgeError> {
    if test.is_empty() {
        return Err(KgeError::EmptyTestSet);
    }
    for t in test {
        table.check_triple(t)?;
    }
    let known: HashSet<IndexedTriple> = known.iter().copied().collect();
    let ranks: Vec<usize> = test
        .iter()
        .flat_map(|t| [CorruptSide::Tail, CorruptSide::Head].map(|side| filtered_rank(table, t, side, &known)))
        .collect();
    let n = ranks.len() as f64;
    let hits = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(LinkPredMetrics {
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        hits_at_1: hits(1),
        hits_at_3: hits(3),
        hits_at_10: hits(10),
        triples: test.len(),
    })
}
