//! Per-token contextual vectors and their fusion with KG embeddings.
//!
//! A fused row is `ctx(token) ⊕ kg(concept) ⊕ [negated]`, with the last two
//! blocks switched on by [`FusionConfig`]. Tokens without a concept, and
//! concepts the KG vocabulary does not know, get an all-zero KG block.

use std::collections::HashMap;
use std::io::BufRead;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::AlignedToken;
use crate::kge::KgeModel;
use crate::seed;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: expected {expected} values, found {found}")]
    InconsistentDim { line: usize, expected: usize, found: usize },
    #[error("KG fusion requested but no KG embeddings were supplied")]
    MissingKg,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What an out-of-vocabulary token maps to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OovPolicy {
    Zero,
    /// Deterministic pseudo-random vector in `[−0.1, 0.1]`, a function of the
    /// token and the seed only.
    Hashed { seed: u64 },
}

/// Source of one vector per token.
pub trait ContextProvider {
    fn dim(&self) -> usize;
    /// Write the vector for `token` into `out` and report whether the token
    /// was in vocabulary.
    fn lookup_into(&self, token: &str, out: &mut [f64]) -> bool;
}

/// Word vectors read from a GloVe-style text file.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticEmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
    oov: OovPolicy,
}

impl StaticEmbeddingTable {
    pub fn new(dim: usize, oov: OovPolicy) -> Self {
        StaticEmbeddingTable { dim, vectors: HashMap::new(), oov }
    }

    /// One `token v1 ... vd` per line. The first line fixes `d`; a later
    /// repeat of a token replaces the earlier vector.
    pub fn load<R: BufRead>(reader: R, oov: OovPolicy) -> Result<Self, EmbedError> {
        let mut table = StaticEmbeddingTable::new(0, oov);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values = fields
                .map(|f| f.parse::<f32>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f32>>>()
                .ok_or_else(|| EmbedError::Malformed { line: i + 1, reason: "unparsable value".into() })?;
            if values.is_empty() {
                return Err(EmbedError::Malformed { line: i + 1, reason: "no values".into() });
            }
            if table.vectors.is_empty() && table.dim == 0 {
                table.dim = values.len();
            } else if values.len() != table.dim {
                return Err(EmbedError::InconsistentDim { line: i + 1, expected: table.dim, found: values.len() });
            }
            table.vectors.insert(token.to_string(), values);
        }
        Ok(table)
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f32>) {
        assert_eq!(vector.len(), self.dim, "vector length must equal table dim");
        self.vectors.insert(token.to_string(), vector);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn oov_policy(&self) -> OovPolicy {
        self.oov
    }

    pub fn set_oov_policy(&mut self, oov: OovPolicy) {
        self.oov = oov;
    }

    pub fn lookup(&self, token: &str) -> Vec<f32> {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        match self.oov {
            OovPolicy::Zero => vec![0.0; self.dim],
            OovPolicy::Hashed { seed } => {
                let mut rng = seed::rng(seed ^ seed::fnv1a(token.as_bytes()));
                (0..self.dim).map(|_| rng.gen_range(-0.1f32..=0.1)).collect()
            }
        }
    }
}

impl ContextProvider for StaticEmbeddingTable {
    fn dim(&self) -> usize {
        self.dim
    }

    fn lookup_into(&self, token: &str, out: &mut [f64]) -> bool {
        let known = self.contains(token);
        for (o, v) in out.iter_mut().zip(self.lookup(token)) {
            *o = f64::from(v);
        }
        known
    }
}

/// Trained KG embeddings keyed by concept id.
pub type KgEmbeddings = KgeModel;

/// Which optional blocks the fused rows carry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub use_kg: bool,
    pub use_sentiment: bool,
}

impl FusionConfig {
    pub const BASE: FusionConfig = FusionConfig { use_kg: false, use_sentiment: false };
    pub const WITH_KG: FusionConfig = FusionConfig { use_kg: true, use_sentiment: false };
    pub const WITH_KG_SENTIMENT: FusionConfig = FusionConfig { use_kg: true, use_sentiment: true };

    pub fn name(&self) -> &'static str {
        match (self.use_kg, self.use_sentiment) {
            (false, false) => "base",
            (true, false) => "w/KG",
            (true, true) => "w/KG+sentiment",
            (false, true) => "w/sentiment",
        }
    }

    pub fn width(&self, ctx_dim: usize, kg_dim: usize) -> usize {
        ctx_dim + if self.use_kg { kg_dim } else { 0 } + usize::from(self.use_sentiment)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct TokenProvenance {
    pub has_concept: bool,
    /// The concept had a row in the KG table.
    pub concept_in_kg: bool,
    pub oov: bool,
}

/// `T × D` fused rows plus where each row's pieces came from.
#[derive(Clone, Debug, PartialEq)]
pub struct FusedSequence {
    pub rows: Array2<f64>,
    pub provenance: Vec<TokenProvenance>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FusionDebugRecord {
    pub width: usize,
    pub tokens: usize,
    pub with_concept: usize,
    pub concept_missing_from_kg: usize,
    pub oov: usize,
}

impl FusedSequence {
    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn width(&self) -> usize {
        self.rows.ncols()
    }

    /// Counters for the JSON Lines debug dump.
    pub fn debug_record(&self) -> FusionDebugRecord {
        let count = |f: fn(&TokenProvenance) -> bool| self.provenance.iter().filter(|p| f(p)).count();
        FusionDebugRecord {
            width: self.width(),
            tokens: self.len(),
            with_concept: count(|p| p.has_concept),
            concept_missing_from_kg: count(|p| p.has_concept && !p.concept_in_kg),
            oov: count(|p| p.oov),
        }
    }
}

/// Fuses aligned sentences under one configuration.
pub struct Fuser<'a> {
    ctx: &'a dyn ContextProvider,
    kg: Option<&'a KgEmbeddings>,
    config: FusionConfig,
}

impl<'a> Fuser<'a> {
    pub fn new(
        ctx: &'a dyn ContextProvider,
        kg: Option<&'a KgEmbeddings>,
        config: FusionConfig,
    ) -> Result<Self, EmbedError> {
        if config.use_kg && kg.is_none() {
            return Err(EmbedError::MissingKg);
        }
        Ok(Fuser { ctx, kg, config })
    }

    pub fn config(&self) -> FusionConfig {
        self.config
    }

    fn kg_dim(&self) -> usize {
        self.kg.map_or(0, |k| k.table.dim())
    }

    pub fn width(&self) -> usize {
        self.config.width(self.ctx.dim(), self.kg_dim())
    }

    pub fn fuse(&self, aligned: &[AlignedToken]) -> FusedSequence {
        let ctx_dim = self.ctx.dim();
        let kg_dim = self.kg_dim();
        let mut rows = Array2::<f64>::zeros((aligned.len(), self.width()));
        let mut provenance = Vec::with_capacity(aligned.len());
        for (t, (tok, mut row)) in aligned.iter().zip(rows.rows_mut()).enumerate() {
            let row = row.as_slice_mut().expect("standard layout");
            let known = self.ctx.lookup_into(&tok.text, &mut row[..ctx_dim]);
            let mut prov = TokenProvenance { has_concept: tok.concept.is_some(), concept_in_kg: false, oov: !known };
            let mut col = ctx_dim;
            if self.config.use_kg {
                let kg = self.kg.expect("checked in Fuser::new");
                if let Some(vec) = tok.concept.as_deref().and_then(|c| kg.entity_vector(c)) {
                    for (o, &v) in row[col..col + kg_dim].iter_mut().zip(vec) {
                        *o = f64::from(v);
                    }
                    prov.concept_in_kg = true;
                } else if let Some(c) = &tok.concept {
                    log::debug!("concept {c} at token {t} has no KG embedding; using zeros");
                }
                col += kg_dim;
            }
            if self.config.use_sentiment {
                row[col] = f64::from(tok.sentiment);
            }
            provenance.push(prov);
        }
        FusedSequence { rows, provenance }
    }
}

/// One-shot form of [`Fuser::fuse`].
pub fn fuse(
    aligned: &[AlignedToken],
    ctx: &dyn ContextProvider,
    kg: Option<&KgEmbeddings>,
    config: FusionConfig,
) -> Result<FusedSequence, EmbedError> {
    Ok(Fuser::new(ctx, kg, config)?.fuse(aligned))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{Source, Triple, TripleSet};
    use crate::kge::KgeTrainConfig;
    use proptest::prelude::*;

    fn tok(text: &str, concept: Option<&str>, sentiment: u8) -> AlignedToken {
        AlignedToken { text: text.into(), concept: concept.map(String::from), sentiment }
    }

    fn kg(dim: usize) -> KgEmbeddings {
        let g = TripleSet::new(vec![Triple::new("C-PAIN", "isa", "C-SYMPTOM", Source::Other)]);
        KgeModel::train(&g, &KgeTrainConfig { dim, epochs: 1, ..Default::default() }).unwrap().0
    }

    fn ctx(dim: usize) -> StaticEmbeddingTable {
        let mut t = StaticEmbeddingTable::new(dim, OovPolicy::Zero);
        for (i, w) in ["no", "pain", "patient"].iter().enumerate() {
            t.insert(w, (0..dim).map(|j| (i * dim + j) as f32 * 0.1 + 0.05).collect());
        }
        t
    }

    #[test]
    fn load_examples() {
        let t = StaticEmbeddingTable::load("a 1.0 2.0\n".as_bytes(), OovPolicy::Zero).unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.lookup("a"), vec![1.0, 2.0]);
        let err = StaticEmbeddingTable::load("a 1 2\nb 1 2 3\n".as_bytes(), OovPolicy::Zero).unwrap_err();
        assert!(matches!(err, EmbedError::InconsistentDim { line: 2, expected: 2, found: 3 }));
        let t = StaticEmbeddingTable::load("a 1 2\nb 0 0\na 3 4\n".as_bytes(), OovPolicy::Zero).unwrap();
        assert_eq!(t.lookup("a"), vec![3.0, 4.0]);
        assert_eq!(t.len(), 2);
        assert!(StaticEmbeddingTable::load("a 1 x\n".as_bytes(), OovPolicy::Zero).is_err());
        assert!(StaticEmbeddingTable::load("a\n".as_bytes(), OovPolicy::Zero).is_err());
    }

    #[test]
    fn oov_policies() {
        let mut t = StaticEmbeddingTable::load("a 1 2 3\n".as_bytes(), OovPolicy::Zero).unwrap();
        assert_eq!(t.lookup("zzz"), vec![0.0; 3]);
        t.set_oov_policy(OovPolicy::Hashed { seed: 4 });
        let v = t.lookup("zzz");
        assert_eq!(v, t.lookup("zzz"));
        assert!(v.iter().all(|x| (-0.1..=0.1).contains(x)));
        assert_ne!(v, t.lookup("zzy"));
        assert_eq!(t.lookup("a"), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn width_arithmetic() {
        let c = ctx(8);
        let k = kg(4);
        let seq = fuse(&[tok("pain", Some("C-PAIN"), 1)], &c, Some(&k), FusionConfig::WITH_KG_SENTIMENT).unwrap();
        assert_eq!(seq.width(), 13);
        assert_eq!(FusionConfig::WITH_KG.width(8, 4), 12);
        assert_eq!(FusionConfig::BASE.width(8, 4), 8);
    }

    #[test]
    fn concept_free_and_negated_tokens() {
        let c = ctx(3);
        let k = kg(2);
        let seq = fuse(
            &[tok("patient", None, 0), tok("pain", Some("C-PAIN"), 1), tok("fever", Some("C-UNKNOWN"), 0)],
            &c,
            Some(&k),
            FusionConfig::WITH_KG_SENTIMENT,
        )
        .unwrap();
        let r = &seq.rows;
        assert_eq!(r.row(0).to_vec()[3..], [0.0, 0.0, 0.0]);
        let pain = k.entity_vector("C-PAIN").unwrap();
        assert_eq!(r[[1, 3]], f64::from(pain[0]));
        assert_eq!(r[[1, 4]], f64::from(pain[1]));
        assert_eq!(r[[1, 5]], 1.0);
        assert_eq!(r.row(2).to_vec()[3..], [0.0, 0.0, 0.0]);
        let d = seq.debug_record();
        assert_eq!((d.with_concept, d.concept_missing_from_kg, d.oov), (2, 1, 1));
    }

    #[test]
    fn base_ablation_equals_context_rows() {
        let c = ctx(4);
        let k = kg(3);
        let toks = [tok("no", None, 0), tok("pain", Some("C-PAIN"), 1), tok("zzz", None, 0)];
        let seq = fuse(&toks, &c, Some(&k), FusionConfig::BASE).unwrap();
        for (i, t) in toks.iter().enumerate() {
            let expected: Vec<f64> = c.lookup(&t.text).into_iter().map(f64::from).collect();
            assert_eq!(seq.rows.row(i).to_vec(), expected);
        }
        assert!(matches!(fuse(&toks, &c, None, FusionConfig::WITH_KG), Err(EmbedError::MissingKg)));
        assert_eq!(fuse(&toks, &c, None, FusionConfig::BASE).unwrap(), seq);
    }

    proptest! {
        #[test]
        fn width_law_and_ablation_consistency(
            spec in prop::collection::vec((0usize..4, any::<bool>(), any::<bool>()), 0..8)
        ) {
            let words = ["no", "pain", "patient", "unseen"];
            let concepts = [Some("C-PAIN"), Some("C-SYMPTOM"), Some("C-OTHER"), None];
            let toks: Vec<AlignedToken> = spec
                .iter()
                .map(|&(w, has, neg)| {
                    let concept = if has { concepts[w] } else { None };
                    tok(words[w], concept, u8::from(neg && concept.is_some()))
                })
                .collect();
            let c = ctx(5);
            let k = kg(3);
            let mut firsts = Vec::new();
            for cfg in [FusionConfig::BASE, FusionConfig::WITH_KG, FusionConfig::WITH_KG_SENTIMENT] {
                let seq = fuse(&toks, &c, Some(&k), cfg).unwrap();
                prop_assert_eq!(seq.width(), cfg.width(5, 3));
                prop_assert_eq!(seq.len(), toks.len());
                if cfg.use_sentiment {
                    for (i, t) in toks.iter().enumerate() {
                        prop_assert_eq!(seq.rows[[i, 8]], f64::from(t.sentiment));
                    }
                }
                if cfg.use_kg {
                    for (i, t) in toks.iter().enumerate() {
                        if t.concept.is_none() {
                            prop_assert!((5..8).all(|j| seq.rows[[i, j]] == 0.0));
                        }
                    }
                }
                firsts.push(seq.rows.slice(ndarray::s![.., ..5]).to_owned());
                prop_assert_eq!(fuse(&toks, &c, Some(&k), cfg).unwrap(), seq);
            }
            prop_assert_eq!(&firsts[0], &firsts[1]);
            prop_assert_eq!(&firsts[1], &firsts[2]);
        }
    }
}
