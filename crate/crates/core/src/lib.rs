//! Knowledge-graph-augmented natural language inference.
//!
//! The pipeline has five stages, each in its own module:
//!
//! * [`kg`] ingests tab-separated triple edgelists from several sources,
//!   merges them and cuts out the subgraph spanned by a concept set.
//! * [`kge`] trains DistMult embeddings over that graph with logistic loss
//!   and evaluates them with filtered link prediction.
//! * [`annotate`] is a lexicon-driven concept matcher with preferred-term
//!   canonicalization and trigger-window negation detection.
//! * [`embed`] concatenates per-token contextual vectors with the KG
//!   embedding of the token's concept and a one-column negation flag.
//! * [`esim`] is a from-scratch ESIM sentence-pair classifier with
//!   hand-written reverse-mode gradients.
//!
//! [`harness`] ties them together: dataset IO, accuracy, the synthetic
//! corpus generator and the three-row fusion ablation.

pub mod annotate;
pub mod embed;
pub mod esim;
pub mod harness;
pub mod kg;
pub mod kge;
pub mod seed;

pub use embed::{FusedSequence, FusionConfig, KgEmbeddings, OovPolicy, StaticEmbeddingTable};
pub use esim::{Esim, EsimConfig, Label, TrainReport};
pub use annotate::{AlignedToken, Annotator, ConceptAnnotation, ConceptLexicon, NegationRules};
pub use harness::{AblationReport, DatasetSplits, NliExample, SyntheticSpec};
pub use kg::{Source, Triple, TripleSet, Vocab};
pub use kge::{EmbeddingTable, KgeTrainConfig, LinkPredMetrics};
