//! `kgfuse`: build a KG, train DistMult, annotate text, train and evaluate
//! ESIM with fused embeddings, generate synthetic corpora, run the ablation.

mod config;
mod manifest;

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kgfuse::annotate::{ConceptLexicon, NegationRules};
use kgfuse::embed::Fuser;
use kgfuse::harness::{self, AblationArtifacts, DatasetSplits, SyntheticBundle, BUNDLE_FILES};
use kgfuse::kg::{self, load_edgelist, Source, TripleSet};
use kgfuse::kge::{evaluate_link_prediction, write_loss_csv, KgeModel};
use kgfuse::{Annotator, Esim, EsimConfig, FusionConfig, Label, StaticEmbeddingTable};
use serde_json::json;

use config::{parse_config, split_overrides, usage, Preset, Resolver, Settings, UsageError};
use manifest::Manifest;

#[derive(Parser)]
#[command(name = "kgfuse", version, about = "Knowledge-graph-augmented NLI toolkit")]
#[command(after_help = "Any setting can be given as `--section.key value`, e.g. `--kge.dim 16`.\n\
Environment variables KGFUSE_SECTION_KEY override the config file; flags override both.")]
struct Cli {
    /// Config file: `[section]` headers and `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base settings that the config file, environment and flags refine.
    #[arg(long, global = true, value_enum, default_value = "paper")]
    preset: Preset,
    /// Global seed; stage seeds derive from it unless set explicitly.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge edgelists, optionally cut to a concept set, and report stats.
    BuildKg {
        #[arg(long)]
        metathesaurus: Vec<PathBuf>,
        #[arg(long)]
        semantic_network: Vec<PathBuf>,
        #[arg(long)]
        other: Vec<PathBuf>,
        /// One concept id per line; keep only triples between listed concepts.
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train DistMult embeddings on an edgelist.
    TrainKge {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filtered link prediction on held-out triples.
    EvalKge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// Known-true triples to filter from the candidate lists.
        #[arg(long)]
        known: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Concept annotation of one sentence per line.
    Annotate {
        #[arg(long)]
        lexicon: PathBuf,
        /// One trigger per line; the built-in list when omitted.
        #[arg(long)]
        triggers: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train ESIM on JSONL train/dev splits.
    TrainNli {
        #[command(flatten)]
        inputs: NliInputs,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and loss of a trained ESIM on a JSONL split.
    EvalNli {
        #[command(flatten)]
        inputs: NliInputs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label one premise/hypothesis pair.
    Predict {
        #[command(flatten)]
        inputs: NliInputs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        premise: String,
        #[arg(long)]
        hypothesis: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic KG-dependent corpus bundle.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Train KGE on a bundle and compare base, w/KG and w/KG+sentiment.
    Ablate {
        /// Directory written by `synth`.
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct NliInputs {
    /// Contextual word vectors, `token v1 ... vd` per line.
    #[arg(long)]
    vectors: PathBuf,
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long)]
    triggers: Option<PathBuf>,
    /// DistMult checkpoint; required when `fusion.use_kg` is on.
    #[arg(long)]
    kg_model: Option<PathBuf>,
}

impl NliInputs {
    fn paths(&self) -> Vec<PathBuf> {
        let mut v = vec![self.vectors.clone(), self.lexicon.clone()];
        v.extend(self.triggers.clone());
        v.extend(self.kg_model.clone());
        v
    }
}

/// Everything needed to turn sentences into fused rows.
struct Encoder {
    annotator: Annotator,
    context: StaticEmbeddingTable,
    kg: Option<KgeModel>,
    fusion: FusionConfig,
}

impl Encoder {
    fn load(inputs: &NliInputs, settings: &Settings) -> anyhow::Result<Encoder> {
        if settings.fusion.use_kg && inputs.kg_model.is_none() {
            return Err(usage("fusion.use_kg is on but no --kg-model was given"));
        }
        let annotator = load_annotator(&inputs.lexicon, inputs.triggers.as_deref(), settings)?;
        let context = StaticEmbeddingTable::load(open(&inputs.vectors)?, settings.oov_policy())
            .with_context(|| format!("reading {}", inputs.vectors.display()))?;
        if context.is_empty() {
            anyhow::bail!("{} holds no vectors", inputs.vectors.display());
        }
        let kg = match (&inputs.kg_model, settings.fusion.use_kg) {
            (Some(p), true) => Some(KgeModel::load(open(p)?).with_context(|| format!("reading {}", p.display()))?),
            _ => None,
        };
        Ok(Encoder { annotator, context, kg, fusion: settings.fusion })
    }

    fn fuser(&self) -> anyhow::Result<Fuser<'_>> {
        Ok(Fuser::new(&self.context, self.kg.as_ref(), self.fusion)?)
    }

    fn check_width(&self, model: &Esim) -> anyhow::Result<()> {
        let width = self.fuser()?.width();
        if model.config.input_dim != width {
            anyhow::bail!(
                "model expects {}-wide rows but these inputs give {width}; \
                 fusion settings and vectors must match training",
                model.config.input_dim
            );
        }
        Ok(())
    }
}

fn open(path: &Path) -> anyhow::Result<BufReader<fs::File>> {
    Ok(BufReader::new(fs::File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_annotator(lexicon: &Path, triggers: Option<&Path>, settings: &Settings) -> anyhow::Result<Annotator> {
    let lex = ConceptLexicon::load(open(lexicon)?).with_context(|| format!("reading {}", lexicon.display()))?;
    let window = settings.annotate.window;
    let rules = match triggers {
        Some(p) => NegationRules::load(open(p)?, window).with_context(|| format!("reading {}", p.display()))?,
        None => NegationRules::new(kgfuse::annotate::DEFAULT_TRIGGERS, window),
    };
    Ok(Annotator::new(lex, rules))
}

/// Fails with a usage error, before anything is written, when an input is
/// missing or the output directory cannot be created.
fn prepare(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    for p in inputs {
        if !p.is_file() {
            return Err(usage(format!("input file not found: {}", p.display())));
        }
    }
    if out.exists() && !out.is_dir() {
        return Err(usage(format!("output path exists and is not a directory: {}", out.display())));
    }
    fs::create_dir_all(out).map_err(|e| usage(format!("cannot create {}: {e}", out.display())))
}

fn load_kg_file(path: &Path, source: Source) -> anyhow::Result<TripleSet> {
    load_edgelist(open(path)?, source).with_context(|| format!("reading {}", path.display()))
}

fn read_split(path: &Path) -> anyhow::Result<Vec<kgfuse::NliExample>> {
    let v = harness::load_jsonl_file(path).with_context(|| format!("reading {}", path.display()))?;
    if v.is_empty() {
        anyhow::bail!("{} holds no examples", path.display());
    }
    Ok(v)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli, settings: Settings) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildKg { metathesaurus, semantic_network, other, concepts, out } => {
            let sources: Vec<(PathBuf, Source)> = metathesaurus
                .into_iter()
                .map(|p| (p, Source::Metathesaurus))
                .chain(semantic_network.into_iter().map(|p| (p, Source::SemanticNetwork)))
                .chain(other.into_iter().map(|p| (p, Source::Other)))
                .collect();
            if sources.is_empty() {
                return Err(usage("build-kg needs at least one of --metathesaurus, --semantic-network, --other"));
            }
            let mut inputs: Vec<PathBuf> = sources.iter().map(|(p, _)| p.clone()).collect();
            inputs.extend(concepts.clone());
            prepare(&inputs, &out)?;
            let mut m = Manifest::new("build-kg", &settings, &inputs)?;
            let mut merged = TripleSet::default();
            for (path, source) in &sources {
                merged = kg::merge(&merged, &load_kg_file(path, *source)?);
            }
            if let Some(path) = &concepts {
                let ids: HashSet<String> = open(path)?
                    .lines()
                    .map(|l| l.map(|s| s.trim().to_string()))
                    .filter(|l| l.as_ref().map_or(true, |s| !s.is_empty() && !s.starts_with('#')))
                    .collect::<Result<_, _>>()?;
                merged = merged.extract_subgraph(&ids);
            }
            let mut w = create(&out.join("kg.tsv"))?;
            merged.write_tsv(&mut w)?;
            w.flush()?;
            write_json(&out.join("stats.json"), &merged.stats())?;
            m.output("kg.tsv");
            m.output("stats.json");
            m.write(&out)
        }
        Command::TrainKge { kg, out } => {
            prepare(std::slice::from_ref(&kg), &out)?;
            let mut m = Manifest::new("train-kge", &settings, std::slice::from_ref(&kg))?;
            let g = load_kg_file(&kg, Source::Other)?.deduped();
            let (model, loss) = KgeModel::train(&g, &settings.kge)?;
            let mut w = create(&out.join("kge.txt"))?;
            model.save(&mut w)?;
            w.flush()?;
            let mut w = create(&out.join("loss.csv"))?;
            write_loss_csv(&mut w, &loss)?;
            w.flush()?;
            m.output("kge.txt");
            m.output("loss.csv");
            m.detail("entities", model.entities.len());
            m.detail("relations", model.relations.len());
            m.detail("final_loss", loss.last());
            m.write(&out)
        }
        Command::EvalKge { model, test, known, out } => {
            let mut inputs = vec![model.clone(), test.clone()];
            inputs.extend(known.iter().cloned());
            prepare(&inputs, &out)?;
            let mut m = Manifest::new("eval-kge", &settings, &inputs)?;
            let model = KgeModel::load(open(&model)?).with_context(|| format!("reading {}", model.display()))?;
            let index = |g: &TripleSet, what: &Path| -> anyhow::Result<Vec<kg::IndexedTriple>> {
                let idx = g.index(&model.entities, &model.relations);
                if idx.len() != g.len() {
                    anyhow::bail!(
                        "{}: {} triples name entities or relations the model has never seen",
                        what.display(),
                        g.len() - idx.len()
                    );
                }
                Ok(idx)
            };
            let test_set = load_kg_file(&test, Source::Other)?;
            let test_idx = index(&test_set, &test)?;
            let mut filter = test_idx.clone();
            for k in &known {
                filter.extend(index(&load_kg_file(k, Source::Other)?, k)?);
            }
            let metrics = evaluate_link_prediction(&model.table, &test_idx, &filter)?;
            write_json(&out.join("metrics.json"), &metrics)?;
            println!("{}", serde_json::to_string(&metrics)?);
            m.output("metrics.json");
            m.write(&out)
        }
        Command::Annotate { lexicon, triggers, input, out } => {
            let mut inputs = vec![lexicon.clone(), input.clone()];
            inputs.extend(triggers.clone());
            prepare(&inputs, &out)?;
            let mut m = Manifest::new("annotate", &settings, &inputs)?;
            let annotator = load_annotator(&lexicon, triggers.as_deref(), &settings)?;
            let mut w = create(&out.join("annotations.jsonl"))?;
            for line in open(&input)?.lines() {
                let text = line?;
                let a = annotator.annotate(&text);
                let record = json!({ "text": text, "annotations": a.annotations, "aligned": a.aligned() });
                writeln!(w, "{}", serde_json::to_string(&record)?)?;
            }
            w.flush()?;
            m.output("annotations.jsonl");
            m.write(&out)
        }
        Command::TrainNli { inputs, train, dev, out } => {
            let mut paths = inputs.paths();
            paths.extend([train.clone(), dev.clone()]);
            prepare(&paths, &out)?;
            let mut m = Manifest::new("train-nli", &settings, &paths)?;
            let enc = Encoder::load(&inputs, &settings)?;
            let fuser = enc.fuser()?;
            let train_set = harness::encode_split(&read_split(&train)?, &enc.annotator, &fuser);
            let dev_set = harness::encode_split(&read_split(&dev)?, &enc.annotator, &fuser);
            let config = EsimConfig { input_dim: fuser.width(), ..settings.esim.clone() };
            let (model, report) = kgfuse::esim::train_nli_with(&train_set.pairs, &dev_set.pairs, &config, |e| {
                log::info!("epoch {} train {:.4} dev {:.4} acc {:.4}", e.epoch, e.train_loss, e.dev_loss, e.dev_accuracy)
            })?;
            let mut w = create(&out.join("esim.txt"))?;
            model.save(&mut w)?;
            w.flush()?;
            let mut w = create(&out.join("train_report.csv"))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            m.output("esim.txt");
            m.output("train_report.csv");
            m.detail("input_dim", config.input_dim);
            m.detail("fusion", settings.fusion.name());
            m.detail("best_epoch", report.best_epoch);
            m.detail("stopped_at", report.stopped_at);
            m.write(&out)
        }
        Command::EvalNli { inputs, model, test, out } => {
            let mut paths = inputs.paths();
            paths.extend([model.clone(), test.clone()]);
            prepare(&paths, &out)?;
            let mut m = Manifest::new("eval-nli", &settings, &paths)?;
            let enc = Encoder::load(&inputs, &settings)?;
            let model = Esim::load(open(&model)?).with_context(|| format!("reading {}", model.display()))?;
            enc.check_width(&model)?;
            let fuser = enc.fuser()?;
            let split = harness::encode_split(&read_split(&test)?, &enc.annotator, &fuser);
            let predicted = model.predict_all(&split.pairs)?;
            let golds: Vec<Label> = split.pairs.iter().map(|p| p.label).collect();
            let (loss, _) = model.evaluate(&split.pairs)?;
            let metrics = json!({
                "examples": golds.len(),
                "accuracy": harness::accuracy(&predicted, &golds)?,
                "loss": loss,
            });
            write_json(&out.join("metrics.json"), &metrics)?;
            let mut w = create(&out.join("predictions.txt"))?;
            for p in &predicted {
                writeln!(w, "{p}")?;
            }
            w.flush()?;
            println!("{metrics}");
            m.output("metrics.json");
            m.output("predictions.txt");
            m.write(&out)
        }
        Command::Predict { inputs, model, premise, hypothesis, out } => {
            let mut paths = inputs.paths();
            paths.push(model.clone());
            prepare(&paths, &out)?;
            let mut m = Manifest::new("predict", &settings, &paths)?;
            let enc = Encoder::load(&inputs, &settings)?;
            let model = Esim::load(open(&model)?).with_context(|| format!("reading {}", model.display()))?;
            enc.check_width(&model)?;
            let fuser = enc.fuser()?;
            let p = fuser.fuse(&enc.annotator.annotate(&premise).aligned()).rows;
            let h = fuser.fuse(&enc.annotator.annotate(&hypothesis).aligned()).rows;
            let (label, probs) = model.predict(p.view(), h.view())?;
            let record = json!({
                "premise": premise,
                "hypothesis": hypothesis,
                "label": label,
                "probabilities": Label::ALL.iter().map(|l| (l.as_str().to_string(), json!(probs[l.index()]))).collect::<serde_json::Map<_, _>>(),
            });
            write_json(&out.join("prediction.json"), &record)?;
            println!("{label} {:.6} {:.6} {:.6}", probs[0], probs[1], probs[2]);
            m.output("prediction.json");
            m.write(&out)
        }
        Command::Synth { out } => {
            prepare(&[], &out)?;
            let mut m = Manifest::new("synth", &settings, &[])?;
            let bundle = harness::generate_synthetic(&settings.synth)?;
            bundle.write_to_dir(&out)?;
            for f in BUNDLE_FILES {
                m.output(f);
            }
            m.detail("train", bundle.splits.train.len());
            m.detail("dev", bundle.splits.dev.len());
            m.detail("test", bundle.splits.test.len());
            m.write(&out)
        }
        Command::Ablate { bundle, out } => {
            let paths: Vec<PathBuf> = BUNDLE_FILES.iter().map(|f| bundle.join(f)).collect();
            prepare(&paths, &out)?;
            let mut m = Manifest::new("ablate", &settings, &paths)?;
            let b = load_bundle(&bundle)?;
            let (kg, loss) = KgeModel::train(&b.kg(), &settings.kge)?;
            log::info!("KGE trained, final loss {:?}", loss.last());
            let mut w = create(&out.join("kge.txt"))?;
            kg.save(&mut w)?;
            w.flush()?;
            let annotator = b.annotator();
            let context = StaticEmbeddingTable::load(open(&paths[4])?, settings.oov_policy())?;
            let artifacts = AblationArtifacts { annotator: &annotator, context: &context, kg: &kg };
            let report = harness::run_ablation(&b.splits, &artifacts, &settings.esim)?;
            let mut w = create(&out.join("ablation.csv"))?;
            report.write_csv(&mut w)?;
            w.flush()?;
            write_json(&out.join("ablation.json"), &report)?;
            print!("{}", report.table());
            m.output("kge.txt");
            m.output("ablation.csv");
            m.output("ablation.json");
            m.write(&out)
        }
    }
}

/// Reads a directory written by `synth` back into a bundle.
fn load_bundle(dir: &Path) -> anyhow::Result<SyntheticBundle> {
    let f = |i: usize| dir.join(BUNDLE_FILES[i]);
    let lexicon: Vec<(String, String)> = open(&f(2))?
        .lines()
        .map(|l| {
            let l = l?;
            let mut cols = l.split('\t');
            match (cols.next(), cols.next()) {
                (Some(s), Some(id)) if !s.is_empty() && !id.is_empty() => Ok((s.to_string(), id.to_string())),
                _ => Err(anyhow::anyhow!("{}: malformed line `{l}`", f(2).display())),
            }
        })
        .collect::<anyhow::Result<_>>()?;
    let triggers = open(&f(3))?.lines().collect::<Result<Vec<_>, _>>()?;
    let mut vectors = Vec::new();
    for (i, line) in open(&f(4))?.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let v = fields
            .map(str::parse::<f32>)
            .collect::<Result<Vec<f32>, _>>()
            .with_context(|| format!("{}:{}: bad vector value", f(4).display(), i + 1))?;
        vectors.push((word.to_string(), v));
    }
    Ok(SyntheticBundle {
        metathesaurus: load_kg_file(&f(0), Source::Metathesaurus)?,
        semantic_network: load_kg_file(&f(1), Source::SemanticNetwork)?,
        lexicon,
        triggers,
        vectors,
        splits: DatasetSplits { train: read_split(&f(5))?, dev: read_split(&f(6))?, test: read_split(&f(7))? },
    })
}

fn resolve(cli: &Cli, overrides: &[config::Assignment]) -> anyhow::Result<Settings> {
    let mut r = Resolver::new(cli.preset);
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        for a in parse_config(&text, &path.display().to_string())? {
            r.assign(&a)?;
        }
    }
    for a in r.env_assignments(|name| std::env::var(name).ok()) {
        r.assign(&a)?;
    }
    if let Some(seed) = cli.seed {
        r.assign(&config::Assignment { key: "seed".into(), value: seed.to_string(), origin: "--seed".into() })?;
    }
    for a in overrides {
        r.assign(a)?;
    }
    r.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("KGFUSE_LOG", "warn")).init();
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let outcome = resolve(&cli, &overrides).and_then(|s| run(cli, s));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.is::<UsageError>() { 2 } else { 1 })
        }
    }
}
