//! Subcommand implementations. Everything returns `screen_core::Result` so
//! `main` can map errors onto exit codes uniformly.

use std::path::{Path, PathBuf};

use screen_core::corpus::{generate_synthetic, load_corpus, write_corpus, SynthSpec};
use screen_core::corpus::{split_corpus, validate_stats};
use screen_core::engine::{calibrate_threshold, train, user_prompts};
use screen_core::eval::{
    emit_report, load_report, prompt_vocabulary, run_protocol, ProtocolParams, DEFAULT_RUNS,
    DEFAULT_SPAN_WEEKS, SPLIT_RATIOS,
};
use screen_core::ontology::{default_negatives, load_negatives, load_ontology, parse_ontology};
use screen_core::prefix::init_store;
use screen_core::util::sha256_hex;
use screen_core::{
    Aspect, Backend, BackendChoice, Corpus, Engine, Error, KvConfig, MetricsReport, MockBackend,
    Mode, Ontology, PromptVariant, Result, Threshold, TinyBackend, TrainConfig, UserRecord,
    WhitespaceTokenizer,
};

use crate::model::{self, Manifest, SavedModel};
use crate::{Command, RunFlags};

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Ingest { corpus, out, config } => ingest(&corpus, out.as_deref(), config.as_deref()),
        Command::ValidateOntology { ontology, negatives } => {
            validate_ontology(&ontology, negatives.as_deref())
        }
        Command::Synth { spec, ontology, seed, out } => {
            synth(&spec, ontology.as_deref(), seed, &out)
        }
        Command::Train { flags } => train_cmd(&flags),
        Command::Predict { model, user_file, out, dump_prompts } => {
            predict(&model, &user_file, out.as_deref(), dump_prompts.as_deref())
        }
        Command::Evaluate { flags } => evaluate(&flags, None),
        Command::Ablate { drop, flags } => evaluate(&flags, Some(&drop)),
        Command::Report { input, out } => report(&input, &out),
    }
}

// ---------------------------------------------------------------------------
// Config resolution
// ---------------------------------------------------------------------------

/// Everything a config-driven subcommand needs, resolved from the config
/// file with CLI flags overlaid. Paths are taken relative to the working
/// directory.
struct Resolved {
    corpus: Corpus,
    ontology: Ontology,
    negatives: Vec<String>,
    train_config: TrainConfig,
    backend: BackendChoice,
    modes: Vec<Mode>,
    runs: usize,
    span_weeks: i64,
    out: PathBuf,
    /// Content hash over the experiment definition plus the ontology and
    /// corpus bytes; copied into reports and manifests.
    config_hash: String,
    /// Full resolved configuration, echoed into the out dir so a run can be
    /// reproduced from its outputs alone.
    effective_text: String,
    ontology_bytes: Vec<u8>,
    corpus_sha256: String,
}

fn resolve(flags: &RunFlags, mode_override: Option<String>) -> Result<Resolved> {
    let mut cfg = match &flags.config {
        Some(path) => KvConfig::from_file(path)?,
        None => KvConfig::new(),
    };
    if let Some(p) = &flags.corpus {
        cfg.set("corpus", p.display());
    }
    if let Some(p) = &flags.ontology {
        cfg.set("ontology", p.display());
    }
    if let Some(p) = &flags.negatives {
        cfg.set("negatives", p.display());
    }
    if let Some(p) = &flags.out {
        cfg.set("out", p.display());
    }
    if let Some(b) = &flags.backend {
        cfg.set("backend", b);
    }
    if let Some(m) = &flags.mode {
        cfg.set("mode", m);
    }
    if let Some(s) = flags.seed {
        cfg.set("seed", s);
    }
    if let Some(r) = flags.runs {
        cfg.set("runs", r);
    }
    if let Some(w) = flags.span_weeks {
        cfg.set("span_weeks", w);
    }
    if let Some(m) = mode_override {
        cfg.set("mode", m);
    }

    let corpus_path = PathBuf::from(cfg.require("corpus")?);
    let ontology_path = PathBuf::from(cfg.require("ontology")?);
    let corpus = load_corpus(&corpus_path)?;
    let ontology = load_ontology(&ontology_path)?;
    let corpus_bytes = std::fs::read(&corpus_path).map_err(|e| Error::read_io(&corpus_path, e))?;
    let ontology_bytes =
        std::fs::read(&ontology_path).map_err(|e| Error::read_io(&ontology_path, e))?;

    let negatives = match cfg.get("negatives") {
        Some(path) => load_negatives(Path::new(path))?,
        None => default_negatives(),
    };
    let train_config = TrainConfig::from_kv(&cfg)?;
    let backend = BackendChoice::parse(cfg.get("backend").unwrap_or("mock"))?;
    let modes = Mode::parse_sweep(cfg.get("mode").unwrap_or("full"))?;
    let runs = cfg.get_parsed("runs", DEFAULT_RUNS)?;
    let span_weeks = cfg.get_parsed("span_weeks", DEFAULT_SPAN_WEEKS)?;
    let out = PathBuf::from(cfg.get("out").unwrap_or("out"));

    // The experiment definition: every knob that changes results. Output
    // locations stay out so moving a run does not change its identity; the
    // data files enter the hash by content below, not by path.
    let mut experiment = train_config.to_kv();
    experiment.set("backend", backend.id());
    experiment.set("mode", cfg.get("mode").unwrap_or("full"));
    experiment.set("runs", runs);
    experiment.set("span_weeks", span_weeks);
    experiment.set("negatives", negatives.join(","));
    let mut blob = experiment.render().into_bytes();
    blob.push(0);
    blob.extend_from_slice(&ontology_bytes);
    blob.push(0);
    blob.extend_from_slice(&corpus_bytes);
    let config_hash = sha256_hex(&blob);

    // The echoed config additionally records where the inputs came from.
    let mut effective = experiment;
    effective.set("corpus", corpus_path.display());
    effective.set("ontology", ontology_path.display());
    if let Some(path) = cfg.get("negatives") {
        effective.set("negatives_file", path);
    }
    effective.set("out", out.display());

    Ok(Resolved {
        corpus,
        ontology,
        negatives,
        train_config,
        backend,
        modes,
        runs,
        span_weeks,
        out,
        config_hash,
        effective_text: effective.render(),
        ontology_bytes,
        corpus_sha256: sha256_hex(&corpus_bytes),
    })
}

fn write_file(path: &Path, content: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::write_io(path, e))
}

fn create_out_dir(resolved: &Resolved) -> Result<()> {
    std::fs::create_dir_all(&resolved.out).map_err(|e| Error::write_io(&resolved.out, e))?;
    write_file(&resolved.out.join("effective.cfg"), &resolved.effective_text)
}

/// Render every prompt for every user, in corpus order, to one text file.
fn dump_prompts(resolved: &Resolved, variant: PromptVariant, path: &Path) -> Result<()> {
    let tokenizer = WhitespaceTokenizer;
    let mut out = String::new();
    for user in &resolved.corpus.users {
        let prompts = user_prompts(
            user,
            &resolved.ontology,
            variant,
            &tokenizer,
            resolved.train_config.window,
            resolved.train_config.separator.as_deref(),
        )?;
        for (idx, prompt) in prompts.iter().enumerate() {
            out.push_str(&format!("# user {} window {idx}\n", user.user_id));
            out.push_str(&prompt.joined_text());
            out.push('\n');
        }
    }
    write_file(path, out)
}

// ---------------------------------------------------------------------------
// evaluate / ablate
// ---------------------------------------------------------------------------

fn evaluate(flags: &RunFlags, drop: Option<&str>) -> Result<()> {
    let mode_override = drop.map(|d| format!("ablation({d})"));
    let resolved = resolve(flags, mode_override)?;
    create_out_dir(&resolved)?;
    if let Some(path) = &flags.dump_prompts {
        let variant = match resolved.modes.as_slice() {
            [Mode::Ablation(screen_core::AblationDrop::Rule)] => PromptVariant::Generic,
            _ => PromptVariant::RuleBased,
        };
        dump_prompts(&resolved, variant, path)?;
    }
    let reports: Vec<MetricsReport> = resolved
        .modes
        .iter()
        .map(|mode| {
            run_protocol(&ProtocolParams {
                corpus: &resolved.corpus,
                ontology: &resolved.ontology,
                negatives: &resolved.negatives,
                config: &resolved.train_config,
                backend: resolved.backend,
                mode: mode.clone(),
                runs: resolved.runs,
                config_hash: resolved.config_hash.clone(),
                span_weeks: resolved.span_weeks,
            })
        })
        .collect::<Result<_>>()?;
    let written = emit_report(&reports, &resolved.out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn labeled_refs<'c>(
    corpus: &'c Corpus,
    ids: &[String],
    disease: &str,
) -> Result<(Vec<&'c UserRecord>, Vec<u8>)> {
    let mut users = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    for id in ids {
        let user = corpus
            .user(id)
            .ok_or_else(|| Error::Config(format!("unknown user id `{id}` in split")))?;
        let label = user.label(disease).ok_or_else(|| {
            Error::Config(format!(
                "user `{id}` has no label for disease `{disease}`"
            ))
        })?;
        users.push(user);
        labels.push(label);
    }
    Ok((users, labels))
}

fn train_cmd(flags: &RunFlags) -> Result<()> {
    let resolved = resolve(flags, None)?;
    if resolved.backend != BackendChoice::Tiny {
        return Err(Error::Config(format!(
            "`train` fits prefix vectors and needs a differentiable backend; \
             got `{}` (set `backend = tiny`)",
            resolved.backend.id()
        )));
    }
    create_out_dir(&resolved)?;
    if let Some(path) = &flags.dump_prompts {
        dump_prompts(&resolved, PromptVariant::RuleBased, path)?;
    }

    let config = &resolved.train_config;
    let disease = resolved.ontology.disease_id.clone();
    let split = split_corpus(&resolved.corpus, &disease, SPLIT_RATIOS, config.seed)?;
    let (train_users, _) = labeled_refs(&resolved.corpus, &split.train, &disease)?;
    let (val_users, val_labels) = labeled_refs(&resolved.corpus, &split.val, &disease)?;

    let texts = prompt_vocabulary(
        train_users.iter().chain(val_users.iter()).copied(),
        &resolved.ontology,
        &resolved.negatives,
        config,
        PromptVariant::RuleBased,
    )?;
    let backend = TinyBackend::from_texts(texts.iter().map(String::as_str), config.k, config.seed)?;
    let engine = Engine::new(&backend, &resolved.ontology, &resolved.negatives, config.clone())?;
    let block_shape = backend
        .descriptor()
        .block_shape
        .expect("the trainable backend declares a prefix block shape");
    let mut store = init_store(&split.train, config.k, config.k_e, block_shape, config.seed)?;

    let log = train(&engine, &mut store, &train_users, &val_users)?;

    let tau = match config.threshold {
        Threshold::Fixed(t) => t,
        Threshold::Calibrate => {
            let scored = engine.score_users_unseen(&val_users, &store, 0.5)?;
            let pairs: Vec<(f64, u8)> = scored
                .iter()
                .zip(val_labels.iter())
                .map(|(s, &l)| (s.score, l))
                .collect();
            calibrate_threshold(&pairs)?
        }
    };

    // Snapshot the configuration with the decision threshold baked in, so
    // `predict` needs no calibration data.
    let mut snapshot = config.clone();
    snapshot.threshold = Threshold::Fixed(tau);
    let manifest = Manifest {
        backend: resolved.backend.id().to_owned(),
        disease,
        tau,
        corpus_sha256: resolved.corpus_sha256.clone(),
        ontology_sha256: sha256_hex(&resolved.ontology_bytes),
        config_sha256: resolved.config_hash.clone(),
        backend_params_sha256: backend.params_hash(),
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        best_val_f1: log.best_val_f1,
    };
    model::save(
        &resolved.out,
        &SavedModel {
            manifest: &manifest,
            store: &store,
            backend: &backend,
            ontology_bytes: &resolved.ontology_bytes,
            negatives: &resolved.negatives,
            train_config_text: &snapshot.to_kv().render(),
        },
    )?;

    println!(
        "trained {} epoch(s); best validation F1 {:.6} at epoch {}",
        log.epochs.len(),
        log.best_val_f1,
        log.best_epoch
    );
    println!("decision threshold {tau:.6}");
    println!("model saved to {}", resolved.out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

fn predict(
    model_dir: &Path,
    user_file: &Path,
    out: Option<&Path>,
    dump: Option<&Path>,
) -> Result<()> {
    let manifest = model::load_manifest(model_dir)?;
    let cfg = KvConfig::from_file(&model_dir.join(model::TRAIN_CONFIG_FILE))?;
    let config = TrainConfig::from_kv(&cfg)?;
    let onto_path = model_dir.join(model::ONTOLOGY_FILE);
    let onto_text =
        std::fs::read_to_string(&onto_path).map_err(|e| Error::read_io(&onto_path, e))?;
    let ontology = parse_ontology(&onto_text, &manifest.disease)?;
    let negatives = load_negatives(&model_dir.join(model::NEGATIVES_FILE))?;
    let corpus = load_corpus(user_file)?;
    let users: Vec<&UserRecord> = corpus.users.iter().collect();

    let backend_choice = BackendChoice::parse(&manifest.backend)?;
    let (tiny, mock);
    let backend: &dyn Backend = match backend_choice {
        BackendChoice::Tiny => {
            tiny = TinyBackend::load(&model_dir.join(model::BACKEND_FILE))?;
            if tiny.params_hash() != manifest.backend_params_sha256 {
                return Err(Error::Config(
                    "model directory is inconsistent: backend parameter hash \
                     does not match the manifest"
                        .into(),
                ));
            }
            &tiny
        }
        BackendChoice::Mock => {
            mock = MockBackend::new(&ontology);
            &mock
        }
    };
    let store = match backend_choice {
        BackendChoice::Tiny => Some(screen_core::PrefixStore::load(
            &model_dir.join(model::STORE_FILE),
        )?),
        BackendChoice::Mock => None,
    };

    let engine = Engine::new(backend, &ontology, &negatives, config.clone())?;
    if let Some(path) = dump {
        let tokenizer = WhitespaceTokenizer;
        let mut text = String::new();
        for user in &users {
            let prompts = user_prompts(
                user,
                &ontology,
                PromptVariant::RuleBased,
                &tokenizer,
                config.window,
                config.separator.as_deref(),
            )?;
            for (idx, prompt) in prompts.iter().enumerate() {
                text.push_str(&format!("# user {} window {idx}\n", user.user_id));
                text.push_str(&prompt.joined_text());
                text.push('\n');
            }
        }
        write_file(path, text)?;
    }
    let scored = engine.score_users(&users, store.as_ref(), manifest.tau)?;

    let mut csv = String::from("user_id,score,decision\n");
    for s in &scored {
        csv.push_str(&format!("{},{:.6},{}\n", s.user_id, s.score, s.decision));
    }
    match out {
        Some(path) => write_file(path, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ingest / validate-ontology / synth / report
// ---------------------------------------------------------------------------

fn ingest(corpus_path: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let corpus = load_corpus(corpus_path)?;
    let posts: usize = corpus.users.iter().map(|u| u.posts.len()).sum();
    println!("users: {}", corpus.users.len());
    println!("posts: {posts}");
    for disease in &corpus.disease_ids {
        let positive = corpus
            .users
            .iter()
            .filter(|u| u.label(disease) == Some(1))
            .count();
        let labeled = corpus
            .users
            .iter()
            .filter(|u| u.label(disease).is_some())
            .count();
        println!(
            "disease {disease}: {positive} positive / {} negative",
            labeled - positive
        );
    }
    if let Some(cfg_path) = config {
        let expected = KvConfig::from_file(cfg_path)?;
        let report = validate_stats(&corpus, &expected)?;
        print!("{report}");
        if !report.all_match() {
            return Err(Error::Config(
                "corpus statistics do not match the expectations".into(),
            ));
        }
    }
    if let Some(path) = out {
        write_corpus(&corpus, path)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn validate_ontology(path: &Path, negatives_path: Option<&Path>) -> Result<()> {
    let ontology = load_ontology(path)?;
    let negatives = match negatives_path {
        Some(p) => load_negatives(p)?,
        None => default_negatives(),
    };
    // Building an engine exercises every verbalizer constraint (empty
    // aspect classes, label overlap) without scoring anything.
    let backend = MockBackend::new(&ontology);
    Engine::new(&backend, &ontology, &negatives, TrainConfig::default())?;

    println!(
        "ontology `{}`: {} concepts",
        ontology.disease_id,
        ontology.concepts.len()
    );
    for aspect in Aspect::ALL {
        println!(
            "  {}: {} concept(s), relation `{}`",
            aspect.id(),
            ontology.concepts_of(aspect).count(),
            ontology.relation_for(aspect)
        );
    }
    println!("verbalizers ok ({} negative labels)", negatives.len());
    Ok(())
}

fn synth(spec_path: &Path, ontology: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let cfg = KvConfig::from_file(spec_path)?;
    let spec = SynthSpec::from_kv(&cfg)?;
    let onto_path = match ontology {
        Some(p) => p.to_path_buf(),
        None => PathBuf::from(cfg.require("ontology").map_err(|_| {
            Error::Config(
                "an ontology is required: pass --ontology or set `ontology` in the spec".into(),
            )
        })?),
    };
    let onto = load_ontology(&onto_path)?;
    let seed = match seed {
        Some(s) => s,
        None => cfg.get_parsed("seed", 0)?,
    };
    let (corpus, achieved) = generate_synthetic(&spec, &onto, seed)?;
    write_corpus(&corpus, out)?;
    println!("wrote {} ({} users)", out.display(), corpus.users.len());
    print!("{}", achieved.render());
    Ok(())
}

fn report(input: &Path, out: &Path) -> Result<()> {
    let reports = load_report(input)?;
    let written = emit_report(&reports, out)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
