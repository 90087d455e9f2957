//! The data files shipped in the repository must stay loadable and mutually
//! consistent: every ontology parses, covers all three aspects, and builds
//! clean verbalizers against the shipped negative lexicon.

use std::path::{Path, PathBuf};

use screen_core::ontology::{load_negatives, load_ontology};
use screen_core::{Aspect, Engine, MockBackend, TrainConfig};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../..")
        .canonicalize()
        .expect("the crate lives two levels below the repo root")
}

#[test]
fn every_shipped_ontology_loads_and_verbalizes() {
    let root = repo_root();
    let negatives =
        load_negatives(&root.join("ontologies/negatives.txt")).expect("negative lexicon loads");
    assert_eq!(negatives.len(), 5);

    for name in ["depression", "anorexia", "gambling", "selfharm"] {
        let path = root.join(format!("ontologies/{name}.onto"));
        let ontology = load_ontology(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(ontology.disease_id, name);
        for aspect in Aspect::ALL {
            assert!(
                ontology.concepts_of(aspect).count() >= 5,
                "{name} needs a usable {} class",
                aspect.id()
            );
        }
        // Engine construction builds every verbalizer, which rejects
        // label overlap and empty classes.
        let backend = MockBackend::new(&ontology);
        Engine::new(&backend, &ontology, &negatives, TrainConfig::default())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn depression_lexicon_covers_the_reference_concepts() {
    let root = repo_root();
    let ontology = load_ontology(&root.join("ontologies/depression.onto")).unwrap();
    let surfaces: Vec<&str> = ontology.concepts.iter().map(|c| c.surface.as_str()).collect();
    for required in [
        "anxiety",
        "dejected mood",
        "divorce",
        "domestic violence",
        "supportive psychotherapy",
        "abilify",
    ] {
        assert!(
            surfaces.contains(&required),
            "depression lexicon must keep `{required}`"
        );
    }
}

#[test]
fn example_configs_parse() {
    let root = repo_root();
    let run = screen_core::KvConfig::from_file(&root.join("configs/run.cfg")).unwrap();
    TrainConfig::from_kv(&run).expect("run.cfg training keys are valid");
    assert_eq!(run.get("backend"), Some("mock"));

    let synth = screen_core::KvConfig::from_file(&root.join("configs/synth.cfg")).unwrap();
    let spec = screen_core::corpus::SynthSpec::from_kv(&synth).expect("synth.cfg is a valid spec");
    assert_eq!(spec.users, 200);
    assert!((spec.positive_ratio - 1.0 / 7.0).abs() < 1e-6);
}
