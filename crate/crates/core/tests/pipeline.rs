use std::sync::Arc;

use convrec_core::llm::{Gateway, ScriptedBackend};
use convrec_core::record::load_dir;
use convrec_core::service::{
    load_corpus, BackendChoice, CorpusSource, IndexChoice, Service, ServiceConfig,
};
use convrec_core::simulator::{
    encode_retrieval, generate_retrieval, run_sessions, ControlSpec, RetrievalSpec, RunConfig,
    ScriptedCrs,
};
use convrec_core::trainer::{train_dual_encoder, TowerParams, TrainConfig};

fn rules_config() -> ServiceConfig {
    ServiceConfig {
        corpus: CorpusSource::Synthetic { n: 200, seed: 3 },
        backend: BackendChoice::Rules,
        candidate_count: 20,
        ..ServiceConfig::default()
    }
}

#[test]
fn simulator_drives_in_process_service() {
    let dir = tempfile::tempdir().unwrap();
    let service = Service::from_config(ServiceConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ..rules_config()
    })
    .unwrap();
    let gateway = Gateway::new(Arc::new(ScriptedBackend::new()));
    let config = RunConfig {
        n_sessions: 6,
        max_turns: 3,
        seed: 2,
        ..RunConfig::default()
    };
    let report = run_sessions(&service, &gateway, &ControlSpec::default(), &config);
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.corpus.len(), 6);
    assert!(report.corpus.records.iter().all(|r| r.turns.len() == 3));

    let stored = service.session_ids();
    assert_eq!(stored.len(), 6);
    assert!(stored
        .iter()
        .all(|id| service.session(id).unwrap().turns.len() == 3));

    let out = dir.path().join("export");
    assert_eq!(service.export_sessions(&out).unwrap(), 6);
    assert_eq!(load_dir(&out).unwrap().len(), 6);
}

#[test]
fn trained_towers_load_into_service() {
    let dir = tempfile::tempdir().unwrap();
    let config = rules_config();
    let corpus = Arc::new(load_corpus(&config.corpus, config.embedding_dim).unwrap());
    let crs = ScriptedCrs::new(corpus.clone());
    let gateway = Gateway::new(Arc::new(ScriptedBackend::new()));
    let spec = RetrievalSpec {
        n: 40,
        ..RetrievalSpec::default()
    };
    let examples = generate_retrieval(&corpus, &crs, &gateway, &spec, 1).unwrap();
    let encoded = encode_retrieval(&corpus, &examples);
    assert_eq!(encoded.len(), examples.len());
    let report = train_dual_encoder(
        &encoded,
        TowerParams::identity(corpus.dim()),
        &TrainConfig::default(),
    )
    .unwrap();
    assert!(report.final_loss() < report.initial_loss);
    let towers = dir.path().join("towers.txt");
    report.params.save(&towers).unwrap();

    let service = Service::from_config(ServiceConfig {
        towers: Some(towers),
        index: IndexChoice::Clustered,
        data_dir: Some(dir.path().join("data")),
        ..config
    })
    .unwrap();
    assert!(dir.path().join("data/index.json").exists());
    let id = service.create_session(None).unwrap();
    let reply = service
        .handle_user_message(&id, None, "show me some cooking videos")
        .unwrap();
    assert!(!reply.slate.is_empty());
    assert!(reply.slate.iter().all(|e| !e.explanation.is_empty()));
}

#[test]
fn mismatched_towers_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let towers = dir.path().join("small.txt");
    TowerParams::identity(8).save(&towers).unwrap();
    let err = Service::from_config(ServiceConfig {
        towers: Some(towers),
        ..rules_config()
    });
    assert!(err.is_err());
}
