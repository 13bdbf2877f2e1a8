use vrrag::evaluation::{run_benchmark, PipelineConfig};
use vrrag::simlab::{generate_instance, SimConfig, SimEncoder};

fn mrr1(sim: &SimConfig, rerank: bool) -> f64 {
    let inst = generate_instance(sim).unwrap();
    let mut cfg = PipelineConfig::new(sim.encoder_ids(), &sim.intra_encoder_id);
    cfg.rerank_enabled = rerank;
    run_benchmark(&inst.dataset, &cfg, None, 2).unwrap().report.aggregate.mrr[&1]
}

#[test]
fn query_noise_never_helps() {
    for rerank in [false, true] {
        let sweep: Vec<f64> =
            [0.4, 0.8, 1.2].iter().map(|&s| mrr1(&SimConfig { query_sigma: s, ..SimConfig::pinned() }, rerank)).collect();
        assert!(sweep.windows(2).all(|w| w[0] >= w[1]), "rerank={rerank}: {sweep:?}");
    }
}

#[test]
fn noiseless_instance_is_solved_by_any_encoder_subset() {
    let mut sim = SimConfig { n_species: 50, n_queries: 60, query_sigma: 0.0, anchor_sigma: 0.0, ..SimConfig::pinned() };
    for e in sim.encoders.iter_mut() {
        e.text_sigma = 0.0;
    }
    let inst = generate_instance(&sim).unwrap();
    for subset in [vec!["enc-a"], vec!["enc-b", "enc-c"], vec!["enc-a", "enc-b", "enc-c"]] {
        for rerank in [false, true] {
            let mut cfg = PipelineConfig::new(subset.clone(), "dino");
            cfg.rerank_enabled = rerank;
            let report = run_benchmark(&inst.dataset, &cfg, None, 1).unwrap().report.aggregate;
            assert_eq!(report.mrr[&1], 1.0, "{subset:?} rerank={rerank}");
        }
    }
}

#[test]
fn written_instance_loads_back_identically() {
    let sim = SimConfig {
        n_species: 30,
        n_queries: 10,
        latent_dim: 12,
        encoders: vec![SimEncoder { encoder_id: "solo".into(), text_sigma: 0.5 }],
        ..SimConfig::pinned()
    };
    let inst = generate_instance(&sim).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = inst.write(dir.path()).unwrap();
    for (enc, path) in &files.chunk_embeddings {
        let seg = vrrag::embedding::read_embeddings(dir.path().join(path), enc).unwrap();
        assert_eq!(&seg, inst.dataset.chunk_store.segment(enc).unwrap());
    }
    let manifest = vrrag::evaluation::read_manifest(dir.path().join(&files.manifest)).unwrap();
    assert_eq!(manifest, inst.dataset.manifest);
}
