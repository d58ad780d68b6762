use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use prosodiv::datamodel::{enumerate_pairs, read_ratings, EvalGroup, Metric, PairKey, PairScoreRecord};
use prosodiv::par;
use prosodiv::pipeline::{
    ablate, ablation_cell, benchmark, correlate, extract_check, rtf_for_metric, score_groups, write_ablation,
    ScoreConfig, ScoreOutcome,
};
use prosodiv::report::build_report;
use prosodiv::stats::DurationBasis;
use prosodiv::dswed::EditWeights;
use prosodiv::synth::{write_fixture, Fixture, FixtureSpec, SystemSpec};
use prosodiv::tokenizer::{
    tokenize_groups, train_from_dir, vad_path, KMeansConfig, SweepCell, SweepSpec, TrainOptions,
};

fn fixture(root: &Path, systems: &[(&str, f64)], prompts: usize) -> Fixture {
    let spec = FixtureSpec {
        systems: systems
            .iter()
            .map(|&(name, diversity)| SystemSpec {
                name: name.into(),
                diversity,
            })
            .collect(),
        prompts,
        samples_per_group: 5,
        ..Default::default()
    };
    write_fixture(root, &spec).unwrap()
}

fn train_opts(k: usize) -> TrainOptions {
    TrainOptions {
        kmeans: KMeansConfig {
            k,
            ..Default::default()
        },
        ..Default::default()
    }
}

fn tokenize(fx: &Fixture, k: usize) -> PathBuf {
    let model = train_from_dir(&fx.emb_dir, &train_opts(k)).unwrap();
    let tokens = fx.root.join(format!("tokens_{k}"));
    let report = tokenize_groups(&fx.groups, &fx.emb_dir, &model, &tokens);
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    tokens
}

fn score(fx: &Fixture, metrics: &[Metric], tokens: Option<PathBuf>, workers: usize) -> ScoreOutcome {
    let cfg = ScoreConfig {
        metrics: metrics.to_vec(),
        tokens_dir: tokens,
        workers,
        ..Default::default()
    };
    score_groups(&fx.groups, &cfg).unwrap()
}

fn ratings_for(fx: &Fixture) -> prosodiv::datamodel::RatingTable {
    let known: HashSet<PairKey> = fx.groups.iter().flat_map(enumerate_pairs).collect();
    read_ratings(&fx.ratings_path, &known).unwrap()
}

fn with_ratings(fx: &Fixture, mut records: Vec<PairScoreRecord>) -> Vec<PairScoreRecord> {
    prosodiv::datamodel::attach_ratings(&mut records, &ratings_for(fx));
    records
}

#[test]
fn dswed_only_and_all_metrics_row_counts() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    let tokens = tokenize(&fx, 8);

    let only = score(&fx, &[Metric::Dswed], Some(tokens.clone()), 1);
    assert_eq!(only.metrics, vec![Metric::Dswed]);
    assert_eq!(only.rows().len(), 10);
    assert!(!only.is_partial());

    let all = score(&fx, &Metric::OBJECTIVE, Some(tokens), 1);
    let rows = all.rows();
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r.value.is_finite() && r.value >= 0.0));
}

#[test]
fn acoustic_only_needs_no_tokens() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    let out = score(&fx, &[Metric::Mcd, Metric::LogF0Rmse], None, 1);
    assert_eq!(out.metrics, vec![Metric::LogF0Rmse, Metric::Mcd]);
    assert_eq!(out.rows().len(), 20);
}

#[test]
fn corrupt_wav_drops_only_its_acoustic_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    let tokens = tokenize(&fx, 8);
    let victim = &fx.groups[0].samples[2];
    fs::write(&victim.audio_path, b"RIFF not really a wave file").unwrap();

    let out = score(&fx, &Metric::OBJECTIVE, Some(tokens), 2);
    assert!(out.is_partial());
    // the broken sample takes part in 4 of 10 pairs, for two acoustic metrics
    assert_eq!(out.errors.len(), 8);
    assert!(out.errors.iter().all(|e| e.metric != Metric::Dswed));
    assert!(out
        .errors
        .iter()
        .all(|e| e.sample_id_a == victim.sample_id || e.sample_id_b == victim.sample_id));
    let rows = out.rows();
    assert_eq!(rows.iter().filter(|r| r.metric == Metric::Dswed).count(), 10);
    assert_eq!(rows.len(), 30 - 8);
}

#[test]
fn scores_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("a", 0.3), ("b", 0.7)], 2);
    let tokens = tokenize(&fx, 10);
    let one = score(&fx, &Metric::OBJECTIVE, Some(tokens.clone()), 1).rows();
    let many = score(&fx, &Metric::OBJECTIVE, Some(tokens), 6).rows();
    assert_eq!(one.len(), 4 * 10 * 3);
    assert_eq!(one, many);
}

#[test]
fn livelier_system_scores_more_diverse() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("flat", 0.05), ("lively", 0.9)], 3);
    let tokens = tokenize(&fx, 16);
    let out = score(&fx, &Metric::OBJECTIVE, Some(tokens), 0);
    let bench = benchmark(&fx.groups, &out.records, &Metric::OBJECTIVE).unwrap();
    assert_eq!(bench.systems, vec!["flat".to_string(), "lively".to_string()]);
    for mb in &bench.metrics {
        let flat = mb.averages[0].unwrap().mean;
        let lively = mb.averages[1].unwrap().mean;
        assert!(lively > flat, "{:?}: flat {flat} lively {lively}", mb.metric);
        let borda = mb.borda.as_ref().unwrap();
        assert!(borda.mean_for("lively").unwrap() > borda.mean_for("flat").unwrap());
    }
}

#[test]
fn benchmark_rejects_empty_scores() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    assert!(benchmark(&fx.groups, &[], &Metric::OBJECTIVE).is_err());
    assert!(build_report(&fx.groups, &[], 0.05).is_err());
}

#[test]
fn report_sections_follow_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("a", 0.2), ("b", 0.8)], 2);
    let tokens = tokenize(&fx, 10);
    let out = score(&fx, &Metric::OBJECTIVE, Some(tokens), 0);

    let bare = build_report(&fx.groups, &out.records, 0.05).unwrap();
    assert!(bare.correlations.is_empty());
    let md = bare.to_markdown();
    assert!(md.contains("## Diversity benchmark"));
    assert!(!md.contains("## Correlation"));

    let rated = build_report(&fx.groups, &with_ratings(&fx, out.records), 0.05).unwrap();
    // four metrics give six unordered pairs
    assert_eq!(rated.correlations.len(), 6);
    let md = rated.to_markdown();
    assert!(md.contains("## Correlation"));
    assert!(md.contains("| PMOS | - |"));
    let json: serde_json::Value = serde_json::from_str(&rated.to_json()).unwrap();
    assert_eq!(json["correlations"].as_array().unwrap().len(), 6);
}

/// Lay the fixture embeddings out as `<root>/<model>_<layer>/`.
fn ablation_layout(fx: &Fixture) -> (PathBuf, PathBuf, PathBuf) {
    let emb_root = fx.root.join("emb_root");
    fs::create_dir_all(&emb_root).unwrap();
    fs::rename(&fx.emb_dir, emb_root.join("synthetic_0")).unwrap();
    (emb_root, fx.root.join("models"), fx.root.join("sweep"))
}

#[test]
fn single_cell_ablation_matches_manual_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let mut fx = fixture(dir.path(), &[("sys", 0.6)], 3);
    let (emb_root, model_root, out_root) = ablation_layout(&fx);
    let spec = SweepSpec {
        embedding_root: emb_root.clone(),
        model_root,
        out_root,
        models: vec!["synthetic".into()],
        layers: vec![0],
        ks: vec![12],
        train: Some(train_opts(12)),
    };
    let ratings = ratings_for(&fx);
    let grid = ablate(&fx.groups, &spec, &ratings, EditWeights::default(), 0.05);
    assert!(grid.skipped.is_empty(), "{:?}", grid.skipped);
    assert_eq!(grid.rows.len(), 1);

    fx.emb_dir = emb_root.join("synthetic_0");
    let tokens = tokenize(&fx, 12);
    let out = score(&fx, &[Metric::Dswed], Some(tokens), 1);
    let manual = correlate(&with_ratings(&fx, out.records), Metric::Dswed, Metric::Pmos, 0.05).unwrap();
    let row = &grid.rows[0];
    assert_eq!(row.r_bar.to_bits(), manual.aggregate.r_bar.to_bits());
    assert_eq!(row.n_groups, 3);

    let cell = SweepCell {
        model: "synthetic".into(),
        layer: 0,
        k: 12,
    };
    let again = ablation_cell(&fx.groups, &cell, &spec.tokens_dir(&cell), &ratings, EditWeights::default(), 0.05)
        .unwrap();
    assert_eq!(&again, row);
}

#[test]
fn ablation_grid_skips_missing_cells() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.6)], 3);
    let (emb_root, model_root, out_root) = ablation_layout(&fx);
    let spec = SweepSpec {
        embedding_root: emb_root,
        model_root,
        out_root,
        models: vec!["synthetic".into(), "absent".into()],
        layers: vec![0, 9],
        ks: vec![6, 10],
        train: Some(train_opts(6)),
    };
    let grid = ablate(&fx.groups, &spec, &ratings_for(&fx), EditWeights::default(), 0.05);
    assert_eq!(grid.rows.len(), 2);
    assert_eq!(grid.rows.len() + grid.skipped.len(), spec.cells().len());
    assert_eq!(grid.rows[0].k, 6);
    assert_eq!(grid.rows[1].k, 10);

    let csv = fx.root.join("ablation.csv");
    write_ablation(&csv, &grid.rows).unwrap();
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("model,layer,k,r_bar,ci_low,ci_high,p_value,n_groups"));

    write_ablation(&csv, &[]).unwrap();
    assert_eq!(fs::read_to_string(&csv).unwrap().lines().count(), 1);
}

#[test]
fn extract_check_flags_bad_timestamps() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    let clean = extract_check(&fx.groups, &fx.emb_dir, 2.0);
    assert_eq!(clean.rows.len(), 5);
    assert_eq!(clean.problems(), 0, "{:?}", clean.rows);

    let g: &EvalGroup = &fx.groups[0];
    let sample = &g.samples[1].sample_id;
    let vp = vad_path(&fx.emb_dir, &g.group_id, sample);
    fs::write(
        &vp,
        format!(r#"{{"sample_id":"{sample}","t_start_s":0.0,"t_end_s":9.0,"all_silence":false}}"#),
    )
    .unwrap();
    let bad = extract_check(&fx.groups, &fx.emb_dir, 2.0);
    assert_eq!(bad.problems(), 1);
    let row = bad.rows.iter().find(|r| r.problem.is_some()).unwrap();
    assert_eq!(&row.sample_id, sample);
}

#[test]
fn rtf_times_every_pair_but_the_warmup() {
    let dir = tempfile::tempdir().unwrap();
    let fx = fixture(dir.path(), &[("sys", 0.5)], 1);
    let tokens = tokenize(&fx, 8);
    let cfg = ScoreConfig {
        tokens_dir: Some(tokens),
        ..Default::default()
    };
    for metric in [Metric::Dswed, Metric::Mcd] {
        let r = rtf_for_metric(&fx.groups, metric, &cfg, DurationBasis::SumOfPairMeans).unwrap();
        assert_eq!(r.pairs_timed, 9);
        assert!(r.rtf > 0.0 && r.rtf < 1.0, "{metric:?} rtf {}", r.rtf);
    }
    assert!(rtf_for_metric(&fx.groups, Metric::Pmos, &cfg, DurationBasis::SumOfPairMeans).is_err());
    let no_tokens = ScoreConfig::default();
    assert!(rtf_for_metric(&fx.groups, Metric::Dswed, &no_tokens, DurationBasis::SumOfPairMeans).is_err());
}

#[test]
fn worker_pool_is_scoped() {
    assert_eq!(par::with_workers(3, || 2 + 2), 4);
}
