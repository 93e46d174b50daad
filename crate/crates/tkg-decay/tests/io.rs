use std::fs;
use std::path::{Path, PathBuf};

use tkg_decay::checkpoint::{self, Checkpoint};
use tkg_decay::core::dataset::TimeFormat;
use tkg_decay::core::model::{Model, ModelConfig};
use tkg_decay::report;
use tkg_decay::tsv::{self, read_quadruples};
use tkg_decay::Error;

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn three_line_fixture_counts() {
    let ing = read_quadruples(&[fixture("three_lines.tsv")]).unwrap();
    let ds = &ing.dataset;
    assert_eq!(ds.len(), 3);
    assert_eq!(ds.vocab.num_entities(), 2);
    assert_eq!(ds.vocab.num_relations(), 1);
    assert_eq!(ds.timelines.len(), 2);
    assert_eq!(ds.vocab.time_format, TimeFormat::Iso);
    assert_eq!(ds.time_span(), 8);
}

#[test]
fn comments_blank_lines_and_extra_columns() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "a.tsv", "# header\n\na\tr\tb\t3\textra\r\n  \nb\tr\ta\t5\n");
    let ds = read_quadruples(&[p]).unwrap().dataset;
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.vocab.time_format, TimeFormat::Integer);
    assert_eq!(ds.vocab.epoch, 3);
}

#[test]
fn parse_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("a\tr\tb\t1\na\tr\n", 2),
        ("a\tr\tb\t1\n# c\na\tr\tb\tnot-a-date\n", 3),
        ("a\tr\tb\t2014-01-01\na\tr\tb\t7\n", 2),
        ("a\t\tb\t1\n", 1),
    ];
    for (text, line) in cases {
        let p = write(dir.path(), "bad.tsv", text);
        match read_quadruples(&[p]) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{text:?}"),
            other => panic!("{text:?}: {other:?}"),
        }
    }
    let empty = write(dir.path(), "empty.tsv", "# nothing\n\n");
    assert!(matches!(read_quadruples(&[empty]), Err(Error::Format { .. })));
    let missing = dir.path().join("nope.tsv");
    let err = read_quadruples(&[missing]).unwrap_err();
    assert_eq!(err.exit_code(), tkg_decay::exit::IO);
}

#[test]
fn files_share_one_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "train.tsv", "x\tr\ty\t10\ny\tr\tz\t12\n");
    let b = write(dir.path(), "test.tsv", "z\ts\tx\t4\n");
    let ing = read_quadruples(&[a, b]).unwrap();
    assert_eq!(ing.files[0].range, 0..2);
    assert_eq!(ing.files[1].range, 2..3);
    assert_eq!(ing.dataset.vocab.num_entities(), 3);
    assert_eq!(ing.dataset.vocab.epoch, 4);
    assert_eq!(tsv::format_quadruple(&ing.dataset, &ing.dataset.quadruples[2]), "z\ts\tx\t4");
    let mixed = write(dir.path(), "iso.tsv", "x\tr\ty\t2014-01-01\n");
    assert!(read_quadruples(&[ing.files[0].path.clone(), mixed]).is_err());
}

#[test]
fn export_keeps_order_and_writes_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let ing = read_quadruples(&[fixture("icews_sample.tsv")]).unwrap();
    let ds = &ing.dataset;
    let keep: Vec<bool> = (0..ds.len()).map(|i| i % 3 != 0).collect();
    let out = dir.path().join("out/kept.tsv");
    let stats = tsv::export_filtered(&out, &fixture("icews_sample.tsv"), ds, 0..ds.len(), &keep).unwrap();
    let src: Vec<String> = fs::read_to_string(fixture("icews_sample.tsv"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    let want: Vec<&String> = src.iter().enumerate().filter(|(i, _)| i % 3 != 0).map(|(_, l)| l).collect();
    let got = fs::read_to_string(&out).unwrap();
    let got: Vec<&str> = got.lines().collect();
    assert_eq!(got.len(), want.len());
    assert!(got.iter().zip(&want).all(|(a, b)| a == b));
    assert_eq!(stats.quadruples_in, 30);
    assert_eq!(stats.quadruples_out, 20);
    assert_eq!(stats.removed, 10);
    let side: serde_json::Value = serde_json::from_str(&fs::read_to_string(tsv::stats_path(&out)).unwrap()).unwrap();
    assert_eq!(side["quadruples_out"], 20);
    assert!(side["interval_histogram"].is_array());

    // all-false mask still writes an (empty) file
    let none = dir.path().join("none.tsv");
    tsv::export_filtered(&none, &fixture("icews_sample.tsv"), ds, 0..ds.len(), &vec![false; ds.len()]).unwrap();
    assert_eq!(fs::read_to_string(none).unwrap(), "");
}

fn small_model() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    cfg.attention = tkg_decay::core::attention::AttentionConfig::with_dims(4, 4);
    cfg.encoder.d3 = 4;
    cfg.encoder.hidden = vec![4];
    cfg
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = read_quadruples(&[fixture("icews_sample.tsv")]).unwrap().dataset;
    let model = Model::init(small_model(), ds.vocab.num_entities(), ds.vocab.num_relations(), 3).unwrap();
    let path = dir.path().join("params.json");
    checkpoint::save(&path, &model, &ds.vocab).unwrap();
    let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(raw["format"], "tkg-decay-params");
    assert_eq!(raw["version"], 1);
    assert_eq!(raw["params"]["entity"]["shape"][1], 4);

    let back = checkpoint::load(&path, &ds.vocab).unwrap();
    for ((_, n1, a), (_, n2, b)) in model.store.iter().zip(back.store.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a.data(), b.data());
    }
    assert_eq!(model.predict(&ds).unwrap(), back.predict(&ds).unwrap());
}

#[test]
fn checkpoint_rows_follow_names() {
    let dir = tempfile::tempdir().unwrap();
    let a = write(dir.path(), "a.tsv", "x\tr\ty\t1\ny\ts\tz\t2\n");
    let b = write(dir.path(), "b.tsv", "z\ts\ty\t2\ny\tr\tx\t1\n");
    let da = read_quadruples(&[a]).unwrap().dataset;
    let db = read_quadruples(&[b]).unwrap().dataset;
    let model = Model::init(small_model(), 3, 2, 0).unwrap();
    let ck = Checkpoint::from_model(&model, &da.vocab);
    let moved = ck.clone().into_model(&db.vocab).unwrap();
    let ent_a = model.store.by_name("entity").unwrap();
    let ent_b = moved.store.by_name("entity").unwrap();
    for name in ["x", "y", "z"] {
        let ia = da.vocab.entity_id(name).unwrap().index();
        let ib = db.vocab.entity_id(name).unwrap().index();
        assert_eq!(ent_a.row(ia), ent_b.row(ib));
    }
    let c = write(dir.path(), "c.tsv", "x\tr\tw\t1\n");
    let dc = read_quadruples(&[c]).unwrap().dataset;
    assert!(ck.into_model(&dc.vocab).is_err());
}

#[test]
fn truth_sidecar_round_trip() {
    use tkg_decay::core::synth::{generate, SynthSpec};
    let dir = tempfile::tempdir().unwrap();
    let out = generate(&SynthSpec {
        n_fact_keys: 80,
        horizon: 300,
        ..SynthSpec::default()
    })
    .unwrap();
    let data = dir.path().join("d.tsv");
    tsv::write_quadruples(&data, &out.dataset, 0..out.dataset.len()).unwrap();
    let truth = write(dir.path(), "t.tsv", &report::truth_tsv(&out.dataset, &out.truth));
    let ds = read_quadruples(&[data]).unwrap().dataset;
    let back = report::read_truth(&truth, &ds).unwrap();
    assert_eq!(back.stale, out.truth.stale);
    assert_eq!(back.classes.len(), out.truth.classes.len());
}
