use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use dcrnn::dconv::ConvMode;
use dcrnn::{DenseMatrix, Model, ModelConfig, WeightedDigraph};

fn dcrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcrnn"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn demo_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/demo.toml")
}

fn core_fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

/// `a→b` 100, `b→c` 200, `a→c` 1000, `c→a` 0.
fn three_node_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let d = dir.join("d.csv");
    let n = dir.join("n.txt");
    std::fs::write(&d, "from,to,distance\na,b,100\nb,c,200\na,c,1000\nc,a,0\n").unwrap();
    std::fs::write(&n, "a\nb\nc\n").unwrap();
    (d, n)
}

#[test]
fn build_graph_counts_thresholded_pairs() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, n) = three_node_fixture(tmp.path());
    let out = tmp.path().join("g.txt");
    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&d),
        "--nodes",
        s(&n),
        "--kappa",
        "500",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("nodes=3\n"), "{text}");
    assert!(text.contains("edges=3\n"), "{text}");
    let g = WeightedDigraph::load(&out).unwrap();
    assert_eq!(g.weights().nnz(), 3);
    assert_eq!(g.weights().to_dense().get(2, 0), 1.0);

    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&d),
        "--nodes",
        s(&n),
        "--kappa",
        "0",
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("edges=1\n"));
}

#[test]
fn build_graph_input_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (d, n) = three_node_fixture(tmp.path());
    let out = tmp.path().join("g.txt");
    let missing = tmp.path().join("nope.csv");
    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&missing),
        "--nodes",
        s(&n),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.csv"), "{}", stderr(&o));

    std::fs::write(&d, "from,to,distance\na,b,100\nb,c,far\n").unwrap();
    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&d),
        "--nodes",
        s(&n),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("d.csv:3:"), "{}", stderr(&o));

    std::fs::write(&d, "from,to,distance\na,zz,100\n").unwrap();
    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&d),
        "--nodes",
        s(&n),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn eval_of_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("series.csv");
    std::fs::write(
        &path,
        "timestamp,a,b\n2024-01-01T00:00:00,60,55.5\n2024-01-01T00:05:00,61,\n2024-01-01T00:10:00,59.25,40\n",
    )
    .unwrap();
    let o = dcrnn(&["eval", "--truth", s(&path), "--prediction", s(&path)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "horizon_minutes,metric,value");
    assert_eq!(lines.len(), 1 + 3 * 3);
    assert_eq!(lines[1], "5,MAE,0.0000");
    for l in &lines[1..] {
        let v = l.rsplit(',').next().unwrap().trim_end_matches('%');
        assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{l}");
    }
}

#[test]
fn eval_rejects_unknown_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = tmp.path().join("t.csv");
    let pred = tmp.path().join("p.csv");
    std::fs::write(&truth, "timestamp,a\n2024-01-01T00:00:00,60\n").unwrap();
    std::fs::write(&pred, "timestamp,a\n2024-01-01T00:05:00,60\n").unwrap();
    let o = dcrnn(&["eval", "--truth", s(&truth), "--prediction", s(&pred)]);
    assert_eq!(o.status.code(), Some(2));
}

/// Hub `h` linked both ways to `r0..r4`, plus a tail `r0 → t1 → t2`.
fn star_graph() -> WeightedDigraph {
    let n = 8;
    let mut w = DenseMatrix::zeros(n, n);
    for leaf in 1..=5 {
        w.set(0, leaf, 1.0);
        w.set(leaf, 0, 1.0);
    }
    w.set(1, 6, 1.0);
    w.set(6, 7, 1.0);
    let g = WeightedDigraph::from_dense(&w).unwrap();
    let ids = ["h", "r0", "r1", "r2", "r3", "r4", "t1", "t2"]
        .map(String::from)
        .to_vec();
    WeightedDigraph::from_weights(ids, g.weights().clone()).unwrap()
}

fn parse_weights(text: &str) -> Vec<(String, f64)> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("node_id,weight"));
    lines
        .map(|l| {
            let (id, v) = l.split_once(',').unwrap();
            (id.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn star_graph_filter_stays_within_one_hop() {
    let tmp = tempfile::tempdir().unwrap();
    let g = star_graph();
    let graph = tmp.path().join("star.txt");
    g.save(&graph).unwrap();
    for mode in ["dcrnn", "dcnn"] {
        let cfg = ModelConfig {
            layers: 1,
            units: 4,
            k_max: 2,
            conv_mode: ConvMode::Bidirectional,
            temporal_mode: mode.parse().unwrap(),
            ..ModelConfig::default()
        };
        let ckpt = tmp.path().join(format!("{mode}.ckpt"));
        Model::new(cfg, &g, 3)
            .unwrap()
            .to_checkpoint(None)
            .save(&ckpt)
            .unwrap();
        for (center, hop) in [
            ("h", &["h", "r0", "r1", "r2", "r3", "r4"][..]),
            ("r0", &["r0", "h", "t1"][..]),
        ] {
            let o = dcrnn(&[
                "export-filter",
                "--checkpoint",
                s(&ckpt),
                "--graph",
                s(&graph),
                "--node",
                center,
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
            let weights = parse_weights(&stdout(&o));
            assert_eq!(weights.len(), 8);
            for (id, v) in &weights {
                if hop.contains(&id.as_str()) {
                    continue;
                }
                assert_eq!(*v, 0.0, "{mode}: {id} is beyond one hop of {center}");
            }
            let at_center = weights.iter().find(|(id, _)| id == center).unwrap().1;
            assert_ne!(at_center, 0.0);
        }
    }
}

#[test]
fn export_filter_unknown_node_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let g = star_graph();
    let graph = tmp.path().join("star.txt");
    g.save(&graph).unwrap();
    let ckpt = tmp.path().join("m.ckpt");
    let cfg = ModelConfig {
        layers: 1,
        units: 2,
        k_max: 2,
        ..ModelConfig::default()
    };
    Model::new(cfg, &g, 3)
        .unwrap()
        .to_checkpoint(None)
        .save(&ckpt)
        .unwrap();
    let o = dcrnn(&[
        "export-filter",
        "--checkpoint",
        s(&ckpt),
        "--graph",
        s(&graph),
        "--node",
        "zz",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = dcrnn(&[
        "export-filter",
        "--checkpoint",
        s(&ckpt),
        "--graph",
        s(&graph),
        "--node",
        "h",
        "--layer",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn checkpoint_config_mismatch_exits_3_with_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let g = WeightedDigraph::load(&core_fixtures().join("graph.txt")).unwrap();
    let cfg = ModelConfig {
        layers: 1,
        units: 4,
        k_max: 2,
        ..ModelConfig::default()
    };
    let ckpt = tmp.path().join("m.ckpt");
    Model::new(cfg, &g, 3)
        .unwrap()
        .to_checkpoint(None)
        .save(&ckpt)
        .unwrap();
    let o = dcrnn(&["eval", "--config", s(&demo_config()), "--checkpoint", s(&ckpt)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("model.units: config 16, checkpoint 4"),
        "{}",
        stderr(&o)
    );

    let other = WeightedDigraph::from_dense(&DenseMatrix::from_rows(&[
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [1.0, 0.0, 0.0],
    ]))
    .unwrap();
    let graph = tmp.path().join("ring.txt");
    other.save(&graph).unwrap();
    let first = other.node_ids()[0].clone();
    let o = dcrnn(&[
        "export-filter",
        "--checkpoint",
        s(&ckpt),
        "--graph",
        s(&graph),
        "--node",
        &first,
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"not a checkpoint").unwrap();
    let o = dcrnn(&["eval", "--config", s(&demo_config()), "--checkpoint", s(&junk)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn bad_configs_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.toml");
    std::fs::write(&cfg, "[train\nepochs = 1\n").unwrap();
    let o = dcrnn(&["train", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(3));

    let o = dcrnn(&["train", "--config", s(&demo_config()), "--set", "train.epochz=1"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("epochz"), "{}", stderr(&o));

    let o = dcrnn(&[
        "train",
        "--config",
        s(&demo_config()),
        "--set",
        "model.conv_mode=spectral",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn constant_series_is_a_numeric_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let series = tmp.path().join("flat.csv");
    let mut text = String::from("timestamp,s0,s1,s2,s3,s4,s5,s6,s7\n");
    for t in 0..200 {
        text.push_str(&dcrnn::data::format_timestamp(t * 300));
        text.push_str(&",50".repeat(8));
        text.push('\n');
    }
    std::fs::write(&series, text).unwrap();
    let o = dcrnn(&[
        "train",
        "--config",
        s(&demo_config()),
        "--set",
        &format!("data.series=\"{}\"", s(&series)),
        "--output-dir",
        s(&tmp.path().join("run")),
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn full_pipeline_on_bundled_fixture() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let fx = core_fixtures();
    let graph = dir.join("graph.txt");
    let series = dir.join("series.csv");

    let o = dcrnn(&[
        "build-graph",
        "--distances",
        s(&fx.join("distances.csv")),
        "--nodes",
        s(&fx.join("nodes.txt")),
        "--kappa",
        "3000",
        "--out",
        s(&graph),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("nodes=8\n"));

    let o = dcrnn(&[
        "synth",
        "--graph",
        s(&graph),
        "--steps",
        "2000",
        "--seed",
        "7",
        "--out",
        s(&series),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        std::fs::read(&series).unwrap(),
        std::fs::read(fx.join("series.csv")).unwrap()
    );

    let config = dir.join("run.toml");
    let demo = std::fs::read_to_string(demo_config()).unwrap();
    let local = demo
        .replace("../../core/fixtures/series.csv", "series.csv")
        .replace("../../core/fixtures/graph.txt", "graph.txt")
        .replace("../../../target/demo-run", "out");
    std::fs::write(&config, local).unwrap();
    let o = dcrnn(&["train", "--config", s(&config), "--set", "train.epochs=4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace = std::fs::read_to_string(dir.join("out/train_report.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("epoch,train_loss,val_loss,lr,epsilon"));
    assert_eq!(trace.lines().count(), 5);
    assert_eq!(stdout(&o), trace);
    let ckpt = dir.join("out/best.ckpt");

    let o = dcrnn(&["eval", "--config", s(&config), "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    let minutes: Vec<&str> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(minutes, ["15", "15", "15", "30", "30", "30", "60", "60", "60"]);
    let mae15: f64 = report
        .lines()
        .nth(1)
        .unwrap()
        .rsplit(',')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(mae15 > 0.0 && mae15 < 10.0, "{report}");

    let pred = dir.join("pred.csv");
    let o = dcrnn(&[
        "predict",
        "--config",
        s(&config),
        "--checkpoint",
        s(&ckpt),
        "--at",
        "2024-01-07T21:50:00",
        "--out",
        s(&pred),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let by_step = dcrnn(&[
        "predict",
        "--config",
        s(&config),
        "--checkpoint",
        s(&ckpt),
        "--at",
        "1990",
    ]);
    assert_eq!(stdout(&by_step).as_bytes(), std::fs::read(&pred).unwrap());
    let o = dcrnn(&[
        "eval",
        "--truth",
        s(&series),
        "--prediction",
        s(&pred),
        "--horizons",
        "1,10",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 7);

    let o = dcrnn(&[
        "predict",
        "--config",
        s(&config),
        "--checkpoint",
        s(&ckpt),
        "--at",
        "2000",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o)
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("2024-01-07T22:40:00,"));

    let o = dcrnn(&[
        "export-filter",
        "--checkpoint",
        s(&ckpt),
        "--config",
        s(&config),
        "--node",
        "s3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 9);

    let secs = started.elapsed().as_secs_f64();
    assert!(secs < 300.0, "pipeline took {secs:.1}s");
}
