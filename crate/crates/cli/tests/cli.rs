use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tagrel_core::collection::{generate_collection, load_collection};
use tagrel_core::estimators::neighbor_vote;
use tagrel_core::fusion::borda_rank;
use tagrel_core::neighbors::{knn_from, Space};
use tagrel_core::pipeline::{Preset, Scorer, ScoringConfig};
use tagrel_core::{Collection, RunFile, ScoreTable, SyntheticConfig};

fn tagrel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tagrel"))
        .args(args)
        .output()
        .expect("spawn tagrel")
}

fn ok(args: &[&str]) -> Output {
    let out = tagrel(args);
    assert!(
        out.status.success(),
        "tagrel {} failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small three-way split: source 240, train 120, test 120.
fn synth(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    ok(&[
        "synth",
        "--out",
        s(&data),
        "--n-images",
        "480",
        "--n-tags",
        "6",
        "--seed",
        "5",
        "--partitions",
        "source=240,train=120,test=120",
    ]);
    data
}

fn load(dir: &Path, feats: &[&str]) -> Collection {
    let paths: Vec<PathBuf> = feats.iter().map(|f| dir.join(format!("{f}.feat"))).collect();
    load_collection(&dir.join("tags.tsv"), &paths).unwrap()
}

fn score(data: &Path, out: &Path, preset: &str, extra: &[&str]) -> RunFile {
    let (src, tgt) = (data.join("source"), data.join("test"));
    let mut args = vec![
        "score",
        "--source",
        s(&src),
        "--target",
        s(&tgt),
        "--features",
        "COLOR,CSLBP",
        "--k",
        "15",
        "--preset",
        preset,
        "--out",
        s(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
    RunFile::read(out).unwrap()
}

#[test]
fn synth_is_deterministic_and_round_trips() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        ok(&["synth", "--out", s(d), "--n-images", "150", "--n-tags", "5", "--seed", "9"]);
    }
    for f in ["tags.tsv", "COLOR.feat", "CSLBP.feat", "qrels.tsv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }

    let (mem, _) = generate_collection(&SyntheticConfig::with_blocks(150, 5, &["COLOR", "CSLBP"], 8, 9)).unwrap();
    let disk = load(a.path(), &["COLOR", "CSLBP"]);
    assert_eq!(mem.images(), disk.images());
    for f in ["COLOR", "CSLBP"] {
        let (x, y) = (mem.feature(f).unwrap(), disk.feature(f).unwrap());
        for i in 0..mem.len() {
            let bits = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(x.row(i)), bits(y.row(i)));
        }
    }
}

#[test]
fn synth_refuses_bad_settings() {
    let d = tempfile::tempdir().unwrap();
    let out = tagrel(&["synth", "--out", s(d.path()), "--q-correct", "0.2", "--q-incorrect", "0.5"]);
    assert!(!out.status.success());
    let out = tagrel(&["synth", "--out", s(d.path()), "--n-images", "100", "--partitions", "a=50,b=40"]);
    assert!(!out.status.success());
}

#[test]
fn tagrel_run_matches_neighbor_votes() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let run = score(&data, &d.path().join("r.run"), "TagRel-COLOR", &[]);
    let source = load(&data.join("source"), &["COLOR"]);
    let test = load(&data.join("test"), &["COLOR"]);
    let space = Space::Single("COLOR".into());
    let tags: Vec<String> = test.tags().map(String::from).collect();
    assert!(!tags.is_empty());
    for tag in tags {
        let mut expect: Vec<(String, f64)> = test
            .images_with_tag(&tag)
            .into_iter()
            .map(|id| {
                let nl = knn_from(&source, &space, &test, id, 15).unwrap();
                (id.to_string(), neighbor_vote(&source, &nl, &tag, 15).unwrap())
            })
            .collect();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let got = &run.rankings[&tag];
        assert_eq!(got.len(), expect.len());
        for ((gi, gs), (ei, es)) in got.iter().zip(&expect) {
            assert_eq!(gi, ei, "tag {tag}");
            assert!((gs - es).abs() < 1e-9, "tag {tag}: {gs} vs {es}");
        }
    }
}

#[test]
fn late_rankmax_average_is_borda() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let run = score(&data, &d.path().join("r.run"), "Late-rankmax-average", &[]);
    let source = load(&data.join("source"), &["COLOR", "CSLBP"]);
    let test = load(&data.join("test"), &["COLOR", "CSLBP"]);
    let cfg = ScoringConfig {
        k: 15,
        features: vec!["COLOR".into(), "CSLBP".into()],
        ..ScoringConfig::default()
    };
    let scorer = Scorer::new(&source, &test, &cfg).unwrap();
    let tags: Vec<String> = run.rankings.keys().cloned().collect();
    let tags: Vec<&str> = tags.iter().map(String::as_str).collect();
    let per_feature: Vec<_> = ["TagRel-COLOR", "TagRel-CSLBP"]
        .iter()
        .map(|p| scorer.score(&p.parse::<Preset>().unwrap(), &tags, None).unwrap())
        .collect();
    for tag in tags {
        let members: Vec<ScoreTable> = per_feature.iter().map(|m| m[tag].as_ref().unwrap().clone()).collect();
        assert_eq!(run.ranked_ids(tag), borda_rank(&members).unwrap(), "tag {tag}");
    }
}

#[test]
fn early_fusion_of_one_feature_ranks_like_tagrel() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let single = score(&data, &d.path().join("a.run"), "TagRel-COLOR", &[]);
    let early = score(&data, &d.path().join("b.run"), "Early-minmax-average", &["--features", "COLOR"]);
    for tag in single.rankings.keys() {
        assert_eq!(single.ranked_ids(tag), early.ranked_ids(tag), "tag {tag}");
    }
}

fn learn_args<'a>(data: &'a Path, out: &'a Path, preset: &'a str, feats: &'a str) -> Vec<String> {
    [
        "learn",
        "--source",
        s(&data.join("source")),
        "--train",
        s(&data.join("train")),
        "--features",
        feats,
        "--k",
        "15",
        "--pairs",
        "200",
        "--preset",
        preset,
        "--out",
        s(out),
    ]
    .iter()
    .map(|x| x.to_string())
    .collect()
}

#[test]
fn learning_one_feature_gives_unit_weight() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let w = d.path().join("w");
    let args = learn_args(&data, &w, "Late-minmax-learning", "COLOR");
    ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
    let text = fs::read_to_string(w.join("Late-minmax.global.tsv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 1);
    let (name, weight) = rows[0].split_once('\t').unwrap();
    assert_eq!(name, "TagRel-COLOR");
    assert_eq!(weight.parse::<f64>().unwrap(), 1.0);
}

#[test]
fn learning_reruns_are_identical_and_scorable() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    for preset in ["Late-minmax-learning+", "Early-minmax-learning+"] {
        let (w1, w2) = (d.path().join("w1"), d.path().join("w2"));
        for w in [&w1, &w2] {
            let args = learn_args(&data, w, preset, "COLOR,CSLBP");
            ok(&args.iter().map(String::as_str).collect::<Vec<_>>());
        }
        let family = preset.trim_end_matches("-learning+");
        for suffix in ["global.tsv", "per-concept.tsv", "log"] {
            let f = format!("{family}.{suffix}");
            assert_eq!(fs::read(w1.join(&f)).unwrap(), fs::read(w2.join(&f)).unwrap(), "{f}");
        }
        let run = score(&data, &d.path().join("l.run"), preset, &["--weights-dir", s(&w1)]);
        assert!(!run.rankings.is_empty());
    }
}

#[test]
fn learned_preset_without_weights_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let out = tagrel(&[
        "score",
        "--source",
        s(&data.join("source")),
        "--features",
        "COLOR,CSLBP",
        "--preset",
        "Late-minmax-learning",
        "--out",
        s(&d.path().join("x.run")),
    ]);
    assert!(!out.status.success());
}

#[test]
fn eval_reports_hand_computed_metrics() {
    let d = tempfile::tempdir().unwrap();
    let qrels = d.path().join("qrels.tsv");
    fs::write(&qrels, "cat\ta\t1\ncat\tb\t0\ncat\tc\t1\ncat\td\t0\ndog\te\t1\n").unwrap();
    let run = d.path().join("a.run");
    fs::write(&run, "cat\ta\t1\t0.9\tA\ncat\tb\t2\t0.5\tA\ncat\tc\t3\t0.4\tA\ncat\td\t4\t0.1\tA\ndog\tz\t1\t1\tA\ndog\te\t2\t0.5\tA\n").unwrap();
    let out = ok(&["eval", "--qrels", s(&qrels), s(&run)]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("# run\tA"));
    assert!(report.contains(&format!("cat\t{:.6}\t", 0.5 * (1.0 + 2.0 / 3.0))), "{report}");
    assert!(report.contains("dog\t0.500000\t"), "{report}");
    assert!(report.contains(&format!("mAP\t{:.6}", 0.5 * (0.5 * (1.0 + 2.0 / 3.0) + 0.5))));

    let run_b = d.path().join("b.run");
    fs::write(&run_b, "cat\ta\t1\t3\tB\ncat\tc\t2\t2\tB\ncat\tb\t3\t1\tB\ndog\tz\t1\t1\tB\n").unwrap();
    let out = ok(&["eval", "--qrels", s(&qrels), s(&run), s(&run_b)]);
    let report = String::from_utf8(out.stdout).unwrap();
    assert!(report.contains("# randomization test"));
    assert!(report.contains("A\tB\t"));
    assert!(report.contains("cat\t1.000000\t1.000000"));

    fs::write(&run_b, "cat\ta\t2\t3\tB\n").unwrap();
    assert!(!tagrel(&["eval", "--qrels", s(&qrels), s(&run_b)]).status.success());
}

#[test]
fn list_presets_enumerates_every_method() {
    let out = ok(&["list-presets"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 19);
    for p in &lines {
        assert_eq!(p.parse::<Preset>().unwrap().to_string(), *p);
    }
    assert!(lines.contains(&"Late-rankmax-learning+"));
    assert!(lines.contains(&"TagRel-DSIFT"));
}

#[test]
fn config_file_sets_defaults_and_flags_override() {
    let d = tempfile::tempdir().unwrap();
    let data = synth(d.path());
    let conf = d.path().join("score.conf");
    fs::write(&conf, "# defaults\nfeatures = COLOR\nk = 3\n").unwrap();
    let (source, target) = (data.join("source"), data.join("test"));
    let run = |out: &str, extra: &[&str]| -> Vec<u8> {
        let out = d.path().join(out);
        let mut args = vec!["score", "--source", s(&source)];
        args.extend_from_slice(&["--target", s(&target), "--preset", "TagRel-COLOR", "--out", s(&out)]);
        args.extend_from_slice(extra);
        ok(&args);
        fs::read(out).unwrap()
    };
    let conf_k3 = run("a.run", &["--config", s(&conf)]);
    let flag_k3 = run("b.run", &["--features", "COLOR", "--k", "3"]);
    let conf_k15 = run("c.run", &["--config", s(&conf), "--k", "15"]);
    let flag_k15 = run("d.run", &["--features", "COLOR", "--k", "15"]);
    assert_eq!(conf_k3, flag_k3);
    assert_eq!(conf_k15, flag_k15);
    assert_ne!(conf_k3, conf_k15);
}
