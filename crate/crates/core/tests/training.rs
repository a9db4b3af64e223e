use std::fs;

use ulu_kit::activations::{ActivationKind, ActivationSpec};
use ulu_kit::analysis::{compare_table, run_sweep, SweepSpec};
use ulu_kit::autodiff::{Graph, ParamStore};
use ulu_kit::cli;
use ulu_kit::data::{synthetic_blobs, synthetic_subset, Dataset};
use ulu_kit::harness::{evaluate, train, train_step, TrainConfig};
use ulu_kit::models::{extract_patches, Arch, Model, ModelConfig};
use ulu_kit::tensor::Tensor;

fn ulu() -> ActivationSpec {
    ActivationSpec::ulu(0.3, 0.8).unwrap()
}

fn small_blobs() -> (Dataset, Dataset) {
    synthetic_subset(200, 100, 5).unwrap()
}

fn mlp(act: ActivationSpec, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::new(ModelConfig::new(Arch::Mlp, act))
    }
}

fn attention_reference(model: &Model, store: &ParamStore, patches: &Tensor) -> Vec<f64> {
    let cfg = model.config();
    let d = cfg.embed_dim;
    let get = |n: &str| store.value(store.id_of(n).unwrap()).data().to_vec();
    let (we, be, pos) = (get("embed.weight"), get("embed.bias"), get("position"));
    let (wq, wk, wv) = (get("attn.query"), get("attn.key"), get("attn.value"));
    let (wf, bf, wh, bh) = (get("ff.weight"), get("ff.bias"), get("head.weight"), get("head.bias"));
    let (b, p, k) = (patches.shape()[0], patches.shape()[1], patches.shape()[2]);
    let c = cfg.num_classes;
    let lin = |x: &[f64], w: &[f64], n_out: usize| -> Vec<f64> {
        (0..n_out).map(|o| x.iter().enumerate().map(|(i, xi)| xi * w[i * n_out + o]).sum()).collect()
    };
    let mut logits = Vec::new();
    for bi in 0..b {
        let mut xs = Vec::new();
        for pi in 0..p {
            let patch = &patches.data()[(bi * p + pi) * k..(bi * p + pi + 1) * k];
            let e = lin(patch, &we, d);
            xs.push((0..d).map(|j| e[j] + be[j] + pos[pi * d + j]).collect::<Vec<_>>());
        }
        let scale = 1.0 / (d as f64).sqrt();
        let qs: Vec<Vec<f64>> = xs.iter().map(|x| lin(x, &wq, d).iter().map(|v| v * scale).collect()).collect();
        let ks: Vec<Vec<f64>> = xs.iter().map(|x| lin(x, &wk, d)).collect();
        let vs: Vec<Vec<f64>> = xs.iter().map(|x| lin(x, &wv, d)).collect();
        let mut pooled = vec![0.0; d];
        for pi in 0..p {
            let s: Vec<f64> = ks.iter().map(|kk| qs[pi].iter().zip(kk).map(|(a, b)| a * b).sum()).collect();
            let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|v| (v - m).exp()).collect();
            let z: f64 = e.iter().sum();
            let mut h = xs[pi].clone();
            for (qi, w) in e.iter().enumerate() {
                for j in 0..d {
                    h[j] += w / z * vs[qi][j];
                }
            }
            let f = lin(&h, &wf, d);
            for j in 0..d {
                pooled[j] += cfg.activation.eval(f[j] + bf[j]) / p as f64;
            }
        }
        let out = lin(&pooled, &wh, c);
        logits.extend((0..c).map(|j| out[j] + bh[j]));
    }
    logits
}

#[test]
fn attention_matches_straight_line_reference() {
    let mut cfg = ModelConfig::new(Arch::MiniAttention, ulu()).with_input(2, 4, 3);
    cfg.patch_size = 2;
    cfg.embed_dim = 4;
    let (model, store) = Model::build(&cfg, 9).unwrap();
    let images = Tensor::from_vec(vec![2, 2, 4], (0..16).map(|i| ((i * 7) % 11) as f64 / 10.0).collect()).unwrap();
    let patches = extract_patches(&images, 2);
    assert_eq!(patches.shape(), &[2, 2, 4]);
    let mut g = Graph::new();
    let logits = model.mini_attention_forward(&mut g, &store, &patches).unwrap();
    let expected = attention_reference(&model, &store, &patches);
    for (a, b) in g.value(logits).data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

fn attention_weights(g: &Graph) -> &Tensor {
    &g.nodes().iter().find(|n| n.op.name() == "attention_scores").unwrap().value
}

#[test]
fn single_patch_attends_to_itself() {
    let mut cfg = ModelConfig::new(Arch::MiniAttention, ulu()).with_input(4, 4, 3);
    cfg.patch_size = 4;
    let (model, store) = Model::build(&cfg, 1).unwrap();
    let mut g = Graph::new();
    let images = Tensor::full(vec![3, 4, 4], 0.3);
    model.forward(&mut g, &store, &images).unwrap();
    assert!(attention_weights(&g).data().iter().all(|&w| w == 1.0));
}

#[test]
fn identical_patches_attend_uniformly() {
    let cfg = ModelConfig::new(Arch::MiniAttention, ulu());
    let (model, mut store) = Model::build(&cfg, 1).unwrap();
    let pos = store.id_of("position").unwrap();
    store.value_mut(pos).fill(0.0);
    let mut g = Graph::new();
    model.forward(&mut g, &store, &Tensor::full(vec![1, 28, 28], 0.5)).unwrap();
    let w = attention_weights(&g);
    assert_eq!(w.shape(), &[1, 49, 49]);
    assert!(w.data().iter().all(|&v| (v - 1.0 / 49.0).abs() < 1e-15));
}

#[test]
fn eight_sample_hand_count() {
    let mut cfg = ModelConfig::new(Arch::Mlp, ActivationSpec::plain(ActivationKind::Identity)).with_input(1, 2, 2);
    cfg.hidden_sizes = vec![2];
    let (model, mut store) = Model::build(&cfg, 0).unwrap();
    for name in ["fc0.weight", "head.weight"] {
        let id = store.id_of(name).unwrap();
        store.value_mut(id).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    }
    let pairs = [
        ((0.9, 0.1), 0),
        ((0.2, 0.7), 1),
        ((0.5, 0.5), 1),
        ((0.5, 0.5), 0),
        ((0.3, 0.4), 0),
        ((1.0, 0.0), 0),
        ((0.0, 1.0), 0),
        ((0.6, 0.61), 1),
    ];
    let data = pairs.iter().flat_map(|((a, b), _)| [*a, *b]).collect();
    let labels = pairs.iter().map(|(_, l)| *l).collect();
    let ds = Dataset::new(Tensor::from_vec(vec![8, 1, 2], data).unwrap(), labels, 2, "hand").unwrap();
    let (_, acc) = evaluate(&model, &store, &ds).unwrap();
    assert_eq!(acc, 5.0 / 8.0);
}

#[test]
fn memorizes_64_samples() {
    let ds = synthetic_blobs(10, 7, 28, 3).subset(&(0..64).collect::<Vec<_>>(), "memo");
    let (images, labels) = ds.gather(&(0..64).collect::<Vec<_>>());
    for arch in [Arch::Mlp, Arch::SmallCnn, Arch::MiniAttention] {
        for act in [ulu(), ActivationSpec::plain(ActivationKind::Aulu)] {
            let (model, mut store) = Model::build(&ModelConfig::new(arch, act.clone()), 0).unwrap();
            let mut reached = None;
            for step in 0..200 {
                let (loss, _) = train_step(&model, &mut store, &images, &labels, 0.05, 0.9, 5e-5).unwrap().unwrap();
                if loss < 10f64.ln() {
                    reached = Some(step);
                    break;
                }
            }
            assert!(reached.is_some(), "{arch} {act} stuck above ln 10");
        }
    }
}

#[test]
fn small_lr_loss_is_monotone() {
    let ds = synthetic_blobs(10, 8, 28, 4);
    let (images, labels) = ds.gather(&(0..ds.len()).collect::<Vec<_>>());
    let (model, mut store) = Model::build(&ModelConfig::new(Arch::Mlp, ulu()), 0).unwrap();
    let mut prev = f64::INFINITY;
    for _ in 0..11 {
        let (loss, _) = train_step(&model, &mut store, &images, &labels, 1e-3, 0.9, 5e-5).unwrap().unwrap();
        assert!(loss <= prev, "{loss} > {prev}");
        prev = loss;
    }
}

#[test]
fn mlp_separates_blobs() {
    let (tr, te) = synthetic_subset(2000, 1000, 0).unwrap();
    let (rec, _) = train(&mlp(ulu(), 5), &tr, &te).unwrap();
    assert!(rec.final_test_acc > 0.95, "{}", rec.final_test_acc);
    assert_eq!(rec.curves.len(), 6);
}

#[test]
fn frozen_aulu_is_ulu() {
    let (tr, te) = small_blobs();
    let (b1, b2) = (0.6f64, 0.9f64);
    let plain = mlp(ActivationSpec::ulu(b1 * b1, b2 * b2).unwrap(), 3);
    let mut frozen = mlp(ActivationSpec::plain(ActivationKind::Aulu), 3);
    frozen.model.freeze_betas = true;
    frozen.model.init_betas = (b1, b2);
    let (a, sa) = train(&plain, &tr, &te).unwrap();
    let (b, sb) = train(&frozen, &tr, &te).unwrap();
    assert_eq!(a.curves, b.curves);
    assert_eq!(a.final_test_acc, b.final_test_acc);
    assert_eq!(sa.values(), sb.values());
    assert!(b.betas.iter().all(|r| r.beta1_sq == b1 * b1 && r.beta2_sq == b2 * b2));
}

#[test]
fn one_cell_sweep_is_a_train_call() {
    let (tr, te) = small_blobs();
    let base = mlp(ulu(), 2);
    let spec = SweepSpec {
        alpha_values: vec![0.55],
        base: base.clone(),
        parallelism: 2,
    };
    let sweep = run_sweep(&spec, &tr, &te).unwrap();
    let direct = mlp(ActivationSpec::ulu(0.55, 0.55).unwrap(), 2);
    let (rec, _) = train(&direct, &tr, &te).unwrap();
    assert_eq!(sweep.cells.len(), 1);
    assert!(sweep.cells[0].record.same_results(&rec));
}

#[test]
fn sweep_rows_sorted_and_parallel_safe() {
    let (tr, te) = small_blobs();
    let spec = SweepSpec {
        alpha_values: vec![0.8, 0.3],
        base: mlp(ulu(), 1),
        parallelism: 1,
    };
    let serial = run_sweep(&spec, &tr, &te).unwrap();
    let parallel = run_sweep(&SweepSpec { parallelism: 3, ..spec.clone() }, &tr, &te).unwrap();
    assert_eq!(serial.to_csv(), parallel.to_csv());
    let keys: Vec<(f64, f64)> = serial.cells.iter().map(|c| (c.alpha1, c.alpha2)).collect();
    assert_eq!(keys, vec![(0.3, 0.3), (0.3, 0.8), (0.8, 0.3), (0.8, 0.8)]);
}

#[test]
fn compare_table_rules() {
    let (tr, te) = small_blobs();
    let cfg = mlp(ulu(), 1);
    let rows = compare_table(&[ulu(), ulu()], &cfg, 1, 2, &tr, &te).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].std_acc, 0.0);
    assert_eq!(rows[0].mean_acc, rows[1].mean_acc);
    let rows = compare_table(&[ulu(), ActivationSpec::plain(ActivationKind::Relu)], &cfg, 2, 1, &tr, &te).unwrap();
    assert!(rows[0].mean_acc >= rows[1].mean_acc);
    assert!(rows.iter().all(|r| r.runs == 2));
}

fn run_cli(args: &[&str]) -> i32 {
    cli::run(std::iter::once("ulu-kit").chain(args.iter().copied()))
}

#[test]
fn cli_train_writes_outputs_idempotently() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = [
        "train", "--model", "cnn", "--activation", "ulu(0.3,0.8)", "--synthetic", "--epochs", "1",
        "--train-n", "60", "--test-n", "30", "--out-dir", out,
    ];
    assert_eq!(run_cli(&args), 0);
    let first: Vec<Vec<u8>> = ["run.json", "curves.csv", "betas.csv", "config.json", "params.bin"]
        .iter()
        .map(|f| fs::read(dir.path().join(f)).unwrap())
        .collect();
    assert_eq!(run_cli(&args), 0);
    for (f, bytes) in ["run.json", "curves.csv", "betas.csv", "config.json", "params.bin"].iter().zip(&first) {
        assert_eq!(&fs::read(dir.path().join(f)).unwrap(), bytes, "{f} changed");
    }
    let curves = String::from_utf8(first[1].clone()).unwrap();
    assert!(curves.starts_with("epoch,train_loss,train_acc,test_acc\n"));
    assert_eq!(curves.lines().count(), 3);
    let store = ParamStore::read_from(first[4].as_slice()).unwrap();
    assert!(store.adaptive.is_empty());
}

#[test]
fn cli_sweep_two_by_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run_cli(&[
        "sweep", "--model", "mlp", "--alphas", "0.3,0.8", "--synthetic", "--epochs", "1", "--train-n", "100",
        "--test-n", "50", "--jobs", "2", "--out-dir", out,
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("alpha1,alpha2,final_test_acc,diverged"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run_cli(&["train", "--no-such-flag"]), 2);
    assert_eq!(run_cli(&["frobnicate"]), 2);
    assert_eq!(run_cli(&["train", "--activation", "ulu(-1,2)", "--synthetic"]), 2);
    assert_eq!(run_cli(&["lib-report", "--activation", "relu", "--synthetic", "--out-dir", out]), 1);
    assert_eq!(run_cli(&["check-gradients", "--grid-points", "201", "--out-dir", out]), 0);
    assert!(dir.path().join("config.json").is_file());
}

#[test]
fn cli_landscape_and_lib_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let code = run_cli(&[
        "landscape", "--activation", "relu", "--activation", "ulu(0.3,0.8)", "--resolution", "16", "--out-dir", out,
    ]);
    assert_eq!(code, 0);
    let pgm = fs::read(dir.path().join("landscape_ulu_0.3_0.8.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(pgm.len(), 13 + 256);
    let scores = fs::read_to_string(dir.path().join("landscape_scores.csv")).unwrap();
    let hashes: Vec<&str> = scores.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(hashes[0], hashes[1]);

    let code = run_cli(&[
        "lib-report", "--synthetic", "--epochs", "1", "--train-n", "50", "--test-n", "20", "--out-dir", out,
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("lib_report.json")).unwrap()).unwrap();
    let models = report["models"].as_array().unwrap();
    assert_eq!(models.len(), 2);
    assert_eq!(models[0]["model"], "cnn");
    assert_eq!(models[0]["sites"].as_array().unwrap().len(), 2);
    assert_eq!(models[1]["sites"].as_array().unwrap().len(), 1);
    for m in models {
        assert!(m["aggregate_lib"].as_f64().unwrap() >= 0.0);
        for s in m["sites"].as_array().unwrap() {
            let (b1, b2, lib) = (s["beta1_sq"].as_f64().unwrap(), s["beta2_sq"].as_f64().unwrap(), s["lib"].as_f64().unwrap());
            assert!((lib - (b1 - b2).abs()).abs() < 1e-12);
        }
    }
    assert_eq!(report["scatter"].as_array().unwrap().len(), 3);
    assert!(report["observation"].as_str().unwrap().contains("cnn"));
}
