//! Acceptance suite: one criterion per test, one pass/fail line per
//! criterion on stdout. A8/A9 need real data and pretrained weights; they
//! are skipped (with a visible line) when the environment does not provide
//! `LOADCAST_AUSGRID_CSV` / `LOADCAST_GPT2_SAFETENSORS`.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use loadcast::autograd::{Graph, Tensor};
use loadcast::cli;
use loadcast::config::RunConfig;
use loadcast::data::WindowPair;
use loadcast::decompose::{decompose, patch_count, recompose};
use loadcast::eval::Scale;
use loadcast::model::{ForecastModel, ModelConfig, TaskMode};
use loadcast::params::BoundParams;
use loadcast::prompt::{select_prototypes, similarity, SimilarityMetric};
use loadcast::revin::{denormalize, normalize_instance, NormParams};
use loadcast::synth::{synthetic_windows, write_synthetic_csv};
use loadcast::train::{train_step, Adam, TrainConfig};

fn criterion(name: &str, body: impl FnOnce() -> Result<(), String>) {
    let t0 = Instant::now();
    match body() {
        Ok(()) => println!("{name}: pass ({:.2}s)", t0.elapsed().as_secs_f64()),
        Err(msg) => {
            println!("{name}: FAIL — {msg}");
            panic!("{name} failed: {msg}");
        }
    }
}

fn skip(name: &str, why: &str) {
    println!("{name}: skip (optional) — {why}");
}

#[test]
fn a1_normalization_round_trip() {
    criterion("A1", || {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let rows = rng.gen_range(16..64);
            let window = Tensor::from_vec(
                rows,
                3,
                (0..rows * 3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
            );
            let params = NormParams {
                gamma: (0..3)
                    .map(|_| {
                        let g: f64 = rng.gen_range(0.2..2.0);
                        if rng.gen_bool(0.5) {
                            -g
                        } else {
                            g
                        }
                    })
                    .collect(),
                beta: (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                epsilon: 1e-5,
            };
            let (normed, stats) = normalize_instance(&window, &params).map_err(|e| e.to_string())?;
            let back = denormalize(&normed, &stats, &params).map_err(|e| e.to_string())?;
            for (a, b) in window.data.iter().zip(&back.data) {
                if (a - b).abs() > 1e-6 {
                    return Err(format!("round-trip error {} vs {}", a, b));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn a2_decomposition_additivity() {
    criterion("A2", || {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let series: Vec<f64> = (0..512).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let d = decompose(&series, 48).map_err(|e| e.to_string())?;
            let back = recompose(&d).map_err(|e| e.to_string())?;
            for (a, b) in series.iter().zip(&back) {
                if (a - b).abs() > 1e-9 {
                    return Err(format!("additivity violated: {a} vs {b}"));
                }
            }
        }
        Ok(())
    });
}

#[test]
fn a3_patch_count_oracle() {
    criterion("A3", || {
        for n in 1..=64usize {
            for l in 1..=n {
                for s_h in 1..=l {
                    let brute = (0..=n - l).step_by(s_h).count();
                    let formula = patch_count(n, l, s_h);
                    if brute != formula {
                        return Err(format!(
                            "n={n} l={l} s_h={s_h}: formula {formula}, brute {brute}"
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

#[test]
fn a4_prototype_selection_oracle() {
    criterion("A4", || {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..200 {
            let metric = if case % 2 == 0 { SimilarityMetric::Cosine } else { SimilarityMetric::Euclidean };
            let k = rng.gen_range(2..=32usize);
            let d = rng.gen_range(2..=8usize);
            let n_p = rng.gen_range(1..=6usize);
            let m = rng.gen_range(1..=k);
            let body = Tensor::from_vec(n_p, d, (0..n_p * d).map(|_| rng.gen_range(-2.0..2.0) + 0.1).collect());
            let protos = Tensor::from_vec(k, d, (0..k * d).map(|_| rng.gen_range(-2.0..2.0) + 0.1).collect());
            let (selected, _) =
                select_prototypes(&body, &protos, m, metric).map_err(|e| e.to_string())?;

            // exhaustive oracle
            let mut scores = vec![0.0; k];
            for j in 0..k {
                for i in 0..n_p {
                    scores[j] += similarity(
                        &body.data[i * d..(i + 1) * d],
                        &protos.data[j * d..(j + 1) * d],
                        metric,
                    )
                    .map_err(|e| e.to_string())?;
                }
                scores[j] /= n_p as f64;
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
            if selected != order[..m] {
                return Err(format!("case {case}: {selected:?} vs {:?}", &order[..m]));
            }
        }
        Ok(())
    });
}

#[test]
fn a5_freezing_contract() {
    criterion("A5", || {
        let cfg = ModelConfig::toy_small();
        let mut model = ForecastModel::new_toy(cfg.clone()).map_err(|e| e.to_string())?;

        // the registry is exactly the five component groups plus gamma/beta
        let mut expected = std::collections::BTreeSet::new();
        for (_, names) in model.registry_components() {
            expected.extend(names);
        }
        if expected != model.policy.trainable {
            return Err(format!(
                "registry mismatch: {:?}",
                expected.symmetric_difference(&model.policy.trainable).collect::<Vec<_>>()
            ));
        }

        let windows = synthetic_windows(&cfg, 1, 4, 55);
        let before = model.params.clone();
        let mut opt = Adam::new(1e-2);
        for step in 1..=3 {
            train_step(&mut model, &mut opt, &windows, 0.1, step).map_err(|e| e.to_string())?;
        }
        for (name, t) in before.iter() {
            let after = model.params.get(name);
            if model.policy.is_trainable(name) {
                if t.data == after.data {
                    return Err(format!("registry parameter {name} did not change"));
                }
            } else if t.data != after.data {
                return Err(format!("frozen parameter {name} changed"));
            }
        }
        Ok(())
    });
}

fn loss_value(model: &ForecastModel, windows: &[WindowPair], lambda: f64) -> f64 {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &model.params);
    let ctx = model.graph_context(&mut g);
    let loss = model.batch_loss(&mut g, &bound, &ctx, windows, lambda).unwrap();
    g.value(loss.total).data[0]
}

fn analytic_grads(model: &ForecastModel, windows: &[WindowPair], lambda: f64) -> BTreeMap<String, Vec<f64>> {
    let mut g = Graph::new();
    let bound = BoundParams::bind(&mut g, &model.params);
    let ctx = model.graph_context(&mut g);
    let loss = model.batch_loss(&mut g, &bound, &ctx, windows, lambda).unwrap();
    g.backward(loss.total);
    let mut out = BTreeMap::new();
    for (name, id) in bound.ids() {
        out.insert(name.to_string(), g.grad(id).to_vec());
    }
    out
}

#[test]
fn a6_gradient_correctness() {
    criterion("A6", || {
        let cfg = ModelConfig::toy_small();
        let mut model = ForecastModel::new_toy(cfg.clone()).map_err(|e| e.to_string())?;
        let windows = synthetic_windows(&cfg, 1, 1, 66);
        let lambda = 0.1;
        let grads = analytic_grads(&model, &windows, lambda);
        let h = 1e-5;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        // shared projection, one extractor row, and the reconstruction head
        let mut probes: Vec<(String, usize)> = Vec::new();
        for _ in 0..6 {
            let len = model.params.get("proj.shared.w").len();
            probes.push(("proj.shared.w".into(), rng.gen_range(0..len)));
        }
        for _ in 0..4 {
            // row 0 of extractor 0
            probes.push(("extract.task0.w".into(), rng.gen_range(0..cfg.backbone.vocab_size)));
        }
        for _ in 0..6 {
            let len = model.params.get("head.w").len();
            probes.push(("head.w".into(), rng.gen_range(0..len)));
        }
        for (name, i) in probes {
            let orig = model.params.get(&name).data[i];
            model.params.get_mut(&name).data[i] = orig + h;
            let up = loss_value(&model, &windows, lambda);
            model.params.get_mut(&name).data[i] = orig - h;
            let down = loss_value(&model, &windows, lambda);
            model.params.get_mut(&name).data[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[&name][i];
            let rel = (an - fd).abs() / fd.abs().max(1e-3);
            if rel > 1e-4 {
                return Err(format!("{name}[{i}]: analytic {an:.8e}, fd {fd:.8e}, rel {rel:.2e}"));
            }
        }
        Ok(())
    });
}

#[test]
fn a7_lambda_zero_reduction_and_sweep_grid() {
    criterion("A7", || {
        let cfg = ModelConfig::toy_small();
        let model = ForecastModel::new_toy(cfg.clone()).map_err(|e| e.to_string())?;
        let windows = synthetic_windows(&cfg, 1, 2, 77);

        // exact gradient equality at lambda = 0
        let mut g = Graph::new();
        let bound = BoundParams::bind(&mut g, &model.params);
        let ctx = model.graph_context(&mut g);
        let loss = model.batch_loss(&mut g, &bound, &ctx, &windows, 0.0).map_err(|e| e.to_string())?;
        g.backward(loss.total);
        let total_grads: Vec<Vec<f64>> = bound.ids().map(|(_, id)| g.grad(id).to_vec()).collect();
        let mut g2 = Graph::new();
        let bound2 = BoundParams::bind(&mut g2, &model.params);
        let ctx2 = model.graph_context(&mut g2);
        let loss2 = model.batch_loss(&mut g2, &bound2, &ctx2, &windows, 0.0).map_err(|e| e.to_string())?;
        g2.backward(loss2.pred);
        let pred_grads: Vec<Vec<f64>> = bound2.ids().map(|(_, id)| g2.grad(id).to_vec()).collect();
        if total_grads != pred_grads {
            return Err("lambda=0 total-loss gradients differ from pred-loss gradients".into());
        }

        // 5-cell sweep over the reference grid
        let train_w = synthetic_windows(&cfg, 1, 4, 78);
        let val_w = synthetic_windows(&cfg, 1, 2, 79);
        let transfer = vec![
            (2u64, synthetic_windows(&cfg, 2, 1, 80)),
            (3u64, synthetic_windows(&cfg, 3, 1, 81)),
        ];
        let tcfg = TrainConfig { max_epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let grid = [0.0, 0.01, 0.05, 0.1, 1.0];
        let cfg2 = cfg.clone();
        let rows = loadcast::train::sensitivity_sweep(
            move || ForecastModel::new_toy(cfg2.clone()),
            &train_w,
            &val_w,
            &transfer,
            &tcfg,
            &grid,
            Scale::Normalized,
        )
        .map_err(|e| e.to_string())?;
        if rows.len() != 5 {
            return Err(format!("expected 5 sweep rows, got {}", rows.len()));
        }
        for (row, lambda) in rows.iter().zip(grid) {
            if row.lambda != lambda || !row.sum_mse.is_finite() || !row.sum_mae.is_finite() {
                return Err(format!("bad sweep row {row:?}"));
            }
        }
        Ok(())
    });
}

fn full_scale_env() -> Option<(std::path::PathBuf, std::path::PathBuf)> {
    let csv = std::env::var_os("LOADCAST_AUSGRID_CSV")?;
    let weights = std::env::var_os("LOADCAST_GPT2_SAFETENSORS")?;
    Some((csv.into(), weights.into()))
}

fn full_scale_config(csv: std::path::PathBuf, weights: std::path::PathBuf, out: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.csv = csv;
    cfg.backbone.variant = loadcast::backbone::BackboneVariant::Pretrained;
    cfg.backbone.weights = Some(weights);
    cfg.output.dir = out.to_path_buf();
    cfg
}

#[test]
fn a8_full_scale_conventional() {
    let Some((csv, weights)) = full_scale_env() else {
        skip("A8", "set LOADCAST_AUSGRID_CSV and LOADCAST_GPT2_SAFETENSORS to run");
        return;
    };
    criterion("A8", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = full_scale_config(csv, weights, dir.path());
        cli::cmd_prepare(&cfg).map_err(|e| e.to_string())?;
        cli::cmd_train(&cfg).map_err(|e| e.to_string())?;
        let (mse, mae) = cli::cmd_eval(&cfg, &None).map_err(|e| e.to_string())?;
        if mse > 0.50 || mae > 0.45 {
            return Err(format!("test metrics out of tolerance: MSE {mse:.4}, MAE {mae:.4}"));
        }
        Ok(())
    });
}

#[test]
fn a9_full_scale_transfer() {
    let Some((csv, weights)) = full_scale_env() else {
        skip("A9", "set LOADCAST_AUSGRID_CSV and LOADCAST_GPT2_SAFETENSORS to run");
        return;
    };
    criterion("A9", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let mut cfg = full_scale_config(csv, weights, dir.path());
        cli::cmd_prepare(&cfg).map_err(|e| e.to_string())?;
        cfg.train.lambda = 0.1;
        cli::cmd_train(&cfg).map_err(|e| e.to_string())?;
        let tuned = cli::cmd_transfer(&cfg, &None).map_err(|e| e.to_string())?;
        if tuned.sum_mse > 12.5 || tuned.sum_mae > 8.5 {
            return Err(format!(
                "transfer sums out of tolerance: {:.4}/{:.4}",
                tuned.sum_mse, tuned.sum_mae
            ));
        }
        cfg.train.lambda = 0.0;
        cli::cmd_train(&cfg).map_err(|e| e.to_string())?;
        let plain = cli::cmd_transfer(&cfg, &None).map_err(|e| e.to_string())?;
        if tuned.sum_mse >= plain.sum_mse || tuned.sum_mae >= plain.sum_mae {
            return Err("lambda=0.1 did not outperform lambda=0.0 on both sums".into());
        }
        Ok(())
    });
}

fn toy_run_config(out: &std::path::Path, csv: &std::path::Path) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.csv = csv.to_path_buf();
    cfg.output.dir = out.to_path_buf();
    cfg.window.input_len = 96;
    cfg.window.horizon = 8;
    cfg.window.stride = 48;
    cfg.decompose.period = 48;
    cfg.decompose.patch_len = 16;
    cfg.decompose.patch_stride = 8;
    cfg.prompt.k_proto = 16;
    cfg.prompt.m_prefix = 4;
    cfg.backbone.d_prime = 16;
    cfg.backbone.n_heads = 2;
    cfg.backbone.vocab_size = 32;
    cfg.backbone.max_positions = 32;
    cfg.train.max_epochs = 5;
    cfg.train.lr = 3e-3;
    cfg.train.batch_size = 8;
    cfg.train.early_stop_patience = 10;
    cfg
}

#[test]
fn a10_end_to_end_toy_smoke() {
    criterion("A10", || {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let csv = dir.path().join("synthetic.csv");
        write_synthetic_csv(&csv, &[1, 2, 3], 30, 0).map_err(|e| e.to_string())?;
        let cfg = toy_run_config(dir.path(), &csv);
        let manifest = cli::cmd_prepare(&cfg).map_err(|e| e.to_string())?;
        if manifest.household_ids.len() != 3 {
            return Err(format!("expected 3 households, got {:?}", manifest.household_ids));
        }

        // loss at initialization, before any update
        let train_set = loadcast::store::WindowSet::load(&dir.path().join("prepare/train.lwd"))
            .map_err(|e| e.to_string())?;
        let init_model = ForecastModel::new_toy(cfg.model_config()).map_err(|e| e.to_string())?;
        let init_loss = loss_value(&init_model, &train_set.windows, cfg.train.lambda);

        cli::cmd_train(&cfg).map_err(|e| e.to_string())?;
        let curve_text = std::fs::read_to_string(dir.path().join("train/curve.csv"))
            .map_err(|e| e.to_string())?;
        let final_loss: f64 = curve_text
            .lines()
            .last()
            .and_then(|l| l.split(',').nth(1))
            .and_then(|v| v.parse().ok())
            .ok_or("unreadable training curve")?;
        if final_loss > 0.5 * init_loss {
            return Err(format!(
                "training loss fell less than 50%: {init_loss:.4} -> {final_loss:.4}"
            ));
        }

        let report = cli::cmd_transfer(&cfg, &None).map_err(|e| e.to_string())?;
        report.validate().map_err(|e| e.to_string())?;
        if report.per_household.len() != 2 {
            return Err(format!("expected 2 transfer households, got {}", report.per_household.len()));
        }
        Ok(())
    });
}

#[test]
fn a11_ablation_harness() {
    criterion("A11", || {
        let mut cfg = ModelConfig::toy_small();
        let train_w = synthetic_windows(&cfg, 1, 4, 111);
        let val_w = synthetic_windows(&cfg, 1, 2, 112);
        let test_w = synthetic_windows(&cfg, 1, 2, 113);
        let tcfg = TrainConfig { max_epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let cells = loadcast::train::ablation_run(&cfg, &train_w, &val_w, &test_w, &tcfg, Scale::Normalized)
            .map_err(|e| e.to_string())?;
        if cells.len() != 4 {
            return Err(format!("expected 4 ablation cells, got {}", cells.len()));
        }
        for c in &cells {
            if !c.mse.is_finite() || !c.mae.is_finite() {
                return Err(format!("non-finite ablation metrics in {c:?}"));
            }
        }

        // zero-step equivalence: (single, cosine) == (mtl, cosine)
        cfg.metric = SimilarityMetric::Cosine;
        cfg.task_mode = TaskMode::Mtl;
        let mtl = ForecastModel::new_toy(cfg.clone()).map_err(|e| e.to_string())?;
        cfg.task_mode = TaskMode::Single;
        let single = ForecastModel::new_toy(cfg.clone()).map_err(|e| e.to_string())?;
        let w = &synthetic_windows(&cfg, 1, 1, 114)[0];
        let a = mtl.predict(w).map_err(|e| e.to_string())?;
        let b = single.predict(w).map_err(|e| e.to_string())?;
        for (x, y) in a.physical.data.iter().zip(&b.physical.data) {
            if (x - y).abs() > 1e-12 {
                return Err(format!("zero-step outputs diverge: {x} vs {y}"));
            }
        }
        Ok(())
    });
}
