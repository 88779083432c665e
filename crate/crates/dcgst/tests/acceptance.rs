//! Acceptance suite: one test per acceptance criterion, each printing a
//! single pass/fail line in the harness output.
//!
//! The end-to-end criteria (5–7) share one set of trained runs through a
//! `OnceLock`, so the expensive training happens once regardless of test
//! order.

use std::rc::Rc;
use std::sync::OnceLock;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dcgst::diffcore::{finite_diff_check, Tape};
use dcgst::edgepredictor::{bce_targets, ep_forward, sample_variant, FrozenGumbel};
use dcgst::gcnmodel::{forward, init_params, GcnParams, GraphInput};
use dcgst::graphdata::{
    make_split, normalized_adjacency, synthetic::sbm_graph, synthetic::SbmConfig, Graph,
    SplitMode,
};
use dcgst::pseudoselect::{optimize_q, select_top, CandidateSet, QConfig};
use dcgst::selftrain::{gcn_baseline, run_self_training, st_baseline, RunResult, TrainConfig};
use dcgst::shiftmetrics::{cmd, cmd_weighted, cmd_weighted_node, CmdConfig};

// ---- reference experiment configuration ----------------------------------

/// The benchmark task: a 1000-node two-block SBM with 90% edge homophily,
/// noisy Gaussian features, PPR-biased splits at a 2% label rate.
fn benchmark_graph() -> Graph {
    sbm_graph(
        &SbmConfig {
            block_size: 500,
            p_in: 0.006,
            p_out: 0.0,
            feature_dim: 16,
            feature_noise: 8.0,
            seed: 42,
        }
        .with_homophily(0.9),
    )
}

const LABEL_RATE: f64 = 0.02;
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Full-method configuration used for the headline numbers. The graph is
/// sparse (average degree ~3), so the edit budgets are kept small and the
/// edge-predictor loss weights moderate; unbiased logistic noise keeps the
/// sampled variants close to the learned edge probabilities.
fn reference_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        logistic_noise: true,
        alpha: 2.0,
        beta: 0.1,
        m: Some(4),
        e: Some(20),
        patience: 12,
        ..TrainConfig::default()
    }
}

// ---- criterion 1: gradient soundness --------------------------------------

fn tiny_graph(seed: u64) -> Graph {
    sbm_graph(&SbmConfig {
        block_size: 5,
        p_in: 0.7,
        p_out: 0.3,
        feature_dim: 4,
        feature_noise: 0.6,
        seed,
    })
}

/// Composite stage loss CE + beta * (BCE + alpha * CMD) with *relaxed* edge
/// values in the propagation operator, as a plain function of the four
/// weight matrices. The relaxed values make the whole chain differentiable,
/// so central differences are an exact oracle.
#[allow(clippy::too_many_arguments)]
fn stage_loss(
    g: &Graph,
    tw1: &Array2<f64>,
    tw2: &Array2<f64>,
    ew1: &Array2<f64>,
    ew2: &Array2<f64>,
    pairs: &[(usize, usize)],
    train_nodes: &[usize],
    unlabeled: &[usize],
    alpha: f64,
    beta: f64,
) -> (f64, Tape, [dcgst::diffcore::NodeId; 4]) {
    let norm = normalized_adjacency(g);
    let norm_rc = Rc::new(norm.matrix.clone());
    let teacher = GcnParams {
        w1: tw1.clone(),
        w2: tw2.clone(),
        dropout_rate: 0.0,
    };
    let ep = GcnParams {
        w1: ew1.clone(),
        w2: ew2.clone(),
        dropout_rate: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new();
    let x = tape.constant(g.features.clone());
    let epf = ep_forward(
        &mut tape,
        &ep,
        Rc::clone(&norm_rc),
        x,
        pairs,
        false,
        true,
        &mut rng,
    )
    .unwrap();
    let variant = sample_variant(
        &mut tape,
        &norm,
        pairs.to_vec(),
        epf.probs,
        1.2,
        &mut FrozenGumbel(0.3),
    )
    .unwrap();
    // Differentiable propagation: relaxed values instead of the rounded ones.
    let input = GraphInput::Edited {
        base: Rc::clone(&variant.base),
        pairs: Rc::clone(&variant.pairs),
        coeffs: Rc::clone(&variant.coeffs),
        edge_vals: variant.relaxed,
    };
    let tf = forward(&mut tape, &teacher, &input, x, false, true, &mut rng).unwrap();
    let ce = tape
        .masked_cross_entropy(tf.logits, Rc::new(g.labels.clone()), Rc::new(train_nodes.to_vec()))
        .unwrap();
    let targets = Rc::new(bce_targets(g, pairs));
    let bce = tape.bce_mean(epf.probs, targets).unwrap();
    let probs_all = tape.row_softmax(tf.logits);
    let p_u = tape
        .gather_rows(probs_all, Rc::new(unlabeled.to_vec()))
        .unwrap();
    let p_tr = tape
        .gather_rows(probs_all, Rc::new(train_nodes.to_vec()))
        .unwrap();
    let dsc = dcgst::shiftmetrics::cmd_node(&mut tape, p_u, p_tr, &CmdConfig::new(5, 0.0, 1.0))
        .unwrap();
    let inner = tape.scale(dsc, alpha);
    let ep_term = tape.add(bce, inner).unwrap();
    let weighted = tape.scale(ep_term, beta);
    let loss = tape.add(ce, weighted).unwrap();
    let v = tape.scalar(loss);
    (v, tape, [epf.encoder.w1, epf.encoder.w2, tf.w1, tf.w2])
}

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for gseed in [1u64, 2, 3] {
        let g = tiny_graph(gseed);
        let train_nodes = vec![0, 1, 5, 6];
        let unlabeled: Vec<usize> = (0..g.n).filter(|v| !train_nodes.contains(v)).collect();
        // One existing edge and one absent pair per block boundary.
        let mut pairs = vec![g.edges[0], g.edges[g.edges.len() - 1]];
        'outer: for u in 0..g.n {
            for v in (u + 1)..g.n {
                if !g.has_edge(u, v) && !pairs.contains(&(u, v)) {
                    pairs.push((u, v));
                    break 'outer;
                }
            }
        }
        let tw1 = init_params(4, 6, 2, 100 + gseed).w1;
        let tw2 = init_params(6, 6, 2, 200 + gseed).w1;
        let ew1 = init_params(4, 5, 3, 300 + gseed).w1;
        let ew2 = init_params(5, 5, 3, 400 + gseed).w1;

        let (_, tape, leaves) = stage_loss(
            &g, &tw1, &tw2, &ew1, &ew2, &pairs, &train_nodes, &unlabeled, 8.0, 0.3,
        );
        // Re-derive the loss node: it is the last node on the tape.
        let loss_id = dcgst::diffcore::NodeId(tape.len() - 1);
        let mut grads = tape.backward(loss_id).unwrap();

        let mats = [&tw1, &tw2, &ew1, &ew2];
        let grad_ids = [leaves[2], leaves[3], leaves[0], leaves[1]];
        for (slot, (&mat, &gid)) in mats.iter().zip(grad_ids.iter()).enumerate() {
            let analytic = grads.take(gid, mat.dim());
            let loss_fn = |p: &Array2<f64>| {
                let mut ws = [tw1.clone(), tw2.clone(), ew1.clone(), ew2.clone()];
                ws[slot] = p.clone();
                stage_loss(
                    &g, &ws[0], &ws[1], &ws[2], &ws[3], &pairs, &train_nodes, &unlabeled, 8.0,
                    0.3,
                )
                .0
            };
            assert!(
                finite_diff_check(loss_fn, mat, &analytic, 1e-4, 8, 0.0, &mut rng),
                "composite stage-loss gradient mismatch (graph {gseed}, matrix {slot})"
            );
        }

        // Selection objective as a function of q.
        let c = 6usize;
        let d = 2usize;
        let z_u = Array2::from_shape_fn((5, d), |_| rng.gen_range(0.05..0.95));
        let z_fixed = Array2::from_shape_fn((3, d), |_| rng.gen_range(0.05..0.95));
        let z_cand = Array2::from_shape_fn((c, d), |_| rng.gen_range(0.05..0.95));
        let ner: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..0.5)).collect();
        let q0 = Array2::from_shape_fn((c, 1), |_| rng.gen_range(0.3..0.7));
        let (gamma, delta) = (0.1, 2.0);

        let objective = |q: &Array2<f64>| -> (f64, Option<(Tape, dcgst::diffcore::NodeId)>) {
            let mut tape = Tape::new();
            let qn = tape.leaf(q.clone(), true);
            let pu = tape.constant(z_u.clone());
            let zf = tape.constant(z_fixed.clone());
            let zc = tape.constant(z_cand.clone());
            let dsc = cmd_weighted_node(
                &mut tape,
                pu,
                Some(zf),
                zc,
                qn,
                &CmdConfig::new(5, 0.0, 1.0),
            )
            .unwrap();
            let ner_col = tape.constant(Array2::from_shape_fn((c, 1), |(i, _)| ner[i]));
            let prod = tape.mul(qn, ner_col).unwrap();
            let mean = tape.mean_rows(prod);
            let reward = tape.scale(mean, -gamma * c as f64);
            let qmean = tape.mean_rows(qn);
            let qsum = tape.scale(qmean, c as f64);
            let neg_delta = tape.scalar_constant(-delta);
            let over = tape.add(qsum, neg_delta).unwrap();
            let pen = tape.relu(over);
            let a = tape.add(dsc, reward).unwrap();
            let loss = tape.add(a, pen).unwrap();
            let v = tape.scalar(loss);
            (v, Some((tape, qn)))
        };
        let (_, built) = objective(&q0);
        let (tape, qn) = built.unwrap();
        let loss_id = dcgst::diffcore::NodeId(tape.len() - 1);
        let mut grads = tape.backward(loss_id).unwrap();
        let analytic = grads.take(qn, (c, 1));
        assert!(
            finite_diff_check(
                |q: &Array2<f64>| objective(q).0,
                &q0,
                &analytic,
                1e-4,
                c,
                0.0,
                &mut rng
            ),
            "selection-objective gradient mismatch (graph {gseed})"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "gradient suite took {secs:.1}s, budget 60s");
}

// ---- criterion 2: discrepancy axioms and frozen values --------------------

#[test]
fn criterion_2_discrepancy_axioms_and_frozen_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = CmdConfig::new(5, 0.0, 1.0);
    for _ in 0..200 {
        let np = rng.gen_range(1..8);
        let nq = rng.gen_range(1..8);
        let d = rng.gen_range(1..5);
        let p = Array2::from_shape_fn((np, d), |_| rng.gen_range(0.0..1.0));
        let q = Array2::from_shape_fn((nq, d), |_| rng.gen_range(0.0..1.0));
        let pq = cmd(&p.view(), &q.view(), &cfg).unwrap();
        let qp = cmd(&q.view(), &p.view(), &cfg).unwrap();
        assert!(pq >= 0.0, "non-negativity violated: {pq}");
        assert_eq!(pq, qp, "symmetry violated");
        assert_eq!(cmd(&p.view(), &p.view(), &cfg).unwrap(), 0.0, "identity violated");
        // Same first five moments (here: the same set, permuted rows) => 0.
        if np >= 2 {
            let mut perm = p.clone();
            let r0 = perm.row(0).to_owned();
            let r1 = perm.row(1).to_owned();
            perm.row_mut(0).assign(&r1);
            perm.row_mut(1).assign(&r0);
            let v = cmd(&p.view(), &perm.view(), &cfg).unwrap();
            assert!(v < 1e-12, "moment identity violated: {v}");
        }
    }

    // Hand-derived values.
    let p = ndarray::array![[0.0]];
    let q = ndarray::array![[1.0]];
    let v = cmd(&p.view(), &q.view(), &CmdConfig::new(5, 0.0, 1.0)).unwrap();
    assert!((v - 1.0).abs() < 1e-9, "singleton gap should be 1.0, got {v}");

    let p = ndarray::array![[0.0], [1.0]];
    let q = ndarray::array![[0.5]];
    let v = cmd(&p.view(), &q.view(), &CmdConfig::new(2, 0.0, 1.0)).unwrap();
    assert!((v - 0.25).abs() < 1e-9, "variance gap should be 0.25, got {v}");
}

// ---- criterion 3: selection matches exhaustive enumeration ----------------

fn subset_objective(
    z_u: &ArrayView2<f64>,
    z_fixed: &ArrayView2<f64>,
    z_cand: &ArrayView2<f64>,
    ner: &[f64],
    subset: &[usize],
    gamma: f64,
    cfg: &CmdConfig,
) -> f64 {
    let c = z_cand.nrows();
    let mut w = vec![0.0; c];
    for &i in subset {
        w[i] = 1.0;
    }
    let dsc = cmd_weighted(z_u, z_fixed, z_cand, &w, cfg).unwrap();
    let reward: f64 = subset.iter().map(|&i| ner[i]).sum();
    dsc - gamma * reward
}

#[test]
fn criterion_3_selection_matches_exhaustive_optimum() {
    let start = Instant::now();
    let cfg = CmdConfig::new(5, 0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut within = 0usize;
    let total = 50usize;
    for inst in 0..total {
        let c = rng.gen_range(4..=12usize);
        let delta = rng.gen_range(1..=4usize.min(c));
        let d = 8usize;
        let z_u = Array2::from_shape_fn((6, d), |_| rng.gen_range(0.0..1.0));
        let z_fixed = Array2::from_shape_fn((3, d), |_| rng.gen_range(0.0..1.0));
        let z_cand = Array2::from_shape_fn((c, d), |_| rng.gen_range(0.0..1.0));
        let ner: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..0.5)).collect();
        let gamma = 0.1;

        // Exhaustive optimum over all subsets of size <= delta.
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << c) {
            if mask.count_ones() as usize > delta {
                continue;
            }
            let subset: Vec<usize> = (0..c).filter(|i| mask >> i & 1 == 1).collect();
            let v = subset_objective(
                &z_u.view(),
                &z_fixed.view(),
                &z_cand.view(),
                &ner,
                &subset,
                gamma,
                &cfg,
            );
            best = best.min(v);
        }

        // Relaxed optimization + rounding.
        let qcfg = QConfig {
            lr: 0.05,
            steps: 300,
            gamma,
            delta,
        };
        let q = optimize_q(&z_u, &z_fixed, &z_cand, &ner, &qcfg, &cfg).unwrap();
        let cands = CandidateSet {
            nodes: (0..c).collect(),
            pseudo_labels: vec![0; c],
            confidences: vec![0.5; c],
            k: delta,
        };
        let picked: Vec<usize> = select_top(&q, &cands, delta).into_iter().map(|(n, _)| n).collect();
        let achieved = subset_objective(
            &z_u.view(),
            &z_fixed.view(),
            &z_cand.view(),
            &ner,
            &picked,
            gamma,
            &cfg,
        );

        let tol = 0.05 * best.abs().max(1e-9);
        if achieved <= best + tol {
            within += 1;
        } else {
            eprintln!(
                "instance {inst}: achieved {achieved:.6} vs optimum {best:.6} (|C|={c}, delta={delta})"
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(
        within * 100 >= total * 80,
        "selection within 5% of optimum on only {within}/{total} instances"
    );
    assert!(secs < 120.0, "selection suite took {secs:.1}s, budget 120s");
}

// ---- criterion 4: frozen-noise edge decisions ------------------------------

#[test]
fn criterion_4_frozen_noise_threshold_table() {
    let g = dcgst::graphdata::synthetic::two_clique_graph(3, 0);
    let norm = normalized_adjacency(&g);
    // (probability M, frozen noise G, temperature tau) -> expected hard value,
    // from s = sigmoid((ln M + G) / tau) rounded at 1/2, i.e. 1 iff ln M + G >= 0.
    let table: [(f64, f64, f64, f64); 8] = [
        (0.5, 0.0, 1.2, 0.0),   // s = sigmoid(-0.5776) ~ 0.3595
        (0.9, 0.0, 1.2, 0.0),   // s ~ 0.4781
        (0.999999, 0.0, 1.2, 0.0),
        (0.5, 0.7, 1.2, 1.0),   // ln 0.5 + 0.7 > 0
        (0.5, 0.69, 1.2, 0.0),  // ln 0.5 + 0.69 < 0
        (0.04, 3.0, 1.2, 0.0),  // ln 0.04 + 3 < 0
        (0.06, 3.0, 1.2, 1.0),  // ln 0.06 + 3 > 0
        (0.9, 0.0, 0.1, 0.0),   // temperature does not move the threshold
    ];
    for &(m, gnoise, tau, expect) in &table {
        let mut tape = Tape::new();
        let probs = tape.constant(ndarray::array![[m]]);
        let variant = sample_variant(
            &mut tape,
            &norm,
            vec![(0, 3)],
            probs,
            tau,
            &mut FrozenGumbel(gnoise),
        )
        .unwrap();
        let hard = variant.hard_values(&tape)[0];
        assert_eq!(
            hard, expect,
            "hard sample for M={m}, G={gnoise}, tau={tau}"
        );
    }
}

// ---- criteria 5-7: end-to-end runs on the benchmark ------------------------

struct EndToEnd {
    gcn: Vec<RunResult>,
    st: Vec<RunResult>,
    full: Vec<RunResult>,
    beta0: Vec<RunResult>,
    full_seed_seconds: Vec<f64>,
}

fn mean_acc(runs: &[RunResult]) -> f64 {
    runs.iter().map(|r| r.student_test_acc).sum::<f64>() / runs.len() as f64
}

fn end_to_end() -> &'static EndToEnd {
    static E2E: OnceLock<EndToEnd> = OnceLock::new();
    E2E.get_or_init(|| {
        let g = benchmark_graph();
        let mut out = EndToEnd {
            gcn: Vec::new(),
            st: Vec::new(),
            full: Vec::new(),
            beta0: Vec::new(),
            full_seed_seconds: Vec::new(),
        };
        for &seed in &SEEDS {
            let split = make_split(&g, LABEL_RATE, SplitMode::PprBias, seed).unwrap();
            let base = TrainConfig {
                seed,
                ..TrainConfig::default()
            };
            out.gcn.push(gcn_baseline(&g, &split, &base).unwrap());
            out.st.push(st_baseline(&g, &split, &base).unwrap());
            let cfg = reference_config(seed);
            let t0 = Instant::now();
            out.full.push(run_self_training(&g, &split, &cfg).unwrap());
            out.full_seed_seconds.push(t0.elapsed().as_secs_f64());
            let cfg0 = TrainConfig {
                beta: 0.0,
                ..reference_config(seed)
            };
            out.beta0.push(run_self_training(&g, &split, &cfg0).unwrap());
        }
        out
    })
}

#[test]
fn criterion_5_end_to_end_accuracy_ordering() {
    let e = end_to_end();
    let (g, s, f) = (mean_acc(&e.gcn), mean_acc(&e.st), mean_acc(&e.full));
    eprintln!("mean test accuracy: gcn {g:.4}, st {s:.4}, full {f:.4}");
    assert!(
        f >= s + 0.02,
        "full method {f:.4} must beat self-training {s:.4} by 2 points"
    );
    assert!(
        f >= g + 0.04,
        "full method {f:.4} must beat plain GCN {g:.4} by 4 points"
    );
    for (i, &secs) in e.full_seed_seconds.iter().enumerate() {
        assert!(secs < 600.0, "seed {i} took {secs:.0}s, budget 600s");
    }
}

#[test]
fn criterion_6_shift_reduction_and_inverse_trend() {
    let e = end_to_end();
    let mut reduced = 0usize;
    let mut negative = 0usize;
    for (i, run) in e.full.iter().enumerate() {
        let cmds: Vec<f64> = run.stages.iter().map(|s| s.cmd_value).collect();
        let accs: Vec<f64> = run.stages.iter().map(|s| s.acc_test).collect();
        assert!(cmds.len() >= 2, "seed {i} produced fewer than two stages");
        if *cmds.last().unwrap() < cmds[0] {
            reduced += 1;
        }
        let n = cmds.len() as f64;
        let (mc, ma) = (
            cmds.iter().sum::<f64>() / n,
            accs.iter().sum::<f64>() / n,
        );
        let cov: f64 = cmds.iter().zip(&accs).map(|(c, a)| (c - mc) * (a - ma)).sum();
        let vc: f64 = cmds.iter().map(|c| (c - mc).powi(2)).sum();
        let va: f64 = accs.iter().map(|a| (a - ma).powi(2)).sum();
        let pearson = cov / (vc * va).sqrt().max(1e-12);
        eprintln!(
            "seed {i}: first/last discrepancy {:.4}/{:.4}, correlation {pearson:.3}",
            cmds[0],
            cmds.last().unwrap()
        );
        if pearson < 0.0 {
            negative += 1;
        }
    }
    assert!(reduced >= 4, "discrepancy fell in only {reduced}/5 seeds");
    assert!(
        negative >= 4,
        "discrepancy/accuracy correlation negative in only {negative}/5 seeds"
    );
}

#[test]
fn criterion_7_edge_predictor_ablation_direction() {
    let e = end_to_end();
    let (f, b) = (mean_acc(&e.full), mean_acc(&e.beta0));
    eprintln!(
        "ablation gap (full - no edge predictor): {:+.4} ({f:.4} vs {b:.4})",
        f - b
    );
    assert!(
        f >= b,
        "full method {f:.4} must not trail the beta=0 ablation {b:.4}"
    );
}

// ---- criterion 8: deterministic reports ------------------------------------

#[test]
fn criterion_8_reports_are_deterministic() {
    use dcgst::cli::{run_experiment, DatasetSpec, Method, RunSpec};

    let base = tempfile::tempdir().unwrap();
    let spec = |out: std::path::PathBuf| RunSpec {
        dataset: DatasetSpec::Sbm {
            block_size: 60,
            feature_noise: 2.0,
            p_in: 0.05,
        },
        label_rate: 0.1,
        mode: SplitMode::PprBias,
        method: Method::Dcgst,
        train: TrainConfig {
            pretrain_epochs: 30,
            stage_epochs: 10,
            ep_pretrain_epochs: 10,
            q_steps: 30,
            max_stages: 3,
            m: Some(6),
            e: Some(20),
            logistic_noise: true,
            ..TrainConfig::default()
        },
        seeds: vec![0, 1],
        out_dir: out,
    };
    let (a, b) = (base.path().join("a"), base.path().join("b"));
    run_experiment(&spec(a.clone())).unwrap();
    run_experiment(&spec(b.clone())).unwrap();

    // The wall-time column is the one field determinism cannot cover.
    let strip_seconds = |text: String| -> String {
        text.lines()
            .map(|l| l.rsplit_once(',').map_or(l.to_string(), |(rest, _)| rest.to_string()))
            .collect::<Vec<_>>()
            .join("\n")
    };
    for file in ["stages.csv", "summary.csv", "predictions-0.csv", "predictions-1.csv"] {
        let fa = std::fs::read_to_string(a.join(file)).unwrap();
        let fb = std::fs::read_to_string(b.join(file)).unwrap();
        let (fa, fb) = if file == "stages.csv" {
            (strip_seconds(fa), strip_seconds(fb))
        } else {
            (fa, fb)
        };
        assert_eq!(fa, fb, "{file} differs between identical invocations");
    }
}
