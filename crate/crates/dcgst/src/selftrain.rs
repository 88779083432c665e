//! The self-training orchestrator: pretraining, per-stage joint
//! teacher/edge-predictor training on sampled graph variants,
//! discrepancy-guided pseudo-label selection, stopping, and the final
//! student — plus the confidence-only baseline and the plain classifier.

use std::rc::Rc;
use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{AdamState, Tape};
use crate::edgepredictor::{
    bce_pairs, bce_targets, edit_pairs, ep_forward, pair_probs, sample_variant_with,
    select_edit_candidates, FrozenGumbel, GumbelSource, NoiseForm, RngGumbel,
};
use crate::error::{DcgstError, Result};
use crate::gcnmodel::{
    accuracy, ce_loss, forward, forward_eval, init_params, GcnParams, GraphInput,
};
use crate::graphdata::{normalized_adjacency, Graph, NormalizedAdjacency, Split};
use crate::pseudoselect::{
    candidate_set, ner_table, next_k, optimize_q, select_top, QConfig,
};
use crate::shiftmetrics::{cmd, cmd_node, CmdConfig};

/// Every knob of a run. Defaults follow the reference configuration for
/// citation-style graphs; `alpha`, `beta`, `gamma` are the dataset-specific
/// weights of the discrepancy, edge-predictor, and entropy-reward terms.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Per-class candidate cap growth ratio across stages.
    pub lambda: f64,
    /// Relaxed-Bernoulli temperature.
    pub tau: f64,
    pub lr: f64,
    pub l2: f64,
    pub hidden: usize,
    /// Edge-predictor embedding width.
    pub ep_dim: usize,
    pub dropout: f64,
    /// Dropout of the edge-predictor encoder, separate from the classifier's
    /// so the two can be tuned independently.
    pub ep_dropout: f64,
    pub pretrain_epochs: usize,
    pub stage_epochs: usize,
    pub ep_pretrain_epochs: usize,
    pub q_steps: usize,
    pub max_stages: usize,
    /// Stages without a new discrepancy minimum before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Edit-candidate node budget; `None` means min(100, n/4).
    pub m: Option<usize>,
    /// Edit-candidate pair budget; `None` means min(1000, 4|E|).
    pub e: Option<usize>,
    /// Addable absent partners considered per candidate node.
    pub adds_per_node: usize,
    /// Reinitialize the teacher each stage instead of warm-starting.
    pub cold_start: bool,
    /// Number of central moments in the discrepancy.
    pub k_max: usize,
    /// Replace Gumbel noise with this constant (test/debug hook).
    pub freeze_gumbel: Option<f64>,
    /// Use logistic noise (unbiased hard samples) instead of the
    /// single-Gumbel form.
    pub logistic_noise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 8.0,
            beta: 0.3,
            gamma: 0.1,
            lambda: 0.5,
            tau: 1.2,
            lr: 0.01,
            l2: 5e-4,
            hidden: 64,
            ep_dim: 16,
            dropout: 0.5,
            ep_dropout: 0.5,
            pretrain_epochs: 200,
            stage_epochs: 100,
            ep_pretrain_epochs: 200,
            q_steps: 300,
            max_stages: 20,
            patience: 5,
            seed: 0,
            m: None,
            e: None,
            adds_per_node: 4,
            cold_start: false,
            k_max: 5,
            freeze_gumbel: None,
            logistic_noise: false,
        }
    }
}

impl TrainConfig {
    pub fn effective_m(&self, n: usize) -> usize {
        self.m.unwrap_or_else(|| 100.min(n / 4))
    }

    pub fn effective_e(&self, edge_count: usize) -> usize {
        self.e.unwrap_or_else(|| 1000.min(4 * edge_count))
    }

    fn gumbel<'a>(&self, rng: &'a mut ChaCha8Rng) -> Box<dyn GumbelSource + 'a> {
        match self.freeze_gumbel {
            Some(c) => Box::new(FrozenGumbel(c)),
            None => Box::new(RngGumbel(rng)),
        }
    }
}

/// One row of per-stage reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: usize,
    /// Discrepancy between the (pseudo-)labeled and test embeddings on the
    /// original graph.
    pub cmd_value: f64,
    pub acc_train: f64,
    pub acc_val: f64,
    pub acc_test: f64,
    /// Size of the augmented training set.
    pub aug_size: usize,
    /// Final training loss of the stage.
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub stages: Vec<StageReport>,
    pub best_stage: usize,
    pub student_test_acc: f64,
    /// Argmax predictions for every node outside the labeled set.
    pub predictions: Vec<(usize, usize)>,
}

fn dropout_params(cfg: &TrainConfig, mut p: GcnParams) -> GcnParams {
    p.dropout_rate = cfg.dropout;
    p
}

/// Validation accuracy if a validation set exists, else training accuracy.
fn val_metric(
    logits: &Array2<f64>,
    labels: &[usize],
    split: &Split,
    train_nodes: &[usize],
) -> f64 {
    let set = if split.validation.is_empty() {
        train_nodes
    } else {
        &split.validation
    };
    accuracy(logits, labels, set).unwrap_or(0.0)
}

/// Train the initial teacher on the labeled set, retaining the checkpoint
/// with the best validation accuracy.
pub fn pretrain(g: &Graph, split: &Split, cfg: &TrainConfig) -> Result<GcnParams> {
    let norm = Rc::new(normalized_adjacency(g).matrix);
    let mut params = dropout_params(
        cfg,
        init_params(g.features.ncols(), cfg.hidden, g.class_count, cfg.seed),
    );
    let mut best = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut adam = AdamState::new(cfg.lr, cfg.l2);
    for _ in 0..cfg.pretrain_epochs {
        let mut tape = Tape::new();
        let x = tape.constant(g.features.clone());
        let f = forward(
            &mut tape,
            &params,
            &GraphInput::Fixed(Rc::clone(&norm)),
            x,
            true,
            true,
            &mut rng,
        )?;
        let loss = ce_loss(&mut tape, f.logits, &g.labels, &split.labeled)?;
        let grads = tape.backward(loss)?;
        let g1 = grads.get(f.w1).unwrap().clone();
        let g2 = grads.get(f.w2).unwrap().clone();
        adam.step(&mut [("w1", &mut params.w1, &g1), ("w2", &mut params.w2, &g2)]);

        let eval = forward_eval(&params, &norm, &g.features);
        let va = val_metric(&eval.logits, &g.labels, split, &split.labeled);
        if va >= best_val {
            best_val = va;
            best = params.clone();
        }
    }
    if cfg.pretrain_epochs == 0 {
        return Ok(params);
    }
    Ok(best)
}

/// One stage of joint teacher + edge-predictor training on sampled graph
/// variants. Targets come from `labels_aug` restricted to `train_nodes`
/// (ground truth plus accepted pseudo-labels). Returns the final loss.
#[allow(clippy::too_many_arguments)]
pub fn train_stage(
    teacher: &mut GcnParams,
    ep: &mut GcnParams,
    g: &Graph,
    norm: &NormalizedAdjacency,
    split: &Split,
    train_nodes: &[usize],
    labels_aug: &[usize],
    unlabeled: &[usize],
    cfg: &TrainConfig,
    pretrain_ep: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if train_nodes.is_empty() {
        return Err(DcgstError::EmptyMask("stage with no training nodes".into()));
    }
    let adj = Rc::new(norm.matrix.clone());
    let m_budget = cfg.effective_m(g.n);
    let e_budget = cfg.effective_e(g.edges.len());

    let mut adam = AdamState::new(cfg.lr, cfg.l2);

    // Reconstruction-only warmup for the edge predictor (first stage).
    if pretrain_ep && cfg.beta > 0.0 {
        let cmd_cfg = CmdConfig::new(cfg.k_max, 0.0, 1.0);
        let eval = forward_eval(teacher, &norm.matrix, &g.features);
        let cands = select_edit_candidates(
            g, &eval.confidences.view(), train_nodes, &split.test, m_budget, e_budget, &cmd_cfg,
            rng,
        )?;
        let pairs = edit_pairs(g, &cands, cfg.adds_per_node, rng);
        if !pairs.is_empty() {
            let rec_pairs = bce_pairs(g, &pairs, rng);
            let targets = Rc::new(bce_targets(g, &rec_pairs));
            let mut ep_adam = AdamState::new(cfg.lr, cfg.l2);
            for _ in 0..cfg.ep_pretrain_epochs {
                let mut tape = Tape::new();
                let x = tape.constant(g.features.clone());
                let f = ep_forward(
                    &mut tape, ep, Rc::clone(&adj), x, &rec_pairs, true, true, rng,
                )?;
                let loss = tape.bce_mean(f.probs, Rc::clone(&targets))?;
                let grads = tape.backward(loss)?;
                let g1 = grads.get(f.encoder.w1).unwrap().clone();
                let g2 = grads.get(f.encoder.w2).unwrap().clone();
                ep_adam.step(&mut [("w1", &mut ep.w1, &g1), ("w2", &mut ep.w2, &g2)]);
            }
        }
    }

    let mut last_loss = 0.0;
    for _ in 0..cfg.stage_epochs {
        // Edit candidates from the current teacher's embeddings on the
        // original graph.
        let use_ep = cfg.beta > 0.0;
        let pairs = if use_ep {
            let cmd_cfg = CmdConfig::new(cfg.k_max, 0.0, 1.0);
            let eval = forward_eval(teacher, &norm.matrix, &g.features);
            let cands = select_edit_candidates(
                g, &eval.confidences.view(), train_nodes, &split.test, m_budget, e_budget,
                &cmd_cfg, rng,
            )?;
            edit_pairs(g, &cands, cfg.adds_per_node, rng)
        } else {
            Vec::new()
        };

        let mut tape = Tape::new();
        let x = tape.constant(g.features.clone());

        let (input, ep_terms) = if !pairs.is_empty() {
            let rec_pairs = bce_pairs(g, &pairs, rng);
            let f = ep_forward(&mut tape, ep, Rc::clone(&adj), x, &pairs, true, true, rng)?;
            let rec_probs = pair_probs(&mut tape, f.encoder.logits, &rec_pairs)?;
            let form = if cfg.logistic_noise {
                NoiseForm::Logistic
            } else {
                NoiseForm::SingleGumbel
            };
            let mut gsrc = cfg.gumbel(rng);
            let variant = sample_variant_with(
                &mut tape, norm, pairs.clone(), f.probs, cfg.tau, gsrc.as_mut(), form,
            )?;
            (
                variant.graph_input(),
                Some((f.encoder.w1, f.encoder.w2, rec_probs, rec_pairs)),
            )
        } else {
            (GraphInput::Fixed(Rc::clone(&adj)), None)
        };

        let tf = forward(&mut tape, teacher, &input, x, true, true, rng)?;
        let ce = ce_loss(&mut tape, tf.logits, labels_aug, train_nodes)?;

        let (loss, ep_nodes) = match &ep_terms {
            Some((ew1, ew2, rec_probs, rec_pairs)) => {
                let targets = Rc::new(bce_targets(g, rec_pairs));
                let bce = tape.bce_mean(*rec_probs, targets)?;
                let mut ep_term = bce;
                if cfg.alpha > 0.0 && !unlabeled.is_empty() {
                    // Discrepancy over softmax outputs: bounded support, so
                    // the span is fixed and stages stay comparable.
                    let cmd_cfg = CmdConfig::new(cfg.k_max, 0.0, 1.0);
                    let probs = tape.row_softmax(tf.logits);
                    let z_u = tape.gather_rows(probs, Rc::new(unlabeled.to_vec()))?;
                    let z_ca = tape.gather_rows(probs, Rc::new(train_nodes.to_vec()))?;
                    let d = cmd_node(&mut tape, z_u, z_ca, &cmd_cfg)?;
                    let scaled = tape.scale(d, cfg.alpha);
                    ep_term = tape.add(bce, scaled)?;
                }
                let weighted = tape.scale(ep_term, cfg.beta);
                (tape.add(ce, weighted)?, Some((*ew1, *ew2)))
            }
            None => (ce, None),
        };

        last_loss = tape.scalar(loss);
        let grads = tape.backward(loss)?;
        let g1 = grads.get(tf.w1).unwrap().clone();
        let g2 = grads.get(tf.w2).unwrap().clone();
        match ep_nodes {
            Some((ew1, ew2)) => {
                let e1 = grads.get(ew1).unwrap().clone();
                let e2 = grads.get(ew2).unwrap().clone();
                adam.step(&mut [
                    ("tw1", &mut teacher.w1, &g1),
                    ("tw2", &mut teacher.w2, &g2),
                    ("ew1", &mut ep.w1, &e1),
                    ("ew2", &mut ep.w2, &e2),
                ]);
            }
            None => {
                adam.step(&mut [
                    ("tw1", &mut teacher.w1, &g1),
                    ("tw2", &mut teacher.w2, &g2),
                ]);
            }
        }
    }
    Ok(last_loss)
}

/// Fine-tune a copy of the best teacher on the original graph with the
/// augmented label set; returns the student and its predictions on every
/// node outside the ground-truth labeled set.
pub fn train_student(
    best_teacher: &GcnParams,
    g: &Graph,
    split: &Split,
    train_nodes: &[usize],
    labels_aug: &[usize],
    cfg: &TrainConfig,
) -> Result<(GcnParams, Vec<(usize, usize)>, f64)> {
    if train_nodes.is_empty() {
        return Err(DcgstError::EmptyMask("student with no training nodes".into()));
    }
    let norm = Rc::new(normalized_adjacency(g).matrix);
    let mut params = best_teacher.clone();
    let mut best = params.clone();
    let mut best_val = f64::NEG_INFINITY;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x57d));
    let mut adam = AdamState::new(cfg.lr, cfg.l2);
    for _ in 0..cfg.pretrain_epochs {
        let mut tape = Tape::new();
        let x = tape.constant(g.features.clone());
        let f = forward(
            &mut tape,
            &params,
            &GraphInput::Fixed(Rc::clone(&norm)),
            x,
            true,
            true,
            &mut rng,
        )?;
        let loss = ce_loss(&mut tape, f.logits, labels_aug, train_nodes)?;
        let grads = tape.backward(loss)?;
        let g1 = grads.get(f.w1).unwrap().clone();
        let g2 = grads.get(f.w2).unwrap().clone();
        adam.step(&mut [("w1", &mut params.w1, &g1), ("w2", &mut params.w2, &g2)]);

        let eval = forward_eval(&params, &norm, &g.features);
        let va = val_metric(&eval.logits, &g.labels, split, train_nodes);
        if va >= best_val {
            best_val = va;
            best = params.clone();
        }
    }
    let student = if cfg.pretrain_epochs == 0 { params } else { best };
    let eval = forward_eval(&student, &norm, &g.features);
    let labeled: std::collections::HashSet<usize> = split.labeled.iter().copied().collect();
    let predictions: Vec<(usize, usize)> = (0..g.n)
        .filter(|v| !labeled.contains(v))
        .map(|v| (v, crate::gcnmodel::argmax_row(&eval.logits, v)))
        .collect();
    let test_acc = accuracy(&eval.logits, &g.labels, &split.test)?;
    Ok((student, predictions, test_acc))
}

fn stage_report(
    stage: usize,
    teacher: &GcnParams,
    g: &Graph,
    norm: &NormalizedAdjacency,
    split: &Split,
    train_nodes: &[usize],
    labels_aug: &[usize],
    loss: f64,
    seconds: f64,
    k_max: usize,
) -> Result<StageReport> {
    let eval = forward_eval(teacher, &norm.matrix, &g.features);
    let subset = |nodes: &[usize]| {
        let mut out = Array2::zeros((nodes.len(), eval.confidences.ncols()));
        for (r, &v) in nodes.iter().enumerate() {
            out.row_mut(r).assign(&eval.confidences.row(v));
        }
        out
    };
    let z_tr = subset(train_nodes);
    let z_te = subset(&split.test);
    let cmd_cfg = CmdConfig::new(k_max, 0.0, 1.0);
    let cmd_value = cmd(&z_tr.view(), &z_te.view(), &cmd_cfg)?;
    Ok(StageReport {
        stage,
        cmd_value,
        acc_train: accuracy(&eval.logits, labels_aug, train_nodes)?,
        acc_val: if split.validation.is_empty() {
            f64::NAN
        } else {
            accuracy(&eval.logits, &g.labels, &split.validation)?
        },
        acc_test: accuracy(&eval.logits, &g.labels, &split.test)?,
        aug_size: train_nodes.len(),
        loss,
        seconds,
    })
}

/// Shared state of the stage loop for both the full method and the
/// confidence-only baseline.
struct LoopState {
    train_nodes: Vec<usize>,
    labels_aug: Vec<usize>,
    /// Unlabeled nodes still eligible for pseudo-labeling.
    pool: Vec<usize>,
    /// All nodes outside the ground-truth labeled set.
    v_u: Vec<usize>,
    k: usize,
}

impl LoopState {
    fn new(g: &Graph, split: &Split) -> Self {
        let labeled: std::collections::HashSet<usize> = split.labeled.iter().copied().collect();
        let v_u: Vec<usize> = (0..g.n).filter(|v| !labeled.contains(v)).collect();
        LoopState {
            train_nodes: split.labeled.clone(),
            labels_aug: g.labels.clone(),
            pool: v_u.clone(),
            v_u,
            k: split.initial_k().max(1),
        }
    }

    fn accept(&mut self, selected: &[(usize, usize)]) {
        for &(v, label) in selected {
            self.labels_aug[v] = label;
            self.train_nodes.push(v);
        }
        let chosen: std::collections::HashSet<usize> =
            selected.iter().map(|&(v, _)| v).collect();
        self.pool.retain(|v| !chosen.contains(v));
    }
}

/// Run the full multi-stage pipeline.
pub fn run_self_training(g: &Graph, split: &Split, cfg: &TrainConfig) -> Result<RunResult> {
    let norm = normalized_adjacency(g);
    let mut teacher = pretrain(g, split, cfg)?;
    let mut ep = init_params(
        g.features.ncols(),
        cfg.hidden,
        cfg.ep_dim,
        cfg.seed.wrapping_add(1),
    );
    ep.dropout_rate = cfg.ep_dropout;
    let mut state = LoopState::new(g, split);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xa6e));

    let mut stages = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_stage = 0;
    let mut best_teacher = teacher.clone();
    let mut best_train = state.train_nodes.clone();
    let mut best_labels = state.labels_aug.clone();
    let mut cmd_min = f64::INFINITY;
    let mut stall = 0usize;

    for stage in 1..=cfg.max_stages {
        let start = Instant::now();
        if cfg.cold_start && stage > 1 {
            teacher = dropout_params(
                cfg,
                init_params(g.features.ncols(), cfg.hidden, g.class_count, cfg.seed),
            );
        }
        let loss = train_stage(
            &mut teacher,
            &mut ep,
            g,
            &norm,
            split,
            &state.train_nodes.clone(),
            &state.labels_aug.clone(),
            &state.v_u.clone(),
            cfg,
            stage == 1,
            &mut rng,
        )?;
        let report = stage_report(
            stage,
            &teacher,
            g,
            &norm,
            split,
            &state.train_nodes,
            &state.labels_aug,
            loss,
            start.elapsed().as_secs_f64(),
            cfg.k_max,
        )?;
        let val = if report.acc_val.is_nan() {
            report.acc_train
        } else {
            report.acc_val
        };
        if val >= best_val {
            best_val = val;
            best_stage = stage;
            best_teacher = teacher.clone();
            best_train = state.train_nodes.clone();
            best_labels = state.labels_aug.clone();
        }
        let cmd_now = report.cmd_value;
        stages.push(report);
        if cmd_now < cmd_min {
            cmd_min = cmd_now;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }

        // Selection on the ORIGINAL graph with the current teacher.
        if !state.pool.is_empty() && stage < cfg.max_stages {
            let eval = forward_eval(&teacher, &norm.matrix, &g.features);
            let cands = candidate_set(&eval.confidences, &state.pool, state.k);
            if !cands.is_empty() {
                let delta = state.k.div_ceil(2);
                let ner = ner_table(&eval.logits, g, &norm.matrix, &cands.nodes);
                let subset = |nodes: &[usize]| {
                    let mut out = Array2::zeros((nodes.len(), eval.confidences.ncols()));
                    for (r, &v) in nodes.iter().enumerate() {
                        out.row_mut(r).assign(&eval.confidences.row(v));
                    }
                    out
                };
                let z_u = subset(&state.v_u);
                let z_fixed = subset(&state.train_nodes);
                let z_cand = subset(&cands.nodes);
                let cmd_cfg = CmdConfig::new(cfg.k_max, 0.0, 1.0);
                let qcfg = QConfig {
                    lr: 0.01,
                    steps: cfg.q_steps,
                    gamma: cfg.gamma,
                    delta,
                };
                let q = optimize_q(&z_u, &z_fixed, &z_cand, &ner, &qcfg, &cmd_cfg)?;
                let selected = select_top(&q, &cands, delta);
                state.accept(&selected);
            }
            state.k = next_k(state.k, cfg.lambda);
        }
    }

    let (_, predictions, student_test_acc) =
        train_student(&best_teacher, g, split, &best_train, &best_labels, cfg)?;
    Ok(RunResult {
        stages,
        best_stage,
        student_test_acc,
        predictions,
    })
}

/// Confidence-only self-training baseline: no edge predictor, selection by
/// raw confidence, stopping on a validation-accuracy plateau.
pub fn st_baseline(g: &Graph, split: &Split, cfg: &TrainConfig) -> Result<RunResult> {
    let norm = normalized_adjacency(g);
    let mut teacher = pretrain(g, split, cfg)?;
    let mut state = LoopState::new(g, split);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xa6e));
    // The baseline ignores the discrepancy and edge-predictor machinery.
    let plain = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..cfg.clone()
    };
    let mut ep =
        init_params(g.features.ncols(), cfg.hidden, cfg.ep_dim, cfg.seed.wrapping_add(1));
    ep.dropout_rate = cfg.ep_dropout;

    let mut stages = Vec::new();
    let mut best_val = f64::NEG_INFINITY;
    let mut best_stage = 0;
    let mut best_teacher = teacher.clone();
    let mut best_train = state.train_nodes.clone();
    let mut best_labels = state.labels_aug.clone();
    let mut val_best = f64::NEG_INFINITY;
    let mut stall = 0usize;

    for stage in 1..=cfg.max_stages {
        let start = Instant::now();
        let loss = train_stage(
            &mut teacher,
            &mut ep,
            g,
            &norm,
            split,
            &state.train_nodes.clone(),
            &state.labels_aug.clone(),
            &state.v_u.clone(),
            &plain,
            false,
            &mut rng,
        )?;
        let report = stage_report(
            stage,
            &teacher,
            g,
            &norm,
            split,
            &state.train_nodes,
            &state.labels_aug,
            loss,
            start.elapsed().as_secs_f64(),
            cfg.k_max,
        )?;
        let val = if report.acc_val.is_nan() {
            report.acc_train
        } else {
            report.acc_val
        };
        if val >= best_val {
            best_val = val;
            best_stage = stage;
            best_teacher = teacher.clone();
            best_train = state.train_nodes.clone();
            best_labels = state.labels_aug.clone();
        }
        stages.push(report);
        if val > val_best {
            val_best = val;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                break;
            }
        }

        if !state.pool.is_empty() && stage < cfg.max_stages {
            let eval = forward_eval(&teacher, &norm.matrix, &g.features);
            let cands = candidate_set(&eval.confidences, &state.pool, state.k);
            if !cands.is_empty() {
                let delta = state.k.div_ceil(2);
                // Raw confidence plays the role of q.
                let selected = select_top(&cands.confidences.clone(), &cands, delta);
                state.accept(&selected);
            }
            state.k = next_k(state.k, cfg.lambda);
        }
    }

    let (_, predictions, student_test_acc) =
        train_student(&best_teacher, g, split, &best_train, &best_labels, cfg)?;
    Ok(RunResult {
        stages,
        best_stage,
        student_test_acc,
        predictions,
    })
}

/// Plain classifier baseline: pretrain only, no self-training.
pub fn gcn_baseline(g: &Graph, split: &Split, cfg: &TrainConfig) -> Result<RunResult> {
    let start = Instant::now();
    let norm = normalized_adjacency(g);
    let teacher = pretrain(g, split, cfg)?;
    let report = stage_report(
        1,
        &teacher,
        g,
        &norm,
        split,
        &split.labeled,
        &g.labels,
        f64::NAN,
        start.elapsed().as_secs_f64(),
        cfg.k_max,
    )?;
    let eval = forward_eval(&teacher, &norm.matrix, &g.features);
    let labeled: std::collections::HashSet<usize> = split.labeled.iter().copied().collect();
    let predictions: Vec<(usize, usize)> = (0..g.n)
        .filter(|v| !labeled.contains(v))
        .map(|v| (v, crate::gcnmodel::argmax_row(&eval.logits, v)))
        .collect();
    let student_test_acc = report.acc_test;
    Ok(RunResult {
        stages: vec![report],
        best_stage: 1,
        student_test_acc,
        predictions,
    })
}
