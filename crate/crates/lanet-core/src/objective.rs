//! Training objectives and the training loop.
//!
//! Regression uses a winner-take-all rule: only the mode whose endpoint lands
//! closest to the ground truth receives gradients, with per-step, per-axis
//! Laplace negative log-likelihood on positions and a Laplace term on the
//! wrapped angular error whose scale comes from the heading-confidence head.
//! Classification trains the mixing coefficients against the full mixture
//! likelihood with the component locations and scales detached.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::decoder::{ForecastVars, Truth};
use crate::error::{Error, Result};
use crate::model::LaNetModel;
use crate::nn::graph::Var;
use crate::nn::Session;
use crate::scene::Scene;

/// Scalar loss terms of one training step (or one scene).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_propose: f64,
    pub l_refine: f64,
    pub l_cls: f64,
    pub total: f64,
    pub lambda: f64,
    /// Winning mode per target agent (refined stage).
    pub winners: Vec<usize>,
}

/// Loss terms as graph nodes, for backprop.
pub struct LossVars {
    pub l_propose: Var,
    pub l_refine: Var,
    pub l_cls: Var,
    pub total: Var,
    pub winners: Vec<usize>,
}

fn tiled_truth_leaf(sess: &mut Session, truth: &Truth, k: usize) -> Var {
    let t = truth.positions.len();
    let mut arr = Array2::zeros((k * t, 2));
    for m in 0..k {
        for (step, p) in truth.positions.iter().enumerate() {
            arr[(m * t + step, 0)] = p[0];
            arr[(m * t + step, 1)] = p[1];
        }
    }
    sess.g.leaf(arr)
}

/// Negative log-likelihood of the Laplace mixture (positions only), computed
/// in log space over the valid future steps.
///
/// With `stop_grad_components` the locations and scales are detached, so
/// gradients reach only the mode logits.
pub fn laplace_mixture_nll(
    sess: &mut Session,
    fv: &ForecastVars,
    truth: &Truth,
    stop_grad_components: bool,
) -> Result<Var> {
    let (loc, scale) = if stop_grad_components {
        (sess.g.detach(fv.locations), sess.g.detach(fv.scales))
    } else {
        (fv.locations, fv.scales)
    };
    laplace_mixture_nll_with_components(sess, fv.logits, loc, scale, truth)
}

/// [`laplace_mixture_nll`] over explicitly supplied component nodes.
///
/// The finite-difference harness feeds constant leaves here: a detached
/// branch cannot be probed by perturbation, so the checkable function holds
/// the components at their reference values.
pub fn laplace_mixture_nll_with_components(
    sess: &mut Session,
    logits: Var,
    loc: Var,
    scale: Var,
    truth: &Truth,
) -> Result<Var> {
    truth.require_valid()?;
    let t = truth.positions.len();
    let rows = sess.g.rows(loc);
    debug_assert_eq!(rows % t, 0);
    let k = rows / t;
    let truth_tiled = tiled_truth_leaf(sess, truth, k);
    let resid = sess.g.sub(loc, truth_tiled);
    let a = sess.g.abs(resid);
    let ratio = sess.g.div(a, scale);
    let two_b = sess.g.scalar_mul(scale, 2.0);
    let log_norm = sess.g.ln(two_b);
    let per_entry = sess.g.add(ratio, log_norm);
    let per_row = sess.g.sum_cols(per_entry);

    let valid_rows: Vec<usize> = (0..k)
        .flat_map(|m| {
            truth
                .valid
                .iter()
                .enumerate()
                .filter(|(_, &v)| v)
                .map(move |(step, _)| m * t + step)
        })
        .collect();
    let seg: Vec<usize> = (0..k)
        .flat_map(|m| std::iter::repeat_n(m, truth.num_valid()))
        .collect();
    let gathered = sess.g.gather_rows(per_row, &valid_rows);
    let per_mode_nll = sess.g.segment_sum(gathered, &seg, k);
    let comp_ll = sess.g.neg(per_mode_nll);

    let lse_logits = sess.g.logsumexp_rows(logits);
    let neg_lse = sess.g.neg(lse_logits);
    let log_alpha_row = sess.g.add_col(logits, neg_lse);
    let log_alpha = sess.g.transpose(log_alpha_row);
    let mix = sess.g.add(log_alpha, comp_ll);
    let mix_row = sess.g.transpose(mix);
    let log_g = sess.g.logsumexp_rows(mix_row);
    Ok(sess.g.neg(log_g))
}

/// Index of the last valid future step.
fn last_valid_step(truth: &Truth) -> Result<usize> {
    truth
        .valid
        .iter()
        .rposition(|&v| v)
        .ok_or_else(|| Error::invalid("truth has no valid future step"))
}

/// Winning mode: minimum displacement to the truth at the last valid step,
/// ties broken by lower index. Chosen from values, outside the graph.
pub fn select_winner(sess: &Session, fv: &ForecastVars, truth: &Truth) -> Result<usize> {
    let t_last = last_valid_step(truth)?;
    let t = truth.positions.len();
    let loc = sess.g.value(fv.locations);
    let k = loc.nrows() / t;
    let q = truth.positions[t_last];
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for m in 0..k {
        let r = m * t + t_last;
        let dx = loc[(r, 0)] - q[0];
        let dy = loc[(r, 1)] - q[1];
        let d = (dx * dx + dy * dy).sqrt();
        if d < best_d {
            best_d = d;
            best = m;
        }
    }
    Ok(best)
}

/// Winner-take-all regression loss: position NLL plus the heading term, over
/// valid future steps of the winning mode only.
pub fn wta_regression_loss(
    sess: &mut Session,
    fv: &ForecastVars,
    truth: &Truth,
) -> Result<(Var, usize)> {
    truth.require_valid()?;
    let winner = select_winner(sess, fv, truth)?;
    Ok((wta_regression_loss_for(sess, fv, truth, winner)?, winner))
}

/// [`wta_regression_loss`] with the winning mode pinned by the caller.
///
/// Finite-difference verification needs this: the winner is a discrete
/// choice, so the checkable gradient is that of the active branch.
pub fn wta_regression_loss_for(
    sess: &mut Session,
    fv: &ForecastVars,
    truth: &Truth,
    winner: usize,
) -> Result<Var> {
    truth.require_valid()?;
    let t = truth.positions.len();
    let valid_rows: Vec<usize> = truth
        .valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(step, _)| winner * t + step)
        .collect();
    let valid_steps: Vec<usize> = truth
        .valid
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .map(|(step, _)| step)
        .collect();

    let loc = sess.g.gather_rows(fv.locations, &valid_rows);
    let scale = sess.g.gather_rows(fv.scales, &valid_rows);
    let truth_arr = Array2::from_shape_fn((valid_steps.len(), 2), |(i, j)| {
        truth.positions[valid_steps[i]][j]
    });
    let truth_leaf = sess.g.leaf(truth_arr);
    let resid = sess.g.sub(loc, truth_leaf);
    let a = sess.g.abs(resid);
    let ratio = sess.g.div(a, scale);
    let two_b = sess.g.scalar_mul(scale, 2.0);
    let log_norm = sess.g.ln(two_b);
    let pos_terms = sess.g.add(ratio, log_norm);
    let pos_nll = sess.g.sum_all(pos_terms);

    let heading = sess.g.gather_rows(fv.headings, &valid_rows);
    let heading_scale = sess.g.gather_rows(fv.heading_scale, &valid_rows);
    let truth_heading = Array2::from_shape_fn((valid_steps.len(), 1), |(i, _)| {
        truth.headings[valid_steps[i]]
    });
    let th_leaf = sess.g.leaf(truth_heading);
    let raw_err = sess.g.sub(heading, th_leaf);
    let wrapped = sess.g.wrap_angle(raw_err);
    let abs_err = sess.g.abs(wrapped);
    let h_ratio = sess.g.div(abs_err, heading_scale);
    let two_bh = sess.g.scalar_mul(heading_scale, 2.0);
    let h_norm = sess.g.ln(two_bh);
    let h_terms = sess.g.add(h_ratio, h_norm);
    let h_nll = sess.g.sum_all(h_terms);

    Ok(sess.g.add(pos_nll, h_nll))
}

/// Discrete and detached quantities pinned from a reference forward pass,
/// making the full loss finite-difference checkable: WTA winners are argmin
/// selections, and the classification term's components are stop-gradient
/// constants by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PinnedWinners {
    pub proposal: Vec<usize>,
    pub refined: Vec<usize>,
    /// Reference `(locations, scales)` per target agent for the
    /// classification term.
    pub cls_components: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Total objective: proposal WTA + refinement WTA + λ · classification,
/// each term averaged over target agents.
pub fn total_loss(
    sess: &mut Session,
    proposal: &[ForecastVars],
    refined: &[ForecastVars],
    truths: &[Truth],
    lambda: f64,
) -> Result<LossVars> {
    total_loss_impl(sess, proposal, refined, truths, lambda, None)
}

/// [`total_loss`] with the winning modes pinned; see
/// [`wta_regression_loss_for`].
pub fn total_loss_pinned(
    sess: &mut Session,
    proposal: &[ForecastVars],
    refined: &[ForecastVars],
    truths: &[Truth],
    lambda: f64,
    pins: &PinnedWinners,
) -> Result<LossVars> {
    total_loss_impl(sess, proposal, refined, truths, lambda, Some(pins))
}

fn total_loss_impl(
    sess: &mut Session,
    proposal: &[ForecastVars],
    refined: &[ForecastVars],
    truths: &[Truth],
    lambda: f64,
    pins: Option<&PinnedWinners>,
) -> Result<LossVars> {
    assert_eq!(proposal.len(), refined.len());
    assert_eq!(proposal.len(), truths.len());
    if proposal.is_empty() {
        return Err(Error::invalid("total_loss: no target agents"));
    }
    let n = proposal.len() as f64;
    let mut prop_terms = Vec::with_capacity(proposal.len());
    let mut ref_terms = Vec::with_capacity(proposal.len());
    let mut cls_terms = Vec::with_capacity(proposal.len());
    let mut winners = Vec::with_capacity(proposal.len());
    for i in 0..proposal.len() {
        let wp = match pins {
            Some(p) => p.proposal[i],
            None => select_winner(sess, &proposal[i], &truths[i])?,
        };
        let wr = match pins {
            Some(p) => p.refined[i],
            None => select_winner(sess, &refined[i], &truths[i])?,
        };
        let lp = wta_regression_loss_for(sess, &proposal[i], &truths[i], wp)?;
        let lr = wta_regression_loss_for(sess, &refined[i], &truths[i], wr)?;
        let lc = match pins {
            Some(p) => {
                let loc = sess.g.leaf(p.cls_components[i].0.clone());
                let scale = sess.g.leaf(p.cls_components[i].1.clone());
                laplace_mixture_nll_with_components(sess, refined[i].logits, loc, scale, &truths[i])?
            }
            None => laplace_mixture_nll(sess, &refined[i], &truths[i], true)?,
        };
        prop_terms.push(lp);
        ref_terms.push(lr);
        cls_terms.push(lc);
        winners.push(wr);
    }
    let sum = |sess: &mut Session, terms: &[Var]| {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = sess.g.add(acc, t);
        }
        sess.g.scalar_mul(acc, 1.0 / n)
    };
    let l_propose = sum(sess, &prop_terms);
    let l_refine = sum(sess, &ref_terms);
    let l_cls = sum(sess, &cls_terms);
    let reg = sess.g.add(l_propose, l_refine);
    let weighted_cls = sess.g.scalar_mul(l_cls, lambda);
    let total = sess.g.add(reg, weighted_cls);
    Ok(LossVars {
        l_propose,
        l_refine,
        l_cls,
        total,
        winners,
    })
}

impl LossVars {
    pub fn breakdown(&self, sess: &Session, lambda: f64) -> LossBreakdown {
        LossBreakdown {
            l_propose: sess.g.scalar(self.l_propose),
            l_refine: sess.g.scalar(self.l_refine),
            l_cls: sess.g.scalar(self.l_cls),
            total: sess.g.scalar(self.total),
            lambda,
            winners: self.winners.clone(),
        }
    }
}

/// Ground truths for every decoded target of a scene.
pub fn scene_truths(scene: &Scene, target_agents: &[usize]) -> Vec<Truth> {
    target_agents
        .iter()
        .map(|&a| {
            Truth::from_track(
                &scene.agents[a],
                scene.config.history_steps,
                scene.config.future_steps,
            )
        })
        .collect()
}

/// Training-run hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub steps: usize,
    /// Scenes per step; 0 uses the whole dataset each step.
    pub batch_size: usize,
    /// Seeds the scene-order shuffle.
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Linear learning-rate warmup over this many steps (0 disables).
    pub warmup_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            lr: 0.004,
            steps: 250,
            batch_size: 0,
            seed: 0,
            beta1: 0.8,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: 400,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be >= 0"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must be in [0, 1)"));
        }
        Ok(())
    }
}

/// One row of the emitted loss curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub l_propose: f64,
    pub l_refine: f64,
    pub l_cls: f64,
    pub total: f64,
}

/// First-order adaptive-moment gradient descent over the model parameters.
///
/// Deterministic given the config seed: scene order, batching, and update
/// order are all fixed. Aborts with [`Error::Diverged`] on a non-finite
/// loss.
pub fn train(
    model: &mut LaNetModel,
    scenes: &[Scene],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord),
) -> Result<Vec<StepRecord>> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::invalid("train: empty dataset"));
    }
    for scene in scenes {
        model.check_scene(scene)?;
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let batch = if cfg.batch_size == 0 {
        scenes.len()
    } else {
        cfg.batch_size.min(scenes.len())
    };

    let mut adam_m: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut adam_v: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    let mut curve = Vec::with_capacity(cfg.steps);
    let mut cursor = 0usize;

    for step in 0..cfg.steps {
        model.store_mut().zero_grads();
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for i in 0..batch {
            let scene = &scenes[order[(cursor + i) % scenes.len()]];
            let mut fwd = model.forward(scene, true, None)?;
            let truths = scene_truths(scene, &fwd.output.target_agents);
            let loss = total_loss(
                &mut fwd.sess,
                &fwd.output.proposal,
                &fwd.output.refined,
                &truths,
                cfg.lambda,
            )?;
            let bd = loss.breakdown(&fwd.sess, cfg.lambda);
            sums.0 += bd.l_propose;
            sums.1 += bd.l_refine;
            sums.2 += bd.l_cls;
            sums.3 += bd.total;
            let (_, grads) = fwd.sess.grads(loss.total);
            model.store_mut().accumulate_grads(&grads, 1.0 / batch as f64);
        }
        cursor = (cursor + batch) % scenes.len();
        let record = StepRecord {
            step,
            l_propose: sums.0 / batch as f64,
            l_refine: sums.1 / batch as f64,
            l_cls: sums.2 / batch as f64,
            total: sums.3 / batch as f64,
        };
        if !record.total.is_finite() {
            return Err(Error::Diverged {
                step,
                detail: format!(
                    "total={} (propose={}, refine={}, cls={})",
                    record.total, record.l_propose, record.l_refine, record.l_cls
                ),
            });
        }

        // Adam update in sorted parameter order.
        let lr = if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
            cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64
        } else {
            cfg.lr
        };
        let t = (step + 1) as f64;
        let bias1 = 1.0 - cfg.beta1.powf(t);
        let bias2 = 1.0 - cfg.beta2.powf(t);
        let names: Vec<String> = model.store().names().map(str::to_string).collect();
        for name in &names {
            let g = model.store().grad(name).clone();
            let m = adam_m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            *m *= cfg.beta1;
            m.scaled_add(1.0 - cfg.beta1, &g);
            let v = adam_v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.raw_dim()));
            *v *= cfg.beta2;
            let g2 = &g * &g;
            v.scaled_add(1.0 - cfg.beta2, &g2);
            let m_hat = m.mapv(|x| x / bias1);
            let v_hat = v.mapv(|x| x / bias2);
            let mut value = model.store().value(name).clone();
            ndarray::Zip::from(&mut value)
                .and(&m_hat)
                .and(&v_hat)
                .for_each(|p, &mh, &vh| {
                    *p -= lr * mh / (vh.sqrt() + cfg.adam_eps);
                });
            model.store_mut().set(name, value);
        }

        on_step(&record);
        curve.push(record);
    }
    Ok(curve)
}
