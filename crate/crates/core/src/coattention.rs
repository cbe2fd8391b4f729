//! Visual and semantic soft attention conditioned on the previous sentence
//! state, fusion into a joint context vector, and the coverage regulariser.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::config::AttentionMode;
use crate::encoder::mean_rows;
use crate::error::{Error, Result};
use crate::model::names;
use crate::params::ParameterStore;
use crate::tape::{Tape, Var};

thread_local! {
    static ATTENTION_CALLS: Cell<usize> = const { Cell::new(0) };
}

/// Number of attention evaluations made on this thread so far.
pub fn attention_call_count() -> usize {
    ATTENTION_CALLS.with(Cell::get)
}

pub fn reset_attention_call_count() {
    ATTENTION_CALLS.with(|c| c.set(0));
}

struct Branch {
    proj: &'static str,
    hidden: &'static str,
    out: &'static str,
}

const VISUAL: Branch = Branch {
    proj: names::ATT_V,
    hidden: names::ATT_V_H,
    out: names::ATT_V_OUT,
};

const SEMANTIC: Branch = Branch {
    proj: names::ATT_A,
    hidden: names::ATT_A_H,
    out: names::ATT_A_OUT,
};

/// weights ∝ exp(w_out · tanh(W x_i + W_h h)), attended = Σ weights_i x_i.
fn attend(
    tape: &mut Tape,
    store: &ParameterStore,
    branch: &Branch,
    items: Var,
    h_prev: Var,
) -> Result<(Var, Var)> {
    ATTENTION_CALLS.with(|c| c.set(c.get() + 1));
    let shape = tape.shape(items).to_vec();
    let w = tape.param(store, branch.proj)?;
    let wh = tape.param(store, branch.hidden)?;
    let wout = tape.param(store, branch.out)?;
    if shape.len() != 2 || tape.shape(w)[1] != shape[1] {
        return Err(Error::dim("attention", &shape, tape.shape(w)));
    }
    if tape.shape(h_prev) != [tape.shape(wh)[1]] {
        return Err(Error::dim("attention", tape.shape(h_prev), tape.shape(wh)));
    }
    let wt = tape.transpose(w)?;
    let proj = tape.matmul(items, wt)?;
    let hproj = tape.matmul(wh, h_prev)?;
    let pre = tape.add_row(proj, hproj)?;
    let act = tape.tanh(pre)?;
    let wout_t = tape.transpose(wout)?;
    let scores = tape.matmul(act, wout_t)?;
    let scores = tape.reshape(scores, &[shape[0]])?;
    let weights = tape.softmax(scores)?;
    let items_t = tape.transpose(items)?;
    let attended = tape.matmul(items_t, weights)?;
    Ok((weights, attended))
}

/// Soft attention over `[N, D]` region features; returns `(alpha [N], v_att [D])`.
pub fn visual_attention(tape: &mut Tape, store: &ParameterStore, regions: Var, h_prev: Var) -> Result<(Var, Var)> {
    attend(tape, store, &VISUAL, regions, h_prev)
}

/// Soft attention over `[M, E]` tag embeddings; returns `(beta [M], a_att [E])`.
pub fn semantic_attention(tape: &mut Tape, store: &ParameterStore, tags: Var, h_prev: Var) -> Result<(Var, Var)> {
    attend(tape, store, &SEMANTIC, tags, h_prev)
}

/// `ctx = W_fc [v_att; a_att]`, no bias.
pub fn joint_context(tape: &mut Tape, store: &ParameterStore, v_att: Var, a_att: Var) -> Result<Var> {
    let fc = tape.param(store, names::ATT_FC)?;
    let joint = tape.concat(&[v_att, a_att])?;
    if tape.shape(fc)[1] != tape.shape(joint)[0] {
        return Err(Error::dim("joint_context", tape.shape(fc), tape.shape(joint)));
    }
    tape.matmul(fc, joint)
}

/// Context for one sentence step, plus the attention weights actually computed.
#[derive(Clone, Debug)]
pub struct StepContext {
    pub ctx: Var,
    pub alpha: Option<Var>,
    pub beta: Option<Var>,
}

/// Unweighted feature means, computed once per image and reused by the
/// non-attended slots.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMeans {
    pub regions: Var,
    pub tags: Var,
}

impl FeatureMeans {
    pub fn new(tape: &mut Tape, regions: Var, tags: Var) -> Result<Self> {
        Ok(FeatureMeans {
            regions: mean_rows(tape, regions)?,
            tags: mean_rows(tape, tags)?,
        })
    }
}

/// Joint context under an attention ablation. Slots whose branch is disabled
/// use the unweighted mean instead, and their attention is never evaluated.
pub fn ablation_context(
    tape: &mut Tape,
    store: &ParameterStore,
    mode: AttentionMode,
    regions: Var,
    tags: Var,
    means: FeatureMeans,
    h_prev: Var,
) -> Result<StepContext> {
    let (alpha, v_slot) = if mode.uses_visual() {
        let (a, v) = visual_attention(tape, store, regions, h_prev)?;
        (Some(a), v)
    } else {
        (None, means.regions)
    };
    let (beta, a_slot) = if mode.uses_semantic() {
        let (b, a) = semantic_attention(tape, store, tags, h_prev)?;
        (Some(b), a)
    } else {
        (None, means.tags)
    };
    let ctx = joint_context(tape, store, v_slot, a_slot)?;
    Ok(StepContext { ctx, alpha, beta })
}

/// Per-step attention weights. Either side is empty when its branch is ablated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    /// `alpha[s][n]`: weight of region `n` at sentence step `s`.
    pub alpha: Vec<Vec<f64>>,
    /// `beta[s][m]`: weight of semantic tag `m` at sentence step `s`.
    pub beta: Vec<Vec<f64>>,
}

impl AttentionRecord {
    pub fn steps(&self) -> usize {
        self.alpha.len().max(self.beta.len())
    }

    /// Visual weights as an `N x S` matrix.
    pub fn alpha_matrix(&self) -> Vec<Vec<f64>> {
        transpose(&self.alpha)
    }

    /// Semantic weights as an `M x S` matrix.
    pub fn beta_matrix(&self) -> Vec<Vec<f64>> {
        transpose(&self.beta)
    }
}

fn transpose(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let rows = cols.first().map_or(0, Vec::len);
    (0..rows).map(|r| cols.iter().map(|c| c[r]).collect()).collect()
}

fn coverage_penalty(steps: &[Vec<f64>]) -> f64 {
    let Some(width) = steps.first().map(Vec::len) else {
        return 0.0;
    };
    (0..width)
        .map(|i| {
            let total: f64 = steps.iter().map(|s| s[i]).sum();
            (1.0 - total) * (1.0 - total)
        })
        .sum()
}

/// `lambda * [Σ_n (1 - Σ_s α_ns)² + Σ_m (1 - Σ_s β_ms)²]`.
pub fn attention_regularizer(rec: &AttentionRecord, lambda_reg: f64) -> f64 {
    if lambda_reg == 0.0 {
        return 0.0;
    }
    lambda_reg * (coverage_penalty(&rec.alpha) + coverage_penalty(&rec.beta))
}

/// Differentiable form of [`attention_regularizer`] over per-step weight nodes.
pub fn regularizer_on_tape(tape: &mut Tape, alphas: &[Var], betas: &[Var], lambda_reg: f64) -> Result<Option<Var>> {
    let mut terms = Vec::new();
    for steps in [alphas, betas] {
        let Some(total) = tape.add_all(steps)? else { continue };
        let gap = tape.scale(total, -1.0)?;
        let gap = tape.add_scalar(gap, 1.0)?;
        let sq = tape.mul(gap, gap)?;
        terms.push(tape.sum(sq)?);
    }
    match tape.add_all(&terms)? {
        Some(t) => Ok(Some(tape.scale(t, lambda_reg)?)),
        None => Ok(None),
    }
}
