//! Parameter-matched ablations of the CTM: without neuron-level models,
//! without synchronization, and an LSTM whose hidden states feed the
//! synchronization readouts.

use crate::baselines::{match_parameters, LstmConfig, MATCH_TOLERANCE};
use crate::error::{Error, Result};

use super::config::{CtmConfig, Pairing, Variant};
use super::ctm::ctm_param_count;

/// Upper bound on the widths searched when matching a budget.
pub const MAX_MATCH_WIDTH: usize = 8192;

/// The four configurations compared in an ablation, sized to one budget.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationSet {
    pub budget: usize,
    pub ctm: CtmConfig,
    pub no_nlm: CtmConfig,
    pub no_sync: CtmConfig,
    pub lstm_sync: LstmConfig,
}

fn within(count: usize, budget: usize) -> Result<()> {
    if count.abs_diff(budget) as f64 > MATCH_TOLERANCE * budget as f64 {
        return Err(Error::BudgetUnreachable {
            target: budget,
            nearest: count,
            tolerance: MATCH_TOLERANCE,
        });
    }
    Ok(())
}

fn match_ctm_width(reference: &CtmConfig, variant: Variant, budget: usize) -> Result<CtmConfig> {
    let at = |d: usize| CtmConfig {
        d_model: d,
        variant,
        ..reference.clone()
    };
    let width = match_parameters(|d| ctm_param_count(&at(d)).unwrap_or(0), budget, MAX_MATCH_WIDTH, MATCH_TOLERANCE)?;
    let config = at(width);
    within(ctm_param_count(&config)?, budget)?;
    Ok(config)
}

/// NLMs replaced by two extra synapse layers; width re-matched to `budget`.
pub fn ctm_no_nlm(reference: &CtmConfig, budget: usize) -> Result<CtmConfig> {
    match_ctm_width(reference, Variant::NoNlm, budget)
}

/// Queries and outputs read from `z` directly; width re-matched to `budget`.
pub fn ctm_no_sync(reference: &CtmConfig, budget: usize) -> Result<CtmConfig> {
    match_ctm_width(reference, Variant::NoSync, budget)
}

/// Single-layer LSTM over the same ticks whose hidden state feeds the
/// reference pairing; hidden width matched to `budget`.
pub fn lstm_with_sync(reference: &CtmConfig, budget: usize) -> Result<LstmConfig> {
    let pairing = reference.pairing.clone();
    let reserved = match pairing {
        Pairing::Dense { j_out, j_action } => j_out + j_action,
        Pairing::SemiDense {
            j1_out,
            j2_out,
            j1_action,
            j2_action,
        } => j1_out + j2_out + j1_action + j2_action,
        Pairing::Random { n_self, .. } => n_self,
    };
    let at = |hidden: usize| LstmConfig {
        hidden,
        layers: 1,
        ticks: reference.ticks,
        d_input: reference.d_input,
        n_heads: reference.n_heads,
        backbone: reference.backbone.clone(),
        output: reference.output,
        sync: Some(pairing.clone()),
    };
    let count = |h: usize| if h < reserved.max(1) { 0 } else { at(h).param_count() };
    let hidden = match_parameters(count, budget, MAX_MATCH_WIDTH, MATCH_TOLERANCE)?;
    let config = at(hidden);
    config.validate()?;
    within(config.param_count(), budget)?;
    Ok(config)
}

/// Builds every variant against `budget` (default: the reference's own count),
/// failing if the reference itself is more than 2% away from it.
pub fn ablation_variants(reference: &CtmConfig, budget: Option<usize>) -> Result<AblationSet> {
    let own = ctm_param_count(reference)?;
    let budget = budget.unwrap_or(own);
    within(own, budget)?;
    Ok(AblationSet {
        budget,
        ctm: reference.clone(),
        no_nlm: ctm_no_nlm(reference, budget)?,
        no_sync: ctm_no_sync(reference, budget)?,
        lstm_sync: lstm_with_sync(reference, budget)?,
    })
}
