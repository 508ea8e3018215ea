use std::ops::Range;

use super::empirical::softmax_mean;
use crate::diffcore::Denoiser;
use crate::error::Result;
use crate::rulekit::{block_patterns, encode, enumerate_valid_with_cap, RuleSpec, Sample};

/// Largest support a non-product rule may have for exact denoising.
pub const RULE_DENOISER_CAP: u128 = 1 << 20;

/// Exact posterior mean of the uniform distribution over a rule's valid set.
///
/// Product rules factorize into independent blocks that share one pattern
/// table; other rules enumerate their whole support.
#[derive(Clone, Debug)]
pub struct RuleDenoiser {
    rule: RuleSpec,
    /// Encoded-space ranges of each independent block.
    blocks: Vec<Range<usize>>,
    /// Encoded valid patterns of one block, row-major.
    table: Vec<f64>,
    patterns: usize,
}

impl RuleDenoiser {
    pub fn new(rule: &RuleSpec) -> Result<Self> {
        Self::with_cap(rule, RULE_DENOISER_CAP)
    }

    pub fn with_cap(rule: &RuleSpec, cap: u128) -> Result<Self> {
        let cw = rule.cell_width();
        let (blocks, pats): (Vec<Range<usize>>, Vec<Vec<i8>>) = match rule.product_blocks() {
            Some(b) => (b, block_patterns(rule, cap)?),
            None => (
                vec![0..rule.dim()],
                enumerate_valid_with_cap(rule, cap)?.into_iter().map(|s| s.0).collect(),
            ),
        };
        let blocks = blocks.into_iter().map(|r| r.start * cw..r.end * cw).collect();
        let patterns = pats.len();
        let table = pats.into_iter().flat_map(|p| encode(rule, &Sample(p))).collect();
        Ok(Self {
            rule: rule.clone(),
            blocks,
            table,
            patterns,
        })
    }

    /// Build by full enumeration even for product rules.
    pub fn enumerated(rule: &RuleSpec, cap: u128) -> Result<Self> {
        let pats = enumerate_valid_with_cap(rule, cap)?;
        let patterns = pats.len();
        Ok(Self {
            rule: rule.clone(),
            blocks: vec![0..rule.encoded_dim()],
            table: pats.iter().flat_map(|s| encode(rule, s)).collect(),
            patterns,
        })
    }

    pub fn rule(&self) -> &RuleSpec {
        &self.rule
    }

    /// Number of valid patterns per independent block.
    pub fn patterns_per_block(&self) -> usize {
        self.patterns
    }

    pub fn is_factorized(&self) -> bool {
        self.blocks.len() > 1
    }
}

impl Denoiser for RuleDenoiser {
    fn dim(&self) -> usize {
        self.rule.encoded_dim()
    }

    fn denoise(&self, x: &[f64], sigma: f64, out: &mut [f64]) {
        let mut logw = Vec::with_capacity(self.patterns);
        for b in &self.blocks {
            softmax_mean(&self.table, &x[b.clone()], sigma, &mut out[b.clone()], &mut logw);
        }
    }

    fn exact_score(&self) -> bool {
        true
    }
}
