//! Attention-mask compilation for the 2n-slot decoder layout.
//!
//! Slots `0..n` hold the masked tokens, slots `n..2n` the visible tokens of
//! the same caption positions. Entry `(q, k)` is true when query slot `q` may
//! attend key slot `k`. All prediction regimes share this layout and differ
//! only in which entries are set.

use thiserror::Error;

use crate::cgm::{Cgm, PredictionMode};

pub const MASK_MAGIC: &[u8; 8] = b"COGTMASK";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mixed mode must be resolved to a concrete regime before compiling")]
    UnresolvedMixedMode,
    #[error("mask dump: {0}")]
    Format(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionPlan {
    n: usize,
    self_mask: Vec<bool>,
    cross_allowed: bool,
    mode: PredictionMode,
    predict_slots: Vec<usize>,
}

impl AttentionPlan {
    /// A plan with only the diagonal allowed.
    fn diagonal(n: usize, mode: PredictionMode) -> Self {
        let mut self_mask = vec![false; 4 * n * n];
        for s in 0..2 * n {
            self_mask[s * 2 * n + s] = true;
        }
        AttentionPlan {
            n,
            self_mask,
            cross_allowed: true,
            mode,
            predict_slots: (0..n).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn slots(&self) -> usize {
        2 * self.n
    }

    pub fn mode(&self) -> PredictionMode {
        self.mode
    }

    pub fn cross_allowed(&self) -> bool {
        self.cross_allowed
    }

    /// Masked slots whose outputs enter the loss.
    pub fn predict_slots(&self) -> &[usize] {
        &self.predict_slots
    }

    pub fn masked(&self, j: usize) -> usize {
        j
    }

    pub fn visible(&self, j: usize) -> usize {
        self.n + j
    }

    pub fn allowed(&self, query: usize, key: usize) -> bool {
        self.self_mask[query * self.slots() + key]
    }

    pub fn set(&mut self, query: usize, key: usize, allow: bool) {
        let s = self.slots();
        self.self_mask[query * s + key] = allow;
    }

    /// Row-major `2n × 2n` mask.
    pub fn self_mask(&self) -> &[bool] {
        &self.self_mask
    }

    /// Binary inspection record: magic, u32 n, mode byte, row-major bits
    /// packed least-significant-bit first, zero-padded to a whole byte.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + self.self_mask.len() / 8 + 1);
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.push(self.mode.code());
        let mut byte = 0u8;
        for (i, &b) in self.self_mask.iter().enumerate() {
            if b {
                byte |= 1 << (i % 8);
            }
            if i % 8 == 7 {
                out.push(byte);
                byte = 0;
            }
        }
        if !self.self_mask.len().is_multiple_of(8) {
            out.push(byte);
        }
        out
    }

    /// Decode all records of a (possibly concatenated) dump.
    pub fn decode_all(mut bytes: &[u8]) -> Result<Vec<AttentionPlan>, MaskError> {
        let mut plans = Vec::new();
        while !bytes.is_empty() {
            let (plan, rest) = Self::decode_one(bytes)?;
            plans.push(plan);
            bytes = rest;
        }
        Ok(plans)
    }

    fn decode_one(bytes: &[u8]) -> Result<(AttentionPlan, &[u8]), MaskError> {
        let fmt = |m: &str| MaskError::Format(m.to_string());
        if bytes.len() < 13 || &bytes[..8] != MASK_MAGIC {
            return Err(fmt("missing COGTMASK magic"));
        }
        let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mode = match bytes[12] {
            0 => PredictionMode::Cogt,
            1 => PredictionMode::SequentialAr,
            2 => PredictionMode::FullyParallel,
            m => return Err(MaskError::Format(format!("invalid mode byte {m}"))),
        };
        let bits = 4 * n * n;
        let nbytes = bits.div_ceil(8);
        let body = bytes
            .get(13..13 + nbytes)
            .ok_or_else(|| fmt("truncated mask matrix"))?;
        let self_mask = (0..bits).map(|i| body[i / 8] >> (i % 8) & 1 == 1).collect();
        let plan = AttentionPlan {
            n,
            self_mask,
            cross_allowed: true,
            mode,
            predict_slots: (0..n).collect(),
        };
        Ok((plan, &bytes[13 + nbytes..]))
    }
}

/// Compile the attention plan of a concrete prediction regime.
pub fn compile(cgm: &Cgm, mode: PredictionMode) -> Result<AttentionPlan, MaskError> {
    let n = cgm.len();
    let mut plan = AttentionPlan::diagonal(n, mode);
    match mode {
        PredictionMode::Mixed { .. } => return Err(MaskError::UnresolvedMixedMode),
        PredictionMode::Cogt => {
            for j in 0..n {
                for &i in cgm.ancestors(j) {
                    plan.set(plan.masked(j), plan.visible(i), true);
                    plan.set(plan.visible(j), plan.visible(i), true);
                }
            }
        }
        PredictionMode::SequentialAr => {
            for j in 0..n {
                for i in 0..j {
                    plan.set(plan.masked(j), plan.visible(i), true);
                    plan.set(plan.visible(j), plan.visible(i), true);
                }
            }
        }
        PredictionMode::FullyParallel => {}
    }
    Ok(plan)
}

/// True iff no masked slot that feeds the loss can reach its own visible slot
/// through any chain of allowed attention edges.
pub fn verify_no_leak(plan: &AttentionPlan) -> bool {
    let slots = plan.slots();
    let mut seen = vec![false; slots];
    let mut stack = Vec::with_capacity(slots);
    for &j in plan.predict_slots() {
        seen.iter_mut().for_each(|s| *s = false);
        let target = plan.visible(j);
        stack.clear();
        stack.push(plan.masked(j));
        seen[plan.masked(j)] = true;
        while let Some(q) = stack.pop() {
            for k in 0..slots {
                if plan.allowed(q, k) && !seen[k] {
                    if k == target {
                        return false;
                    }
                    seen[k] = true;
                    stack.push(k);
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::SyntacticCategory;

    fn fig1_cgm() -> Cgm {
        // A brown bird has a small yellow head
        let heads = [Some(2), Some(2), Some(3), None, Some(7), Some(7), Some(7), Some(3)];
        Cgm::from_heads(&heads, &[SyntacticCategory::Dep; 8])
    }

    #[test]
    fn cogt_yellow_row() {
        let cgm = fig1_cgm();
        let plan = compile(&cgm, PredictionMode::Cogt).unwrap();
        let yellow = 6;
        let allowed: Vec<usize> = (0..plan.slots())
            .filter(|&k| plan.allowed(plan.masked(yellow), k))
            .collect();
        // self, visible(has), visible(head)
        assert_eq!(allowed, vec![6, 8 + 3, 8 + 7]);
        assert!(!plan.allowed(plan.masked(yellow), plan.visible(5)));
        assert!(verify_no_leak(&plan));
    }

    #[test]
    fn one_token_plans_are_diagonal() {
        let cgm = Cgm::from_heads(&[None], &[SyntacticCategory::Root]);
        for mode in [PredictionMode::Cogt, PredictionMode::SequentialAr, PredictionMode::FullyParallel] {
            let plan = compile(&cgm, mode).unwrap();
            assert_eq!(plan.self_mask(), &[true, false, false, true]);
            assert!(plan.cross_allowed());
        }
    }

    #[test]
    fn mixed_must_be_resolved() {
        let cgm = fig1_cgm();
        assert_eq!(
            compile(&cgm, PredictionMode::mixed()),
            Err(MaskError::UnresolvedMixedMode)
        );
    }

    #[test]
    fn block_structure_per_mode() {
        let cgm = fig1_cgm();
        let n = cgm.len();
        let ar = compile(&cgm, PredictionMode::SequentialAr).unwrap();
        let par = compile(&cgm, PredictionMode::FullyParallel).unwrap();
        let cogt = compile(&cgm, PredictionMode::Cogt).unwrap();
        for q in 0..n {
            for k in 0..n {
                assert_eq!(ar.allowed(ar.visible(q), ar.visible(k)), k <= q);
                assert_eq!(cogt.allowed(cogt.visible(q), cogt.visible(k)), k == q || cgm.is_ancestor(k, q));
                for plan in [&ar, &par, &cogt] {
                    assert_eq!(plan.allowed(q, k), q == k, "masked block is diagonal");
                    assert!(!plan.allowed(plan.visible(q), plan.masked(k)));
                }
            }
        }
        for q in 0..2 * n {
            for k in 0..2 * n {
                assert_eq!(par.allowed(q, k), q == k);
            }
        }
    }

    #[test]
    fn detects_direct_and_two_hop_leaks() {
        let cgm = fig1_cgm();
        let mut plan = compile(&cgm, PredictionMode::Cogt).unwrap();
        plan.set(plan.masked(5), plan.visible(5), true);
        assert!(!verify_no_leak(&plan));

        // small (5) and yellow (6) are siblings; neither is an ancestor of the other.
        let mut plan = compile(&cgm, PredictionMode::Cogt).unwrap();
        plan.set(plan.masked(6), plan.visible(5), true);
        assert!(verify_no_leak(&plan), "one hop to a sibling is not a self leak");
        plan.set(plan.visible(5), plan.visible(6), true);
        assert!(!verify_no_leak(&plan));
    }

    #[test]
    fn encode_decode() {
        let cgm = fig1_cgm();
        let a = compile(&cgm, PredictionMode::Cogt).unwrap();
        let b = compile(&Cgm::from_heads(&[None], &[SyntacticCategory::Root]), PredictionMode::SequentialAr).unwrap();
        let mut bytes = a.encode();
        assert_eq!(&bytes[..8], b"COGTMASK");
        assert_eq!(bytes.len(), 13 + 256 / 8);
        bytes.extend(b.encode());
        let back = AttentionPlan::decode_all(&bytes).unwrap();
        assert_eq!(back, vec![a, b]);
        assert!(AttentionPlan::decode_all(b"COGTMAS").is_err());
    }
}
