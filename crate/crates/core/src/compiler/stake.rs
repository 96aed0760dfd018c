//! Staking requirement: the worst-case net inflow a party can collect from
//! a committable (precedence down-closed) subset of the graph.

use std::collections::BTreeSet;

use super::config::Party;
use super::tdg::Tdg;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("graph has {len} wrappers; enumeration cap is {cap}")]
pub struct CapExceeded {
    pub len: usize,
    pub cap: usize,
}

/// Calls `visit` with the bitmask (bit i = seq i+1) of every down-closed
/// subset. Wrappers are in topological seq order, so deciding membership
/// front to back only needs the predecessor masks.
fn for_each_committable(tdg: &Tdg, cap: usize, mut visit: impl FnMut(u64)) -> Result<(), CapExceeded> {
    let n = tdg.len();
    if n > cap || n > 63 {
        return Err(CapExceeded { len: n, cap: cap.min(63) });
    }
    let pred_mask: Vec<u64> = (1..=n as u32).map(|s| tdg.preds(s).iter().fold(0u64, |m, &p| m | 1 << (p - 1))).collect();
    fn walk(i: usize, mask: u64, preds: &[u64], visit: &mut dyn FnMut(u64)) {
        if i == preds.len() {
            visit(mask);
            return;
        }
        walk(i + 1, mask, preds, visit);
        if mask & preds[i] == preds[i] {
            walk(i + 1, mask | 1 << i, preds, visit);
        }
    }
    walk(0, 0, &pred_mask, &mut visit);
    Ok(())
}

/// Every committable subset, as sets of seqs.
pub fn committable_subsets(tdg: &Tdg, cap: usize) -> Result<Vec<BTreeSet<u32>>, CapExceeded> {
    let mut out = Vec::new();
    for_each_committable(tdg, cap, |m| {
        out.push((0..64u32).filter(|i| m >> i & 1 == 1).map(|i| i + 1).collect());
    })?;
    Ok(out)
}

/// Signed amt flow of each wrapper for `party`: incoming positive.
fn flows(tdg: &Tdg, party: Party) -> Vec<i128> {
    tdg.wrappers
        .iter()
        .map(|w| {
            let amt = w.meta.amt as i128;
            let mut f = 0;
            if w.fund_recipient() == party {
                f += amt;
            }
            if w.originator() == party {
                f -= amt;
            }
            f
        })
        .collect()
}

/// Max over committable subsets of incoming minus outgoing amt.
pub fn stake_requirement(tdg: &Tdg, party: Party, cap: usize) -> Result<u64, CapExceeded> {
    let flow = flows(tdg, party);
    let mut best: i128 = 0;
    for_each_committable(tdg, cap, |m| {
        let v: i128 = flow.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, f)| f).sum();
        best = best.max(v);
    })?;
    Ok(best as u64)
}
