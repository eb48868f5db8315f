//! Sorted cumulative-feedback store.
//!
//! Holds one importance-weighted feedback total `omega(i)` per client, kept
//! sorted ascending so the water-filling solve can scan band boundaries
//! without re-sorting. Feedback only ever grows, so an update is a binary
//! search for the new position followed by a single block move.

use crate::error::{Error, Result};
use crate::sampling::PROB_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    omega: f64,
    client: u32,
}

/// Cumulative feedback `omega(i)`, sorted ascending by `(omega, client)`.
#[derive(Debug, Clone)]
pub struct FeedbackStore {
    entries: Vec<Entry>,
    /// client id -> index into `entries`
    position: Vec<u32>,
    search_comparisons: u64,
    absorbs: u64,
}

impl FeedbackStore {
    /// All clients start with zero accumulated feedback.
    pub fn new(n: usize) -> Self {
        Self {
            entries: (0..n as u32).map(|c| Entry { omega: 0.0, client: c }).collect(),
            position: (0..n as u32).collect(),
            search_comparisons: 0,
            absorbs: 0,
        }
    }

    /// Build a store holding the given per-client totals (test and replay
    /// convenience; values indexed by client id).
    pub fn from_omegas(omegas: &[f64]) -> Result<Self> {
        if omegas.iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::invalid("feedback totals must be finite and >= 0"));
        }
        let mut entries: Vec<Entry> = omegas
            .iter()
            .enumerate()
            .map(|(c, &omega)| Entry { omega, client: c as u32 })
            .collect();
        entries.sort_by(|a, b| {
            a.omega
                .partial_cmp(&b.omega)
                .unwrap()
                .then(a.client.cmp(&b.client))
        });
        let mut position = vec![0u32; omegas.len()];
        for (idx, e) in entries.iter().enumerate() {
            position[e.client as usize] = idx as u32;
        }
        Ok(Self {
            entries,
            position,
            search_comparisons: 0,
            absorbs: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn omega(&self, client: usize) -> f64 {
        self.entries[self.position[client] as usize].omega
    }

    /// Add one round of importance-weighted feedback for a sampled client:
    /// `omega(i) += pi^2 / p_applied`, then restore sorted order with a
    /// binary search plus one block move.
    pub fn absorb(&mut self, client: usize, pi: f64, p_applied: f64) -> Result<()> {
        if client >= self.entries.len() {
            return Err(Error::invalid(format!("client {client} out of range")));
        }
        if !(p_applied > 0.0) {
            return Err(Error::invalid(format!(
                "applied probability must be > 0 (got {p_applied})"
            )));
        }
        if !pi.is_finite() || pi < 0.0 {
            return Err(Error::invalid(format!("feedback must be >= 0 (got {pi})")));
        }
        let add = pi * pi / p_applied.clamp(PROB_FLOOR, 1.0);
        let old_pos = self.position[client] as usize;
        let new_omega = self.entries[old_pos].omega + add;
        if !new_omega.is_finite() {
            return Err(Error::NumericalAbort(format!(
                "feedback total overflowed for client {client}"
            )));
        }

        // First index whose key is >= (new_omega, client). Feedback never
        // shrinks, so the target is at or to the right of the old slot.
        let key_client = client as u32;
        let mut lo = 0usize;
        let mut hi = self.entries.len();
        while lo < hi {
            let mid = (lo + hi) / 2;
            self.search_comparisons += 1;
            let e = &self.entries[mid];
            let less = e.omega < new_omega || (e.omega == new_omega && e.client < key_client);
            if less {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let target = lo;
        debug_assert!(target >= old_pos);

        self.entries[old_pos].omega = new_omega;
        if target > old_pos + 1 {
            self.entries[old_pos..target].rotate_left(1);
            for idx in old_pos..target {
                self.position[self.entries[idx].client as usize] = idx as u32;
            }
        }
        self.absorbs += 1;
        Ok(())
    }

    /// Entries ascending by `(omega, client)`.
    pub fn iter_sorted(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|e| (e.client as usize, e.omega))
    }

    /// Totals indexed by client id.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.entries.len()];
        for e in &self.entries {
            out[e.client as usize] = e.omega;
        }
        out
    }

    /// Cumulative binary-search comparisons over all absorbs (for cost
    /// assertions: each absorb needs at most ~log2(N) probes).
    pub fn search_comparisons(&self) -> u64 {
        self.search_comparisons
    }

    pub fn absorbs(&self) -> u64 {
        self.absorbs
    }

    #[cfg(test)]
    pub(crate) fn is_sorted(&self) -> bool {
        self.entries.windows(2).all(|w| {
            w[0].omega < w[1].omega
                || (w[0].omega == w[1].omega && w[0].client < w[1].client)
        })
    }
}
