//! Per-wave shared randomness.
//!
//! Wave leaders are elected by a global shared coin: one uniformly random
//! validator per wave, the same value at every honest caller. In a real
//! deployment this is a threshold-PRF; here the value is derived
//! deterministically from a run seed so simulations are reproducible.
//!
//! Unpredictability is modeled explicitly: the adversary may only learn a
//! wave's coin once a weak quorum (`f + 1`) of validators has invoked it.
//! Before that, `adversary_peek` returns `None` and the denied attempt is
//! recorded, so a trace checker can verify that no scheduling decision ever
//! depended on an unrevealed coin.

use crate::params::{Params, ValidatorId, Wave};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

/// Coin state for one run.
#[derive(Clone, Debug)]
pub struct CoinRegistry {
    params: Params,
    seed: u64,
    /// Scripted values for specific waves (used by scenario replays).
    overrides: BTreeMap<Wave, ValidatorId>,
    /// Validators that have invoked each wave's coin.
    invokers: BTreeMap<Wave, BTreeSet<ValidatorId>>,
    /// Event sequence number at which each wave's coin became revealable to
    /// the adversary.
    revealed_at: BTreeMap<Wave, u64>,
    /// Denied adversary peeks: `(wave, event)` pairs.
    denied_peeks: Vec<(Wave, u64)>,
    /// Granted adversary peeks: `(wave, event)` pairs.
    granted_peeks: Vec<(Wave, u64)>,
}

impl CoinRegistry {
    pub fn new(params: Params, seed: u64) -> Self {
        CoinRegistry {
            params,
            seed,
            overrides: BTreeMap::new(),
            invokers: BTreeMap::new(),
            revealed_at: BTreeMap::new(),
            denied_peeks: Vec::new(),
            granted_peeks: Vec::new(),
        }
    }

    /// Pins the coin for a wave to a fixed validator (scenario scripting).
    pub fn override_wave(&mut self, wave: Wave, value: ValidatorId) {
        self.overrides.insert(wave, value);
    }

    /// The coin value for a wave: uniform over validators, a pure function
    /// of `(seed, wave)`.
    pub fn value(&self, wave: Wave) -> ValidatorId {
        if let Some(v) = self.overrides.get(&wave) {
            return *v;
        }
        // Domain-separate the wave stream from other seed consumers.
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.seed ^ 0xc01d_c01d_0000_0000u64 ^ ((wave as u64) << 1),
        );
        rng.gen_range(0..self.params.n()) as ValidatorId
    }

    /// Protocol-side invocation at the end of a wave. `event` is the current
    /// simulator event number, used to timestamp the reveal.
    pub fn toss(&mut self, wave: Wave, caller: ValidatorId, event: u64) -> ValidatorId {
        let invokers = self.invokers.entry(wave).or_default();
        invokers.insert(caller);
        if invokers.len() as u32 >= self.params.weak_quorum() {
            self.revealed_at.entry(wave).or_insert(event);
        }
        self.value(wave)
    }

    /// True once a weak quorum has invoked the wave's coin.
    pub fn is_revealed(&self, wave: Wave) -> bool {
        self.revealed_at.contains_key(&wave)
    }

    /// Event at which the wave's coin became adversary-visible.
    pub fn revealed_at(&self, wave: Wave) -> Option<u64> {
        self.revealed_at.get(&wave).copied()
    }

    /// Waves whose coin has been revealed, in order.
    pub fn revealed_waves(&self) -> Vec<Wave> {
        self.revealed_at.keys().copied().collect()
    }

    /// Adversary attempt to read a coin. Hidden until a weak quorum of
    /// validators has invoked it; every attempt is logged either way.
    pub fn adversary_peek(&mut self, wave: Wave, event: u64) -> Option<ValidatorId> {
        if self.is_revealed(wave) {
            self.granted_peeks.push((wave, event));
            Some(self.value(wave))
        } else {
            self.denied_peeks.push((wave, event));
            None
        }
    }

    pub fn denied_peeks(&self) -> &[(Wave, u64)] {
        &self.denied_peeks
    }

    pub fn granted_peeks(&self) -> &[(Wave, u64)] {
        &self.granted_peeks
    }

    /// Soundness check for the unpredictability gate: every granted peek
    /// must postdate the wave's reveal event.
    pub fn gate_sound(&self) -> bool {
        self.granted_peeks.iter().all(|(wave, event)| {
            self.revealed_at(*wave).is_some_and(|rev| *event >= rev)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Params;

    #[test]
    fn deterministic_and_in_range() {
        let params = Params::new(3, 1).unwrap();
        let a = CoinRegistry::new(params, 7);
        let b = CoinRegistry::new(params, 7);
        for wave in 1..200 {
            assert_eq!(a.value(wave), b.value(wave));
            assert!((a.value(wave) as u32) < params.n());
        }
        let c = CoinRegistry::new(params, 8);
        assert!((1..200).any(|w| a.value(w) != c.value(w)));
    }

    #[test]
    fn gate_opens_at_weak_quorum() {
        let params = Params::new(3, 1).unwrap(); // f = 1, weak quorum 2
        let mut coin = CoinRegistry::new(params, 7);
        assert_eq!(coin.adversary_peek(1, 0), None);
        coin.toss(1, 0, 1);
        assert_eq!(coin.adversary_peek(1, 2), None);
        coin.toss(1, 0, 3); // repeat invoker does not open the gate
        assert_eq!(coin.adversary_peek(1, 4), None);
        coin.toss(1, 1, 5);
        assert_eq!(coin.adversary_peek(1, 6), Some(coin.value(1)));
        assert_eq!(coin.revealed_at(1), Some(5));
        assert!(coin.gate_sound());
        assert_eq!(coin.denied_peeks().len(), 3);
    }

    /// Empirical uniformity of the per-wave values.
    #[test]
    fn roughly_uniform() {
        let params = Params::new(3, 1).unwrap(); // n = 4
        let coin = CoinRegistry::new(params, 42);
        let mut counts = [0u32; 4];
        let waves = 10_000;
        for w in 1..=waves {
            counts[coin.value(w) as usize] += 1;
        }
        for c in counts {
            let freq = c as f64 / waves as f64;
            assert!((freq - 0.25).abs() < 0.02, "frequency {freq} off uniform");
        }
    }
}
