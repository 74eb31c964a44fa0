use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;

use super::{MixtureConfig, PretrainError};
use crate::corpus::{filter_ambient, DatasetRegistry, LabeledClip};
use crate::rng::{self, Rng, SeedDeriver};

struct SourceState<T> {
    id: String,
    items: Vec<T>,
    order: Vec<usize>,
    cursor: usize,
    pass: u64,
}

/// Endless weighted stream over several item pools.
///
/// Each draw picks a source with probability equal to its weight, then
/// yields the next item of that source's current pass. A pass is a seeded
/// permutation of the whole pool; when it runs out the source is reshuffled
/// with a seed derived from `(seed, source id, pass number)`.
pub struct SampleStream<T> {
    sources: Vec<SourceState<T>>,
    chooser: WeightedIndex<f64>,
    rng: Rng,
    seed: u64,
}

impl<T: Clone> SampleStream<T> {
    pub fn new(pools: Vec<(String, Vec<T>, f64)>, seed: u64) -> Result<Self, PretrainError> {
        if let Some((id, ..)) = pools.iter().find(|(_, items, _)| items.is_empty()) {
            return Err(PretrainError::EmptySource(id.clone()));
        }
        let weights: Vec<f64> = pools.iter().map(|p| p.2).collect();
        let chooser = WeightedIndex::new(&weights).map_err(|e| PretrainError::Config(e.to_string()))?;
        let mut stream = Self {
            sources: pools
                .into_iter()
                .map(|(id, items, _)| SourceState {
                    order: (0..items.len()).collect(),
                    id,
                    items,
                    cursor: 0,
                    pass: 0,
                })
                .collect(),
            chooser,
            rng: rng::rng(SeedDeriver::new(seed).str("source-choice").finish()),
            seed,
        };
        for i in 0..stream.sources.len() {
            stream.reshuffle(i);
        }
        Ok(stream)
    }

    fn reshuffle(&mut self, i: usize) {
        let s = &mut self.sources[i];
        let mut r = rng::rng(SeedDeriver::new(self.seed).str(&s.id).u64(s.pass).finish());
        s.order.sort_unstable();
        s.order.shuffle(&mut r);
        s.cursor = 0;
    }

    /// Next `(source index, item)`.
    pub fn draw(&mut self) -> (usize, T) {
        let i = self.chooser.sample(&mut self.rng);
        if self.sources[i].cursor == self.sources[i].items.len() {
            self.sources[i].pass += 1;
            self.reshuffle(i);
        }
        let s = &mut self.sources[i];
        let item = s.items[s.order[s.cursor]].clone();
        s.cursor += 1;
        (i, item)
    }

    pub fn source_ids(&self) -> Vec<&str> {
        self.sources.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn source_items(&self, i: usize) -> &[T] {
        &self.sources[i].items
    }
}

impl<T: Clone> Iterator for SampleStream<T> {
    type Item = (usize, T);

    fn next(&mut self) -> Option<Self::Item> {
        Some(self.draw())
    }
}

/// Stream of non-ambient clips from the mixture's sources.
pub fn sample_stream(
    mixture: &MixtureConfig,
    registry: &DatasetRegistry,
    seed: u64,
) -> Result<SampleStream<LabeledClip>, PretrainError> {
    mixture.validate()?;
    let mut pools = Vec::with_capacity(mixture.sources.len());
    for s in &mixture.sources {
        let mut clips = Vec::new();
        for d in &s.datasets {
            clips.extend(filter_ambient(&registry.get(d)?.clips));
        }
        pools.push((s.id.clone(), clips, s.weight));
    }
    SampleStream::new(pools, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passes_are_permutations() {
        let mut s = SampleStream::new(vec![("a".into(), (0..5).collect::<Vec<u32>>(), 1.0)], 3).unwrap();
        for _ in 0..4 {
            let mut pass: Vec<u32> = (0..5).map(|_| s.draw().1).collect();
            pass.sort();
            assert_eq!(pass, vec![0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn empty_source_rejected() {
        let r = SampleStream::new(vec![("a".into(), Vec::<u32>::new(), 1.0)], 0);
        assert!(matches!(r, Err(PretrainError::EmptySource(_))));
    }

    #[test]
    fn deterministic() {
        let pools = || vec![("a".to_string(), (0..7).collect::<Vec<u32>>(), 0.5), ("b".to_string(), (10..13).collect(), 0.5)];
        let a: Vec<_> = SampleStream::new(pools(), 11).unwrap().take(100).collect();
        let b: Vec<_> = SampleStream::new(pools(), 11).unwrap().take(100).collect();
        assert_eq!(a, b);
    }
}
