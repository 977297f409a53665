use std::sync::atomic::{AtomicU64, Ordering};

use super::dataset::{Dataset, EpisodeRecord};
use crate::error::{Error, Result};

/// Per-dimension affine map of the observed range onto `[-1, 1]`.
///
/// Dimensions whose observed range is empty map to 0.
#[derive(Debug)]
pub struct Normalizer {
    min: Vec<f64>,
    max: Vec<f64>,
    clamped: AtomicU64,
}

impl Clone for Normalizer {
    fn clone(&self) -> Self {
        Self {
            min: self.min.clone(),
            max: self.max.clone(),
            clamped: AtomicU64::new(self.clamped()),
        }
    }
}

impl PartialEq for Normalizer {
    fn eq(&self, other: &Self) -> bool {
        self.min == other.min && self.max == other.max
    }
}

impl Normalizer {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::shape("normalizer bounds", min.len(), max.len()));
        }
        if let Some(d) = (0..min.len()).find(|&d| !(max[d] >= min[d]) || !min[d].is_finite() || !max[d].is_finite()) {
            return Err(Error::Config(format!("normalizer dimension {d} has max < min")));
        }
        Ok(Self {
            min,
            max,
            clamped: AtomicU64::new(0),
        })
    }

    pub fn fit(dataset: &Dataset) -> Result<Self> {
        Self::fit_states(dataset.episodes.iter().flat_map(|e| e.states.iter()))
    }

    pub fn fit_states<'a>(states: impl IntoIterator<Item = &'a Vec<f64>>) -> Result<Self> {
        let mut iter = states.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::Config("cannot fit a normalizer on an empty dataset".into()))?;
        let mut min = first.clone();
        let mut max = first.clone();
        for s in iter {
            if s.len() != min.len() {
                return Err(Error::shape("normalizer state", min.len(), s.len()));
            }
            for d in 0..s.len() {
                min[d] = min[d].min(s[d]);
                max[d] = max[d].max(s[d]);
            }
        }
        Self::new(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    pub fn is_degenerate(&self, d: usize) -> bool {
        self.max[d] == self.min[d]
    }

    /// Number of coordinates clamped so far by [`Normalizer::normalize`].
    pub fn clamped(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.dim(), "state width does not match normalizer");
        let mut clamped = 0;
        let out = state
            .iter()
            .enumerate()
            .map(|(d, &s)| {
                if self.is_degenerate(d) {
                    return 0.0;
                }
                let v = 2.0 * (s - self.min[d]) / (self.max[d] - self.min[d]) - 1.0;
                if v < -1.0 || v > 1.0 {
                    clamped += 1;
                    v.clamp(-1.0, 1.0)
                } else {
                    v
                }
            })
            .collect();
        if clamped > 0 {
            self.clamped.fetch_add(clamped, Ordering::Relaxed);
        }
        out
    }

    pub fn denormalize(&self, state: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.dim(), "state width does not match normalizer");
        state
            .iter()
            .enumerate()
            .map(|(d, &v)| {
                if self.is_degenerate(d) {
                    self.min[d]
                } else {
                    (v + 1.0) * 0.5 * (self.max[d] - self.min[d]) + self.min[d]
                }
            })
            .collect()
    }

    pub fn normalize_episode(&self, ep: &EpisodeRecord) -> EpisodeRecord {
        EpisodeRecord {
            states: ep.states.iter().map(|s| self.normalize(s)).collect(),
            ..ep.clone()
        }
    }

    pub fn normalize_dataset(&self, ds: &Dataset) -> Dataset {
        Dataset {
            episodes: ds.episodes.iter().map(|e| self.normalize_episode(e)).collect(),
            ..ds.clone()
        }
    }
}
