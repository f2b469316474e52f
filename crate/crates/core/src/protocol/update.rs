//! Local training stand-ins applied to owned embeddings between rounds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, PartySeed};

pub trait LocalUpdate: Send {
    /// Updates `local` before round `round` (always at least 2). `global` is
    /// the average recovered for this entity in the previous round.
    fn update(&mut self, round: u32, entity: &str, local: &mut [f64], global: &[f64]);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum UpdateKind {
    /// Embeddings never change.
    #[default]
    Identity,
    /// Adds `delta` to every coordinate.
    Shift { delta: f64 },
    /// Adds uniform noise in `[-step, step]`, clamped to `[-limit, limit]`.
    RandomWalk { step: f64, limit: f64 },
}

impl UpdateKind {
    pub fn build(&self, seed: PartySeed) -> Box<dyn LocalUpdate> {
        match *self {
            UpdateKind::Identity => Box::new(Identity),
            UpdateKind::Shift { delta } => Box::new(Shift(delta)),
            UpdateKind::RandomWalk { step, limit } => Box::new(RandomWalk { seed, step, limit }),
        }
    }
}

pub struct Identity;

impl LocalUpdate for Identity {
    fn update(&mut self, _: u32, _: &str, _: &mut [f64], _: &[f64]) {}
}

pub struct Shift(pub f64);

impl LocalUpdate for Shift {
    fn update(&mut self, _: u32, _: &str, local: &mut [f64], _: &[f64]) {
        for x in local {
            *x += self.0;
        }
    }
}

pub struct RandomWalk {
    seed: PartySeed,
    step: f64,
    limit: f64,
}

impl LocalUpdate for RandomWalk {
    fn update(&mut self, round: u32, entity: &str, local: &mut [f64], _: &[f64]) {
        let mut label = String::from("random-walk/");
        label.push_str(entity);
        let mut rng = derive_rng(&self.seed, &label, &[u64::from(round)]);
        for x in local {
            *x = (*x + rng.gen_range(-self.step..=self.step)).clamp(-self.limit, self.limit);
        }
    }
}
