//! Deployment configuration: loading, total validation and env overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::One;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::{FixedPointCodec, PrimeField};
use crate::masking::DhGroup;
use crate::paillier::{min_key_bits, no_wrap};
use crate::poly::{check_threshold, EvaluationPoints};
use crate::protocol::update::UpdateKind;
use crate::protocol::{ClientInput, Deployment, SessionContext};
use crate::rng::{derive_rng, public_seed};
use crate::transport::sim::{DeliverySchedule, SchedulePolicy};
use crate::union::Vocabulary;

/// `p` must exceed `2 * N^2 * B` by this factor.
pub const SAFETY_FACTOR: u64 = 4;
pub const DEFAULT_SCALE: u64 = 1 << 16;
pub const MIN_SECURE_PAILLIER_BITS: u64 = 512;
pub const DEFAULT_PAILLIER_BITS: u64 = 2048;
/// Key size used with `insecure_toy_crypto` when none is given.
pub const TOY_PAILLIER_BITS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    #[default]
    Sim,
    Tcp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Assignment {
    /// `embeddings[i]` holds the entities and local embeddings of client `i + 1`.
    Explicit { embeddings: Vec<BTreeMap<String, Vec<f64>>> },
    /// Each client holds each of `entities` entities with probability
    /// `density`; embeddings are uniform in `[-value_bound, value_bound]`.
    Random { entities: usize, density: f64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsConfig {
    pub block_points: Vec<u64>,
    pub client_points: Vec<u64>,
}

fn default_rounds() -> u32 {
    1
}
fn default_scale() -> u64 {
    DEFAULT_SCALE
}
fn default_bound() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}
fn default_addr() -> String {
    "127.0.0.1:7700".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeploymentConfig {
    /// Number of clients N.
    pub clients: usize,
    /// Collusion threshold T.
    pub privacy: usize,
    /// Embedding dimension d.
    pub dim: usize,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    /// Explicit field modulus. Defaults to the smallest prime above the bound.
    #[serde(default)]
    pub modulus: Option<u64>,
    /// Use the smallest prime with this many bits instead.
    #[serde(default)]
    pub field_bits: Option<u32>,
    #[serde(default)]
    pub paillier_bits: Option<u64>,
    /// Fixed-point scale.
    #[serde(default = "default_scale")]
    pub scale: u64,
    /// Bound on the absolute value of every embedding coordinate.
    #[serde(default = "default_bound")]
    pub value_bound: f64,
    /// Entity vocabulary. Defaults to every entity in the assignment.
    #[serde(default)]
    pub vocabulary: Option<Vec<String>>,
    pub assignment: Assignment,
    #[serde(default)]
    pub points: Option<PointsConfig>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_seed")]
    pub schedule_seed: u64,
    #[serde(default)]
    pub schedule: SchedulePolicy,
    #[serde(default)]
    pub transport: TransportKind,
    #[serde(default)]
    pub insecure_toy_crypto: bool,
    /// `modp2048`, `toy64` or `tiny`.
    #[serde(default)]
    pub dh_group: Option<String>,
    #[serde(default = "default_true")]
    pub precompute: bool,
    #[serde(default)]
    pub update: UpdateKind,
    /// Record wall-clock times in metrics. Off keeps output deterministic.
    #[serde(default)]
    pub timing: bool,
    #[serde(default = "default_addr")]
    pub server_addr: String,
    #[serde(default = "default_addr")]
    pub listen_addr: String,
    #[cfg(feature = "sabotage")]
    #[serde(default)]
    pub leak_raw_shares: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

/// Every problem found in a configuration.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, thiserror::Error)]
pub struct ConfigErrors(pub Vec<ConfigIssue>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for i in &self.0 {
            write!(f, "\n  {}: {}", i.field, i.message)?;
        }
        Ok(())
    }
}

impl ConfigErrors {
    fn single(field: &str, message: impl Into<String>) -> Self {
        Self(vec![ConfigIssue {
            field: field.into(),
            message: message.into(),
        }])
    }

    pub fn mentions(&self, field: &str) -> bool {
        self.0.iter().any(|i| i.field == field)
    }
}

#[derive(Default)]
struct Issues(Vec<ConfigIssue>);

impl Issues {
    fn push(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(ConfigIssue {
            field: field.into(),
            message: message.into(),
        });
    }
}

impl DeploymentConfig {
    /// Minimal configuration with the given shape and random assignment.
    pub fn new(clients: usize, privacy: usize, dim: usize, assignment: Assignment) -> Self {
        Self {
            clients,
            privacy,
            dim,
            rounds: 1,
            modulus: None,
            field_bits: None,
            paillier_bits: None,
            scale: DEFAULT_SCALE,
            value_bound: 1.0,
            vocabulary: None,
            assignment,
            points: None,
            seed: 1,
            schedule_seed: 1,
            schedule: SchedulePolicy::default(),
            transport: TransportKind::default(),
            insecure_toy_crypto: false,
            dh_group: None,
            precompute: true,
            update: UpdateKind::default(),
            timing: false,
            server_addr: default_addr(),
            listen_addr: default_addr(),
            #[cfg(feature = "sabotage")]
            leak_raw_shares: false,
        }
    }

    /// Same configuration with toy keys, for tests and quick runs.
    pub fn insecure(mut self) -> Self {
        self.insecure_toy_crypto = true;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigErrors> {
        serde_json::from_str(text).map_err(|e| ConfigErrors::single("config", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigErrors> {
        toml::from_str(text).map_err(|e| ConfigErrors::single("config", e.to_string()))
    }

    /// Reads a `.toml` file as TOML and anything else as JSON.
    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors::single("config", format!("cannot read {}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            _ => Self::from_json(&text),
        }
    }

    /// Applies `EMBAGG_SEED`, `EMBAGG_SCHEDULE_SEED`, `EMBAGG_SERVER_ADDR` and
    /// `EMBAGG_LISTEN_ADDR` as returned by `var`.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) -> Result<(), ConfigErrors> {
        let mut issues = Issues::default();
        for (name, field, slot) in [
            ("EMBAGG_SEED", "seed", &mut self.seed),
            ("EMBAGG_SCHEDULE_SEED", "schedule_seed", &mut self.schedule_seed),
        ] {
            if let Some(v) = var(name) {
                match v.trim().parse() {
                    Ok(x) => *slot = x,
                    Err(_) => issues.push(field, format!("{name}={v:?} is not an unsigned integer")),
                }
            }
        }
        if let Some(v) = var("EMBAGG_SERVER_ADDR") {
            self.server_addr = v;
        }
        if let Some(v) = var("EMBAGG_LISTEN_ADDR") {
            self.listen_addr = v;
        }
        if issues.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigErrors(issues.0))
        }
    }

    pub fn schedule(&self) -> DeliverySchedule {
        DeliverySchedule {
            seed: self.schedule_seed,
            policy: self.schedule,
        }
    }

    /// Quantized bound `B = round(scale * value_bound)`.
    pub fn quantized_bound(&self) -> Option<u64> {
        let b = (self.value_bound * self.scale as f64).round();
        (b.is_finite() && b >= 1.0 && b < 2f64.powi(62)).then_some(b as u64)
    }

    /// The smallest admissible field modulus, `2 * N^2 * B * safety`.
    pub fn field_floor(&self) -> Option<u64> {
        let b = self.quantized_bound()?;
        let n = self.clients as u64;
        2u64.checked_mul(n)?.checked_mul(n)?.checked_mul(b)?.checked_mul(SAFETY_FACTOR)
    }

    /// Checks every constraint and builds the deployment.
    pub fn deployment(&self) -> Result<Deployment, ConfigErrors> {
        let mut issues = Issues::default();
        let n = self.clients;
        let t = self.privacy;
        if n < 3 {
            issues.push("clients", format!("need at least 3 clients, got N={n}"));
        }
        if n > usize::from(u16::MAX) {
            issues.push("clients", "at most 65535 clients");
        }
        if t == 0 {
            issues.push("privacy", "collusion threshold T must be at least 1");
        } else if n >= 3 {
            if let Err(e) = check_threshold(n, t) {
                issues.push("privacy", e.to_string());
            }
        }
        if self.dim == 0 {
            issues.push("dim", "embedding dimension must be at least 1");
        }
        if self.scale == 0 {
            issues.push("scale", "fixed-point scale must be positive");
        }
        if !(self.value_bound.is_finite() && self.value_bound > 0.0) || self.quantized_bound().is_none() {
            issues.push("value_bound", "must be positive, finite and at least one quantization step");
        }

        let field = self.resolve_field(&mut issues);
        let paillier_bits = self.resolve_paillier(field, &mut issues);
        let group = self.resolve_group(&mut issues);
        let inputs = self.resolve_inputs(&mut issues);
        let vocabulary = self.resolve_vocabulary(field, inputs.as_deref(), &mut issues);
        let points = self.resolve_points(field, &mut issues);

        if !issues.0.is_empty() {
            return Err(ConfigErrors(issues.0));
        }
        let field = field.expect("field resolved");
        let codec = FixedPointCodec::new(field, self.scale, self.quantized_bound().expect("bound checked"));
        let ctx = SessionContext {
            n,
            t,
            d: self.dim,
            rounds: self.rounds,
            field,
            codec,
            points: points.expect("points resolved"),
            paillier_bits: paillier_bits.expect("key size resolved"),
            group: group.expect("group resolved"),
            vocabulary: vocabulary.expect("vocabulary resolved"),
            union_salt: public_seed(self.seed, "union-salt"),
            precompute: self.precompute,
            #[cfg(feature = "sabotage")]
            leak_raw_shares: self.leak_raw_shares,
        };
        Ok(Deployment {
            ctx: Arc::new(ctx),
            inputs: inputs.expect("inputs resolved"),
            update: self.update.clone(),
            seed: self.seed,
        })
    }

    fn resolve_field(&self, issues: &mut Issues) -> Option<PrimeField> {
        let floor = self.field_floor();
        let field = match (self.modulus, self.field_bits) {
            (Some(_), Some(_)) => {
                issues.push("field_bits", "give either modulus or field_bits, not both");
                return None;
            }
            (Some(p), None) => PrimeField::new(p).map_err(|e| issues.push("modulus", e.to_string())).ok()?,
            (None, Some(bits)) => {
                if !(2..=61).contains(&bits) {
                    issues.push("field_bits", format!("must be in 2..=61, got {bits}"));
                    return None;
                }
                PrimeField::smallest_above((1u64 << (bits - 1)) - 1)
                    .map_err(|e| issues.push("field_bits", e.to_string()))
                    .ok()?
            }
            (None, None) => {
                let Some(floor) = floor else {
                    issues.push("modulus", "2 * N^2 * B * safety does not fit in 64 bits");
                    return None;
                };
                PrimeField::smallest_above(floor).map_err(|e| issues.push("modulus", e.to_string())).ok()?
            }
        };
        if let Some(floor) = floor {
            if field.modulus() <= floor {
                let which = if self.modulus.is_some() { "modulus" } else { "field_bits" };
                issues.push(
                    which,
                    format!(
                        "p={} must exceed 2 * N^2 * B * {SAFETY_FACTOR} = {floor} so that sums decode",
                        field.modulus()
                    ),
                );
                return None;
            }
        }
        Some(field)
    }

    fn resolve_paillier(&self, field: Option<PrimeField>, issues: &mut Issues) -> Option<u64> {
        let default = if self.insecure_toy_crypto {
            TOY_PAILLIER_BITS.max(field.map_or(0, |f| min_key_bits(f.modulus())))
        } else {
            DEFAULT_PAILLIER_BITS
        };
        let bits = self.paillier_bits.unwrap_or(default);
        if bits > 8192 {
            issues.push("paillier_bits", format!("{bits} bits is beyond the supported 8192"));
            return None;
        }
        if bits < MIN_SECURE_PAILLIER_BITS && !self.insecure_toy_crypto {
            issues.push(
                "paillier_bits",
                format!("{bits}-bit keys are below {MIN_SECURE_PAILLIER_BITS}; set insecure_toy_crypto for toy keys"),
            );
        }
        let field = field?;
        let p = field.modulus();
        // Smallest modulus a key of this size can have.
        let smallest = BigUint::one() << (bits.max(1) - 1);
        if bits < min_key_bits(p) || !no_wrap(&smallest, p) {
            issues.push(
                "paillier_bits",
                format!(
                    "{bits}-bit keys cannot guarantee n > p^2 + p for p={p}; need at least {}",
                    min_key_bits(p)
                ),
            );
            return None;
        }
        Some(bits)
    }

    fn resolve_group(&self, issues: &mut Issues) -> Option<DhGroup> {
        let name = self
            .dh_group
            .as_deref()
            .unwrap_or(if self.insecure_toy_crypto { "toy64" } else { "modp2048" });
        let Ok(group) = DhGroup::by_name(name) else {
            issues.push("dh_group", format!("unknown group {name:?}; expected modp2048, toy64 or tiny"));
            return None;
        };
        if group.is_insecure() && !self.insecure_toy_crypto {
            issues.push("dh_group", format!("{name} is a toy group; set insecure_toy_crypto to use it"));
            return None;
        }
        Some(group)
    }

    fn resolve_inputs(&self, issues: &mut Issues) -> Option<Vec<ClientInput>> {
        let bound = self.value_bound;
        match &self.assignment {
            Assignment::Explicit { embeddings } => {
                if embeddings.len() != self.clients {
                    issues.push(
                        "assignment",
                        format!("explicit assignment lists {} clients, expected {}", embeddings.len(), self.clients),
                    );
                    return None;
                }
                let mut ok = true;
                for (i, map) in embeddings.iter().enumerate() {
                    for (entity, h) in map {
                        if h.len() != self.dim {
                            issues.push(
                                "assignment",
                                format!("client {} entity {entity:?} has {} coordinates, expected {}", i + 1, h.len(), self.dim),
                            );
                            ok = false;
                        } else if let Some(x) = h.iter().find(|x| !x.is_finite() || x.abs() > bound) {
                            issues.push(
                                "assignment",
                                format!("client {} entity {entity:?} has coordinate {x} beyond value_bound {bound}", i + 1),
                            );
                            ok = false;
                        }
                    }
                }
                ok.then(|| embeddings.iter().map(|m| ClientInput { embeddings: m.clone() }).collect())
            }
            Assignment::Random { entities, density } => {
                if *entities == 0 {
                    issues.push("assignment", "random assignment needs at least one entity");
                }
                if !(density.is_finite() && *density > 0.0 && *density <= 1.0) {
                    issues.push("assignment", format!("density {density} must be in (0, 1]"));
                }
                if *entities == 0 || !(*density > 0.0 && *density <= 1.0) || !(bound.is_finite() && bound > 0.0) {
                    return None;
                }
                let names = self.vocabulary.clone().unwrap_or_else(|| random_names(*entities));
                let mut rng = derive_rng(&public_seed(self.seed, "assignment"), "random", &[]);
                let inputs = (0..self.clients)
                    .map(|_| {
                        let mut embeddings = BTreeMap::new();
                        for e in names.iter().take(*entities) {
                            if rng.gen_bool(*density) {
                                let h = (0..self.dim).map(|_| rng.gen_range(-bound..=bound)).collect();
                                embeddings.insert(e.clone(), h);
                            }
                        }
                        ClientInput { embeddings }
                    })
                    .collect();
                Some(inputs)
            }
        }
    }

    fn resolve_vocabulary(
        &self,
        field: Option<PrimeField>,
        inputs: Option<&[ClientInput]>,
        issues: &mut Issues,
    ) -> Option<Vocabulary> {
        let names: Vec<String> = match (&self.vocabulary, &self.assignment) {
            (Some(v), Assignment::Random { entities, .. }) if v.len() < *entities => {
                issues.push(
                    "vocabulary",
                    format!("random assignment over {entities} entities needs that many vocabulary entries"),
                );
                return None;
            }
            (Some(v), _) => v.clone(),
            (None, Assignment::Random { entities, .. }) => random_names(*entities),
            (None, Assignment::Explicit { .. }) => {
                let all: BTreeSet<String> = inputs?.iter().flat_map(|c| c.embeddings.keys().cloned()).collect();
                all.into_iter().collect()
            }
        };
        let field = field?;
        let vocab = Vocabulary::new(&names, field).map_err(|e| issues.push("vocabulary", e.to_string())).ok()?;
        if let Some(inputs) = inputs {
            for (i, c) in inputs.iter().enumerate() {
                for e in c.embeddings.keys() {
                    if vocab.lookup(e).is_err() {
                        issues.push("vocabulary", format!("client {} holds {e:?}, which is not in the vocabulary", i + 1));
                    }
                }
            }
        }
        Some(vocab)
    }

    fn resolve_points(&self, field: Option<PrimeField>, issues: &mut Issues) -> Option<Option<EvaluationPoints>> {
        let Some(spec) = &self.points else { return Some(None) };
        let field = field?;
        let k = check_threshold(self.clients, self.privacy).ok()?;
        if spec.block_points.len() != k + self.privacy || spec.client_points.len() != self.clients {
            issues.push(
                "points",
                format!("need {} block_points and {} client_points", k + self.privacy, self.clients),
            );
            return None;
        }
        if let Some(x) = spec.block_points.iter().chain(&spec.client_points).find(|&&x| x >= field.modulus()) {
            issues.push("points", format!("point {x} is not below p={}", field.modulus()));
            return None;
        }
        let elems = |v: &[u64]| v.iter().map(|&x| field.elem(x)).collect();
        EvaluationPoints::new(elems(&spec.block_points), elems(&spec.client_points))
            .map(Some)
            .map_err(|e| issues.push("points", e.to_string()))
            .ok()
    }
}

fn random_names(entities: usize) -> Vec<String> {
    (1..=entities).map(|i| format!("e{i}")).collect()
}
