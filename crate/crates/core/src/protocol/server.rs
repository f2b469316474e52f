use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;

use super::context::SessionContext;
use super::payload::{DirectoryEntry, Payload, SetupMsg};
use super::{Outgoing, Party, Phase, ProtocolError, SERVER};
use crate::field::FieldElement;
use crate::masking::{uniform_element, uniform_nonzero};
use crate::paillier::{no_wrap, Ciphertext, PublicKey};
use crate::poly::{noise_poly_evals, ProtocolParams};
use crate::rng::{derive_rng, PartySeed};
use crate::transport::frame::{MsgType, WireMessage};
use crate::union::{blind, extract_union, sum_tables, EntityId, Extraction, UnionParams, UnionTable, RETRY_BUDGET};

/// Blinding state of one (querier, slot): the randomizer `r` and the noise
/// polynomial evaluations `noise(x_v)`, optionally already encrypted.
struct Retrieval {
    r: FieldElement,
    noise_evals: Vec<Vec<FieldElement>>,
    encrypted: Option<Vec<Vec<Ciphertext>>>,
    delivered: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    Collecting,
    Union,
    Rounds,
    Finished,
}

pub struct Server {
    ctx: Arc<SessionContext>,
    seed: PartySeed,
    stage: Stage,
    announced: BTreeMap<u16, DirectoryEntry>,
    keys: BTreeMap<u16, PublicKey>,
    union_params: Option<UnionParams>,
    partials: BTreeMap<u16, UnionTable>,
    entities: Vec<EntityId>,
    round: u32,
    params: Option<ProtocolParams>,
    done: BTreeSet<u16>,
    retrievals: BTreeMap<(u16, u32), Retrieval>,
    offline: Duration,
}

impl Server {
    pub fn new(ctx: Arc<SessionContext>, seed: PartySeed) -> Self {
        Self {
            ctx,
            seed,
            stage: Stage::Collecting,
            announced: BTreeMap::new(),
            keys: BTreeMap::new(),
            union_params: None,
            partials: BTreeMap::new(),
            entities: Vec::new(),
            round: 0,
            params: None,
            done: BTreeSet::new(),
            retrievals: BTreeMap::new(),
            offline: Duration::ZERO,
        }
    }

    /// The union as the server learned it from the public aggregate.
    pub fn union(&self) -> &[EntityId] {
        &self.entities
    }

    fn err(&self, phase: Phase, detail: impl std::fmt::Display) -> ProtocolError {
        ProtocolError::new(SERVER, phase, detail)
    }

    fn clients(&self) -> impl Iterator<Item = u16> {
        1..=self.ctx.n as u16
    }

    fn frame(&self, t: MsgType, round: u32, sender: u16, receiver: u16, slot: u32, payload: &Payload) -> WireMessage {
        WireMessage::new(t, round, sender, receiver, slot, payload.encode(self.ctx.field, 0))
    }

    fn broadcast(&self, round: u32, s: SetupMsg) -> Vec<Outgoing> {
        let p = Payload::Setup(s);
        self.clients()
            .map(|v| Outgoing::Send(self.frame(MsgType::Setup, round, SERVER, v, 0, &p)))
            .collect()
    }

    fn check_client(&self, phase: Phase, id: u16) -> Result<(), ProtocolError> {
        if id == SERVER || usize::from(id) > self.ctx.n {
            return Err(self.err(phase, format!("unknown client {id}")));
        }
        Ok(())
    }

    fn on_announce(&mut self, from: u16, dh_public: Vec<u8>, paillier_n: Vec<u8>) -> Result<Vec<Outgoing>, ProtocolError> {
        let e = |s: &Self, d: String| s.err(Phase::Setup, d);
        if self.stage != Stage::Collecting || self.announced.contains_key(&from) {
            return Err(e(self, format!("duplicate key announcement from {from}")));
        }
        self.ctx
            .group
            .validate_public(&BigUint::from_bytes_be(&dh_public))
            .map_err(|x| e(self, format!("client {from}: {x}")))?;
        let pk = PublicKey::from_modulus(BigUint::from_bytes_be(&paillier_n), u32::from(from))
            .map_err(|x| e(self, format!("client {from}: {x}")))?;
        if !no_wrap(pk.modulus(), self.ctx.field.modulus()) {
            return Err(e(self, format!("client {from}: Paillier modulus does not exceed p^2 + p")));
        }
        self.keys.insert(from, pk);
        self.announced.insert(
            from,
            DirectoryEntry {
                party: from,
                dh_public,
                paillier_n,
            },
        );
        if self.announced.len() < self.ctx.n {
            return Ok(vec![]);
        }
        let mut out = self.broadcast(0, SetupMsg::Directory(self.announced.values().cloned().collect()));
        out.extend(self.open_union(0));
        Ok(out)
    }

    fn open_union(&mut self, attempt: u32) -> Vec<Outgoing> {
        self.union_params = Some(UnionParams::for_attempt(&self.ctx.union_salt, self.ctx.vocabulary.len(), attempt));
        self.partials.clear();
        self.stage = Stage::Union;
        vec![]
    }

    fn on_partial(&mut self, msg: &WireMessage, payload: Payload) -> Result<Vec<Outgoing>, ProtocolError> {
        let e = |s: &Self, d: String| s.err(Phase::Union, d);
        let Some(params) = self.union_params.clone().filter(|p| self.stage == Stage::Union && p.attempt == msg.slot) else {
            return Err(e(self, format!("partial sum for attempt {} outside that attempt", msg.slot)));
        };
        if self.partials.contains_key(&msg.sender) {
            return Err(e(self, format!("duplicate partial sum from {}", msg.sender)));
        }
        let flat = match payload {
            Payload::ShareSum(v) => v,
            other => return Err(e(self, format!("partial sum carries a {} payload", other.class()))),
        };
        let table = UnionTable::from_flat(&flat, params.buckets).map_err(|x| e(self, x.to_string()))?;
        self.partials.insert(msg.sender, table);
        if self.partials.len() < self.ctx.n {
            return Ok(vec![]);
        }
        let f = self.ctx.field;
        let sum = sum_tables(f, params.buckets, self.partials.values());
        let aggregate = blind(&sum, f, &mut derive_rng(&self.seed, "union-blind", &[u64::from(params.attempt)]));
        let payload = Payload::PublicAggregate(aggregate.to_flat());
        let mut out: Vec<Outgoing> = self
            .clients()
            .map(|v| Outgoing::Send(self.frame(MsgType::UnionBroadcast, 0, SERVER, v, params.attempt, &payload)))
            .collect();
        match extract_union(&aggregate, &params, Some(&self.ctx.vocabulary)) {
            Extraction::Union(images) => {
                let vocab = &self.ctx.vocabulary;
                self.entities = images
                    .iter()
                    .map(|x| vocab.ids()[vocab.position(x.value()).unwrap()].clone())
                    .collect();
                self.union_params = None;
                self.stage = Stage::Rounds;
                out.extend(self.next_round(1)?);
            }
            Extraction::CollisionRetry { .. } if params.attempt + 1 < RETRY_BUDGET => {
                out.extend(self.open_union(params.attempt + 1));
            }
            Extraction::CollisionRetry { bucket } => {
                return Err(e(self, format!("union retry budget exhausted (collision in bucket {bucket})")));
            }
        }
        Ok(out)
    }

    fn next_round(&mut self, t: u32) -> Result<Vec<Outgoing>, ProtocolError> {
        self.done.clear();
        self.retrievals.clear();
        if t > self.ctx.rounds {
            self.stage = Stage::Finished;
            return Ok(self.broadcast(t - 1, SetupMsg::Finish));
        }
        self.round = t;
        self.params = Some(self.ctx.params(self.entities.len()).map_err(|e| self.err(Phase::Share, e))?);
        Ok(self.broadcast(t, SetupMsg::RoundStart))
    }

    fn check_round(&self, phase: Phase, msg: &WireMessage) -> Result<(), ProtocolError> {
        if self.stage != Stage::Rounds || msg.round != self.round {
            return Err(self.err(phase, format!("{:?} for round {} during round {}", msg.msg_type, msg.round, self.round)));
        }
        self.check_client(phase, msg.receiver)
    }

    /// Draws `r` and `noise` for a retrieval slot. With precomputation on, the
    /// encryptions of `noise(x_v)` are produced here as well.
    fn ensure_retrieval(&mut self, querier: u16, slot: u32) -> Result<(), ProtocolError> {
        if self.retrievals.contains_key(&(querier, slot)) {
            return Ok(());
        }
        let started = Instant::now();
        let f = self.ctx.field;
        let params = self.params.as_ref().unwrap();
        let idx = [u64::from(self.round), u64::from(querier), u64::from(slot)];
        let r = uniform_nonzero(&mut derive_rng(&self.seed, "server-r", &idx), f);
        let mut rng = derive_rng(&self.seed, "server-noise", &idx);
        let noise: Vec<Vec<FieldElement>> = (0..params.k_tilde())
            .map(|_| (0..params.block_len).map(|_| uniform_element(&mut rng, f)).collect())
            .collect();
        let noise_evals = noise_poly_evals(&noise, params).map_err(|e| self.err(Phase::Response, e))?;
        let encrypted = if self.ctx.precompute {
            let enc = (1..=self.ctx.n as u16)
                .map(|v| self.encrypt_noise(querier, slot, v, &noise_evals[usize::from(v - 1)]))
                .collect::<Result<Vec<_>, _>>()?;
            Some(enc)
        } else {
            None
        };
        self.retrievals.insert(
            (querier, slot),
            Retrieval {
                r,
                noise_evals,
                encrypted,
                delivered: 0,
            },
        );
        if self.ctx.precompute {
            self.offline += started.elapsed();
        }
        Ok(())
    }

    fn encrypt_noise(&self, querier: u16, slot: u32, v: u16, noise_evals: &[FieldElement]) -> Result<Vec<Ciphertext>, ProtocolError> {
        let pk = &self.keys[&querier];
        let mut rng = derive_rng(
            &self.seed,
            "noise-enc",
            &[u64::from(self.round), u64::from(querier), u64::from(slot), u64::from(v)],
        );
        noise_evals.iter()
            .map(|x| pk.encrypt(&BigUint::from(x.value()), &mut rng))
            .collect::<Result<_, _>>()
            .map_err(|e| self.err(Phase::Response, e))
    }

    /// `Y = A^r * enc(noise(x_v))`, decrypting to `r * A + noise(x_v)`.
    fn on_response(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError> {
        let e = |s: &Self, d: String| s.err(Phase::Response, d);
        self.check_round(Phase::Response, msg)?;
        self.check_client(Phase::Response, msg.sender)?;
        let (responder, querier, slot) = (msg.sender, msg.receiver, msg.slot);
        let cts = Payload::decode(&msg.payload, self.ctx.field)
            .and_then(Payload::into_cipher)
            .map_err(|x| e(self, format!("from {responder}: {x}")))?;
        let block_len = self.params.as_ref().unwrap().block_len;
        if cts.len() != block_len {
            return Err(e(self, format!("response from {responder} has {} ciphertexts", cts.len())));
        }
        self.ensure_retrieval(querier, slot)?;
        let ret = &self.retrievals[&(querier, slot)];
        let v = usize::from(responder - 1);
        let noise = match &ret.encrypted {
            Some(enc) => enc[v].clone(),
            None => self.encrypt_noise(querier, slot, responder, &ret.noise_evals[v])?,
        };
        let pk = &self.keys[&querier];
        let r = BigUint::from(ret.r.value());
        let blinded = cts
            .iter()
            .zip(&noise)
            .map(|(c, z)| pk.add(&pk.scale(c, &r)?, z))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|x| e(self, format!("from {responder}: {x}")))?;
        let width = pk.ciphertext_len() - 8;
        let out = WireMessage::new(
            MsgType::MaskedResponseDeliver,
            self.round,
            responder,
            querier,
            slot,
            Payload::Cipher(blinded).encode(self.ctx.field, width),
        );
        let ret = self.retrievals.get_mut(&(querier, slot)).unwrap();
        ret.delivered += 1;
        if ret.delivered > self.ctx.n {
            return Err(e(self, format!("too many responses for client {querier} slot {slot}")));
        }
        Ok(vec![Outgoing::Send(out)])
    }

    fn on_round_done(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError> {
        if self.stage != Stage::Rounds || msg.round != self.round || !self.done.insert(msg.sender) {
            return Err(self.err(Phase::Setup, format!("unexpected round-done {} from {}", msg.round, msg.sender)));
        }
        if self.done.len() < self.ctx.n {
            return Ok(vec![]);
        }
        self.next_round(self.round + 1)
    }

    fn relay(&self, msg: &WireMessage, as_type: MsgType) -> Vec<Outgoing> {
        let mut fwd = msg.clone();
        fwd.msg_type = as_type;
        vec![Outgoing::Send(fwd)]
    }
}

impl Party for Server {
    fn id(&self) -> u16 {
        SERVER
    }

    fn start(&mut self) -> Result<Vec<Outgoing>, ProtocolError> {
        Ok(vec![])
    }

    fn handle(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError> {
        let phase = Phase::of(msg.msg_type);
        self.check_client(phase, msg.sender)?;
        if self.stage == Stage::Finished {
            return Err(self.err(phase, format!("{:?} frame after finish", msg.msg_type)));
        }
        match msg.msg_type {
            MsgType::Setup => {
                let payload = Payload::decode(&msg.payload, self.ctx.field).map_err(|e| self.err(phase, e))?;
                match payload {
                    Payload::Setup(SetupMsg::KeyAnnounce { dh_public, paillier_n }) => {
                        self.on_announce(msg.sender, dh_public, paillier_n)
                    }
                    Payload::Setup(SetupMsg::RoundDone) => self.on_round_done(msg),
                    other => Err(self.err(phase, format!("unexpected setup payload {other:?}"))),
                }
            }
            MsgType::UnionShare => {
                if self.stage != Stage::Union {
                    return Err(self.err(phase, "union share outside the union"));
                }
                self.check_client(phase, msg.receiver)?;
                Ok(self.relay(msg, MsgType::UnionShare))
            }
            MsgType::UnionPartialSum => {
                let payload = Payload::decode(&msg.payload, self.ctx.field).map_err(|e| self.err(phase, e))?;
                self.on_partial(msg, payload)
            }
            MsgType::ShareUpload => {
                self.check_round(phase, msg)?;
                Ok(self.relay(msg, MsgType::ShareForward))
            }
            MsgType::QueryUpload => {
                self.check_round(phase, msg)?;
                self.ensure_retrieval(msg.sender, msg.slot)?;
                Ok(self.relay(msg, MsgType::QueryForward))
            }
            MsgType::ResponseUpload => self.on_response(msg),
            MsgType::Abort => Err(self.err(phase, format!("client {} aborted", msg.sender))),
            other => Err(self.err(phase, format!("clients may not send {other:?}"))),
        }
    }

    fn is_finished(&self) -> bool {
        self.stage == Stage::Finished
    }

    fn status(&self) -> String {
        format!(
            "server: {:?}, round {}, {}/{} keys, {} union partials, {} round-done, {} open retrievals",
            self.stage,
            self.round,
            self.announced.len(),
            self.ctx.n,
            self.partials.len(),
            self.done.len(),
            self.retrievals.len()
        )
    }

    fn offline_time(&self) -> Duration {
        self.offline
    }
}
