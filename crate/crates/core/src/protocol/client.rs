use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use num_bigint::BigUint;

use super::context::SessionContext;
use super::expand::{expand, ExpandedEmbedding};
use super::oracle::GlobalEmbedding;
use super::payload::{DirectoryEntry, Payload, SetupMsg};
use super::update::LocalUpdate;
use super::{Outgoing, Party, Phase, ProtocolError, SERVER};
use crate::field::{FieldElement, Rational};
use crate::masking::{agree_master, otp_mask, otp_unmask, uniform_element, DhKeypair, MasterSecret, PadLedger, PairwiseSeed, Purpose};
use crate::paillier::{Ciphertext, Keypair, PublicKey};
use crate::poly::{query_encode, reconstruct_recover, ProtocolParams, SharePoly};
use crate::rng::{derive_rng, PartySeed};
use crate::transport::frame::{MsgType, WireMessage};
use crate::union::{build_contribution, extract_union, split_shares, EntityId, Extraction, UnionParams, UnionTable, RETRY_BUDGET};

/// A client's private input: its entities and their initial embeddings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClientInput {
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

/// What one client put in and got back in one round.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientRound {
    pub round: u32,
    pub inputs: BTreeMap<String, Vec<f64>>,
    pub recovered: BTreeMap<String, GlobalEmbedding>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Stage {
    AwaitDirectory,
    Union,
    AwaitRound,
    InRound,
    Finished,
}

struct UnionRun {
    params: UnionParams,
    acc: UnionTable,
    received: BTreeSet<u16>,
}

struct Slot {
    entity: usize,
    responses: Vec<Option<Vec<FieldElement>>>,
    done: bool,
}

struct RoundState {
    t: u32,
    params: ProtocolParams,
    agg: Vec<Vec<FieldElement>>,
    shares_from: BTreeSet<u16>,
    pending_queries: Vec<WireMessage>,
    slots: Vec<Slot>,
    recovered: BTreeMap<String, GlobalEmbedding>,
    inputs: BTreeMap<String, Vec<f64>>,
    done_sent: bool,
}

impl RoundState {
    fn aggregated(&self) -> bool {
        self.shares_from.len() == self.params.n
    }
}

pub struct Client {
    id: u16,
    ctx: Arc<SessionContext>,
    seed: PartySeed,
    embeddings: BTreeMap<String, Vec<f64>>,
    update: Box<dyn LocalUpdate>,
    dh: DhKeypair,
    paillier: Keypair,
    masters: BTreeMap<u16, MasterSecret>,
    peer_keys: BTreeMap<u16, PublicKey>,
    stage: Stage,
    ledger: PadLedger,
    union: Option<UnionRun>,
    entities: Vec<EntityId>,
    union_attempts: u32,
    round: Option<RoundState>,
    history: Vec<ClientRound>,
}

impl Client {
    pub fn new(
        id: u16,
        ctx: Arc<SessionContext>,
        seed: PartySeed,
        input: ClientInput,
        update: Box<dyn LocalUpdate>,
    ) -> Result<Self, ProtocolError> {
        let err = |e: String| ProtocolError::new(id, Phase::Setup, e);
        if id == SERVER || usize::from(id) > ctx.n {
            return Err(err(format!("client id {id} outside 1..={}", ctx.n)));
        }
        for (name, h) in &input.embeddings {
            ctx.vocabulary.lookup(name).map_err(|e| err(e.to_string()))?;
            if h.len() != ctx.d {
                return Err(err(format!("embedding of {name:?} has {} coordinates, expected {}", h.len(), ctx.d)));
            }
        }
        let dh = ctx.group.generate(&mut derive_rng(&seed, "dh", &[]));
        let paillier = Keypair::generate(ctx.paillier_bits, u32::from(id), &mut derive_rng(&seed, "paillier", &[]))
            .map_err(|e| err(e.to_string()))?;
        Ok(Self {
            id,
            ctx,
            seed,
            embeddings: input.embeddings,
            update,
            dh,
            paillier,
            masters: BTreeMap::new(),
            peer_keys: BTreeMap::new(),
            stage: Stage::AwaitDirectory,
            ledger: PadLedger::default(),
            union: None,
            entities: Vec::new(),
            union_attempts: 0,
            round: None,
            history: Vec::new(),
        })
    }

    /// Recovered averages and inputs of every completed round.
    pub fn history(&self) -> &[ClientRound] {
        &self.history
    }

    /// The agreed union, in canonical order.
    pub fn union(&self) -> &[EntityId] {
        &self.entities
    }

    pub fn union_attempts(&self) -> u32 {
        self.union_attempts
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.paillier.public
    }

    fn err(&self, phase: Phase, detail: impl std::fmt::Display) -> ProtocolError {
        ProtocolError::new(self.id, phase, detail)
    }

    fn n(&self) -> u16 {
        self.ctx.n as u16
    }

    fn peers(&self) -> impl Iterator<Item = u16> + '_ {
        (1..=self.n()).filter(move |&v| v != self.id)
    }

    fn frame(&self, t: MsgType, round: u32, receiver: u16, slot: u32, payload: &Payload, width: usize) -> WireMessage {
        WireMessage::new(t, round, self.id, receiver, slot, payload.encode(self.ctx.field, width))
    }

    fn pad_seed(&self, peer: u16, purpose: Purpose, round: u32) -> Result<PairwiseSeed, ProtocolError> {
        let master = self
            .masters
            .get(&peer)
            .ok_or_else(|| self.err(Phase::of_purpose(purpose), format!("no key agreed with client {peer}")))?;
        Ok(PairwiseSeed::derive(master, self.id, peer, purpose, round))
    }

    fn mask_to(&mut self, peer: u16, purpose: Purpose, round: u32, slot: u32, v: &[FieldElement]) -> Result<Vec<FieldElement>, ProtocolError> {
        let mut stream = self.pad_seed(peer, purpose, round)?.stream(self.id, slot, self.ctx.field);
        self.ledger
            .claim(stream.key())
            .map_err(|e| self.err(Phase::of_purpose(purpose), e))?;
        Ok(otp_mask(v, &mut stream))
    }

    fn unmask_from(&self, peer: u16, purpose: Purpose, round: u32, slot: u32, v: &[FieldElement]) -> Result<Vec<FieldElement>, ProtocolError> {
        let mut stream = self.pad_seed(peer, purpose, round)?.stream(peer, slot, self.ctx.field);
        Ok(otp_unmask(v, &mut stream))
    }

    fn on_directory(&mut self, entries: Vec<DirectoryEntry>) -> Result<Vec<Outgoing>, ProtocolError> {
        let e = |c: &Self, d: String| c.err(Phase::Setup, d);
        if self.stage != Stage::AwaitDirectory {
            return Err(e(self, "unexpected directory".into()));
        }
        let ids: BTreeSet<u16> = entries.iter().map(|x| x.party).collect();
        if ids != (1..=self.n()).collect() || entries.len() != self.ctx.n {
            return Err(e(self, format!("directory lists parties {ids:?}")));
        }
        for entry in entries {
            let pk = PublicKey::from_modulus(BigUint::from_bytes_be(&entry.paillier_n), u32::from(entry.party))
                .map_err(|x| e(self, x.to_string()))?;
            if entry.party == self.id {
                if pk != self.paillier.public {
                    return Err(e(self, "directory carries a different key for this client".into()));
                }
                continue;
            }
            let y = BigUint::from_bytes_be(&entry.dh_public);
            let master = agree_master(&self.ctx.group, &self.dh, &y).map_err(|x| e(self, format!("client {}: {x}", entry.party)))?;
            self.masters.insert(entry.party, master);
            self.peer_keys.insert(entry.party, pk);
        }
        self.peer_keys.insert(self.id, self.paillier.public.clone());
        self.start_union(0)
    }

    fn start_union(&mut self, attempt: u32) -> Result<Vec<Outgoing>, ProtocolError> {
        let f = self.ctx.field;
        let params = UnionParams::for_attempt(&self.ctx.union_salt, self.ctx.vocabulary.len(), attempt);
        let mut images = Vec::with_capacity(self.embeddings.len());
        for name in self.embeddings.keys() {
            let id = self.ctx.vocabulary.lookup(name).map_err(|e| self.err(Phase::Union, e))?;
            images.push(f.elem(id.image));
        }
        let contribution = build_contribution(&images, &params, f, &mut derive_rng(&self.seed, "union-tag", &[u64::from(attempt)]));
        let keep = usize::from(self.id - 1);
        let mut shares = split_shares(
            &contribution,
            self.ctx.n,
            keep,
            f,
            &mut derive_rng(&self.seed, "union-share", &[u64::from(attempt)]),
        );
        let mut out = Vec::new();
        for v in self.peers().collect::<Vec<_>>() {
            let flat = shares[usize::from(v - 1)].to_flat();
            let masked = self.mask_to(v, Purpose::Union, attempt, 0, &flat)?;
            out.push(Outgoing::Send(self.frame(MsgType::UnionShare, 0, v, attempt, &Payload::Masked(masked), 0)));
        }
        self.union = Some(UnionRun {
            params,
            acc: shares.swap_remove(keep),
            received: BTreeSet::new(),
        });
        self.stage = Stage::Union;
        self.union_attempts = attempt + 1;
        Ok(out)
    }

    fn on_union_share(&mut self, msg: &WireMessage, payload: Payload) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Union, d);
        let from = msg.sender;
        let run = self.union.as_ref().ok_or_else(|| err(self, "union share outside the union".into()))?;
        if self.stage != Stage::Union || msg.slot != run.params.attempt {
            return Err(err(self, format!("union share for attempt {} during attempt {}", msg.slot, run.params.attempt)));
        }
        if from == self.id || from == SERVER || from > self.n() || run.received.contains(&from) {
            return Err(err(self, format!("unexpected union share from {from}")));
        }
        let masked = payload.into_masked().map_err(|e| err(self, e.to_string()))?;
        let flat = self.unmask_from(from, Purpose::Union, msg.slot, 0, &masked)?;
        let run = self.union.as_mut().unwrap();
        let share = UnionTable::from_flat(&flat, run.params.buckets).map_err(|e| ProtocolError::new(self.id, Phase::Union, e))?;
        run.acc.add_assign(&share);
        run.received.insert(from);
        if run.received.len() + 1 < self.ctx.n {
            return Ok(vec![]);
        }
        let sum = Payload::ShareSum(run.acc.to_flat());
        let attempt = run.params.attempt;
        Ok(vec![Outgoing::Send(self.frame(MsgType::UnionPartialSum, 0, SERVER, attempt, &sum, 0))])
    }

    fn on_union_broadcast(&mut self, msg: &WireMessage, payload: Payload) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Union, d);
        let run = self.union.as_ref().ok_or_else(|| err(self, "broadcast outside the union".into()))?;
        if msg.slot != run.params.attempt || run.received.len() + 1 < self.ctx.n {
            return Err(err(self, format!("broadcast for attempt {} arrived early", msg.slot)));
        }
        let flat = match payload {
            Payload::PublicAggregate(v) => v,
            other => return Err(err(self, format!("broadcast carries a {} payload", other.class()))),
        };
        let table = UnionTable::from_flat(&flat, run.params.buckets).map_err(|e| err(self, e.to_string()))?;
        match extract_union(&table, &run.params, Some(&self.ctx.vocabulary)) {
            Extraction::Union(images) => {
                self.entities = images
                    .iter()
                    .map(|x| self.ctx.vocabulary.ids()[self.ctx.vocabulary.position(x.value()).unwrap()].clone())
                    .collect();
                self.union = None;
                self.stage = Stage::AwaitRound;
                Ok(vec![])
            }
            Extraction::CollisionRetry { .. } if run.params.attempt + 1 < RETRY_BUDGET => {
                let next = run.params.attempt + 1;
                self.start_union(next)
            }
            Extraction::CollisionRetry { bucket } => Err(err(
                self,
                format!("union retry budget of {RETRY_BUDGET} exhausted (last collision in bucket {bucket})"),
            )),
        }
    }

    fn on_round_start(&mut self, t: u32) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Share, d);
        let expected = self.history.len() as u32 + 1;
        if !matches!(self.stage, Stage::AwaitRound | Stage::InRound) || t != expected {
            return Err(err(self, format!("round {t} started, expected round {expected}")));
        }
        if let Some(r) = &self.round {
            if r.slots.iter().any(|s| !s.done) {
                return Err(err(self, format!("round {t} started before round {} finished", r.t)));
            }
        }
        self.round = None;
        if let Some(prev) = self.history.last() {
            for (name, h) in self.embeddings.iter_mut() {
                let global = prev.recovered.get(name).map(|g| g.values.as_slice()).unwrap_or(&[]);
                self.update.update(t, name, h, global);
            }
        }
        let f = self.ctx.field;
        let m = self.entities.len();
        let params = self.ctx.params(m).map_err(|e| err(self, e.to_string()))?;
        let names: Vec<String> = self.entities.iter().map(|e| e.raw.clone()).collect();
        let rows: Vec<ExpandedEmbedding> = expand(&params, &self.ctx.codec, &names, |i| {
            self.embeddings.get(&names[i]).map(Vec::as_slice)
        })
        .map_err(|e| err(self, e.to_string()))?;

        let mut polys = Vec::with_capacity(m);
        for row in &rows {
            let mut rng = derive_rng(&self.seed, "share-noise", &[u64::from(t), row.entity as u64]);
            let noise: Vec<Vec<FieldElement>> = (0..params.t)
                .map(|_| (0..params.block_len).map(|_| uniform_element(&mut rng, f)).collect())
                .collect();
            polys.push(SharePoly::new(&params, &row.blocks, &noise).map_err(|e| err(self, e.to_string()))?);
        }

        let mut out = Vec::new();
        let mut own = Vec::new();
        for v in 1..=self.n() {
            let x = params.client_point(usize::from(v - 1));
            let share: Vec<FieldElement> = polys.iter().flat_map(|p| p.eval(x)).collect();
            if v == self.id {
                let local = self.frame(MsgType::ShareUpload, t, v, 0, &Payload::Plain(share.clone()), 0);
                out.push(Outgoing::Local(local));
                own = share;
            } else if self.ctx.leaks_raw_shares() {
                out.push(Outgoing::Send(self.frame(MsgType::ShareUpload, t, v, 0, &Payload::Plain(share), 0)));
            } else {
                let masked = self.mask_to(v, Purpose::Share, t, 0, &share)?;
                out.push(Outgoing::Send(self.frame(MsgType::ShareUpload, t, v, 0, &Payload::Masked(masked), 0)));
            }
        }

        let slots = rows
            .iter()
            .filter(|r| r.owned)
            .map(|r| Slot {
                entity: r.entity,
                responses: vec![None; params.n],
                done: false,
            })
            .collect();
        let agg = if params.block_len == 0 {
            vec![Vec::new(); m]
        } else {
            own.chunks(params.block_len).map(<[_]>::to_vec).collect()
        };
        self.round = Some(RoundState {
            t,
            agg,
            shares_from: BTreeSet::from([self.id]),
            pending_queries: Vec::new(),
            slots,
            recovered: BTreeMap::new(),
            inputs: self.embeddings.clone(),
            done_sent: false,
            params,
        });
        self.stage = Stage::InRound;
        Ok(out)
    }

    fn on_share(&mut self, msg: &WireMessage, payload: Payload) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Share, d);
        let from = msg.sender;
        let Some(round) = self.round.as_ref().filter(|r| r.t == msg.round) else {
            return Err(err(self, format!("share for round {} outside that round", msg.round)));
        };
        if from == SERVER || from > self.n() || round.shares_from.contains(&from) {
            return Err(err(self, format!("unexpected share from {from}")));
        }
        let mlen = round.params.m * round.params.block_len;
        let share = match payload {
            Payload::Plain(v) if self.ctx.leaks_raw_shares() => v,
            Payload::Masked(v) => self.unmask_from(from, Purpose::Share, msg.round, 0, &v)?,
            other => return Err(err(self, format!("share carries a {} payload", other.class()))),
        };
        if share.len() != mlen {
            return Err(err(self, format!("share has {} elements, expected {mlen}", share.len())));
        }
        let round = self.round.as_mut().unwrap();
        let bl = round.params.block_len;
        for (m, acc) in round.agg.iter_mut().enumerate() {
            for (a, &s) in acc.iter_mut().zip(&share[m * bl..(m + 1) * bl]) {
                *a += s;
            }
        }
        round.shares_from.insert(from);
        if !round.aggregated() {
            return Ok(vec![]);
        }
        let mut out = self.send_queries()?;
        let pending = std::mem::take(&mut self.round.as_mut().unwrap().pending_queries);
        for q in pending {
            out.extend(self.on_query(&q)?);
        }
        Ok(out)
    }

    fn send_queries(&mut self) -> Result<Vec<Outgoing>, ProtocolError> {
        let f = self.ctx.field;
        let round = self.round.as_ref().unwrap();
        let (t, params) = (round.t, round.params.clone());
        let targets: Vec<usize> = round.slots.iter().map(|s| s.entity).collect();
        let mut out = Vec::new();
        for (s, &target) in targets.iter().enumerate() {
            let slot = s as u32;
            let mut rng = derive_rng(&self.seed, "query-noise", &[u64::from(t), s as u64]);
            let noise: Vec<Vec<FieldElement>> = (0..params.m)
                .map(|_| (0..params.t).map(|_| uniform_element(&mut rng, f)).collect())
                .collect();
            let mut own = None;
            for v in 1..=self.n() {
                let q = query_encode(target, &noise, &params, params.client_point(usize::from(v - 1)))
                    .map_err(|e| self.err(Phase::Query, e))?;
                if v == self.id {
                    out.push(Outgoing::Local(self.frame(MsgType::QueryUpload, t, v, slot, &Payload::Plain(q.clone()), 0)));
                    own = Some(q);
                } else {
                    let masked = self.mask_to(v, Purpose::Query, t, slot, &q)?;
                    out.push(Outgoing::Send(self.frame(MsgType::QueryUpload, t, v, slot, &Payload::Masked(masked), 0)));
                }
            }
            out.push(self.respond(self.id, slot, &own.unwrap())?);
        }
        if targets.is_empty() {
            out.extend(self.finish_round()?);
        }
        Ok(out)
    }

    fn on_query(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Query, d);
        let Some(round) = self.round.as_mut().filter(|r| r.t == msg.round) else {
            return Err(err(self, format!("query for round {} outside that round", msg.round)));
        };
        if !round.aggregated() {
            round.pending_queries.push(msg.clone());
            return Ok(vec![]);
        }
        let m = round.params.m;
        let from = msg.sender;
        if from == SERVER || from == self.id || from > self.n() {
            return Err(err(self, format!("unexpected query from {from}")));
        }
        let masked = Payload::decode(&msg.payload, self.ctx.field)
            .and_then(Payload::into_masked)
            .map_err(|e| err(self, e.to_string()))?;
        if masked.len() != m {
            return Err(err(self, format!("query has {} coordinates, expected {m}", masked.len())));
        }
        let q = self.unmask_from(from, Purpose::Query, msg.round, msg.slot, &masked)?;
        Ok(vec![self.respond(from, msg.slot, &q)?])
    }

    /// `A = sum_m q_m * y_m`, encrypted coordinatewise under the querier's key.
    fn respond(&self, querier: u16, slot: u32, q: &[FieldElement]) -> Result<Outgoing, ProtocolError> {
        let round = self.round.as_ref().unwrap();
        let a = crate::poly::answer_query(q, &round.agg, &round.params);
        let pk = self
            .peer_keys
            .get(&querier)
            .ok_or_else(|| self.err(Phase::Response, format!("no key for client {querier}")))?;
        let mut rng = derive_rng(&self.seed, "response-enc", &[u64::from(round.t), u64::from(querier), u64::from(slot)]);
        let cts = a
            .iter()
            .map(|x| pk.encrypt(&BigUint::from(x.value()), &mut rng))
            .collect::<Result<Vec<Ciphertext>, _>>()
            .map_err(|e| self.err(Phase::Response, e))?;
        let width = pk.ciphertext_len() - 8;
        Ok(Outgoing::Send(self.frame(MsgType::ResponseUpload, round.t, querier, slot, &Payload::Cipher(cts), width)))
    }

    fn on_response(&mut self, msg: &WireMessage, payload: Payload) -> Result<Vec<Outgoing>, ProtocolError> {
        let err = |c: &Self, d: String| c.err(Phase::Response, d);
        let f = self.ctx.field;
        let Some(round) = self.round.as_ref().filter(|r| r.t == msg.round) else {
            return Err(err(self, format!("response for round {} outside that round", msg.round)));
        };
        let (v, s) = (msg.sender, msg.slot as usize);
        if v == SERVER || v > self.n() || s >= round.slots.len() || round.slots[s].responses[usize::from(v - 1)].is_some() {
            return Err(err(self, format!("unexpected response from {v} for slot {s}")));
        }
        let cts = payload.into_cipher().map_err(|e| err(self, e.to_string()))?;
        if cts.len() != round.params.block_len {
            return Err(err(self, format!("response has {} ciphertexts, expected {}", cts.len(), round.params.block_len)));
        }
        let p = BigUint::from(f.modulus());
        let mut y = Vec::with_capacity(cts.len());
        for c in &cts {
            let m = self.paillier.secret.decrypt(c).map_err(|e| err(self, e.to_string()))?;
            y.push(f.elem((m % &p).to_u64_digits().first().copied().unwrap_or(0)));
        }
        let round = self.round.as_mut().unwrap();
        round.slots[s].responses[usize::from(v - 1)] = Some(y);
        if round.slots[s].responses.iter().any(Option::is_none) {
            return Ok(vec![]);
        }
        let responses: Vec<Vec<FieldElement>> = round.slots[s].responses.iter().map(|r| r.clone().unwrap()).collect();
        let params = round.params.clone();
        let entity = round.slots[s].entity;
        let blocks = reconstruct_recover(&responses, &params).map_err(|e| err(self, format!("slot {s}: {e}")))?;
        let flat = blocks.concat();
        let count = *flat.last().unwrap();
        let inv = count.inv().map_err(|_| err(self, format!("slot {s}: blinded count is zero")))?;
        let exact = flat[..params.d]
            .iter()
            .map(|&x| self.ctx.codec.decode_ratio(x * inv, params.n as u64))
            .collect::<Result<Vec<Rational>, _>>()
            .map_err(|e| err(self, format!("slot {s}: {e}")))?;
        let name = self.entities[entity].raw.clone();
        let global = GlobalEmbedding::from_exact(&name, exact, &self.ctx.codec);
        let round = self.round.as_mut().unwrap();
        round.slots[s].done = true;
        round.recovered.insert(name, global);
        if round.slots.iter().all(|s| s.done) {
            return self.finish_round();
        }
        Ok(vec![])
    }

    fn finish_round(&mut self) -> Result<Vec<Outgoing>, ProtocolError> {
        let round = self.round.as_mut().unwrap();
        if round.done_sent {
            return Ok(vec![]);
        }
        round.done_sent = true;
        let t = round.t;
        self.history.push(ClientRound {
            round: t,
            inputs: round.inputs.clone(),
            recovered: round.recovered.clone(),
        });
        Ok(vec![Outgoing::Send(self.frame(
            MsgType::Setup,
            t,
            SERVER,
            0,
            &Payload::Setup(SetupMsg::RoundDone),
            0,
        ))])
    }

    fn phase_now(&self) -> Phase {
        match self.stage {
            Stage::AwaitDirectory | Stage::AwaitRound | Stage::Finished => Phase::Setup,
            Stage::Union => Phase::Union,
            Stage::InRound => Phase::Share,
        }
    }
}

impl Phase {
    fn of_purpose(p: Purpose) -> Phase {
        match p {
            Purpose::Share => Phase::Share,
            Purpose::Query => Phase::Query,
            Purpose::Union => Phase::Union,
        }
    }
}

impl Party for Client {
    fn id(&self) -> u16 {
        self.id
    }

    fn start(&mut self) -> Result<Vec<Outgoing>, ProtocolError> {
        let announce = SetupMsg::KeyAnnounce {
            dh_public: self.ctx.group.encode(&self.dh.public),
            paillier_n: self.paillier.public.modulus().to_bytes_be(),
        };
        Ok(vec![Outgoing::Send(self.frame(MsgType::Setup, 0, SERVER, 0, &Payload::Setup(announce), 0))])
    }

    fn handle(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError> {
        let phase = Phase::of(msg.msg_type);
        if msg.receiver != self.id {
            return Err(self.err(phase, format!("frame addressed to {} delivered to {}", msg.receiver, self.id)));
        }
        if self.stage == Stage::Finished {
            return Err(self.err(phase, format!("{:?} frame after finish", msg.msg_type)));
        }
        if msg.msg_type == MsgType::QueryForward {
            return self.on_query(msg);
        }
        let payload = Payload::decode(&msg.payload, self.ctx.field).map_err(|e| self.err(phase, e))?;
        match (msg.msg_type, payload) {
            (MsgType::Setup, Payload::Setup(s)) => match s {
                SetupMsg::Directory(entries) => self.on_directory(entries),
                SetupMsg::RoundStart => self.on_round_start(msg.round),
                SetupMsg::Finish => {
                    if !matches!(self.stage, Stage::AwaitRound | Stage::InRound)
                        || self.history.len() as u32 != self.ctx.rounds
                        || self.round.as_ref().is_some_and(|r| !r.done_sent)
                    {
                        return Err(self.err(Phase::Setup, "finish before the last round completed"));
                    }
                    self.stage = Stage::Finished;
                    Ok(vec![])
                }
                other => Err(self.err(Phase::Setup, format!("unexpected {other:?}"))),
            },
            (MsgType::UnionShare, p) => self.on_union_share(msg, p),
            (MsgType::UnionBroadcast, p) => self.on_union_broadcast(msg, p),
            (MsgType::ShareForward, p) => self.on_share(msg, p),
            (MsgType::MaskedResponseDeliver, p) => self.on_response(msg, p),
            (MsgType::Abort, Payload::Text(reason)) => {
                Err(self.err(self.phase_now(), format!("server aborted: {reason}")))
            }
            (t, p) => Err(self.err(phase, format!("unexpected {t:?} frame with {} payload", p.class()))),
        }
    }

    fn is_finished(&self) -> bool {
        self.stage == Stage::Finished
    }

    fn status(&self) -> String {
        let round = match &self.round {
            None => "no round".to_string(),
            Some(r) => format!(
                "round {}: {}/{} shares, {} pending queries, {}/{} slots done",
                r.t,
                r.shares_from.len(),
                r.params.n,
                r.pending_queries.len(),
                r.slots.iter().filter(|s| s.done).count(),
                r.slots.len()
            ),
        };
        let union = match &self.union {
            None => String::new(),
            Some(u) => format!(", union attempt {} with {} shares", u.params.attempt, u.received.len() + 1),
        };
        format!("client {}: {:?}, {round}{union}", self.id, self.stage)
    }
}
