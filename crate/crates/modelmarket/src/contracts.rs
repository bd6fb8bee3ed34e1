//! The marketplace's on-chain logic: the benchmarking contract (report
//! registration, enclave announcement, commit verification, relay
//! anchoring, metric publication with pricing), the buyer-initiated
//! exchange contract (deposit escrow, key request, attested claim,
//! timeout refund), and the rollback-protection counter registry.
//!
//! Everything here runs inside `advance_round` delivery, so contract state
//! only ever changes at sealed-block boundaries and is serialized per
//! round. Deadlines follow the assert semantics of the state machines:
//! strict `T < T_x` for the benchmark phases, inclusive `T <= T_1'` for
//! the exchange claim.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::benchmark::BenchmarkResult;
use crate::crypto::{hash_parts, Commitment, Digest, PublicKey, Signature};
use crate::enclave::{verify_p_ck, verify_p_cm, verify_p_k};
use crate::ledger::{Address, Money, RoundCtx, Transaction, TxHandlers, TxKind};
use crate::pricing::PriceCurve;
use crate::relay::{self, RelayRecord};
use crate::transcript::{Flow, Party, StoreEvent};
use crate::wire::{ContractMessage, TxPayload};

pub const DEFAULT_ACCURACY_THRESHOLD: f64 = 0.60;

/// Derive a report identifier from the storage address and the seller.
pub fn model_report_id(addr_m: &Digest, seller: &Address) -> Digest {
    hash_parts(&[b"id_m", addr_m.as_bytes(), seller.as_bytes()])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SaleState {
    Listed,
    Benchmarked,
    Sold,
}

/// The on-chain record of one model.
#[derive(Clone, Debug, Serialize)]
pub struct ModelReport {
    pub id_m: Digest,
    pub seller: Address,
    pub addr_m: Digest,
    pub prog_m: Digest,
    pub com_m: Commitment,
    pub com_k: Commitment,
    pub p_k: Signature,
    pub p_ck: Signature,
    pub p_cm: Signature,
    pub setup_pk: PublicKey,
    /// Account bound to the seller's exchange enclave key.
    pub exchange_account: Address,
    pub state: SaleState,
    pub metrics: Option<BenchmarkResult>,
    pub price: Option<Money>,
    /// Set when nature accuracy fell below the marketplace threshold:
    /// benchmarked but rejected for sale.
    pub sale_blocked: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BmPhase {
    Triggered,
    Committed,
    Requested,
    Published,
}

#[derive(Clone, Debug, Serialize)]
pub struct BmInstance {
    pub id_m: Digest,
    pub seller: Address,
    pub com_m: Commitment,
    pub phase: BmPhase,
    pub t1: u64,
    pub t2: u64,
    pub t3: u64,
    pub eid: Option<Digest>,
    pub enclave_account: Option<Address>,
    pub request_id: Option<u64>,
    pub sample_digest: Option<Digest>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum BePhase {
    Initiated,
    Requested,
    Claimed,
    Aborted,
}

#[derive(Clone, Debug, Serialize)]
pub struct BeInstance {
    pub be_id: u64,
    pub id_m: Digest,
    pub buyer: Address,
    pub deposit: Money,
    pub t1_prime: u64,
    pub phase: BePhase,
    pub pk_b: Option<PublicKey>,
    /// Published on claim: `(AEnc_{pk_B}(k_m), pk_B)`.
    pub published: Option<(Vec<u8>, PublicKey)>,
    /// Round the refund fired, for timeout reporting.
    pub refunded_at: Option<u64>,
}

/// A transaction the contracts refused, with the reason. Kept for reports
/// and the adversary harness; rejected transactions change no state.
#[derive(Clone, Debug, Serialize)]
pub struct RejectEvent {
    pub round: u64,
    pub kind: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ContractConfig {
    pub accuracy_threshold: f64,
    /// Install deadline: rounds after the trigger.
    pub t1_offset: u64,
    /// Commit deadline: rounds after `T_1`.
    pub t2_offset: u64,
    /// Publish deadline: rounds after `T_2` (evaluation is multi-step).
    pub t3_offset: u64,
    /// Claim deadline of an exchange: rounds after its init.
    pub t1_prime_offset: u64,
    pub relay_fee: Money,
    /// Marketplace pool account the relay fee is paid from.
    pub pool_account: Address,
    /// Money units per 1.0 of curve price.
    pub price_scale: f64,
    /// The benchmark program the marketplace publishes for sellers.
    pub prog_bytes: Vec<u8>,
    pub benchmark_url: String,
}

impl ContractConfig {
    pub fn prog_hash(&self) -> Digest {
        crate::crypto::hash(&self.prog_bytes)
    }
}

/// All contract state hosted on the ledger.
pub struct MarketContracts {
    pub config: ContractConfig,
    pub price_curve: Option<PriceCurve>,
    /// Quality weights used when mapping metrics to the curve input.
    pub quality_weights: (f64, f64),
    reports: BTreeMap<Digest, ModelReport>,
    com_index: BTreeMap<Digest, Digest>,
    bm: BTreeMap<Digest, BmInstance>,
    be: BTreeMap<u64, BeInstance>,
    next_be_id: u64,
    step_counters: BTreeMap<Digest, u64>,
    eid_accounts: BTreeMap<Digest, Address>,
    relay_records: BTreeMap<u64, RelayRecord>,
    next_request_id: u64,
    /// Relay candidates: (seller host account, relay enclave account, key).
    relay_candidates: Vec<(Address, Address, PublicKey)>,
    /// Shared relay request of the current round, if any.
    round_request: Option<(u64, u64, Address)>,
    outbox: Vec<ContractMessage>,
    stores: Vec<StoreEvent>,
    rejects: Vec<RejectEvent>,
}

impl MarketContracts {
    pub fn new(config: ContractConfig) -> MarketContracts {
        MarketContracts {
            config,
            price_curve: None,
            quality_weights: (0.5, 0.5),
            reports: BTreeMap::new(),
            com_index: BTreeMap::new(),
            bm: BTreeMap::new(),
            be: BTreeMap::new(),
            next_be_id: 1,
            step_counters: BTreeMap::new(),
            eid_accounts: BTreeMap::new(),
            relay_records: BTreeMap::new(),
            next_request_id: 1,
            relay_candidates: Vec::new(),
            round_request: None,
            outbox: Vec::new(),
            stores: Vec::new(),
            rejects: Vec::new(),
        }
    }

    pub fn register_relay_candidate(&mut self, seller: Address, relay_account: Address, pk: PublicKey) {
        self.relay_candidates.push((seller, relay_account, pk));
    }

    pub fn report(&self, id_m: &Digest) -> Option<&ModelReport> {
        self.reports.get(id_m)
    }

    pub fn reports(&self) -> impl Iterator<Item = &ModelReport> {
        self.reports.values()
    }

    pub fn bm_instance(&self, id_m: &Digest) -> Option<&BmInstance> {
        self.bm.get(id_m)
    }

    pub fn be_instance(&self, be_id: u64) -> Option<&BeInstance> {
        self.be.get(&be_id)
    }

    pub fn be_instances(&self) -> impl Iterator<Item = &BeInstance> {
        self.be.values()
    }

    pub fn step_counter(&self, eid: &Digest) -> u64 {
        self.step_counters.get(eid).copied().unwrap_or(0)
    }

    pub fn relay_record(&self, request_id: u64) -> Option<&RelayRecord> {
        self.relay_records.get(&request_id)
    }

    pub fn drain_outbox(&mut self) -> Vec<ContractMessage> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_stores(&mut self) -> Vec<StoreEvent> {
        std::mem::take(&mut self.stores)
    }

    pub fn rejects(&self) -> &[RejectEvent] {
        &self.rejects
    }

    /// Predicted next exchange id, for building init transactions.
    pub fn next_be_id(&self) -> u64 {
        self.next_be_id
    }

    fn reject(&mut self, round: u64, kind: &str, reason: impl Into<String>) {
        self.rejects.push(RejectEvent {
            round,
            kind: kind.to_string(),
            reason: reason.into(),
        });
    }

    fn store(&mut self, round: u64, party: Party, flow: Flow, label: &str, bytes: usize) {
        self.stores.push(StoreEvent {
            round,
            party,
            flow,
            label: label.to_string(),
            bytes: bytes as u64,
        });
    }

    fn handle_publish_report(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        seller: Address,
        sub: crate::wire::ReportSubmission,
    ) {
        let kind = "publish_report";
        if sub.id_m != model_report_id(&sub.addr_m, &seller) {
            self.reject(ctx.round, kind, "malformed id_m");
            return;
        }
        if self.com_index.contains_key(&sub.com_m.value) {
            self.reject(ctx.round, kind, "model commitment already registered");
            return;
        }
        if self.reports.contains_key(&sub.id_m) {
            self.reject(ctx.round, kind, "report id already registered");
            return;
        }
        if !verify_p_cm(&sub.setup_pk, &sub.com_m, &sub.p_cm)
            || !verify_p_ck(&sub.setup_pk, &sub.com_k, &sub.p_ck)
            || !verify_p_k(&sub.setup_pk, &sub.addr_m, &sub.com_k, &sub.com_m, &sub.p_k)
        {
            self.reject(ctx.round, kind, "registration proofs failed");
            return;
        }

        let id_m = sub.id_m;
        let flow = Flow::Bench(id_m);
        self.com_index.insert(sub.com_m.value, id_m);
        self.reports.insert(
            id_m,
            ModelReport {
                id_m,
                seller,
                addr_m: sub.addr_m,
                prog_m: sub.prog_m,
                com_m: sub.com_m,
                com_k: sub.com_k,
                p_k: sub.p_k,
                p_ck: sub.p_ck,
                p_cm: sub.p_cm,
                setup_pk: sub.setup_pk,
                exchange_account: sub.exchange_account,
                state: SaleState::Listed,
                metrics: None,
                price: None,
                sale_blocked: false,
            },
        );
        let t1 = ctx.round + self.config.t1_offset;
        let t2 = t1 + self.config.t2_offset;
        let t3 = t2 + self.config.t3_offset;
        self.bm.insert(
            id_m,
            BmInstance {
                id_m,
                seller,
                com_m: sub.com_m,
                phase: BmPhase::Triggered,
                t1,
                t2,
                t3,
                eid: None,
                enclave_account: None,
                request_id: None,
                sample_digest: None,
            },
        );

        self.store(ctx.round, Party::BmContract, flow, "addr_m", 32);
        self.store(ctx.round, Party::BmContract, flow, "id_m", 32);
        self.store(ctx.round, Party::BmContract, flow, "com_m", 32);
        let prog_len = self.config.prog_bytes.len();
        self.store(ctx.round, Party::BmContract, flow, "prog", prog_len);

        self.outbox.push(ContractMessage::Install {
            id_m,
            seller,
            deadline: t1,
        });
    }

    fn handle_announce_eid(&mut self, ctx: &mut RoundCtx<'_>, sender: Address, id_m: Digest, eid: Digest) {
        let kind = "announce_eid";
        let Some(bm) = self.bm.get(&id_m) else {
            self.reject(ctx.round, kind, "unknown report");
            return;
        };
        if bm.phase != BmPhase::Triggered || bm.eid.is_some() {
            self.reject(ctx.round, kind, "flow not awaiting an enclave");
            return;
        }
        let (t1, seller, com_m, t2) = (bm.t1, bm.seller, bm.com_m, bm.t2);
        if ctx.round >= t1 {
            self.reject(ctx.round, kind, format!("deadline passed: T={} >= T1={t1}", ctx.round));
            return;
        }
        let bm = self.bm.get_mut(&id_m).expect("present");
        bm.eid = Some(eid);
        bm.enclave_account = Some(sender);
        self.step_counters.entry(eid).or_insert(0);
        self.eid_accounts.insert(eid, sender);
        self.outbox.push(ContractMessage::Commit {
            id_m,
            seller,
            com_m,
            deadline: t2,
        });
    }

    fn handle_commit_receipt(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        sender: Address,
        id_m: Digest,
        eid: Digest,
        com_m_prime: Commitment,
        prog_hash: Digest,
    ) {
        let kind = "commit_receipt";
        let expected_prog = self.config.prog_hash();
        let Some(bm) = self.bm.get(&id_m) else {
            self.reject(ctx.round, kind, "unknown report");
            return;
        };
        if bm.phase != BmPhase::Triggered {
            self.reject(ctx.round, kind, "flow not awaiting a commit");
            return;
        }
        if bm.eid != Some(eid) || bm.enclave_account != Some(sender) {
            self.reject(ctx.round, kind, "receipt from a different enclave");
            return;
        }
        let (t2, com_m, seller) = (bm.t2, bm.com_m, bm.seller);
        if ctx.round >= t2 {
            self.reject(ctx.round, kind, format!("deadline passed: T={} >= T2={t2}", ctx.round));
            return;
        }
        if prog_hash != expected_prog {
            self.reject(ctx.round, kind, "receipt attests a different program");
            return;
        }
        if com_m_prime != com_m {
            self.reject(
                ctx.round,
                kind,
                "attested commitment differs from the on-chain commitment",
            );
            return;
        }
        self.bm.get_mut(&id_m).expect("present").phase = BmPhase::Committed;

        // reuse the relay request of this round if its intermediator also
        // differs from this seller; otherwise open a fresh one
        let reuse = self
            .round_request
            .filter(|(round, _, intermediator)| *round == ctx.round && *intermediator != seller);
        match reuse {
            Some((_, request_id, _)) => {
                self.bm.get_mut(&id_m).expect("present").request_id = Some(request_id);
            }
            None => {
                let request_id = self.next_request_id;
                let candidates: Vec<(Address, Address)> = self
                    .relay_candidates
                    .iter()
                    .map(|(s, r, _)| (*s, *r))
                    .collect();
                match relay::pick_intermediator(&candidates, &seller, &ctx.block_hash, request_id) {
                    Ok((host, relay_account)) => {
                        self.next_request_id += 1;
                        self.round_request = Some((ctx.round, request_id, host));
                        self.bm.get_mut(&id_m).expect("present").request_id = Some(request_id);
                        self.outbox.push(ContractMessage::RelayRequest {
                            request_id,
                            intermediator: relay_account,
                            seller,
                            url: self.config.benchmark_url.clone(),
                            params: format!("request={request_id}"),
                        });
                    }
                    Err(e) => {
                        self.reject(ctx.round, kind, format!("no intermediator: {e}"));
                    }
                }
            }
        }
    }

    fn handle_relay_record(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        sender: Address,
        request_id: u64,
        digest: Digest,
        sampling_seed: Digest,
        attestation: Signature,
    ) {
        let kind = "relay_record";
        let Some((host, _, pk)) = self
            .relay_candidates
            .iter()
            .find(|(_, acct, _)| *acct == sender)
            .copied()
        else {
            self.reject(ctx.round, kind, "sender is not a registered intermediator");
            return;
        };
        if self.relay_records.contains_key(&request_id) {
            self.reject(ctx.round, kind, "request already served");
            return;
        }
        if !crate::crypto::verify(&pk, &relay::relay_digest_message(request_id, &digest), &attestation) {
            self.reject(ctx.round, kind, "digest signature invalid");
            return;
        }
        self.relay_records.insert(
            request_id,
            RelayRecord {
                request_id,
                url: self.config.benchmark_url.clone(),
                params: format!("request={request_id}"),
                digest,
                sampling_seed,
                sigma: attestation,
                sigma_att: attestation,
                relay_pk: pk,
            },
        );
        if self.config.relay_fee > 0 {
            let pool = self.config.pool_account;
            if let Err(e) = ctx.transfer(&pool, &host, self.config.relay_fee) {
                self.reject(ctx.round, kind, format!("relay fee not paid: {e}"));
            }
        }

        // anchor the digest for every flow served by this request
        let served: Vec<Digest> = self
            .bm
            .values()
            .filter(|bm| bm.request_id == Some(request_id) && bm.phase == BmPhase::Committed)
            .map(|bm| bm.id_m)
            .collect();
        for id_m in served {
            let bm = self.bm.get_mut(&id_m).expect("present");
            bm.sample_digest = Some(digest);
            let (seller, t3) = (bm.seller, bm.t3);
            self.store(ctx.round, Party::BmContract, Flow::Bench(id_m), "samples_digest", 32);
            self.outbox.push(ContractMessage::Evaluate {
                id_m,
                seller,
                request_id,
                sample_digest: digest,
                deadline: t3,
            });
        }
    }

    fn handle_bench_output(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        sender: Address,
        id_m: Digest,
        output: crate::wire::BenchmarkOutput,
    ) {
        let kind = "bench_output";
        let Some(bm) = self.bm.get(&id_m) else {
            self.reject(ctx.round, kind, "unknown report");
            return;
        };
        if bm.phase != BmPhase::Committed {
            self.reject(ctx.round, kind, "flow not awaiting an output");
            return;
        }
        if bm.eid != Some(output.eid) || bm.enclave_account != Some(sender) {
            self.reject(ctx.round, kind, "output from a different enclave");
            return;
        }
        let t3 = bm.t3;
        if ctx.round >= t3 {
            self.reject(ctx.round, kind, format!("deadline passed: T={} >= T3={t3}", ctx.round));
            return;
        }
        if bm.sample_digest != Some(output.sample_digest) {
            self.reject(ctx.round, kind, "output refers to a different sample digest");
            return;
        }

        self.bm.get_mut(&id_m).expect("present").phase = BmPhase::Requested;
        let outp_len = output.to_bytes().len();
        let result = output.result;
        let (w1, w2) = self.quality_weights;
        let (q_mce, q_mfp) = result.quality_scores();
        let quality = 0.5 * (w1 * q_mce + w2 * q_mfp);
        let accuracy = result.nature_accuracy();
        let blocked = accuracy < self.config.accuracy_threshold;
        let price = self
            .price_curve
            .as_ref()
            .filter(|_| !blocked)
            .map(|curve| (curve.price_for(quality) * self.config.price_scale).round() as Money);

        let report = self.reports.get_mut(&id_m).expect("report exists");
        report.metrics = Some(result);
        report.price = price;
        report.sale_blocked = blocked;
        report.state = SaleState::Benchmarked;
        self.bm.get_mut(&id_m).expect("present").phase = BmPhase::Published;

        self.store(ctx.round, Party::BmContract, Flow::Bench(id_m), "outp", outp_len);
    }

    fn handle_step_counter(&mut self, ctx: &mut RoundCtx<'_>, sender: Address, eid: Digest, counter: u64) {
        let kind = "eli_step";
        match self.eid_accounts.get(&eid) {
            Some(account) if *account == sender => {}
            _ => {
                self.reject(ctx.round, kind, "eid not bound to sender");
                return;
            }
        }
        let current = *self.step_counters.get(&eid).expect("registered with account");
        if counter != current + 1 {
            self.reject(
                ctx.round,
                kind,
                format!("counter {counter} does not follow {current}"),
            );
            return;
        }
        self.step_counters.insert(eid, counter);
    }

    fn handle_be_init(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        buyer: Address,
        id_m: Digest,
        p_k: Signature,
        com_k: Commitment,
        deposit: Money,
    ) {
        let kind = "be_init";
        let Some(report) = self.reports.get(&id_m) else {
            self.reject(ctx.round, kind, "unknown report");
            return;
        };
        if report.state == SaleState::Sold {
            self.reject(ctx.round, kind, "model already sold");
            return;
        }
        if report.state != SaleState::Benchmarked {
            self.reject(ctx.round, kind, "model not benchmarked yet");
            return;
        }
        if report.sale_blocked {
            self.reject(ctx.round, kind, "model rejected for sale by the accuracy gate");
            return;
        }
        let Some(price) = report.price else {
            self.reject(ctx.round, kind, "model has no price");
            return;
        };
        if com_k != report.com_k
            || p_k != report.p_k
            || !verify_p_k(&report.setup_pk, &report.addr_m, &com_k, &report.com_m, &p_k)
        {
            self.reject(ctx.round, kind, "key proof failed");
            return;
        }
        if deposit < price {
            self.reject(
                ctx.round,
                kind,
                format!("deposit {deposit} below price {price}"),
            );
            return;
        }
        let be_id = self.next_be_id;
        if let Err(e) = ctx.escrow(be_id, &buyer, deposit) {
            self.reject(ctx.round, kind, format!("deposit not escrowed: {e}"));
            return;
        }
        self.next_be_id += 1;
        let t1_prime = ctx.round + self.config.t1_prime_offset;
        self.be.insert(
            be_id,
            BeInstance {
                be_id,
                id_m,
                buyer,
                deposit,
                t1_prime,
                phase: BePhase::Initiated,
                pk_b: None,
                published: None,
                refunded_at: None,
            },
        );
        let flow = Flow::Exchange(be_id);
        self.store(ctx.round, Party::BeContract, flow, "com_k", 32);
        self.store(ctx.round, Party::BeContract, flow, "id_m", 32);
        self.store(ctx.round, Party::BeContract, flow, "p_k", 70);
    }

    fn handle_be_request(&mut self, ctx: &mut RoundCtx<'_>, buyer: Address, be_id: u64, pk_b: PublicKey) {
        let kind = "be_request";
        let Some(be) = self.be.get_mut(&be_id) else {
            self.reject(ctx.round, kind, "unknown exchange");
            return;
        };
        if be.buyer != buyer {
            self.reject(ctx.round, kind, "request from a different buyer");
            return;
        }
        if be.phase != BePhase::Initiated {
            self.reject(ctx.round, kind, "exchange not awaiting a request");
            return;
        }
        be.phase = BePhase::Requested;
        be.pk_b = Some(pk_b);
        let (id_m, t1_prime) = (be.id_m, be.t1_prime);
        let report = self.reports.get(&id_m).expect("report exists");
        let (seller, com_k) = (report.seller, report.com_k);
        self.store(ctx.round, Party::BeContract, Flow::Exchange(be_id), "pk_b", 64);
        self.outbox.push(ContractMessage::RequestKey {
            be_id,
            seller,
            pk_b,
            com_k,
            deadline: t1_prime,
        });
    }

    fn handle_be_claim(
        &mut self,
        ctx: &mut RoundCtx<'_>,
        sender: Address,
        be_id: u64,
        ciphertext: Vec<u8>,
        pk_b: PublicKey,
    ) {
        let kind = "be_claim";
        let Some(be) = self.be.get(&be_id) else {
            self.reject(ctx.round, kind, "unknown exchange");
            return;
        };
        if be.phase != BePhase::Requested {
            self.reject(ctx.round, kind, "exchange not awaiting a claim");
            return;
        }
        let t1_prime = be.t1_prime;
        if ctx.round > t1_prime {
            self.reject(
                ctx.round,
                kind,
                format!("deadline passed: T={} > T1'={t1_prime}", ctx.round),
            );
            return;
        }
        if be.pk_b != Some(pk_b) {
            self.reject(ctx.round, kind, "claim for a different buyer key");
            return;
        }
        let id_m = be.id_m;
        let report = self.reports.get(&id_m).expect("report exists");
        if report.exchange_account != sender {
            self.reject(ctx.round, kind, "claim from a different enclave account");
            return;
        }
        if report.state == SaleState::Sold {
            self.reject(ctx.round, kind, "model already sold");
            return;
        }
        let seller = report.seller;
        if let Err(e) = ctx.release(be_id, &seller) {
            self.reject(ctx.round, kind, format!("escrow release failed: {e}"));
            return;
        }
        let aenc_len = ciphertext.len();
        let be = self.be.get_mut(&be_id).expect("present");
        be.phase = BePhase::Claimed;
        be.published = Some((ciphertext, pk_b));
        self.reports.get_mut(&id_m).expect("present").state = SaleState::Sold;

        let flow = Flow::Exchange(be_id);
        self.store(ctx.round, Party::BeContract, flow, "aenc_km", aenc_len);
        self.store(ctx.round, Party::BeContract, flow, "sigma_o_prime", 70);
    }
}

impl TxHandlers for MarketContracts {
    fn on_transaction(&mut self, ctx: &mut RoundCtx<'_>, tx: &Transaction) {
        let Some(payload) = TxPayload::from_bytes(&tx.payload) else {
            self.reject(ctx.round, "unknown", "unparseable payload");
            return;
        };
        match (tx.kind, payload) {
            (TxKind::Plain, TxPayload::PublishReport(sub)) => {
                self.handle_publish_report(ctx, tx.sender, sub);
            }
            (TxKind::Attestation, TxPayload::AnnounceEid { id_m, eid }) => {
                self.handle_announce_eid(ctx, tx.sender, id_m, eid);
            }
            (
                TxKind::Attestation,
                TxPayload::CommitReceipt {
                    id_m,
                    eid,
                    com_m_prime,
                    prog_hash,
                },
            ) => {
                self.handle_commit_receipt(ctx, tx.sender, id_m, eid, com_m_prime, prog_hash);
            }
            (
                TxKind::Attestation,
                TxPayload::RelayRecord {
                    request_id,
                    digest,
                    sampling_seed,
                    attestation,
                },
            ) => {
                self.handle_relay_record(ctx, tx.sender, request_id, digest, sampling_seed, attestation);
            }
            (TxKind::Attestation, TxPayload::BenchOutput { id_m, output }) => {
                self.handle_bench_output(ctx, tx.sender, id_m, output);
            }
            (TxKind::Attestation, TxPayload::StepCounter { eid, counter }) => {
                self.handle_step_counter(ctx, tx.sender, eid, counter);
            }
            (TxKind::Plain, TxPayload::BeInit { id_m, p_k, com_k, deposit }) => {
                self.handle_be_init(ctx, tx.sender, id_m, p_k, com_k, deposit);
            }
            (TxKind::Plain, TxPayload::BeRequest { be_id, pk_b }) => {
                self.handle_be_request(ctx, tx.sender, be_id, pk_b);
            }
            (TxKind::Attestation, TxPayload::BeClaim { be_id, ciphertext, pk_b }) => {
                self.handle_be_claim(ctx, tx.sender, be_id, ciphertext, pk_b);
            }
            (kind, payload) => {
                self.reject(
                    ctx.round,
                    "mismatched",
                    format!("payload {payload:?} not valid for {kind:?} transaction"),
                );
            }
        }
    }

    fn on_time(&mut self, ctx: &mut RoundCtx<'_>) {
        // exchange timeouts: refund the full deposit at the first round
        // past the claim deadline
        let due: Vec<u64> = self
            .be
            .values()
            .filter(|be| {
                matches!(be.phase, BePhase::Initiated | BePhase::Requested)
                    && ctx.round > be.t1_prime
            })
            .map(|be| be.be_id)
            .collect();
        for be_id in due {
            if ctx.refund(be_id).is_ok() {
                let be = self.be.get_mut(&be_id).expect("present");
                be.phase = BePhase::Aborted;
                be.refunded_at = Some(ctx.round);
            }
        }
        // shared relay requests do not outlive their round
        if let Some((round, _, _)) = self.round_request {
            if round < ctx.round {
                self.round_request = None;
            }
        }
    }
}
