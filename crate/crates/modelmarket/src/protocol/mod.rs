//! End-to-end flows: the benchmarking protocol (seller host, enclave,
//! relay, benchmarking contract) and the exchange protocol (buyer, seller
//! host, exchange enclave, exchange contract), driven round by round over
//! the simulated chain. Parties can be honest or adversarial; every run
//! leaves a transcript whose byte accounting and digest the tests check.

pub mod adversary;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::benchmark::model::{target_accuracy_model, weak_baseline_model, ToyModel};
use crate::benchmark::suites::{generate_suites, SuiteConfig};
use crate::benchmark::BenchmarkResult;
use crate::contracts::{
    model_report_id, BePhase, ContractConfig, MarketContracts, SaleState,
    DEFAULT_ACCURACY_THRESHOLD,
};
use crate::crypto::{
    self, hash, Coin, Digest, EncryptionKeypair, PublicKey, SignatureKeypair, SymmetricKey,
};
use crate::enclave::{
    setup_enclave_register, EnclaveConfig, EnclaveInstance, EvalStep, LedgerView,
    ProgDescriptor, RegistrationArtifacts, RelayAnchor,
};
use crate::ledger::{Address, Ledger, Money, Transaction, TxKind};
use crate::pricing::{self, GaParams};
use crate::relay::{DatasetServer, PackageSpec, RelayEnclave, SamplePackage};
use crate::transcript::{Flow, Party, PayloadItem, Transcript};
use crate::wire::{ContractMessage, ReportSubmission, TxPayload};

pub use adversary::{tamper_package_at, tamper_site_count, Strategy};

/// Content-addressed blob store standing in for decentralized storage:
/// the address of a blob is the hash of its bytes.
#[derive(Default)]
pub struct BlobStore {
    blobs: BTreeMap<Digest, Vec<u8>>,
}

impl BlobStore {
    pub fn put(&mut self, bytes: Vec<u8>) -> Digest {
        let addr = hash(&bytes);
        self.blobs.insert(addr, bytes);
        addr
    }

    pub fn get(&self, addr: &Digest) -> Option<&[u8]> {
        self.blobs.get(addr).map(|b| b.as_slice())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Behavior {
    Honest,
    Adversarial(Strategy),
}

impl Behavior {
    fn strategy(&self) -> Option<&Strategy> {
        match self {
            Behavior::Honest => None,
            Behavior::Adversarial(s) => Some(s),
        }
    }
}

/// How a scenario model fixture is built.
#[derive(Clone, Debug, PartialEq)]
pub enum ModelSpec {
    /// Exact clean accuracy on the scenario's clean base set.
    TargetAccuracy(f64),
    /// The weak reference model itself.
    Baseline,
    /// Explicit serialized model.
    Bytes(Vec<u8>),
}

#[derive(Clone, Debug)]
pub struct SellerSpec {
    pub name: String,
    pub balance: Money,
    pub model: ModelSpec,
    pub behavior: Behavior,
}

#[derive(Clone, Debug)]
pub struct BuyerSpec {
    pub name: String,
    pub balance: Money,
    pub behavior: Behavior,
}

#[derive(Clone, Debug)]
pub struct WorldConfig {
    pub seed: u64,
    pub suite: SuiteConfig,
    pub package: PackageSpec,
    pub sellers: Vec<SellerSpec>,
    pub buyers: Vec<BuyerSpec>,
    pub accuracy_threshold: f64,
    pub relay_fee: Money,
    pub pool_balance: Money,
    /// Money units per 1.0 of curve price.
    pub price_scale: f64,
    pub t1_offset: u64,
    pub t2_offset: u64,
    pub t3_offset: u64,
    pub t1_prime_offset: u64,
    /// Seeded pricing instances solved to bootstrap the price curve.
    pub curve_instances: usize,
    pub curve_ga: GaParams,
    pub enclave_cap: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 1,
            suite: SuiteConfig::default(),
            package: PackageSpec::default(),
            sellers: vec![
                SellerSpec {
                    name: "seller-0".into(),
                    balance: 1_000,
                    model: ModelSpec::TargetAccuracy(0.78),
                    behavior: Behavior::Honest,
                },
                SellerSpec {
                    name: "seller-1".into(),
                    balance: 1_000,
                    model: ModelSpec::TargetAccuracy(0.70),
                    behavior: Behavior::Honest,
                },
            ],
            buyers: vec![BuyerSpec {
                name: "buyer-0".into(),
                balance: 5_000,
                behavior: Behavior::Honest,
            }],
            accuracy_threshold: DEFAULT_ACCURACY_THRESHOLD,
            relay_fee: 5,
            pool_balance: 1_000,
            price_scale: 1_000.0,
            t1_offset: 2,
            t2_offset: 2,
            t3_offset: 6,
            t1_prime_offset: 4,
            curve_instances: 5,
            curve_ga: GaParams {
                iterations: 120,
                population: 30,
                ..GaParams::default()
            },
            enclave_cap: 1 << 20,
        }
    }
}

pub struct SellerParty {
    pub name: String,
    pub account: Address,
    keypair: SignatureKeypair,
    pub behavior: Behavior,
    pub model_bytes: Vec<u8>,
    k_m: SymmetricKey,
    coin_m: Coin,
    coin_k: Coin,
    pub registration: RegistrationArtifacts,
    pub id_m: Digest,
    bench_enclave: EnclaveInstance,
    pub bench_account: Address,
    exchange_enclave: EnclaveInstance,
    pub exchange_account: Address,
    relay_enclave: RelayEnclave,
    pub relay_account: Address,
    // host-side storage
    sealed_blobs: Vec<crate::enclave::SealedState>,
    delivered: Option<(u64, SamplePackage)>,
    eval: Option<EvalDrive>,
    key_request: Option<KeyRequestDrive>,
    /// Output submitted; outcome finalized once the publishing round seals.
    pending_publish: bool,
    outcome: Option<BenchOutcome>,
}

struct EvalDrive {
    id_m: Digest,
    request_id: u64,
    steps_done: u8,
    pulled_anchor: bool,
}

struct KeyRequestDrive {
    be_id: u64,
    pk_b: PublicKey,
    com_k: crate::crypto::Commitment,
    act_at_round: u64,
}

pub struct BuyerParty {
    pub name: String,
    pub account: Address,
    keypair: SignatureKeypair,
    enc_keypair: EncryptionKeypair,
    pub behavior: Behavior,
    /// Recovered after a successful trade: the key and the decrypted model.
    pub recovered: Option<(SymmetricKey, Vec<u8>)>,
}

impl BuyerParty {
    pub fn public_key(&self) -> PublicKey {
        self.enc_keypair.public()
    }
}

/// Terminal verdict of one benchmark flow.
#[derive(Clone, Debug)]
pub struct BenchOutcome {
    pub id_m: Digest,
    pub published: bool,
    pub abort: Option<String>,
    pub result: Option<BenchmarkResult>,
    pub price: Option<Money>,
    pub sale_blocked: bool,
}

/// Terminal verdict of one exchange flow.
#[derive(Clone, Debug)]
pub struct ExchangeOutcome {
    pub be_id: u64,
    pub t1_prime: u64,
    pub claimed: bool,
    pub claim_round: Option<u64>,
    pub refunded: bool,
    pub refund_round: Option<u64>,
    pub buyer_recovered_model: bool,
    pub abort: Option<String>,
}

#[derive(Clone, Debug, Default)]
pub struct ExchangeParams {
    /// Deposit; defaults to the listed price.
    pub deposit: Option<Money>,
    /// Rounds the seller waits after the key request before claiming.
    pub claim_delay: u64,
}

struct ChainView<'a> {
    ledger: &'a Ledger,
    contracts: &'a MarketContracts,
}

impl LedgerView for ChainView<'_> {
    fn latest_block_hash(&self) -> Digest {
        self.ledger.latest_block_hash()
    }

    fn step_counter(&self, eid: &Digest) -> u64 {
        self.contracts.step_counter(eid)
    }

    fn relay_anchor(&self, request_id: u64) -> Option<RelayAnchor> {
        self.contracts.relay_record(request_id).map(|r| RelayAnchor {
            request_id: r.request_id,
            digest: r.digest,
            sigma: r.sigma,
            relay_pk: r.relay_pk,
        })
    }
}

pub struct World {
    pub config: WorldConfig,
    rng: ChaCha20Rng,
    pub ledger: Ledger,
    pub contracts: MarketContracts,
    pub server: DatasetServer,
    pub blobstore: BlobStore,
    pub sellers: Vec<SellerParty>,
    pub buyers: Vec<BuyerParty>,
    pub transcript: Transcript,
    pub pool_account: Address,
    prog_bytes: Vec<u8>,
    inbox: Vec<ContractMessage>,
    relay_cache: BTreeMap<u64, SamplePackage>,
    /// Flow each relay request was first opened for (accounting label).
    request_flow: BTreeMap<u64, Digest>,
}

impl World {
    pub fn new(config: WorldConfig) -> World {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let suites = generate_suites(&config.suite, config.seed);
        let baseline = weak_baseline_model(
            &suites,
            config.package.sequences_per_perturbation.saturating_sub(1),
            config.seed,
        );
        let arch = crate::benchmark::ModelArch::linear(config.suite.dim, config.suite.classes);
        let prog = ProgDescriptor::benchmark(arch.clone(), baseline.to_bytes());
        let prog_bytes = prog.to_bytes();

        let mut ledger = Ledger::new();
        let pool_kp = SignatureKeypair::generate(&mut rng);
        let pool_account = ledger.create_account(pool_kp.public(), config.pool_balance);

        let mut contracts = MarketContracts::new(ContractConfig {
            accuracy_threshold: config.accuracy_threshold,
            t1_offset: config.t1_offset,
            t2_offset: config.t2_offset,
            t3_offset: config.t3_offset,
            t1_prime_offset: config.t1_prime_offset,
            relay_fee: config.relay_fee,
            pool_account,
            price_scale: config.price_scale,
            prog_bytes: prog_bytes.clone(),
            benchmark_url: "https://benchmark-data.example/suites".into(),
        });

        // bootstrap the price curve from GA-solved seeded instances
        let mut solved = Vec::new();
        for i in 0..config.curve_instances {
            let inst_seed = config.seed.wrapping_mul(1000).wrapping_add(i as u64);
            let n = 2 + (i % 3);
            let m = 2 + ((i + 1) % 3);
            let instance = pricing::seeded_instance(inst_seed, n, m);
            if let Ok(solution) = pricing::ga_solve(&instance, &config.curve_ga, inst_seed) {
                solved.push((instance, solution));
            }
        }
        contracts.price_curve = Some(
            pricing::build_price_curve(&solved).expect("curve bootstrap yields sold points"),
        );

        let mut blobstore = BlobStore::default();
        let mut sellers = Vec::with_capacity(config.sellers.len());
        for spec in &config.sellers {
            let keypair = SignatureKeypair::generate(&mut rng);
            let account = ledger.create_account(keypair.public(), spec.balance);

            let model = match &spec.model {
                ModelSpec::TargetAccuracy(acc) => {
                    let total = suites.clean.samples.len();
                    let target = (acc * total as f64).round() as usize;
                    target_accuracy_model(&suites.clean, target)
                }
                ModelSpec::Baseline => baseline.clone(),
                ModelSpec::Bytes(bytes) => {
                    ToyModel::from_bytes(bytes).expect("scenario model parses")
                }
            };
            let model_bytes = model.to_bytes();
            let k_m = SymmetricKey::random(&mut rng);
            let coin_m = Coin::random(&mut rng);
            let coin_k = Coin::random(&mut rng);
            let registration =
                setup_enclave_register(&model_bytes, &k_m, &coin_m, &coin_k, &mut rng);
            let stored_addr = blobstore.put(registration.ciphertext.clone());
            debug_assert_eq!(stored_addr, registration.addr_m);
            let id_m = model_report_id(&registration.addr_m, &account);

            let enclave_cfg = EnclaveConfig {
                resident_sample_cap: config.enclave_cap,
            };
            let bench_enclave =
                EnclaveInstance::with_config(account, enclave_cfg.clone(), &mut rng);
            let bench_account = ledger.create_account(SignatureKeypair::generate(&mut rng).public(), 0);
            ledger
                .bind_enclave_key(&bench_account, bench_enclave.public_key())
                .expect("fresh account");

            let exchange_enclave = EnclaveInstance::with_config(account, enclave_cfg, &mut rng);
            let exchange_account =
                ledger.create_account(SignatureKeypair::generate(&mut rng).public(), 0);
            ledger
                .bind_enclave_key(&exchange_account, exchange_enclave.public_key())
                .expect("fresh account");

            let relay_kp = SignatureKeypair::generate(&mut rng);
            let relay_account = ledger.create_account(SignatureKeypair::generate(&mut rng).public(), 0);
            let relay_enclave = RelayEnclave::new(relay_kp, account, relay_account);
            ledger
                .bind_enclave_key(&relay_account, relay_enclave.public_key())
                .expect("fresh account");
            contracts.register_relay_candidate(account, relay_account, relay_enclave.public_key());

            sellers.push(SellerParty {
                name: spec.name.clone(),
                account,
                keypair,
                behavior: spec.behavior.clone(),
                model_bytes,
                k_m,
                coin_m,
                coin_k,
                registration,
                id_m,
                bench_enclave,
                bench_account,
                exchange_enclave,
                exchange_account,
                relay_enclave,
                relay_account,
                sealed_blobs: Vec::new(),
                delivered: None,
                eval: None,
                key_request: None,
                pending_publish: false,
                outcome: None,
            });
        }

        let mut buyers = Vec::with_capacity(config.buyers.len());
        for spec in &config.buyers {
            let keypair = SignatureKeypair::generate(&mut rng);
            let account = ledger.create_account(keypair.public(), spec.balance);
            buyers.push(BuyerParty {
                name: spec.name.clone(),
                account,
                keypair,
                enc_keypair: EncryptionKeypair::generate(&mut rng),
                behavior: spec.behavior.clone(),
                recovered: None,
            });
        }

        World {
            config,
            rng,
            ledger,
            contracts,
            server: DatasetServer::new(suites),
            blobstore,
            sellers,
            buyers,
            transcript: Transcript::default(),
            pool_account,
            prog_bytes,
            inbox: Vec::new(),
            relay_cache: BTreeMap::new(),
            request_flow: BTreeMap::new(),
        }
    }

    pub fn prog_len(&self) -> usize {
        self.prog_bytes.len()
    }

    /// The benchmark program descriptor the marketplace publishes.
    pub fn prog_descriptor_bytes(&self) -> Vec<u8> {
        self.prog_bytes.clone()
    }

    /// The sample package a relay request served, as cached by the
    /// intermediator host.
    pub fn relay_package(&self, request_id: u64) -> Option<SamplePackage> {
        self.relay_cache.get(&request_id).cloned()
    }

    /// Element sizes of a completed benchmark flow, for checking the
    /// transcript accounting against the closed forms.
    pub fn flow_sizes(&self, seller_idx: usize) -> Option<crate::transcript::FlowSizes> {
        let seller = self.sellers.get(seller_idx)?;
        let instance = self.contracts.bm_instance(&seller.id_m)?;
        let report = self.contracts.report(&seller.id_m)?;
        let request_id = instance.request_id?;
        let package = self.relay_cache.get(&request_id)?;
        let output = crate::wire::BenchmarkOutput {
            eid: instance.eid?,
            sample_digest: instance.sample_digest?,
            result: report.metrics.clone()?,
        };
        Some(crate::transcript::FlowSizes {
            prog: self.prog_bytes.len() as u64,
            outp: output.to_bytes().len() as u64,
            model: seller.model_bytes.len() as u64,
            samples: package.byte_len() as u64,
            aenc_key: (crate::crypto::SYMMETRIC_KEY_LEN + crate::crypto::AENC_OVERHEAD) as u64,
        })
    }

    /// Seal the next block, dispatch to contracts, and collect messages and
    /// store events into the transcript and inbox.
    pub fn advance(&mut self) -> u64 {
        let round = self.ledger.advance_round(&mut self.contracts);
        for store in self.contracts.drain_stores() {
            self.transcript.stores.push(store);
        }
        for msg in self.contracts.drain_outbox() {
            self.emit_message_event(round, &msg);
            self.inbox.push(msg);
        }
        round
    }

    fn emit_message_event(&mut self, round: u64, msg: &ContractMessage) {
        match msg {
            ContractMessage::Install { id_m, seller, .. } => {
                let prog_len = self.prog_bytes.len();
                self.transcript.push_event(
                    round,
                    Party::BmContract,
                    Party::Seller(*seller),
                    "install_msg",
                    Flow::Bench(*id_m),
                    vec![PayloadItem::new("prog", prog_len)],
                );
            }
            ContractMessage::Commit { id_m, seller, .. } => {
                self.transcript.push_event(
                    round,
                    Party::BmContract,
                    Party::Seller(*seller),
                    "commit_msg",
                    Flow::Bench(*id_m),
                    vec![PayloadItem::new("com_m", 32)],
                );
            }
            ContractMessage::RelayRequest {
                request_id,
                intermediator,
                ..
            } => {
                let flow = self
                    .request_flow
                    .get(request_id)
                    .map(|id| Flow::Bench(*id))
                    .unwrap_or(Flow::Setup);
                self.transcript.push_event(
                    round,
                    Party::BmContract,
                    Party::RelayHost(*intermediator),
                    "relay_request",
                    flow,
                    vec![],
                );
            }
            ContractMessage::Evaluate { id_m, seller, .. } => {
                self.transcript.push_event(
                    round,
                    Party::BmContract,
                    Party::Seller(*seller),
                    "evaluate_msg",
                    Flow::Bench(*id_m),
                    vec![],
                );
            }
            ContractMessage::RequestKey { be_id, seller, .. } => {
                // the seller reads the request from the chain
                self.transcript.push_event(
                    round,
                    Party::Ledger,
                    Party::Seller(*seller),
                    "request_msg",
                    Flow::Exchange(*be_id),
                    vec![PayloadItem::new("pk_b", 64), PayloadItem::new("com_k", 32)],
                );
            }
        }
    }

    fn seller_index(&self, account: &Address) -> Option<usize> {
        self.sellers.iter().position(|s| s.account == *account)
    }

    fn seller_index_by_relay(&self, relay_account: &Address) -> Option<usize> {
        self.sellers
            .iter()
            .position(|s| s.relay_account == *relay_account)
    }

    pub fn total_money(&self) -> Money {
        self.ledger.total_money()
    }

    fn submit_plain(&mut self, keypair: &SignatureKeypair, sender: Address, payload: TxPayload) {
        let bytes = payload.to_bytes();
        let tx = Transaction {
            sender,
            kind: TxKind::Plain,
            payload: bytes.clone(),
            signature: keypair.sign(&bytes),
        };
        self.ledger.submit(tx).expect("plain tx accepted");
    }

    fn submit_attested(&mut self, sender: Address, payload: Vec<u8>, signature: crate::crypto::Signature) {
        let tx = Transaction {
            sender,
            kind: TxKind::Attestation,
            payload,
            signature,
        };
        self.ledger.submit(tx).expect("attestation tx accepted");
    }

    /// Run the benchmark flows of the given sellers in lockstep: shared
    /// rounds, shared relay requests where the intermediator allows it.
    pub fn run_benchmark_flows(&mut self, seller_indices: &[usize]) -> Vec<BenchOutcome> {
        // registration: publish all reports in one round
        for &idx in seller_indices {
            self.sellers[idx].outcome = None;
            let (submission, account) = {
                let s = &self.sellers[idx];
                (
                    ReportSubmission {
                        id_m: s.id_m,
                        addr_m: s.registration.addr_m,
                        prog_m: hash(&s.model_bytes[..16.min(s.model_bytes.len())]),
                        com_m: s.registration.com_m,
                        com_k: s.registration.com_k,
                        p_k: s.registration.p_k,
                        p_ck: s.registration.p_ck,
                        p_cm: s.registration.p_cm,
                        setup_pk: s.registration.setup_pk,
                        exchange_account: s.exchange_account,
                    },
                    s.account,
                )
            };
            let keypair = self.sellers[idx].keypair.clone();
            self.submit_plain(&keypair, account, TxPayload::PublishReport(submission));
            let round = self.ledger.round() + 1;
            self.transcript.push_event(
                round,
                Party::Seller(account),
                Party::BmContract,
                "publish_report",
                Flow::Setup,
                vec![],
            );
        }

        let deadline_rounds = self.ledger.round()
            + self.config.t1_offset
            + self.config.t2_offset
            + self.config.t3_offset
            + 4;
        while self.ledger.round() < deadline_rounds {
            self.advance();

            // finalize flows whose output transaction just sealed
            for &idx in seller_indices {
                if self.sellers[idx].pending_publish {
                    self.sellers[idx].pending_publish = false;
                    let outcome = self.finish_bench_outcome(idx, None);
                    self.transcript.push_verdict(format!(
                        "bench {}: published={} price={:?} blocked={}",
                        outcome.id_m, outcome.published, outcome.price, outcome.sale_blocked
                    ));
                    self.sellers[idx].outcome = Some(outcome);
                }
            }

            let messages = std::mem::take(&mut self.inbox);
            for msg in messages {
                self.handle_bench_message(msg);
            }
            self.continue_evaluations();
            let all_done = seller_indices
                .iter()
                .all(|idx| self.sellers[*idx].outcome.is_some() && !self.sellers[*idx].pending_publish);
            if all_done {
                break;
            }
        }

        // flows that never finished: report them from contract state
        for &idx in seller_indices {
            if self.sellers[idx].outcome.is_none() {
                let id_m = self.sellers[idx].id_m;
                let verdict = self.finish_bench_outcome(idx, Some("flow incomplete".into()));
                self.transcript
                    .push_verdict(format!("bench {}: incomplete", id_m));
                self.sellers[idx].outcome = Some(verdict);
            }
        }

        seller_indices
            .iter()
            .map(|idx| self.sellers[*idx].outcome.clone().expect("set above"))
            .collect()
    }

    fn finish_bench_outcome(&self, seller_idx: usize, abort: Option<String>) -> BenchOutcome {
        let s = &self.sellers[seller_idx];
        let report = self.contracts.report(&s.id_m);
        let published = report
            .map(|r| r.state != SaleState::Listed)
            .unwrap_or(false);
        BenchOutcome {
            id_m: s.id_m,
            published,
            abort,
            result: report.and_then(|r| r.metrics.clone()),
            price: report.and_then(|r| r.price),
            sale_blocked: report.map(|r| r.sale_blocked).unwrap_or(false),
        }
    }

    fn handle_bench_message(&mut self, msg: ContractMessage) {
        match msg {
            ContractMessage::Install { id_m, seller, .. } => {
                let Some(idx) = self.seller_index(&seller) else {
                    return;
                };
                let round = self.ledger.round() + 1;
                let prog_len = self.prog_bytes.len();
                self.transcript
                    .push_store(round, Party::Seller(seller), Flow::Bench(id_m), "prog", prog_len);

                let prog_bytes = self.prog_bytes.clone();
                let receipt = self.sellers[idx]
                    .bench_enclave
                    .install(&prog_bytes)
                    .expect("install");
                let eid = self.sellers[idx].bench_enclave.eid();
                self.transcript.push_event(
                    round,
                    Party::Seller(seller),
                    Party::Enclave(eid),
                    "install",
                    Flow::Bench(id_m),
                    vec![],
                );
                self.transcript.push_event(
                    round,
                    Party::Enclave(eid),
                    Party::Seller(seller),
                    "okay",
                    Flow::Bench(id_m),
                    vec![],
                );
                debug_assert!(receipt.okay);

                // the enclave announces itself on-chain
                let announce = self.sellers[idx].bench_enclave.announce_payload(id_m);
                let bench_account = self.sellers[idx].bench_account;
                self.submit_attested(bench_account, announce.payload, announce.signature);
                self.transcript.push_event(
                    round,
                    Party::EnclaveAccount(bench_account),
                    Party::BmContract,
                    "tx_eid",
                    Flow::Bench(id_m),
                    vec![PayloadItem::new("sig_bind", 70)],
                );
            }
            ContractMessage::Commit {
                id_m,
                seller,
                com_m,
                ..
            } => {
                let Some(idx) = self.seller_index(&seller) else {
                    return;
                };
                let round = self.ledger.round() + 1;
                self.transcript
                    .push_store(round, Party::Seller(seller), Flow::Bench(id_m), "com_m", 32);

                // a forging seller loads a different model than committed
                let mut model_bytes = self.sellers[idx].model_bytes.clone();
                if let Some(Strategy::ForgeModel) = self.sellers[idx].behavior.strategy() {
                    let last = model_bytes.len() - 1;
                    model_bytes[last] ^= 0x01;
                }
                let model_len = model_bytes.len();
                self.transcript
                    .push_store(round, Party::Seller(seller), Flow::Bench(id_m), "model", model_len);

                let coin = self.sellers[idx].coin_m;
                let eid = self.sellers[idx].bench_enclave.eid();
                self.transcript.push_event(
                    round,
                    Party::Seller(seller),
                    Party::Enclave(eid),
                    "resume_commit",
                    Flow::Bench(id_m),
                    vec![PayloadItem::new("model", model_len)],
                );
                let commit_result = {
                    let view = ChainView {
                        ledger: &self.ledger,
                        contracts: &self.contracts,
                    };
                    self.sellers[idx]
                        .bench_enclave
                        .resume_commit(id_m, com_m, &model_bytes, &coin, &view)
                };
                match commit_result {
                    Ok(step) => {
                        self.transcript.push_event(
                            round,
                            Party::Enclave(eid),
                            Party::Seller(seller),
                            "commit_receipt",
                            Flow::Bench(id_m),
                            vec![],
                        );
                        self.sellers[idx].sealed_blobs.push(step.sealed.clone());
                        let bench_account = self.sellers[idx].bench_account;
                        self.submit_attested(
                            bench_account,
                            step.receipt.payload,
                            step.receipt.signature,
                        );
                        self.transcript.push_event(
                            round,
                            Party::Seller(seller),
                            Party::BmContract,
                            "tx_c",
                            Flow::Bench(id_m),
                            vec![PayloadItem::new("sig_c", 70)],
                        );
                        self.submit_attested(
                            bench_account,
                            step.counter_tx.payload,
                            step.counter_tx.signature,
                        );
                        self.transcript.push_event(
                            round,
                            Party::Seller(seller),
                            Party::Ledger,
                            "tx_counter",
                            Flow::Bench(id_m),
                            vec![],
                        );
                    }
                    Err(abort) => {
                        let outcome =
                            self.finish_bench_outcome(idx, Some(format!("enclave abort: {abort}")));
                        self.transcript
                            .push_verdict(format!("bench {}: abort at commit: {abort}", id_m));
                        self.sellers[idx].outcome = Some(outcome);
                    }
                }
            }
            ContractMessage::RelayRequest {
                request_id,
                intermediator,
                seller,
                url,
                params,
            } => {
                let Some(relay_idx) = self.seller_index_by_relay(&intermediator) else {
                    return;
                };
                if let Some(req_seller) = self.seller_index(&seller) {
                    let id_m = self.sellers[req_seller].id_m;
                    self.request_flow.insert(request_id, id_m);
                }
                let round = self.ledger.round() + 1;
                let spec = self.config.package.clone();
                let block_hash = self.ledger.latest_block_hash();
                let served = self.sellers[relay_idx].relay_enclave.serve(
                    &self.server,
                    request_id,
                    &block_hash,
                    &spec,
                    &url,
                    &params,
                );
                let (package, record) = match served {
                    Ok(pair) => pair,
                    Err(e) => {
                        // no record lands on-chain; the flow dies at T3
                        self.transcript.push_verdict(format!(
                            "relay request {request_id} failed: {e}"
                        ));
                        return;
                    }
                };

                let payload = TxPayload::RelayRecord {
                    request_id,
                    digest: record.digest,
                    sampling_seed: record.sampling_seed,
                    attestation: record.sigma,
                }
                .to_bytes();
                let signature = self.sellers[relay_idx].relay_enclave.attest(&payload);
                let relay_account = self.sellers[relay_idx].relay_account;
                let relay_host = self.sellers[relay_idx].account;
                self.submit_attested(relay_account, payload, signature);
                let flow = self
                    .request_flow
                    .get(&request_id)
                    .map(|id| Flow::Bench(*id))
                    .unwrap_or(Flow::Setup);
                self.transcript.push_event(
                    round,
                    Party::RelayHost(relay_host),
                    Party::BmContract,
                    "relay_record",
                    flow,
                    vec![
                        PayloadItem::new("samples_digest", 32),
                        PayloadItem::new("sigma_relay", 70),
                        PayloadItem::new("sigma_att", 70),
                    ],
                );

                self.relay_cache.insert(request_id, package.clone());
                self.deliver_samples(request_id, &seller, package, Some(relay_host));
            }
            ContractMessage::Evaluate {
                id_m,
                seller,
                request_id,
                ..
            } => {
                let Some(idx) = self.seller_index(&seller) else {
                    return;
                };
                // shared request: deliver from the relay host cache if this
                // seller has not received the samples yet
                let needs_delivery = self.sellers[idx]
                    .delivered
                    .as_ref()
                    .map(|(rid, _)| *rid != request_id)
                    .unwrap_or(true);
                if needs_delivery {
                    if let Some(package) = self.relay_cache.get(&request_id).cloned() {
                        self.deliver_samples(request_id, &seller, package, None);
                    }
                }
                self.sellers[idx].eval = Some(EvalDrive {
                    id_m,
                    request_id,
                    steps_done: 0,
                    pulled_anchor: false,
                });
            }
            ContractMessage::RequestKey {
                be_id,
                seller,
                pk_b,
                com_k,
                ..
            } => {
                let Some(idx) = self.seller_index(&seller) else {
                    return;
                };
                let round = self.ledger.round() + 1;
                let flow = Flow::Exchange(be_id);
                self.transcript
                    .push_store(round, Party::Seller(seller), flow, "com_k", 32);
                self.transcript
                    .push_store(round, Party::Seller(seller), flow, "pk_b", 64);
                // acts in the forming round; exchange drivers may defer it
                self.sellers[idx].key_request = Some(KeyRequestDrive {
                    be_id,
                    pk_b,
                    com_k,
                    act_at_round: round,
                });
            }
        }
    }

    fn deliver_samples(
        &mut self,
        request_id: u64,
        seller: &Address,
        mut package: SamplePackage,
        relay_host: Option<Address>,
    ) {
        let Some(idx) = self.seller_index(seller) else {
            return;
        };
        let round = self.ledger.round() + 1;
        let flow = Flow::Bench(self.sellers[idx].id_m);
        let samples_len = package.byte_len();
        // the host channel after the relay is tamperable
        if let Some(Strategy::TamperSamples { site }) = self.sellers[idx].behavior.strategy() {
            tamper_package_at(&mut package, *site);
        }
        let relay_party = relay_host
            .or_else(|| {
                self.sellers
                    .iter()
                    .find(|s| {
                        self.contracts
                            .relay_record(request_id)
                            .map(|r| r.relay_pk == s.relay_enclave.public_key())
                            .unwrap_or(false)
                    })
                    .map(|s| s.account)
            })
            .map(Party::RelayHost)
            .unwrap_or(Party::DataServer);
        self.transcript.push_event(
            round,
            relay_party,
            Party::Seller(*seller),
            "samples",
            flow,
            vec![PayloadItem::new("samples", samples_len)],
        );
        self.transcript
            .push_store(round, Party::Seller(*seller), flow, "samples", samples_len);
        self.sellers[idx].delivered = Some((request_id, package));
    }

    /// One evaluation step per pending seller per round.
    fn continue_evaluations(&mut self) {
        for idx in 0..self.sellers.len() {
            if self.sellers[idx].outcome.is_some() {
                continue;
            }
            let Some(drive) = self.sellers[idx].eval.as_ref() else {
                continue;
            };
            let (id_m, request_id, steps_done, pulled) = (
                drive.id_m,
                drive.request_id,
                drive.steps_done,
                drive.pulled_anchor,
            );
            let seller = self.sellers[idx].account;
            let round = self.ledger.round() + 1;
            let flow = Flow::Bench(id_m);

            if !pulled {
                // pull the anchored digest and its signature from the chain
                self.transcript.push_event(
                    round,
                    Party::Ledger,
                    Party::Seller(seller),
                    "chain_pull",
                    flow,
                    vec![
                        PayloadItem::new("samples_digest", 32),
                        PayloadItem::new("sigma_relay", 70),
                    ],
                );
                self.sellers[idx].eval.as_mut().expect("present").pulled_anchor = true;
            }

            let Some((delivered_id, package)) = self.sellers[idx].delivered.clone() else {
                continue;
            };
            if delivered_id != request_id {
                continue;
            }

            // pick the sealed blob to feed: honest hosts use the latest,
            // a rolling-back host replays a stale one
            let blob = match self.sellers[idx].behavior.strategy() {
                Some(Strategy::Rollback {
                    replay_step,
                    replay_index,
                }) if steps_done == *replay_step => self.sellers[idx]
                    .sealed_blobs
                    .get(*replay_index as usize)
                    .cloned(),
                _ => self.sellers[idx].sealed_blobs.last().cloned(),
            };
            let Some(blob) = blob else {
                continue;
            };

            let eid = self.sellers[idx].bench_enclave.eid();
            self.transcript.push_event(
                round,
                Party::Seller(seller),
                Party::Enclave(eid),
                "resume_evaluate",
                flow,
                vec![],
            );
            let step_result = {
                let view = ChainView {
                    ledger: &self.ledger,
                    contracts: &self.contracts,
                };
                self.sellers[idx]
                    .bench_enclave
                    .resume_evaluate(id_m, &blob, &package, request_id, &view)
            };
            match step_result {
                Ok(EvalStep::Sealed { sealed, counter_tx }) => {
                    self.transcript.push_event(
                        round,
                        Party::Enclave(eid),
                        Party::Seller(seller),
                        "sealed_state",
                        flow,
                        vec![],
                    );
                    self.sellers[idx].sealed_blobs.push(sealed);
                    let bench_account = self.sellers[idx].bench_account;
                    self.submit_attested(bench_account, counter_tx.payload, counter_tx.signature);
                    self.transcript.push_event(
                        round,
                        Party::Seller(seller),
                        Party::Ledger,
                        "tx_counter",
                        flow,
                        vec![],
                    );
                    self.sellers[idx].eval.as_mut().expect("present").steps_done = steps_done + 1;
                }
                Ok(EvalStep::Output {
                    output,
                    receipt,
                    counter_tx,
                }) => {
                    self.transcript.push_event(
                        round,
                        Party::Enclave(eid),
                        Party::Seller(seller),
                        "output",
                        flow,
                        vec![],
                    );
                    let outp_len = output.to_bytes().len();
                    self.transcript
                        .push_store(round, Party::Seller(seller), flow, "outp", outp_len);
                    let bench_account = self.sellers[idx].bench_account;
                    self.submit_attested(bench_account, receipt.payload, receipt.signature);
                    self.transcript.push_event(
                        round,
                        Party::Seller(seller),
                        Party::BmContract,
                        "tx_o",
                        flow,
                        vec![
                            PayloadItem::new("sig_o", 70),
                            PayloadItem::new("outp", outp_len),
                        ],
                    );
                    self.submit_attested(bench_account, counter_tx.payload, counter_tx.signature);
                    self.transcript.push_event(
                        round,
                        Party::Seller(seller),
                        Party::Ledger,
                        "tx_counter",
                        flow,
                        vec![],
                    );
                    self.sellers[idx].eval = None;
                    // outcome finalizes after the sealing round publishes
                    self.sellers[idx].pending_publish = true;
                }
                Err(abort) => {
                    let outcome =
                        self.finish_bench_outcome(idx, Some(format!("enclave abort: {abort}")));
                    self.transcript
                        .push_verdict(format!("bench {}: abort at evaluate: {abort}", id_m));
                    self.sellers[idx].eval = None;
                    self.sellers[idx].outcome = Some(outcome);
                }
            }
        }
    }

    /// Convenience single-flow driver.
    pub fn run_benchmark_flow(&mut self, seller_idx: usize) -> BenchOutcome {
        self.run_benchmark_flows(&[seller_idx]).remove(0)
    }

    /// Run one exchange between a benchmarked seller and a buyer.
    pub fn run_exchange_flow(
        &mut self,
        seller_idx: usize,
        buyer_idx: usize,
        params: ExchangeParams,
    ) -> ExchangeOutcome {
        let id_m = self.sellers[seller_idx].id_m;
        let report = self.contracts.report(&id_m).cloned();
        let Some(report) = report else {
            return ExchangeOutcome {
                be_id: 0,
                t1_prime: 0,
                claimed: false,
                claim_round: None,
                refunded: false,
                refund_round: None,
                buyer_recovered_model: false,
                abort: Some("no report".into()),
            };
        };
        let Some(price) = report.price else {
            return ExchangeOutcome {
                be_id: 0,
                t1_prime: 0,
                claimed: false,
                claim_round: None,
                refunded: false,
                refund_round: None,
                buyer_recovered_model: false,
                abort: Some("model not priced (unbenchmarked or gated)".into()),
            };
        };
        let deposit = params.deposit.unwrap_or(price);
        let be_id = self.contracts.next_be_id();

        // Init: buyer deposits
        let (buyer_account, buyer_kp) = {
            let b = &self.buyers[buyer_idx];
            (b.account, b.keypair.clone())
        };
        self.submit_plain(
            &buyer_kp,
            buyer_account,
            TxPayload::BeInit {
                id_m,
                p_k: report.p_k,
                com_k: report.com_k,
                deposit,
            },
        );
        let round = self.ledger.round() + 1;
        self.transcript.push_event(
            round,
            Party::Buyer(buyer_account),
            Party::BeContract,
            "be_init",
            Flow::Exchange(be_id),
            vec![
                PayloadItem::new("id_m", 32),
                PayloadItem::new("p_k", 70),
                PayloadItem::new("com_k", 32),
            ],
        );
        self.advance();

        let Some(instance) = self.contracts.be_instance(be_id).cloned() else {
            return ExchangeOutcome {
                be_id,
                t1_prime: 0,
                claimed: false,
                claim_round: None,
                refunded: false,
                refund_round: None,
                buyer_recovered_model: false,
                abort: Some(format!(
                    "init rejected: {}",
                    self.contracts
                        .rejects()
                        .last()
                        .map(|r| r.reason.clone())
                        .unwrap_or_default()
                )),
            };
        };
        let t1_prime = instance.t1_prime;

        // Request: buyer reveals their encryption key, unless repudiating
        let repudiates = matches!(
            self.buyers[buyer_idx].behavior.strategy(),
            Some(Strategy::Repudiate)
        );
        if !repudiates {
            let pk_b = self.buyers[buyer_idx].public_key();
            self.submit_plain(&buyer_kp, buyer_account, TxPayload::BeRequest { be_id, pk_b });
            let round = self.ledger.round() + 1;
            self.transcript.push_event(
                round,
                Party::Buyer(buyer_account),
                Party::BeContract,
                "be_request",
                Flow::Exchange(be_id),
                vec![PayloadItem::new("pk_b", 64)],
            );
        }
        self.advance();
        // deliver the key request to the seller with the configured delay
        let messages = std::mem::take(&mut self.inbox);
        for msg in messages {
            if let ContractMessage::RequestKey { .. } = &msg {
                self.handle_bench_message(msg);
                if let Some(req) = self.sellers[seller_idx].key_request.as_mut() {
                    req.act_at_round += params.claim_delay;
                }
            } else {
                self.handle_bench_message(msg);
            }
        }

        // drive rounds until the exchange terminates
        let mut claim_round = None;
        loop {
            self.try_key_release(seller_idx, &mut claim_round);
            self.advance();
            let instance = self.contracts.be_instance(be_id).expect("instance exists");
            match instance.phase {
                BePhase::Claimed => break,
                BePhase::Aborted => break,
                _ => {}
            }
            if self.ledger.round() > t1_prime + 2 {
                break;
            }
        }

        let instance = self.contracts.be_instance(be_id).expect("instance exists").clone();
        let claimed = instance.phase == BePhase::Claimed;
        let refunded = instance.phase == BePhase::Aborted;

        // buyer retrieves and decrypts after a claim
        let mut buyer_recovered = false;
        if claimed {
            if let Some((ciphertext, _)) = &instance.published {
                if let Ok(key_bytes) = crypto::adec(&self.buyers[buyer_idx].enc_keypair, ciphertext)
                {
                    let mut raw = [0u8; 32];
                    raw.copy_from_slice(&key_bytes);
                    let k = SymmetricKey(raw);
                    if let Some(blob) = self.blobstore.get(&report.addr_m) {
                        if let Ok(model) = crypto::dec(&k, blob) {
                            buyer_recovered = model == self.sellers[seller_idx].model_bytes;
                            self.buyers[buyer_idx].recovered = Some((k, model));
                        }
                    }
                }
            }
        }

        let outcome = ExchangeOutcome {
            be_id,
            t1_prime,
            claimed,
            claim_round,
            refunded,
            refund_round: instance.refunded_at,
            buyer_recovered_model: buyer_recovered,
            abort: None,
        };
        self.transcript.push_verdict(format!(
            "exchange {}: claimed={} refunded={} recovered={}",
            be_id, claimed, refunded, buyer_recovered
        ));
        outcome
    }

    /// Act on a pending key request if its round has come and the seller
    /// is not withholding.
    fn try_key_release(&mut self, seller_idx: usize, claim_round: &mut Option<u64>) {
        let Some(req) = self.sellers[seller_idx].key_request.as_ref() else {
            return;
        };
        let forming_round = self.ledger.round() + 1;
        if forming_round < req.act_at_round {
            return;
        }
        let (be_id, pk_b, com_k) = (req.be_id, req.pk_b, req.com_k);
        let seller = self.sellers[seller_idx].account;
        let behavior = self.sellers[seller_idx].behavior.clone();
        self.sellers[seller_idx].key_request = None;

        match behavior.strategy() {
            Some(Strategy::WithholdKey) => {
                self.transcript
                    .push_verdict(format!("exchange {be_id}: seller withheld the key"));
                return;
            }
            Some(Strategy::SwapKey) => {
                // seller loads a different key than committed
                let wrong = SymmetricKey::random(&mut self.rng);
                let coin_k = self.sellers[seller_idx].coin_k;
                let resume_coin = Coin::random(&mut self.rng);
                let result = self.sellers[seller_idx].exchange_enclave.resume_request_key(
                    be_id,
                    com_k,
                    &wrong,
                    &coin_k,
                    &pk_b,
                    &resume_coin,
                );
                debug_assert!(result.is_err());
                self.transcript.push_verdict(format!(
                    "exchange {be_id}: enclave refused swapped key: {}",
                    result.err().map(|e| e.to_string()).unwrap_or_default()
                ));
                return;
            }
            _ => {}
        }

        let flow = Flow::Exchange(be_id);
        let round = forming_round;
        self.transcript
            .push_store(round, Party::Seller(seller), flow, "k_m", 32);
        let eid = self.sellers[seller_idx].exchange_enclave.eid();
        self.transcript.push_event(
            round,
            Party::Seller(seller),
            Party::Enclave(eid),
            "resume_request_key",
            flow,
            vec![PayloadItem::new("k_m", 32)],
        );

        let k_m = self.sellers[seller_idx].k_m;
        let coin_k = self.sellers[seller_idx].coin_k;
        let resume_coin = Coin::random(&mut self.rng);
        let release = match self.sellers[seller_idx].exchange_enclave.resume_request_key(
            be_id,
            com_k,
            &k_m,
            &coin_k,
            &pk_b,
            &resume_coin,
        ) {
            Ok(r) => r,
            Err(abort) => {
                self.transcript
                    .push_verdict(format!("exchange {be_id}: enclave abort: {abort}"));
                return;
            }
        };

        let aenc_len = release.ciphertext.len();
        self.transcript.push_event(
            round,
            Party::Enclave(eid),
            Party::Seller(seller),
            "key_release",
            flow,
            vec![
                PayloadItem::new("sigma_o_prime", 70),
                PayloadItem::new("pk_b", 64),
                PayloadItem::new("aenc_km", aenc_len),
            ],
        );
        self.transcript
            .push_store(round, Party::Seller(seller), flow, "aenc_km", aenc_len);
        self.transcript
            .push_store(round, Party::Seller(seller), flow, "sigma_o_prime", 70);

        let exchange_account = self.sellers[seller_idx].exchange_account;
        self.submit_attested(
            exchange_account,
            release.receipt.payload.clone(),
            release.receipt.signature,
        );
        // the seller forwards the enclave transaction; the chain delivers
        // the attested payload to the contract
        self.transcript.push_event(
            round,
            Party::Seller(seller),
            Party::Ledger,
            "tx_forward",
            flow,
            vec![PayloadItem::new("tx_sig", 70)],
        );
        self.transcript.push_event(
            round,
            Party::Ledger,
            Party::BeContract,
            "tx_o_prime",
            flow,
            vec![
                PayloadItem::new("sigma_o_prime", 70),
                PayloadItem::new("pk_b", 64),
                PayloadItem::new("aenc_km", aenc_len),
            ],
        );
        *claim_round = Some(round);
    }

    /// Scan every public surface (transcript, block log, contract state)
    /// for cleartext secrets: the model bytes and each seller's key must
    /// never appear outside the parties' own stores.
    pub fn privacy_scan(&self) -> Result<(), String> {
        let mut surface = self.transcript.to_jsonl();
        surface.push_str(&self.ledger.export_jsonl());
        for report in self.contracts.reports() {
            surface.push_str(&serde_json::to_string(report).expect("serialize report"));
        }
        for seller in &self.sellers {
            let km_hex = seller.k_m.to_hex();
            if surface.contains(&km_hex) {
                return Err(format!("cleartext k_m of {} leaked", seller.name));
            }
            let model_hex = hex::encode(&seller.model_bytes[..32.min(seller.model_bytes.len())]);
            if surface.contains(&model_hex) {
                return Err(format!("cleartext model of {} leaked", seller.name));
            }
        }
        Ok(())
    }
}
