//! Scenario files and batch drivers: build a [`World`] from a TOML
//! description, run whole-market simulations, and run the adversary
//! attack matrix.

use serde::{Deserialize, Serialize};

use crate::benchmark::suites::SuiteConfig;
use crate::crypto::Digest;
use crate::ledger::Money;
use crate::pricing::GaParams;
use crate::protocol::{
    Behavior, BenchOutcome, BuyerSpec, ExchangeOutcome, ExchangeParams, ModelSpec, SellerSpec,
    Strategy, World, WorldConfig,
};
use crate::relay::PackageSpec;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub market: MarketSection,
    #[serde(default)]
    pub suite: SuiteSection,
    #[serde(default)]
    pub package: PackageSection,
    #[serde(default)]
    pub pricing: PricingSection,
    #[serde(default = "default_sellers")]
    pub sellers: Vec<SellerSection>,
    #[serde(default = "default_buyers")]
    pub buyers: Vec<BuyerSection>,
    #[serde(default)]
    pub adversary: Option<AdversarySection>,
}

fn default_seed() -> u64 {
    1
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketSection {
    pub accuracy_threshold: f64,
    pub relay_fee: Money,
    pub pool_balance: Money,
    pub price_scale: f64,
    pub t1_offset: u64,
    pub t2_offset: u64,
    pub t3_offset: u64,
    pub t1_prime_offset: u64,
}

impl Default for MarketSection {
    fn default() -> Self {
        let w = WorldConfig::default();
        MarketSection {
            accuracy_threshold: w.accuracy_threshold,
            relay_fee: w.relay_fee,
            pool_balance: w.pool_balance,
            price_scale: w.price_scale,
            t1_offset: w.t1_offset,
            t2_offset: w.t2_offset,
            t3_offset: w.t3_offset,
            t1_prime_offset: w.t1_prime_offset,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteSection {
    pub dim: u32,
    pub classes: u32,
    pub clean_per_class: u32,
    pub sequences_per_kind: u32,
}

impl Default for SuiteSection {
    fn default() -> Self {
        let s = SuiteConfig::default();
        SuiteSection {
            dim: s.dim,
            classes: s.classes,
            clean_per_class: s.clean_per_class,
            sequences_per_kind: s.sequences_per_kind,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PackageSection {
    pub images_per_corruption: usize,
    pub sequences_per_perturbation: usize,
    pub clean_count: usize,
}

impl Default for PackageSection {
    fn default() -> Self {
        let p = PackageSpec::default();
        PackageSection {
            images_per_corruption: p.images_per_corruption,
            sequences_per_perturbation: p.sequences_per_perturbation,
            clean_count: p.clean_count,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PricingSection {
    pub curve_instances: usize,
    pub ga_iterations: usize,
    pub ga_population: usize,
}

impl Default for PricingSection {
    fn default() -> Self {
        PricingSection {
            curve_instances: 5,
            ga_iterations: 120,
            ga_population: 30,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerSection {
    pub name: String,
    #[serde(default = "default_balance")]
    pub balance: Money,
    #[serde(default)]
    pub model: ModelSection,
}

fn default_balance() -> Money {
    1_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum ModelSection {
    TargetAccuracy { accuracy: f64 },
    Baseline,
    File { path: String },
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::TargetAccuracy { accuracy: 0.78 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerSection {
    pub name: String,
    #[serde(default = "default_buyer_balance")]
    pub balance: Money,
}

fn default_buyer_balance() -> Money {
    5_000
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversarySection {
    /// "seller:0" or "buyer:1".
    pub party: String,
    /// Strategy name, see `attack --help` for the list.
    pub strategy: String,
}

fn default_sellers() -> Vec<SellerSection> {
    vec![
        SellerSection {
            name: "seller-0".into(),
            balance: 1_000,
            model: ModelSection::TargetAccuracy { accuracy: 0.78 },
        },
        SellerSection {
            name: "seller-1".into(),
            balance: 1_000,
            model: ModelSection::TargetAccuracy { accuracy: 0.70 },
        },
    ]
}

fn default_buyers() -> Vec<BuyerSection> {
    vec![BuyerSection {
        name: "buyer-0".into(),
        balance: 5_000,
    }]
}

impl Default for ScenarioFile {
    fn default() -> Self {
        ScenarioFile {
            seed: default_seed(),
            market: MarketSection::default(),
            suite: SuiteSection::default(),
            package: PackageSection::default(),
            pricing: PricingSection::default(),
            sellers: default_sellers(),
            buyers: default_buyers(),
            adversary: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scenario io: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown adversary strategy `{0}`")]
    UnknownStrategy(String),
    #[error("bad adversary party `{0}` (expected seller:<i> or buyer:<i>)")]
    BadParty(String),
    #[error("model file {0}: {1}")]
    ModelFile(String, String),
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<ScenarioFile, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn from_path(path: &std::path::Path) -> Result<ScenarioFile, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("serialize scenario")
    }

    /// Build the world configuration; `seed` overrides the file's seed.
    pub fn world_config(&self, seed: Option<u64>) -> Result<WorldConfig, ScenarioError> {
        let mut sellers: Vec<SellerSpec> = self
            .sellers
            .iter()
            .map(|s| {
                let model = match &s.model {
                    ModelSection::TargetAccuracy { accuracy } => {
                        ModelSpec::TargetAccuracy(*accuracy)
                    }
                    ModelSection::Baseline => ModelSpec::Baseline,
                    ModelSection::File { path } => {
                        let bytes = std::fs::read(path).map_err(|e| {
                            ScenarioError::ModelFile(path.clone(), e.to_string())
                        })?;
                        ModelSpec::Bytes(bytes)
                    }
                };
                Ok(SellerSpec {
                    name: s.name.clone(),
                    balance: s.balance,
                    model,
                    behavior: Behavior::Honest,
                })
            })
            .collect::<Result<_, ScenarioError>>()?;
        let mut buyers: Vec<BuyerSpec> = self
            .buyers
            .iter()
            .map(|b| BuyerSpec {
                name: b.name.clone(),
                balance: b.balance,
                behavior: Behavior::Honest,
            })
            .collect();

        if let Some(adv) = &self.adversary {
            let strategy = Strategy::from_name(&adv.strategy)
                .ok_or_else(|| ScenarioError::UnknownStrategy(adv.strategy.clone()))?;
            let (role, idx) = adv
                .party
                .split_once(':')
                .ok_or_else(|| ScenarioError::BadParty(adv.party.clone()))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| ScenarioError::BadParty(adv.party.clone()))?;
            match role {
                "seller" if idx < sellers.len() => {
                    sellers[idx].behavior = Behavior::Adversarial(strategy);
                }
                "buyer" if idx < buyers.len() => {
                    buyers[idx].behavior = Behavior::Adversarial(strategy);
                }
                _ => return Err(ScenarioError::BadParty(adv.party.clone())),
            }
        }

        Ok(WorldConfig {
            seed: seed.unwrap_or(self.seed),
            suite: SuiteConfig {
                dim: self.suite.dim,
                classes: self.suite.classes,
                clean_per_class: self.suite.clean_per_class,
                sequences_per_kind: self.suite.sequences_per_kind,
                ..SuiteConfig::default()
            },
            package: PackageSpec {
                images_per_corruption: self.package.images_per_corruption,
                sequences_per_perturbation: self.package.sequences_per_perturbation,
                clean_count: self.package.clean_count,
            },
            sellers,
            buyers,
            accuracy_threshold: self.market.accuracy_threshold,
            relay_fee: self.market.relay_fee,
            pool_balance: self.market.pool_balance,
            price_scale: self.market.price_scale,
            t1_offset: self.market.t1_offset,
            t2_offset: self.market.t2_offset,
            t3_offset: self.market.t3_offset,
            t1_prime_offset: self.market.t1_prime_offset,
            curve_instances: self.pricing.curve_instances,
            curve_ga: GaParams {
                iterations: self.pricing.ga_iterations,
                population: self.pricing.ga_population,
                ..GaParams::default()
            },
            enclave_cap: 1 << 20,
        })
    }
}

/// One cell of the attack matrix.
#[derive(Clone, Debug, Serialize)]
pub struct AttackCell {
    pub strategy: String,
    pub seed: u64,
    pub bench_abort: Option<String>,
    pub bench_published: bool,
    pub exchange_claimed: bool,
    pub exchange_refunded: bool,
    pub seller_paid: bool,
    pub buyer_has_model: bool,
    pub money_conserved: bool,
    /// Exchange fairness: the seller is paid exactly when the buyer can
    /// decrypt the committed model.
    pub fairness_holds: bool,
}

/// Compact two-seller, one-buyer market used for the attack matrix: small
/// suites keep each cell fast without weakening any of the checks.
pub fn attack_base_config(seed: u64) -> WorldConfig {
    let scenario = ScenarioFile::default();
    let mut config = scenario.world_config(Some(seed)).expect("default scenario");
    config.suite.clean_per_class = 30;
    config.suite.sequences_per_kind = 6;
    config.package = PackageSpec {
        images_per_corruption: 10,
        sequences_per_perturbation: 3,
        clean_count: 60,
    };
    config
}

/// Run one strategy against a fresh two-seller, one-buyer market.
pub fn run_attack_cell(strategy: &Strategy, seed: u64) -> AttackCell {
    let mut config = attack_base_config(seed);
    match strategy {
        Strategy::Repudiate => {
            config.buyers[0].behavior = Behavior::Adversarial(strategy.clone());
        }
        _ => {
            config.sellers[0].behavior = Behavior::Adversarial(strategy.clone());
        }
    }
    let mut world = World::new(config);
    run_attack_in_world(&mut world, strategy, seed)
}

fn run_attack_in_world(world: &mut World, strategy: &Strategy, seed: u64) -> AttackCell {
    let money_before = world.total_money();
    let seller_before = world.ledger.balance(&world.sellers[0].account);

    let bench = world.run_benchmark_flow(0);
    let exchange = if bench.published && !bench.sale_blocked && bench.price.is_some() {
        Some(world.run_exchange_flow(0, 0, ExchangeParams::default()))
    } else {
        None
    };

    let seller_after = world.ledger.balance(&world.sellers[0].account);
    let seller_paid = seller_after > seller_before;
    let buyer_has_model = exchange
        .as_ref()
        .map(|e| e.buyer_recovered_model)
        .unwrap_or(false);
    let money_conserved = world.total_money() == money_before;

    AttackCell {
        strategy: strategy.name().to_string(),
        seed,
        bench_abort: bench.abort.clone(),
        bench_published: bench.published,
        exchange_claimed: exchange.as_ref().map(|e| e.claimed).unwrap_or(false),
        exchange_refunded: exchange.as_ref().map(|e| e.refunded).unwrap_or(false),
        seller_paid,
        buyer_has_model,
        money_conserved,
        fairness_holds: seller_paid == buyer_has_model,
    }
}

/// The full matrix: every strategy against every seed.
pub fn run_attack_suite(seeds: &[u64]) -> Vec<AttackCell> {
    let mut cells = Vec::new();
    for name in Strategy::ALL_NAMES {
        let strategy = Strategy::from_name(name).expect("known name");
        for &seed in seeds {
            cells.push(run_attack_cell(&strategy, seed));
        }
    }
    cells
}

/// Outcome of a whole-market run: every seller benchmarked in lockstep,
/// then buyer j trades with seller j.
#[derive(Clone, Debug, Serialize)]
pub struct MarketOutcome {
    pub bench: Vec<MarketBench>,
    pub trades: Vec<MarketTrade>,
    pub money_before: Money,
    pub money_after: Money,
    pub transcript_digest: Digest,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarketBench {
    pub seller: String,
    pub published: bool,
    pub price: Option<Money>,
    pub sale_blocked: bool,
    pub abort: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct MarketTrade {
    pub seller: String,
    pub buyer: String,
    pub claimed: bool,
    pub refunded: bool,
    pub buyer_recovered_model: bool,
}

pub fn run_market(mut world: World) -> (World, MarketOutcome) {
    let money_before = world.total_money();
    let seller_indices: Vec<usize> = (0..world.sellers.len()).collect();
    let bench_outcomes: Vec<BenchOutcome> = world.run_benchmark_flows(&seller_indices);

    let mut trades = Vec::new();
    let pairs: Vec<(usize, usize)> = (0..world.buyers.len())
        .filter(|b| *b < world.sellers.len())
        .map(|b| (b, b))
        .collect();
    for (seller_idx, buyer_idx) in pairs {
        let outcome = bench_outcomes[seller_idx].clone();
        if outcome.published && !outcome.sale_blocked && outcome.price.is_some() {
            let trade: ExchangeOutcome =
                world.run_exchange_flow(seller_idx, buyer_idx, ExchangeParams::default());
            trades.push(MarketTrade {
                seller: world.sellers[seller_idx].name.clone(),
                buyer: world.buyers[buyer_idx].name.clone(),
                claimed: trade.claimed,
                refunded: trade.refunded,
                buyer_recovered_model: trade.buyer_recovered_model,
            });
        }
    }

    let money_after = world.total_money();
    let outcome = MarketOutcome {
        bench: bench_outcomes
            .iter()
            .zip(&world.sellers)
            .map(|(b, s)| MarketBench {
                seller: s.name.clone(),
                published: b.published,
                price: b.price,
                sale_blocked: b.sale_blocked,
                abort: b.abort.clone(),
            })
            .collect(),
        trades,
        money_before,
        money_after,
        transcript_digest: world.transcript.digest(),
    };
    (world, outcome)
}
