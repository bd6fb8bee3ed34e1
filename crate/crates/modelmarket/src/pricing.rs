//! Quality-based model pricing as a bi-level program: the upper level
//! picks take-it-or-leave-it prices maximizing seller revenue, the lower
//! level lets each buyer maximize their own utility at those prices. A
//! genetic algorithm searches prices (fitness = revenue under exact buyer
//! best response); an exhaustive grid solver serves as the oracle on small
//! instances. Solved instances are fitted into a monotone price curve the
//! benchmarking contract reads when publishing results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PricingError {
    #[error("instance must have at least one model and one buyer")]
    EmptyInstance,
    #[error("quality or cost out of range for model {0}")]
    BadModel(usize),
    #[error("marginal willingness out of range for buyer {0}")]
    BadBuyer(usize),
    #[error("quality weights must sum to 1")]
    BadWeights,
    #[error("cannot fit a price curve without sold models")]
    NoCurvePoints,
}

/// A model on offer: its two quality scores and the seller's marginal cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelOffer {
    pub q_mce: f64,
    pub q_mfp: f64,
    pub marginal_cost: f64,
}

/// A buyer: marginal willingness for each quality dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub l1: f64,
    pub l2: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingInstance {
    pub models: Vec<ModelOffer>,
    pub buyers: Vec<BuyerProfile>,
    /// Relative weights of q_mCE and q_mFP; must sum to 1.
    pub w1: f64,
    pub w2: f64,
}

impl PricingInstance {
    pub fn validate(&self) -> Result<(), PricingError> {
        if self.models.is_empty() || self.buyers.is_empty() {
            return Err(PricingError::EmptyInstance);
        }
        if (self.w1 + self.w2 - 1.0).abs() > 1e-9 {
            return Err(PricingError::BadWeights);
        }
        for (i, m) in self.models.iter().enumerate() {
            let ok = m.q_mce > 0.0
                && m.q_mce <= 1.0
                && m.q_mfp > 0.0
                && m.q_mfp <= 1.0
                && m.marginal_cost > 0.0;
            if !ok {
                return Err(PricingError::BadModel(i));
            }
        }
        for (j, b) in self.buyers.iter().enumerate() {
            if !(b.l1 > 0.0 && b.l1 < 1.0 && b.l2 > 0.0 && b.l2 < 1.0) {
                return Err(PricingError::BadBuyer(j));
            }
        }
        Ok(())
    }

    /// Scalar model quality `q = (w1 q_mCE + w2 q_mFP) / 2`.
    pub fn quality(&self, i: usize) -> f64 {
        let m = &self.models[i];
        0.5 * (self.w1 * m.q_mce + self.w2 * m.q_mfp)
    }

    /// Generation cost `C_i = c_i * q_i`, always positive.
    pub fn cost(&self, i: usize) -> f64 {
        self.models[i].marginal_cost * self.quality(i)
    }

    /// Buyer j's willingness to pay for model i:
    /// `W_ij = (l1_j q_mCE_i + l2_j q_mFP_i) / 2`.
    pub fn willingness(&self, i: usize, j: usize) -> f64 {
        let m = &self.models[i];
        let b = &self.buyers[j];
        0.5 * (b.l1 * m.q_mce + b.l2 * m.q_mfp)
    }
}

/// A price vector together with the buyers' best response to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PricingSolution {
    pub prices: Vec<f64>,
    /// Per buyer: the model they buy, if any. One model per buyer.
    pub assignment: Vec<Option<usize>>,
    /// Per model: whether it sold to at least one buyer.
    pub sold: Vec<bool>,
    pub revenue: f64,
    pub utilities: Vec<f64>,
}

/// Each buyer independently maximizes surplus `W_ij - p_i` over the models
/// they can afford (`W_ij >= p_i`), buying nothing when none qualifies.
/// Ties break to the lowest model index.
pub fn best_response(instance: &PricingInstance, prices: &[f64]) -> Vec<Option<usize>> {
    let mut assignment = Vec::with_capacity(instance.buyers.len());
    for j in 0..instance.buyers.len() {
        let mut choice: Option<usize> = None;
        let mut best_surplus = f64::NEG_INFINITY;
        for (i, price) in prices.iter().enumerate() {
            let w = instance.willingness(i, j);
            if w < *price {
                continue;
            }
            let surplus = w - price;
            if surplus > best_surplus {
                best_surplus = surplus;
                choice = Some(i);
            }
        }
        assignment.push(choice);
    }
    assignment
}

/// Seller revenue `R = sum_i,j p_i x_ij - sum_i C_i y_i`, with `y_i = 1`
/// exactly when someone bought model i.
pub fn revenue(instance: &PricingInstance, prices: &[f64], assignment: &[Option<usize>]) -> f64 {
    let mut sold = vec![false; instance.models.len()];
    let mut income = 0.0;
    for chosen in assignment.iter().flatten() {
        income += prices[*chosen];
        sold[*chosen] = true;
    }
    let outlay: f64 = sold
        .iter()
        .enumerate()
        .filter(|(_, s)| **s)
        .map(|(i, _)| instance.cost(i))
        .sum();
    income - outlay
}

/// Buyer j's utility under the solution: surplus of the model they bought.
pub fn utility(instance: &PricingInstance, prices: &[f64], assignment: &[Option<usize>], j: usize) -> f64 {
    match assignment[j] {
        Some(i) => instance.willingness(i, j) - prices[i],
        None => 0.0,
    }
}

fn finish_solution(instance: &PricingInstance, prices: Vec<f64>) -> PricingSolution {
    let assignment = best_response(instance, &prices);
    let mut sold = vec![false; instance.models.len()];
    for chosen in assignment.iter().flatten() {
        sold[*chosen] = true;
    }
    let rev = revenue(instance, &prices, &assignment);
    let utilities = (0..instance.buyers.len())
        .map(|j| utility(instance, &prices, &assignment, j))
        .collect();
    PricingSolution {
        prices,
        assignment,
        sold,
        revenue: rev,
        utilities,
    }
}

/// Margin that keeps every candidate price strictly above its cost.
const PRICE_MARGIN: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaParams {
    pub population: usize,
    pub iterations: usize,
    pub tournament: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    /// Mutation sigma as a fraction of each gene's price range.
    pub mutation_sigma: f64,
    pub elitism: usize,
}

impl Default for GaParams {
    fn default() -> Self {
        GaParams {
            population: 50,
            iterations: 500,
            tournament: 3,
            crossover_rate: 0.8,
            mutation_rate: 0.05,
            mutation_sigma: 0.05,
            elitism: 2,
        }
    }
}

/// Per-model search interval for prices: `(C_i, hi_i]` where `hi_i` sits
/// just above the highest willingness, so a gene can price a model out of
/// the market entirely.
fn price_bounds(instance: &PricingInstance) -> Vec<(f64, f64)> {
    (0..instance.models.len())
        .map(|i| {
            let lo = instance.cost(i) + PRICE_MARGIN;
            let max_w = (0..instance.buyers.len())
                .map(|j| instance.willingness(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            let hi = (max_w + 2.0 * PRICE_MARGIN).max(lo);
            (lo, hi)
        })
        .collect()
}

/// Genetic-algorithm solver. Chromosome = price vector; fitness = revenue
/// under exact buyer best response. Deterministic for a given seed.
pub fn ga_solve(instance: &PricingInstance, params: &GaParams, seed: u64) -> Result<PricingSolution, PricingError> {
    instance.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bounds = price_bounds(instance);
    let n = bounds.len();

    let sample = |rng: &mut ChaCha20Rng| -> Vec<f64> {
        bounds
            .iter()
            .map(|(lo, hi)| {
                if hi <= lo {
                    *lo
                } else {
                    rng.gen_range(*lo..=*hi)
                }
            })
            .collect()
    };

    let fitness = |genes: &[f64]| -> f64 {
        let assignment = best_response(instance, genes);
        revenue(instance, genes, &assignment)
    };

    let mut population: Vec<(Vec<f64>, f64)> = (0..params.population)
        .map(|_| {
            let genes = sample(&mut rng);
            let fit = fitness(&genes);
            (genes, fit)
        })
        .collect();
    sort_population(&mut population);

    for _ in 0..params.iterations {
        let mut next: Vec<(Vec<f64>, f64)> = population
            .iter()
            .take(params.elitism.min(population.len()))
            .cloned()
            .collect();
        while next.len() < params.population {
            let a = tournament(&population, params.tournament, &mut rng);
            let b = tournament(&population, params.tournament, &mut rng);
            let mut child = if n >= 2 && rng.gen_bool(params.crossover_rate) {
                let cut = rng.gen_range(1..n);
                let mut genes = population[a].0[..cut].to_vec();
                genes.extend_from_slice(&population[b].0[cut..]);
                genes
            } else {
                population[a].0.clone()
            };
            for (gene, (lo, hi)) in child.iter_mut().zip(&bounds) {
                if rng.gen_bool(params.mutation_rate) {
                    let range = (hi - lo).max(PRICE_MARGIN);
                    *gene = (*gene + gauss(&mut rng) * params.mutation_sigma * range).clamp(*lo, *hi);
                }
            }
            let fit = fitness(&child);
            next.push((child, fit));
        }
        population = next;
        sort_population(&mut population);
    }

    Ok(finish_solution(instance, population[0].0.clone()))
}

fn sort_population(population: &mut [(Vec<f64>, f64)]) {
    population.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite fitness"));
}

fn tournament(population: &[(Vec<f64>, f64)], k: usize, rng: &mut ChaCha20Rng) -> usize {
    let mut best = rng.gen_range(0..population.len());
    for _ in 1..k {
        let idx = rng.gen_range(0..population.len());
        if population[idx].1 > population[best].1 {
            best = idx;
        }
    }
    best
}

fn gauss(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Exhaustive oracle: every model's price ranges over the grid
/// `{C_i + delta, C_i + 2 delta, ...}` up to just past the highest
/// willingness, with exact best response at each grid point. Exponential in
/// the model count; meant for instances of a few models only.
pub fn brute_force_solve(instance: &PricingInstance, delta: f64) -> Result<PricingSolution, PricingError> {
    instance.validate()?;
    let n = instance.models.len();
    let grids: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lo = instance.cost(i);
            let max_w = (0..instance.buyers.len())
                .map(|j| instance.willingness(i, j))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut grid = Vec::new();
            let mut p = lo + delta;
            while p <= max_w + delta {
                grid.push(p);
                p += delta;
            }
            if grid.is_empty() {
                grid.push(lo + delta);
            }
            grid
        })
        .collect();

    let mut best_prices: Option<Vec<f64>> = None;
    let mut best_rev = f64::NEG_INFINITY;
    let mut prices = vec![0.0; n];
    enumerate_grid(instance, &grids, 0, &mut prices, &mut best_rev, &mut best_prices);
    Ok(finish_solution(
        instance,
        best_prices.expect("at least one grid point"),
    ))
}

fn enumerate_grid(
    instance: &PricingInstance,
    grids: &[Vec<f64>],
    depth: usize,
    prices: &mut Vec<f64>,
    best_rev: &mut f64,
    best_prices: &mut Option<Vec<f64>>,
) {
    if depth == grids.len() {
        let assignment = best_response(instance, prices);
        let rev = revenue(instance, prices, &assignment);
        if rev > *best_rev {
            *best_rev = rev;
            *best_prices = Some(prices.clone());
        }
        return;
    }
    for p in &grids[depth] {
        prices[depth] = *p;
        enumerate_grid(instance, grids, depth + 1, prices, best_rev, best_prices);
    }
}

/// Monotone piecewise-linear map from scalar quality to price, fitted over
/// solved instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceCurve {
    /// Sorted by quality; prices nondecreasing.
    pub points: Vec<CurvePoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub quality: f64,
    pub price: f64,
}

/// Isotonic fit (pool adjacent violators) over the (quality, price) pairs
/// of sold models, then floored by the running maximum of the underlying
/// costs so every table point stays strictly above cost.
pub fn build_price_curve(solved: &[(PricingInstance, PricingSolution)]) -> Result<PriceCurve, PricingError> {
    let mut pairs: Vec<(f64, f64, f64)> = Vec::new(); // (q, price, cost)
    for (instance, solution) in solved {
        for (i, sold) in solution.sold.iter().enumerate() {
            if *sold {
                pairs.push((instance.quality(i), solution.prices[i], instance.cost(i)));
            }
        }
    }
    if pairs.is_empty() {
        return Err(PricingError::NoCurvePoints);
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite quality"));

    // pool adjacent violators: average prices until nondecreasing
    #[derive(Clone)]
    struct Block {
        q_sum: f64,
        p_sum: f64,
        c_max: f64,
        count: usize,
    }
    let mut blocks: Vec<Block> = Vec::new();
    for (q, p, c) in pairs {
        blocks.push(Block {
            q_sum: q,
            p_sum: p,
            c_max: c,
            count: 1,
        });
        while blocks.len() >= 2 {
            let last = blocks.len() - 1;
            let mean_last = blocks[last].p_sum / blocks[last].count as f64;
            let mean_prev = blocks[last - 1].p_sum / blocks[last - 1].count as f64;
            if mean_prev <= mean_last {
                break;
            }
            let merged = Block {
                q_sum: blocks[last - 1].q_sum + blocks[last].q_sum,
                p_sum: blocks[last - 1].p_sum + blocks[last].p_sum,
                c_max: blocks[last - 1].c_max.max(blocks[last].c_max),
                count: blocks[last - 1].count + blocks[last].count,
            };
            blocks.truncate(last - 1);
            blocks.push(merged);
        }
    }

    let mut points = Vec::with_capacity(blocks.len());
    let mut cost_floor = f64::NEG_INFINITY;
    for b in &blocks {
        cost_floor = cost_floor.max(b.c_max + PRICE_MARGIN);
        let price = (b.p_sum / b.count as f64).max(cost_floor);
        points.push(CurvePoint {
            quality: b.q_sum / b.count as f64,
            price,
        });
    }
    // the running-maximum floor keeps the sequence nondecreasing
    for w in points.windows(2) {
        debug_assert!(w[0].price <= w[1].price + 1e-12);
    }
    Ok(PriceCurve { points })
}

impl PriceCurve {
    /// Price for a quality value: linear interpolation between table
    /// points, clamped to the nearest endpoint outside the table range.
    pub fn price_for(&self, quality: f64) -> f64 {
        let pts = &self.points;
        if quality <= pts[0].quality {
            return pts[0].price;
        }
        if quality >= pts[pts.len() - 1].quality {
            return pts[pts.len() - 1].price;
        }
        for w in pts.windows(2) {
            if quality >= w[0].quality && quality <= w[1].quality {
                let span = w[1].quality - w[0].quality;
                if span <= 0.0 {
                    return w[0].price;
                }
                let t = (quality - w[0].quality) / span;
                return w[0].price + t * (w[1].price - w[0].price);
            }
        }
        pts[pts.len() - 1].price
    }
}

/// Seeded instance corpus used by tests and the price-curve bootstrap:
/// model qualities and costs plus buyer willingness drawn uniformly.
pub fn seeded_instance(seed: u64, n_models: usize, n_buyers: usize) -> PricingInstance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let models = (0..n_models)
        .map(|_| ModelOffer {
            q_mce: rng.gen_range(0.15..0.95),
            q_mfp: rng.gen_range(0.15..0.95),
            marginal_cost: rng.gen_range(0.3..1.0),
        })
        .collect();
    let buyers = (0..n_buyers)
        .map(|_| BuyerProfile {
            l1: rng.gen_range(0.05..0.95),
            l2: rng.gen_range(0.05..0.95),
        })
        .collect();
    PricingInstance {
        models,
        buyers,
        w1: 0.5,
        w2: 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(q: f64, cost: f64, l: f64) -> PricingInstance {
        PricingInstance {
            models: vec![ModelOffer {
                q_mce: q,
                q_mfp: q,
                marginal_cost: cost,
            }],
            buyers: vec![BuyerProfile { l1: l, l2: l }],
            w1: 0.5,
            w2: 0.5,
        }
    }

    #[test]
    fn revenue_and_utility_formulas() {
        let instance = single(0.8, 0.5, 0.9);
        // no sales: everything zero
        assert_eq!(revenue(&instance, &[0.9], &[None]), 0.0);
        assert_eq!(utility(&instance, &[0.9], &[None], 0), 0.0);

        // single sale at p = 0.5 with C = 0.2: R = 0.3
        let instance2 = single(0.5, 0.8, 0.9); // C = 0.8 * 0.5 * ((0.5+0.5)/2)... use quality directly
        let c = instance2.cost(0);
        let prices = vec![0.5];
        let assignment = vec![Some(0)];
        assert!((revenue(&instance2, &prices, &assignment) - (0.5 - c)).abs() < 1e-12);
    }

    #[test]
    fn buyer_buys_at_willingness_equal_to_price() {
        let instance = single(0.8, 0.25, 0.9);
        let w = instance.willingness(0, 0);
        let assignment = best_response(&instance, &[w]);
        assert_eq!(assignment, vec![Some(0)]);
        assert_eq!(utility(&instance, &[w], &assignment, 0), 0.0);
    }

    #[test]
    fn buyer_buys_nothing_when_priced_out() {
        let instance = single(0.8, 0.25, 0.2);
        let w = instance.willingness(0, 0);
        let assignment = best_response(&instance, &[w + 0.01]);
        assert_eq!(assignment, vec![None]);
    }

    #[test]
    fn equal_surplus_breaks_to_lower_index() {
        let mut instance = single(0.8, 0.25, 0.9);
        instance.models.push(instance.models[0].clone());
        let w = instance.willingness(0, 0);
        let assignment = best_response(&instance, &[w - 0.1, w - 0.1]);
        assert_eq!(assignment, vec![Some(0)]);
    }

    #[test]
    fn single_buyer_best_response_is_exhaustively_optimal() {
        // against every alternative single choice, for a few instances
        for seed in 0..10u64 {
            let instance = seeded_instance(seed, 4, 4);
            let bounds = price_bounds(&instance);
            let prices: Vec<f64> = bounds.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect();
            let assignment = best_response(&instance, &prices);
            for j in 0..instance.buyers.len() {
                let chosen_utility = utility(&instance, &prices, &assignment, j);
                for (alt, price) in prices.iter().enumerate() {
                    if instance.willingness(alt, j) >= *price {
                        let alt_utility = instance.willingness(alt, j) - price;
                        assert!(alt_utility <= chosen_utility + 1e-12);
                    }
                }
                assert!(chosen_utility >= -1e-12);
            }
        }
    }

    #[test]
    fn ga_close_to_analytic_optimum_on_one_by_one() {
        // one model, one buyer: optimal price is exactly the willingness
        let instance = single(0.8, 0.25, 0.9);
        let w = instance.willingness(0, 0);
        let c = instance.cost(0);
        let solution = ga_solve(&instance, &GaParams::default(), 7).unwrap();
        let oracle = brute_force_solve(&instance, 0.01).unwrap();
        assert!(solution.revenue >= 0.95 * oracle.revenue);
        assert!((solution.prices[0] - w).abs() < 0.02);
        assert!((solution.revenue - (w - c)).abs() < 0.02);
    }

    #[test]
    fn ga_two_by_two_fixture_within_two_percent_of_exhaustive_optimum() {
        let instance = PricingInstance {
            models: vec![
                ModelOffer {
                    q_mce: 0.7,
                    q_mfp: 0.6,
                    marginal_cost: 0.5,
                },
                ModelOffer {
                    q_mce: 0.4,
                    q_mfp: 0.5,
                    marginal_cost: 0.4,
                },
            ],
            buyers: vec![
                BuyerProfile { l1: 0.9, l2: 0.8 },
                BuyerProfile { l1: 0.5, l2: 0.6 },
            ],
            w1: 0.5,
            w2: 0.5,
        };
        let solution = ga_solve(&instance, &GaParams::default(), 42).unwrap();
        let oracle = brute_force_solve(&instance, 0.01).unwrap();
        assert!(oracle.revenue > 0.0);
        assert!(
            solution.revenue >= 0.98 * oracle.revenue,
            "GA {} vs oracle {}",
            solution.revenue,
            oracle.revenue
        );
    }

    #[test]
    fn ga_is_deterministic_per_seed() {
        let instance = seeded_instance(3, 3, 3);
        let params = GaParams {
            iterations: 60,
            ..GaParams::default()
        };
        let a = ga_solve(&instance, &params, 11).unwrap();
        let b = ga_solve(&instance, &params, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_instance_yields_zero_revenue() {
        // cost above any willingness: nothing can sell at p > C
        let instance = single(0.9, 1.0, 0.05);
        assert!(instance.cost(0) > instance.willingness(0, 0));
        let solution = ga_solve(&instance, &GaParams::default(), 5).unwrap();
        assert_eq!(solution.assignment, vec![None]);
        assert_eq!(solution.revenue, 0.0);
        assert!(solution.prices[0] > instance.cost(0));
    }

    #[test]
    fn solutions_satisfy_rationality_invariants() {
        for seed in 20..30u64 {
            let instance = seeded_instance(seed, 3, 4);
            let solution = ga_solve(
                &instance,
                &GaParams {
                    iterations: 80,
                    ..GaParams::default()
                },
                seed,
            )
            .unwrap();
            for (i, sold) in solution.sold.iter().enumerate() {
                assert!(solution.prices[i] > instance.cost(i), "price above cost");
                let bought = solution.assignment.contains(&Some(i));
                assert_eq!(*sold, bought, "sold flag tracks sales");
            }
            for (j, choice) in solution.assignment.iter().enumerate() {
                if let Some(i) = choice {
                    assert!(instance.willingness(*i, j) >= solution.prices[*i]);
                    assert!(solution.utilities[j] >= -1e-12);
                }
            }
        }
    }

    #[test]
    fn curve_is_monotone_and_above_cost() {
        let mut solved = Vec::new();
        for seed in 40..48u64 {
            let instance = seeded_instance(seed, 3, 3);
            let solution = ga_solve(
                &instance,
                &GaParams {
                    iterations: 80,
                    ..GaParams::default()
                },
                seed,
            )
            .unwrap();
            solved.push((instance, solution));
        }
        let curve = build_price_curve(&solved).unwrap();
        for w in curve.points.windows(2) {
            assert!(w[0].quality <= w[1].quality);
            assert!(w[0].price <= w[1].price + 1e-12);
        }
        // interpolation clamps outside the table
        let lo = curve.points.first().unwrap();
        let hi = curve.points.last().unwrap();
        assert_eq!(curve.price_for(lo.quality - 1.0), lo.price);
        assert_eq!(curve.price_for(hi.quality + 1.0), hi.price);
        let mid = 0.5 * (lo.quality + hi.quality);
        let p = curve.price_for(mid);
        assert!(p >= lo.price - 1e-12 && p <= hi.price + 1e-12);
    }
}
