//! Two-stage mixture planning: category proportions, token budgets,
//! largest-remainder allocation, seeded shard draws, utilization reporting,
//! and the warmup-cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::lang::LanguageTag;
use crate::rng::SplitMix64;
use crate::shard::ShardManifest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use xxhash_rust::xxh3::xxh3_64;

pub const BILLION: u64 = 1_000_000_000;

/// Mixture categories: English, Chinese, the other high-resource
/// languages, the low-resource group, and the three curated sources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    En,
    Zh,
    HrOther,
    Lr,
    Parallel,
    Knowledge,
    Synthetic,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::En,
        Category::Zh,
        Category::HrOther,
        Category::Lr,
        Category::Parallel,
        Category::Knowledge,
        Category::Synthetic,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Category::En => "en",
            Category::Zh => "zh",
            Category::HrOther => "hr_other",
            Category::Lr => "lr",
            Category::Parallel => "parallel",
            Category::Knowledge => "knowledge",
            Category::Synthetic => "synthetic",
        }
    }

    /// Languages whose web data feeds this category; empty for the curated
    /// sources.
    pub fn languages(self) -> Vec<LanguageTag> {
        match self {
            Category::En => vec![LanguageTag::En],
            Category::Zh => vec![LanguageTag::Zh],
            Category::HrOther => LanguageTag::high_resource()
                .filter(|l| !matches!(l, LanguageTag::En | LanguageTag::Zh))
                .collect(),
            Category::Lr => LanguageTag::low_resource().collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    I,
    II,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::I => f.write_str("I"),
            Stage::II => f.write_str("II"),
        }
    }
}

/// Per-category proportions for one stage; must sum to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub stage: Stage,
    pub proportions: BTreeMap<Category, f64>,
}

impl MixtureSpec {
    pub fn new(stage: Stage, proportions: BTreeMap<Category, f64>) -> Result<Self> {
        let spec = Self { stage, proportions };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let mut sum = 0.0;
        for (cat, &p) in &self.proportions {
            if !(0.0..=1.0).contains(&p) || !p.is_finite() {
                return Err(Error::InvalidParams(format!(
                    "proportion for {} is {p}",
                    cat.code()
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParams(format!(
                "proportions sum to {sum}, expected 1.0"
            )));
        }
        Ok(())
    }

    fn of(stage: Stage, values: [f64; 7]) -> Self {
        let proportions = Category::ALL.into_iter().zip(values).collect();
        Self { stage, proportions }
    }

    /// Stage-I default mixture: 32/17/30/9/6/5/1.
    pub fn stage_i_default() -> Self {
        Self::of(Stage::I, [0.32, 0.17, 0.30, 0.09, 0.06, 0.05, 0.01])
    }

    /// Stage-II default mixture: 28/15/26/15/8/6/2.
    pub fn stage_ii_default() -> Self {
        Self::of(Stage::II, [0.28, 0.15, 0.26, 0.15, 0.08, 0.06, 0.02])
    }
}

/// Token budget and learning-rate envelope for one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBudget {
    pub stage: Stage,
    pub token_budget: u64,
    pub max_lr: f64,
    /// Final LR as a fraction of the max (cosine decay target).
    pub end_lr_fraction: f64,
    pub warmup_tokens: u64,
}

impl StageBudget {
    pub fn new(
        stage: Stage,
        token_budget: u64,
        max_lr: f64,
        end_lr_fraction: f64,
        warmup_tokens: u64,
    ) -> Result<Self> {
        if warmup_tokens >= token_budget {
            return Err(Error::InvalidParams(format!(
                "warmup {warmup_tokens} must be below the budget {token_budget}"
            )));
        }
        if max_lr <= 0.0 || !(0.0..=1.0).contains(&end_lr_fraction) {
            return Err(Error::InvalidParams("bad learning-rate envelope".into()));
        }
        Ok(Self {
            stage,
            token_budget,
            max_lr,
            end_lr_fraction,
            warmup_tokens,
        })
    }

    /// Stage-I: 160B tokens, peak 1e-5, 10B warmup, decay to 10%.
    pub fn stage_i_default() -> Self {
        Self::new(Stage::I, 160 * BILLION, 1e-5, 0.10, 10 * BILLION).unwrap()
    }

    /// Stage-II: 140B tokens, peak 6e-6, 10B warmup, decay to 10%.
    pub fn stage_ii_default() -> Self {
        Self::new(Stage::II, 140 * BILLION, 6e-6, 0.10, 10 * BILLION).unwrap()
    }
}

/// One shard pull in a draw list; `token_take` below the shard's total
/// marks partial consumption at that offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardDraw {
    pub category: Category,
    pub shard_id: String,
    pub path: String,
    pub token_take: u64,
    pub shard_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub stage: Stage,
    pub token_budget: u64,
    pub allocations: BTreeMap<Category, u64>,
    pub draws: Vec<ShardDraw>,
    pub tokenizer_id: String,
    pub seed: u64,
}

/// Integer apportionment by largest remainder: allocations sum exactly to
/// the budget and each sits within one token of proportion x budget.
pub fn allocate(spec: &MixtureSpec, budget: &StageBudget) -> Result<MixturePlan> {
    spec.validate()?;
    let total = budget.token_budget;
    let mut floors: BTreeMap<Category, u64> = BTreeMap::new();
    let mut remainders: Vec<(Category, f64)> = Vec::new();
    let mut assigned: u64 = 0;
    for (&cat, &p) in &spec.proportions {
        let ideal = p * total as f64;
        let floor = ideal.floor() as u64;
        floors.insert(cat, floor);
        assigned += floor;
        remainders.push((cat, ideal - floor as f64));
    }
    let mut leftover = total - assigned;
    // Largest fractional part first; ties resolve in category order.
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (cat, _) in remainders {
        if leftover == 0 {
            break;
        }
        *floors.get_mut(&cat).unwrap() += 1;
        leftover -= 1;
    }
    Ok(MixturePlan {
        stage: spec.stage,
        token_budget: total,
        allocations: floors,
        draws: Vec::new(),
        tokenizer_id: String::new(),
        seed: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShortfallPolicy {
    ErrorOnShortfall,
    Rescale,
}

/// Draw shards per category in seeded order until each allocation is met.
/// Under `Rescale`, categories short on inventory are capped and the
/// residual budget is re-spread over the rest by their original
/// proportions; totals still sum to the budget.
pub fn sample_shards(
    plan: &mut MixturePlan,
    spec: &MixtureSpec,
    inventory: &BTreeMap<Category, Vec<ShardManifest>>,
    seed: u64,
    policy: ShortfallPolicy,
) -> Result<()> {
    let empty: Vec<ShardManifest> = Vec::new();
    let capacity = |cat: Category| -> u64 {
        inventory
            .get(&cat)
            .unwrap_or(&empty)
            .iter()
            .map(|m| m.token_total)
            .sum()
    };

    // Resolve final per-category targets under the shortfall policy.
    let mut targets = plan.allocations.clone();
    match policy {
        ShortfallPolicy::ErrorOnShortfall => {
            for (&cat, &want) in &targets {
                let have = capacity(cat);
                if have < want {
                    return Err(Error::Shortfall {
                        category: cat.code().to_string(),
                        deficit: want - have,
                    });
                }
            }
        }
        ShortfallPolicy::Rescale => {
            let mut capped: BTreeMap<Category, u64> = BTreeMap::new();
            loop {
                // Redistribute the budget left after caps over uncapped
                // categories, proportional to their original shares.
                let residual_budget = plan.token_budget - capped.values().sum::<u64>();
                let free: Vec<Category> = plan
                    .allocations
                    .keys()
                    .copied()
                    .filter(|c| !capped.contains_key(c))
                    .collect();
                if free.is_empty() {
                    if residual_budget > 0 {
                        return Err(Error::Shortfall {
                            category: "all".into(),
                            deficit: residual_budget,
                        });
                    }
                    break;
                }
                let share_sum: f64 = free.iter().map(|c| spec.proportions[c]).sum();
                if share_sum <= 0.0 {
                    return Err(Error::Shortfall {
                        category: "all".into(),
                        deficit: residual_budget,
                    });
                }
                let mut floors: BTreeMap<Category, u64> = BTreeMap::new();
                let mut remainders: Vec<(Category, f64)> = Vec::new();
                let mut assigned = 0u64;
                for &cat in &free {
                    let ideal = spec.proportions[&cat] / share_sum * residual_budget as f64;
                    let fl = ideal.floor() as u64;
                    floors.insert(cat, fl);
                    assigned += fl;
                    remainders.push((cat, ideal - fl as f64));
                }
                remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                let mut leftover = residual_budget - assigned;
                for (cat, _) in remainders {
                    if leftover == 0 {
                        break;
                    }
                    *floors.get_mut(&cat).unwrap() += 1;
                    leftover -= 1;
                }
                // Cap any category whose reallocated target exceeds inventory
                // and iterate; otherwise we are done.
                let mut new_caps = false;
                for (&cat, &want) in &floors {
                    let have = capacity(cat);
                    if want > have {
                        capped.insert(cat, have);
                        new_caps = true;
                    }
                }
                if !new_caps {
                    for (cat, want) in floors {
                        targets.insert(cat, want);
                    }
                    for (&cat, &have) in &capped {
                        targets.insert(cat, have);
                    }
                    break;
                }
            }
        }
    }
    plan.allocations = targets.clone();

    // Seeded draw order per category, then consume until the target is met.
    let mut draws = Vec::new();
    for (&cat, &want) in &targets {
        if want == 0 {
            continue;
        }
        let mut shards: Vec<&ShardManifest> = inventory.get(&cat).unwrap_or(&empty).iter().collect();
        shards.sort_by(|a, b| a.shard_id.cmp(&b.shard_id));
        let mut rng = SplitMix64::new(seed ^ xxh3_64(cat.code().as_bytes()));
        rng.shuffle(&mut shards);
        let mut remaining = want;
        for m in shards {
            if remaining == 0 {
                break;
            }
            let take = remaining.min(m.token_total);
            if take == 0 {
                continue;
            }
            draws.push(ShardDraw {
                category: cat,
                shard_id: m.shard_id.clone(),
                path: m.path.clone(),
                token_take: take,
                shard_total: m.token_total,
            });
            remaining -= take;
        }
        if remaining > 0 {
            return Err(Error::Shortfall {
                category: cat.code().to_string(),
                deficit: remaining,
            });
        }
    }
    plan.draws = draws;
    plan.seed = seed;
    Ok(())
}

/// Rate with one decimal, rounded half-up, computed on exact integer
/// operands: floor((1000 * used / total) + 1/2) in tenths of a percent.
pub fn rate_tenths(used: u64, total: u64) -> u64 {
    if total == 0 {
        return 0;
    }
    ((2000u128 * used as u128 + total as u128) / (2 * total as u128)) as u64
}

pub fn format_tenths(tenths: u64) -> String {
    format!("{}.{}", tenths / 10, tenths % 10)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilizationRow {
    pub source: String,
    pub total_tokens: u64,
    pub used_tokens: u64,
    /// Percent in tenths: 59 means 5.9%.
    pub rate_tenths: u64,
}

impl UtilizationRow {
    pub fn rate_percent(&self) -> f64 {
        self.rate_tenths as f64 / 10.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtilizationReport {
    pub rows: Vec<UtilizationRow>,
    pub overall: UtilizationRow,
}

impl UtilizationReport {
    /// Build from (source, total, used) triples; the overall row divides the
    /// exact sums, never the rounded rates.
    pub fn from_counts(counts: Vec<(String, u64, u64)>) -> Self {
        let mut rows = Vec::with_capacity(counts.len());
        let (mut total, mut used) = (0u64, 0u64);
        for (source, t, u) in counts {
            total += t;
            used += u;
            rows.push(UtilizationRow {
                source,
                total_tokens: t,
                used_tokens: u,
                rate_tenths: rate_tenths(u, t),
            });
        }
        UtilizationReport {
            rows,
            overall: UtilizationRow {
                source: "total".into(),
                total_tokens: total,
                used_tokens: used,
                rate_tenths: rate_tenths(used, total),
            },
        }
    }
}

/// Per-category utilization of an inventory by a sampled plan.
pub fn utilization_report(
    inventory: &BTreeMap<Category, Vec<ShardManifest>>,
    plan: &MixturePlan,
) -> UtilizationReport {
    let mut used_by_cat: BTreeMap<Category, u64> = BTreeMap::new();
    for draw in &plan.draws {
        *used_by_cat.entry(draw.category).or_insert(0) += draw.token_take;
    }
    let mut counts = Vec::new();
    for cat in Category::ALL {
        let total: u64 = inventory
            .get(&cat)
            .map(|ms| ms.iter().map(|m| m.token_total).sum())
            .unwrap_or(0);
        let used = used_by_cat.get(&cat).copied().unwrap_or(0);
        if total == 0 && used == 0 {
            continue;
        }
        counts.push((cat.code().to_string(), total, used));
    }
    UtilizationReport::from_counts(counts)
}

/// Learning rate after `t` consumed tokens: linear 0 -> max over the warmup
/// window, then cosine decay from max to `end_lr_fraction * max`.
/// Continuous at the warmup boundary.
pub fn lr_schedule(budget: &StageBudget, t: u64) -> Result<f64> {
    if t > budget.token_budget {
        return Err(Error::TokensOutOfRange {
            t,
            budget: budget.token_budget,
        });
    }
    let w = budget.warmup_tokens;
    if t <= w {
        if w == 0 {
            return Ok(budget.max_lr);
        }
        return Ok(budget.max_lr * t as f64 / w as f64);
    }
    let end = budget.end_lr_fraction * budget.max_lr;
    let progress = (t - w) as f64 / (budget.token_budget - w) as f64;
    Ok(end + (budget.max_lr - end) / 2.0 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// Optimizer constants carried through to the emitted config as metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            adam_beta1: 0.9,
            adam_beta2: 0.95,
            weight_decay: 0.1,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub budget: StageBudget,
    pub plan: MixturePlan,
    /// (tokens consumed, learning rate) samples at the requested stride.
    pub lr_samples: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub stages: Vec<StageConfig>,
    pub optimizer: OptimizerSettings,
    pub total_tokens: u64,
}

/// Emit the machine-readable training config for a list of (plan, budget)
/// stages, sampling each LR schedule every `lr_stride` tokens.
pub fn emit_training_config(
    stages: Vec<(MixturePlan, StageBudget)>,
    lr_stride: u64,
) -> Result<TrainingConfig> {
    if stages.is_empty() {
        return Err(Error::MissingStage("no stages supplied".into()));
    }
    if lr_stride == 0 {
        return Err(Error::InvalidParams("lr_stride must be > 0".into()));
    }
    let mut out = Vec::with_capacity(stages.len());
    let mut total_tokens = 0u64;
    for (plan, budget) in stages {
        if plan.stage != budget.stage {
            return Err(Error::MissingStage(format!(
                "plan stage {} does not match budget stage {}",
                plan.stage, budget.stage
            )));
        }
        total_tokens += budget.token_budget;
        let mut lr_samples = Vec::new();
        let mut t = 0u64;
        loop {
            lr_samples.push((t, lr_schedule(&budget, t)?));
            if t >= budget.token_budget {
                break;
            }
            t = (t + lr_stride).min(budget.token_budget);
        }
        out.push(StageConfig {
            budget,
            plan,
            lr_samples,
        });
    }
    Ok(TrainingConfig {
        stages: out,
        optimizer: OptimizerSettings::default(),
        total_tokens,
    })
}

/// Parse a "160B"-style suffixed token count (K/M/B/T, or a bare integer).
pub fn parse_token_count(s: &str) -> Result<u64> {
    let s = s.trim();
    let (digits, mult) = match s.chars().last() {
        Some('K' | 'k') => (&s[..s.len() - 1], 1_000u64),
        Some('M' | 'm') => (&s[..s.len() - 1], 1_000_000),
        Some('B' | 'b') => (&s[..s.len() - 1], BILLION),
        Some('T' | 't') => (&s[..s.len() - 1], 1_000_000_000_000),
        _ => (s, 1),
    };
    let value: f64 = digits
        .parse()
        .map_err(|_| Error::InvalidParams(format!("unparseable token count `{s}`")))?;
    if value < 0.0 {
        return Err(Error::InvalidParams(format!("negative token count `{s}`")));
    }
    Ok((value * mult as f64).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_i_english_allocation_is_51_2b() {
        let plan = allocate(&MixtureSpec::stage_i_default(), &StageBudget::stage_i_default())
            .unwrap();
        // 0.32 x 160B worked out by hand.
        assert_eq!(plan.allocations[&Category::En], 51_200_000_000);
        assert_eq!(plan.allocations.values().sum::<u64>(), 160 * BILLION);
    }

    #[test]
    fn largest_remainder_on_budget_ten() {
        let spec = MixtureSpec::stage_i_default();
        let budget = StageBudget::new(Stage::I, 10, 1e-5, 0.1, 1).unwrap();
        let plan = allocate(&spec, &budget).unwrap();
        let got: Vec<u64> = Category::ALL
            .iter()
            .map(|c| plan.allocations[c])
            .collect();
        // Hand-applied largest remainder over (3.2, 1.7, 3.0, 0.9, 0.6, 0.5, 0.1).
        assert_eq!(got, vec![3, 2, 3, 1, 1, 0, 0]);
    }

    #[test]
    fn single_category_takes_whole_budget() {
        let mut proportions = BTreeMap::new();
        proportions.insert(Category::Knowledge, 1.0);
        let spec = MixtureSpec::new(Stage::II, proportions).unwrap();
        let budget = StageBudget::new(Stage::II, 12_345, 1e-5, 0.1, 1).unwrap();
        let plan = allocate(&spec, &budget).unwrap();
        assert_eq!(plan.allocations[&Category::Knowledge], 12_345);
    }

    #[test]
    fn invalid_proportions_rejected() {
        let mut proportions = BTreeMap::new();
        proportions.insert(Category::En, 0.6);
        proportions.insert(Category::Zh, 0.6);
        assert!(MixtureSpec::new(Stage::I, proportions).is_err());
    }

    fn manifest(cat_hint: &str, id: usize, tokens: u64) -> ShardManifest {
        ShardManifest {
            shard_id: format!("{cat_hint}-{id:04}"),
            path: format!("{cat_hint}-{id:04}.jsonl"),
            record_count: 1,
            token_total: tokens,
            tokenizer_id: "default".into(),
            lang_histogram: BTreeMap::new(),
            stage_fingerprint: "f".into(),
        }
    }

    #[test]
    fn exact_inventory_fully_consumed() {
        let mut proportions = BTreeMap::new();
        proportions.insert(Category::En, 0.5);
        proportions.insert(Category::Lr, 0.5);
        let spec = MixtureSpec::new(Stage::I, proportions).unwrap();
        let budget = StageBudget::new(Stage::I, 1000, 1e-5, 0.1, 10).unwrap();
        let mut plan = allocate(&spec, &budget).unwrap();
        let mut inventory = BTreeMap::new();
        inventory.insert(Category::En, vec![manifest("en", 0, 300), manifest("en", 1, 200)]);
        inventory.insert(Category::Lr, vec![manifest("lr", 0, 500)]);
        sample_shards(&mut plan, &spec, &inventory, 9, ShortfallPolicy::ErrorOnShortfall).unwrap();
        let report = utilization_report(&inventory, &plan);
        for row in &report.rows {
            assert_eq!(row.rate_tenths, 1000, "row {row:?}");
        }
        assert_eq!(report.overall.rate_tenths, 1000);
    }

    #[test]
    fn zero_inventory_category_errors() {
        let spec = MixtureSpec::stage_i_default();
        let budget = StageBudget::new(Stage::I, 1000, 1e-5, 0.1, 10).unwrap();
        let mut plan = allocate(&spec, &budget).unwrap();
        let inventory = BTreeMap::new();
        match sample_shards(&mut plan, &spec, &inventory, 1, ShortfallPolicy::ErrorOnShortfall) {
            Err(Error::Shortfall { category, deficit }) => {
                assert_eq!(category, "en");
                assert_eq!(deficit, 320);
            }
            other => panic!("expected shortfall, got {other:?}"),
        }
    }

    /// Hand-computed rescale: budget 100 at (.5, .3, .2); the first category
    /// holds only 25 of its ideal 50, so the residual 75 re-spreads over the
    /// others at .3/.2 -> 45 and 30.
    #[test]
    fn rescale_redistributes_residual_budget() {
        let mut proportions = BTreeMap::new();
        proportions.insert(Category::En, 0.5);
        proportions.insert(Category::Zh, 0.3);
        proportions.insert(Category::Lr, 0.2);
        let spec = MixtureSpec::new(Stage::I, proportions).unwrap();
        let budget = StageBudget::new(Stage::I, 100, 1e-5, 0.1, 10).unwrap();
        let mut plan = allocate(&spec, &budget).unwrap();
        let mut inventory = BTreeMap::new();
        inventory.insert(Category::En, vec![manifest("en", 0, 25)]);
        inventory.insert(Category::Zh, vec![manifest("zh", 0, 1000)]);
        inventory.insert(Category::Lr, vec![manifest("lr", 0, 1000)]);
        sample_shards(&mut plan, &spec, &inventory, 4, ShortfallPolicy::Rescale).unwrap();
        assert_eq!(plan.allocations[&Category::En], 25);
        assert_eq!(plan.allocations[&Category::Zh], 45);
        assert_eq!(plan.allocations[&Category::Lr], 30);
        assert_eq!(plan.allocations.values().sum::<u64>(), 100);
    }

    #[test]
    fn draws_are_deterministic_per_seed() {
        let mut proportions = BTreeMap::new();
        proportions.insert(Category::En, 1.0);
        let spec = MixtureSpec::new(Stage::I, proportions).unwrap();
        let budget = StageBudget::new(Stage::I, 500, 1e-5, 0.1, 10).unwrap();
        let mut inventory = BTreeMap::new();
        inventory.insert(
            Category::En,
            (0..10).map(|i| manifest("en", i, 100)).collect::<Vec<_>>(),
        );
        let mut a = allocate(&spec, &budget).unwrap();
        let mut b = allocate(&spec, &budget).unwrap();
        sample_shards(&mut a, &spec, &inventory, 42, ShortfallPolicy::ErrorOnShortfall).unwrap();
        sample_shards(&mut b, &spec, &inventory, 42, ShortfallPolicy::ErrorOnShortfall).unwrap();
        assert_eq!(a.draws, b.draws);
        // Partial consumption recorded on the last drawn shard.
        assert_eq!(a.draws.iter().map(|d| d.token_take).sum::<u64>(), 500);
        assert!(a.draws.last().unwrap().token_take <= 100);
    }

    #[test]
    fn utilization_rounding_is_half_up() {
        // 1.9 / 2.9 = 65.51..% -> 65.5%, even though the published table
        // printed 64.4% for these operands.
        assert_eq!(rate_tenths(19, 29), 655);
        assert_eq!(format_tenths(rate_tenths(19, 29)), "65.5");
        // Exact half rounds up: 0.25 -> 25.0%... and 1/8 -> 12.5%.
        assert_eq!(rate_tenths(1, 8), 125);
        // Half-up at the tenths boundary: 1/16 = 6.25% -> 6.3%.
        assert_eq!(rate_tenths(1, 16), 63);
    }

    #[test]
    fn lr_schedule_hits_published_endpoints() {
        let s1 = StageBudget::stage_i_default();
        assert_eq!(lr_schedule(&s1, 0).unwrap(), 0.0);
        assert!((lr_schedule(&s1, 10 * BILLION).unwrap() - 1e-5).abs() < 1e-17);
        assert!((lr_schedule(&s1, 160 * BILLION).unwrap() - 1e-6).abs() < 1e-18);

        let s2 = StageBudget::stage_ii_default();
        assert!((lr_schedule(&s2, 10 * BILLION).unwrap() - 6e-6).abs() < 1e-17);
        assert!((lr_schedule(&s2, 140 * BILLION).unwrap() - 6e-7).abs() < 1e-18);
    }

    #[test]
    fn lr_schedule_midpoint_from_cosine_formula() {
        // Stage-I at t = 85B: decay progress 0.5, cos = 0, so
        // lr = end + (max - end) / 2 = 1e-6 + 4.5e-6 = 5.5e-6.
        let s1 = StageBudget::stage_i_default();
        let lr = lr_schedule(&s1, 85 * BILLION).unwrap();
        assert!((lr - 5.5e-6).abs() < 1e-15, "got {lr}");
    }

    #[test]
    fn lr_schedule_is_continuous_at_warmup() {
        let b = StageBudget::stage_i_default();
        let w = b.warmup_tokens;
        let before = lr_schedule(&b, w).unwrap();
        let after = lr_schedule(&b, w + 1).unwrap();
        assert!((before - b.max_lr).abs() < 1e-20);
        assert!(after <= before);
        assert!((before - after) < 1e-12);
    }

    #[test]
    fn lr_out_of_range_errors() {
        let b = StageBudget::stage_i_default();
        assert!(matches!(
            lr_schedule(&b, b.token_budget + 1),
            Err(Error::TokensOutOfRange { .. })
        ));
    }

    #[test]
    fn emitted_config_totals_300b_and_round_trips() {
        let spec_i = MixtureSpec::stage_i_default();
        let spec_ii = MixtureSpec::stage_ii_default();
        let b_i = StageBudget::stage_i_default();
        let b_ii = StageBudget::stage_ii_default();
        let plan_i = allocate(&spec_i, &b_i).unwrap();
        let plan_ii = allocate(&spec_ii, &b_ii).unwrap();
        let config =
            emit_training_config(vec![(plan_i, b_i), (plan_ii, b_ii)], 10 * BILLION).unwrap();
        assert_eq!(config.total_tokens, 300 * BILLION);
        assert_eq!(config.optimizer, OptimizerSettings::default());

        // Samples are non-increasing after each stage's warmup.
        for stage in &config.stages {
            let w = stage.budget.warmup_tokens;
            let mut prev: Option<f64> = None;
            for &(t, lr) in stage.lr_samples.iter().filter(|(t, _)| *t >= w) {
                if let Some(p) = prev {
                    assert!(lr <= p, "lr increased at t={t}");
                }
                prev = Some(lr);
            }
        }

        let json = serde_json::to_string(&config).unwrap();
        let back: TrainingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn missing_stage_rejected() {
        assert!(matches!(
            emit_training_config(vec![], BILLION),
            Err(Error::MissingStage(_))
        ));
        let plan = allocate(&MixtureSpec::stage_i_default(), &StageBudget::stage_i_default())
            .unwrap();
        assert!(emit_training_config(
            vec![(plan, StageBudget::stage_ii_default())],
            BILLION
        )
        .is_err());
    }

    #[test]
    fn parses_suffixed_token_counts() {
        assert_eq!(parse_token_count("160B").unwrap(), 160 * BILLION);
        assert_eq!(parse_token_count("10b").unwrap(), 10 * BILLION);
        assert_eq!(parse_token_count("1.5B").unwrap(), 1_500_000_000);
        assert_eq!(parse_token_count("250").unwrap(), 250);
        assert_eq!(parse_token_count("2K").unwrap(), 2000);
        assert!(parse_token_count("abc").is_err());
    }

    /// The two default stages, combined, reproduce the published per-source
    /// used-token column: en 90.4B, zh 48.2B, parallel 20.8B, knowledge
    /// 16.4B, synthetic 4.4B.
    #[test]
    fn combined_stage_allocations_match_published_usage() {
        let p1 = allocate(&MixtureSpec::stage_i_default(), &StageBudget::stage_i_default())
            .unwrap();
        let p2 = allocate(&MixtureSpec::stage_ii_default(), &StageBudget::stage_ii_default())
            .unwrap();
        let combined = |c: Category| p1.allocations[&c] + p2.allocations[&c];
        assert_eq!(combined(Category::En), 90_400_000_000);
        assert_eq!(combined(Category::Zh), 48_200_000_000);
        assert_eq!(combined(Category::Parallel), 20_800_000_000);
        assert_eq!(combined(Category::Knowledge), 16_400_000_000);
        assert_eq!(combined(Category::Synthetic), 4_400_000_000);
    }
}
