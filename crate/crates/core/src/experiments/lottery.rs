use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{curves_csv, mean_std, run_trials, trial_seed, Artifact, ExperimentResult, TrialRecord};
use crate::array::Array;
use crate::datagen::{generate_dataset, Dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::models::{init_model, Model, ModelKind, ModelSpec};
use crate::rng::RngStream;
use crate::training::{train, TrainConfig, TrainResult};

const PERMUTE_STREAM: u64 = 0x7065_726d;
const RANDOM_MASK_STREAM: u64 = 0x726d_736b;
const REINIT_STREAM: u64 = 0x7265_696e;
const CHANCE_STREAM: u64 = 0x6368_6e63;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotteryConfig {
    pub data: GeneratorConfig,
    pub spec: ModelSpec,
    pub train: TrainConfig,
    pub prune_frac: f64,
    pub rounds: usize,
    pub n_seeds: usize,
    /// Monte-Carlo masks for the adjacency chance model.
    pub chance_samples: usize,
    /// Also train a random mask at every intermediate sparsity.
    pub random_per_round: bool,
    pub seed: u64,
}

impl Default for LotteryConfig {
    fn default() -> Self {
        LotteryConfig {
            data: GeneratorConfig::default(),
            // one wide hidden layer: every first-layer row sees the raw
            // input, and with 256 rows the adjacency count clears chance on
            // each seed rather than only on average
            spec: ModelSpec::mlp(&[256]),
            train: TrainConfig::default(),
            prune_frac: 0.2,
            rounds: 12,
            n_seeds: 3,
            chance_samples: 1000,
            random_per_round: true,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    /// Weight sparsity the round trained at.
    pub sparsity: f64,
    /// Unpruned weights per weight layer.
    pub remaining: Vec<usize>,
    pub test_acc: f64,
}

#[derive(Clone, Debug)]
pub struct LotteryTicket {
    /// Original initialization, without masks.
    pub init: Model,
    pub masks: Vec<Array>,
    /// One record per pruning round, before that round's pruning.
    pub rounds: Vec<RoundRecord>,
}

impl LotteryTicket {
    pub fn sparsity(&self) -> f64 {
        weight_sparsity(&self.init, &self.masks)
    }

    /// The ticket: original initialization under the final masks.
    pub fn model(&self) -> Result<Model> {
        let mut m = self.init.clone();
        m.set_mask(self.masks.clone())?;
        Ok(m)
    }
}

fn is_weight(name: &str) -> bool {
    name.ends_with(".weight")
}

/// Fraction of pruned entries across weight (not bias) tensors.
fn weight_sparsity(model: &Model, masks: &[Array]) -> f64 {
    let (mut total, mut kept) = (0, 0);
    for (p, m) in model.params.iter().zip(masks) {
        if is_weight(&p.name) {
            total += m.len();
            kept += m.count_nonzero();
        }
    }
    1.0 - kept as f64 / total as f64
}

fn remaining(model: &Model, masks: &[Array]) -> Vec<usize> {
    model
        .params
        .iter()
        .zip(masks)
        .filter(|(p, _)| is_weight(&p.name))
        .map(|(_, m)| m.count_nonzero())
        .collect()
}

/// Prune `frac` of the smallest-magnitude weights still unmasked in one
/// layer: `floor(frac * remaining)` of them, so the survivors number
/// `ceil((1 - frac) * remaining)`. Ties go to the lower index.
pub fn prune_layer(weights: &Array, mask: &Array, frac: f64) -> Result<Array> {
    if weights.shape() != mask.shape() {
        return Err(Error::dim("prune_layer", weights.shape(), mask.shape()));
    }
    let mut alive: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] != 0.0).collect();
    let k = (frac * alive.len() as f64 + 1e-9).floor() as usize;
    if alive.len() <= k {
        return Err(Error::Config(format!(
            "pruning leaves no weights in a layer of {} entries",
            mask.len()
        )));
    }
    let w = weights.data();
    alive.sort_by(|&a, &b| w[a].abs().total_cmp(&w[b].abs()).then(a.cmp(&b)));
    let mut out = mask.clone();
    for &i in &alive[..k] {
        out.data_mut()[i] = 0.0;
    }
    Ok(out)
}

/// Masks with the same number of ones per weight layer as `masks`, placed
/// uniformly at random. Bias masks stay all ones.
pub fn random_mask_like(model: &Model, masks: &[Array], rng: &mut RngStream) -> Vec<Array> {
    model
        .params
        .iter()
        .zip(masks)
        .map(|(p, m)| {
            if !is_weight(&p.name) {
                return Array::full(m.shape(), 1.0);
            }
            random_mask(m.shape(), m.count_nonzero(), rng)
        })
        .collect()
}

fn random_mask(shape: &[usize], ones: usize, rng: &mut RngStream) -> Array {
    let n: usize = shape.iter().product();
    let mut idx: Vec<usize> = (0..n).collect();
    // partial Fisher-Yates: the first `ones` slots are a uniform subset
    for i in 0..ones {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    let mut out = Array::zeros(shape);
    for &i in &idx[..ones] {
        out.data_mut()[i] = 1.0;
    }
    out
}

/// Iterative magnitude pruning. Each of `rounds` rounds trains the
/// original initialization under the current masks, then prunes
/// `prune_frac` of every weight layer's surviving weights by final
/// magnitude. Biases are never pruned.
pub fn find_lottery_ticket(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    prune_frac: f64,
    rounds: usize,
) -> Result<LotteryTicket> {
    if !(prune_frac > 0.0 && prune_frac < 1.0) {
        return Err(Error::Config(format!("prune_frac must lie in (0, 1), got {prune_frac}")));
    }
    if spec.kind != ModelKind::Mlp {
        return Err(Error::Config("lottery tickets are searched on MLPs".into()));
    }
    let init = init_model(spec)?;
    let mut masks: Vec<Array> = init.params.iter().map(|p| Array::full(p.value.shape(), 1.0)).collect();
    let mut records = Vec::with_capacity(rounds);
    for round in 0..rounds {
        let mut model = init.clone();
        model.set_mask(masks.clone())?;
        let res = train(&model, data, cfg)?;
        records.push(RoundRecord {
            round,
            sparsity: weight_sparsity(&init, &masks),
            remaining: remaining(&init, &masks),
            test_acc: res.best_point().test_acc,
        });
        log::info!(
            "lottery round {round}: sparsity {:.3}, test {:.3}",
            records[round].sparsity,
            records[round].test_acc
        );
        masks = res
            .best_model
            .params
            .iter()
            .zip(&masks)
            .map(|(p, m)| if is_weight(&p.name) { prune_layer(&p.value, m, prune_frac) } else { Ok(m.clone()) })
            .collect::<Result<_>>()?;
    }
    Ok(LotteryTicket {
        init,
        masks,
        rounds: records,
    })
}

fn run_masked(init: &Model, masks: Option<Vec<Array>>, data: &Dataset, cfg: &TrainConfig) -> Result<TrainResult> {
    let mut m = init.clone();
    if let Some(masks) = masks {
        m.set_mask(masks)?;
    }
    train(&m, data, cfg)
}

fn record(group: &str, seed: u64, sparsity: f64, res: TrainResult) -> TrialRecord {
    let mut r = TrialRecord::new(group, seed)
        .metric("test_acc", res.best_point().test_acc)
        .metric("sparsity", sparsity)
        .metric("best_step", res.best_step as f64);
    r.curves = res.curves;
    r
}

/// Full retraining runs comparing `ticket` with a random mask at matched
/// sparsity on original, reversed and permuted data, plus the ticket's
/// masks under a fresh initialization and the dense network.
pub fn lottery_ablations(ticket: &LotteryTicket, data: &Dataset, cfg: &TrainConfig, perm: &[usize]) -> Result<Vec<TrialRecord>> {
    let seed = cfg.seed;
    let s = ticket.sparsity();
    let random = random_mask_like(&ticket.init, &ticket.masks, &mut RngStream::derive(seed, &[RANDOM_MASK_STREAM]));
    let reinit_seed = RngStream::derive(seed, &[REINIT_STREAM]).next_u64();
    let reinit = init_model(&ticket.init.spec.clone().with_seed(reinit_seed))?;
    let reversed = data.reversed();
    let permuted = data.permuted(perm);
    let runs: Vec<(&str, &Model, Option<&Vec<Array>>, &Dataset)> = vec![
        ("ticket", &ticket.init, Some(&ticket.masks), data),
        ("random", &ticket.init, Some(&random), data),
        ("reinit", &reinit, Some(&ticket.masks), data),
        ("dense", &ticket.init, None, data),
        ("ticket/reversed", &ticket.init, Some(&ticket.masks), &reversed),
        ("random/reversed", &ticket.init, Some(&random), &reversed),
        ("ticket/permuted", &ticket.init, Some(&ticket.masks), &permuted),
        ("random/permuted", &ticket.init, Some(&random), &permuted),
    ];
    runs.into_iter()
        .map(|(group, init, masks, d)| {
            let res = run_masked(init, masks.cloned(), d, cfg)?;
            log::info!("lottery {group} seed {seed}: {:.3}", res.best_point().test_acc);
            Ok(record(group, seed, if masks.is_some() { s } else { 0.0 }, res))
        })
        .collect()
}

fn adjacent_pairs(row: &[f64]) -> usize {
    row.windows(2).filter(|w| w[0] != 0.0 && w[1] != 0.0).count()
}

fn adjacency_count(mask: &Array) -> usize {
    (0..mask.rows()).map(|r| adjacent_pairs(mask.row(r))).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyStats {
    pub count: usize,
    pub chance_mean: f64,
    pub chance_std: f64,
    pub samples: usize,
}

impl AdjacencyStats {
    /// Chance standard deviations above the chance mean.
    pub fn z_score(&self) -> f64 {
        let d = self.count as f64 - self.chance_mean;
        if self.chance_std > 0.0 {
            d / self.chance_std
        } else if d > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    }
}

/// Horizontal adjacency of a `hidden x input` mask against random masks
/// with exactly the same number of ones.
pub fn mask_adjacency(mask: &Array, samples: usize, rng: &mut RngStream) -> AdjacencyStats {
    let ones = mask.count_nonzero();
    let counts: Vec<f64> = (0..samples)
        .map(|_| adjacency_count(&random_mask(mask.shape(), ones, rng)) as f64)
        .collect();
    let (chance_mean, chance_std) = if counts.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&counts) };
    AdjacencyStats {
        count: adjacency_count(mask),
        chance_mean,
        chance_std,
        samples,
    }
}

/// Rows reordered by descending adjacency count, ties by original index.
pub fn sort_mask_for_display(mask: &Array) -> Array {
    let mut order: Vec<usize> = (0..mask.rows()).collect();
    order.sort_by_key(|&r| std::cmp::Reverse(adjacent_pairs(mask.row(r))));
    mask.select_rows(&order)
}

fn mask_csv(mask: &Array) -> String {
    let mut s = String::new();
    for r in 0..mask.rows() {
        let row: Vec<&str> = mask.row(r).iter().map(|&v| if v != 0.0 { "1" } else { "0" }).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub data: String,
    pub ticket_mean: f64,
    pub random_mean: f64,
    /// Ticket minus random, in accuracy points.
    pub margin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityPoint {
    pub round: usize,
    pub sparsity: f64,
    pub ticket_mean: f64,
    pub ticket_std: f64,
    pub random_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LotteryReport {
    /// Weight sparsity after each pruning round.
    pub sparsity_schedule: Vec<f64>,
    pub sparsity_curve: Vec<SparsityPoint>,
    pub ablations: Vec<AblationRow>,
    /// Mean test accuracy in points.
    pub reinit_mean: f64,
    pub dense_mean: f64,
    /// First-layer adjacency of each seed's ticket.
    pub adjacency: Vec<AdjacencyStats>,
    #[serde(skip)]
    pub first_layer_masks: Vec<Array>,
    #[serde(skip)]
    pub result: Option<ExperimentResult>,
}

impl LotteryReport {
    pub fn ablation(&self, data: &str) -> Option<&AblationRow> {
        self.ablations.iter().find(|a| a.data == data)
    }

    pub fn artifacts(&self) -> Result<Vec<Artifact>> {
        let mut out = Vec::new();
        if let Some(r) = &self.result {
            out.push(Artifact::json("result.json", r)?);
            out.push(Artifact::text("curves.csv", curves_csv(&r.trials)));
        }
        out.push(Artifact::json("lottery.json", self)?);
        let mut s = String::from("round,sparsity,ticket_mean,ticket_std,random_mean\n");
        for p in &self.sparsity_curve {
            let r = p.random_mean.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{},{},{}", p.round, p.sparsity, p.ticket_mean, p.ticket_std, r);
        }
        out.push(Artifact::text("sparsity.csv", s));
        let mut s = String::from("data,ticket_mean,random_mean,margin\n");
        for a in &self.ablations {
            let _ = writeln!(s, "{},{},{},{}", a.data, a.ticket_mean, a.random_mean, a.margin);
        }
        out.push(Artifact::text("ablations.csv", s));
        for (i, m) in self.first_layer_masks.iter().enumerate() {
            out.push(Artifact::text(&format!("mask_{i}.csv"), mask_csv(m)));
            out.push(Artifact::text(&format!("mask_{i}_sorted.csv"), mask_csv(&sort_mask_for_display(m))));
        }
        Ok(out)
    }
}

/// Per seed: search a ticket, run the ablations, measure first-layer
/// adjacency. Each seed searches its own ticket from its own
/// initialization.
pub fn run_lottery(cfg: &LotteryConfig) -> Result<LotteryReport> {
    if cfg.n_seeds == 0 {
        return Err(Error::Config("n_seeds must be at least 1".into()));
    }
    let started = Instant::now();
    let data = generate_dataset(&cfg.data)?;
    let perm = RngStream::derive(cfg.seed, &[PERMUTE_STREAM]).permutation(data.seq_len());
    let per_seed = run_trials(cfg.n_seeds, |i| {
        let seed = trial_seed(cfg.seed, i);
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let ticket = find_lottery_ticket(&cfg.spec.clone().with_seed(seed), &data, &tc, cfg.prune_frac, cfg.rounds)?;
        let mut trials: Vec<TrialRecord> = ticket
            .rounds
            .iter()
            .map(|r| {
                TrialRecord::new(format!("round/{}", r.round), seed)
                    .metric("test_acc", r.test_acc)
                    .metric("sparsity", r.sparsity)
            })
            .collect();
        if cfg.random_per_round {
            let mut masks: Vec<Array> = ticket.init.params.iter().map(|p| Array::full(p.value.shape(), 1.0)).collect();
            let mut rng = RngStream::derive(seed, &[RANDOM_MASK_STREAM, 1]);
            for r in ticket.rounds.iter().skip(1) {
                // replay the per-layer counts of round r with random placement
                for ((p, m), &k) in ticket
                    .init
                    .params
                    .iter()
                    .zip(masks.iter_mut())
                    .filter(|(p, _)| is_weight(&p.name))
                    .zip(&r.remaining)
                {
                    *m = random_mask(p.value.shape(), k, &mut rng);
                }
                let res = run_masked(&ticket.init, Some(masks.clone()), &data, &tc)?;
                trials.push(record(&format!("random_round/{}", r.round), seed, r.sparsity, res));
            }
        }
        trials.extend(lottery_ablations(&ticket, &data, &tc, &perm)?);
        let first = ticket
            .init
            .params
            .iter()
            .position(|p| is_weight(&p.name))
            .expect("mlp has weights");
        let mask = ticket.masks[first].clone();
        let adj = mask_adjacency(&mask, cfg.chance_samples, &mut RngStream::derive(seed, &[CHANCE_STREAM]));
        Ok((trials, adj, mask, ticket.rounds.len(), ticket.sparsity()))
    })?;

    let mut trials = Vec::new();
    let mut adjacency = Vec::new();
    let mut first_layer_masks = Vec::new();
    let final_sparsity = per_seed[0].4;
    for (t, a, m, _, _) in per_seed {
        trials.extend(t);
        adjacency.push(a);
        first_layer_masks.push(m);
    }
    let pct = |group: &str| {
        let v: Vec<f64> = trials
            .iter()
            .filter(|t| t.group == group)
            .map(|t| 100.0 * t.metrics["test_acc"])
            .collect();
        mean_std(&v)
    };
    let mut sparsity_curve: Vec<SparsityPoint> = (0..cfg.rounds)
        .map(|r| {
            let (ticket_mean, ticket_std) = pct(&format!("round/{r}"));
            let sparsity = trials
                .iter()
                .find(|t| t.group == format!("round/{r}"))
                .map_or(f64::NAN, |t| t.metrics["sparsity"]);
            SparsityPoint {
                round: r,
                sparsity,
                ticket_mean,
                ticket_std,
                random_mean: (cfg.random_per_round && r > 0).then(|| pct(&format!("random_round/{r}")).0),
            }
        })
        .collect();
    let (ticket_mean, ticket_std) = pct("ticket");
    sparsity_curve.push(SparsityPoint {
        round: cfg.rounds,
        sparsity: final_sparsity,
        ticket_mean,
        ticket_std,
        random_mean: Some(pct("random").0),
    });
    let sparsity_schedule = sparsity_curve.iter().skip(1).map(|p| p.sparsity).collect();
    let ablations = [("original", ""), ("reversed", "/reversed"), ("permuted", "/permuted")]
        .iter()
        .map(|(name, suffix)| {
            let t = pct(&format!("ticket{suffix}")).0;
            let r = pct(&format!("random{suffix}")).0;
            AblationRow {
                data: name.to_string(),
                ticket_mean: t,
                random_mean: r,
                margin: t - r,
            }
        })
        .collect();
    let result = ExperimentResult::new("lottery", cfg, trials, started)?;
    Ok(LotteryReport {
        sparsity_schedule,
        sparsity_curve,
        ablations,
        reinit_mean: pct_of(&result, "reinit"),
        dense_mean: pct_of(&result, "dense"),
        adjacency,
        first_layer_masks,
        result: Some(result),
    })
}

fn pct_of(r: &ExperimentResult, group: &str) -> f64 {
    100.0 * r.mean(group, "test_acc")
}
