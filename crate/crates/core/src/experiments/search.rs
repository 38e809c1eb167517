use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::couplings::{CouplingKind, HyperParams};
use crate::data::SiteDataset;
use crate::neural::MAX_HIDDEN_LAYERS;

use super::{child_seed, fit_model, selection_index, ExperimentError, SplitPlan, TrainSettings};

/// Hidden layer widths of a candidate network.
pub type Architecture = Vec<usize>;

/// Bounds of the architecture and hyperparameter sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    /// Sampled architectures and hyperparameter vectors; candidates are
    /// cells of their cross product.
    pub n_architectures: usize,
    pub n_hyper_vectors: usize,
    pub max_depth: usize,
    pub widths: Vec<usize>,
    pub lr_range: (f64, f64),
    pub batch_sizes: Vec<usize>,
    /// Lower end is exclusive.
    pub lambda_range: (f64, f64),
    /// Folds of the split plan used for cross-validation.
    pub cv_folds: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            n_architectures: 300,
            n_hyper_vectors: 300,
            max_depth: MAX_HIDDEN_LAYERS,
            widths: vec![2, 4, 8, 16, 32, 64, 128, 256],
            lr_range: (1e-4, 1e-1),
            batch_sizes: vec![2, 4, 8, 16, 32, 64],
            lambda_range: (0.0, 1.0),
            cv_folds: 2,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(format!("search space: {m}")));
        if self.n_architectures == 0 || self.n_hyper_vectors == 0 {
            return bad("need at least one architecture and hyperparameter vector");
        }
        if self.max_depth == 0 || self.max_depth > MAX_HIDDEN_LAYERS {
            return bad("depth outside 1..=4");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad("widths must be non-empty and positive");
        }
        let (lo, hi) = self.lr_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("learning-rate range");
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch sizes must be non-empty and positive");
        }
        let (a, b) = self.lambda_range;
        if !(a >= 0.0 && a < b && b <= 1.0) {
            return bad("lambda range must lie in (0, 1]");
        }
        if self.cv_folds == 0 {
            return bad("cv_folds must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ordinal: usize,
    pub hidden: Architecture,
    pub hyper: HyperParams,
}

impl Candidate {
    pub fn architecture_label(&self) -> String {
        format!(
            "[{}]",
            self.hidden.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
        )
    }
}

/// Draws `budget` distinct candidates from the architecture × hyperparameter
/// grid. λ is sampled only for kinds that use it.
pub fn sample_candidates(
    kind: CouplingKind,
    space: &SearchSpace,
    budget: usize,
) -> Result<Vec<Candidate>, ExperimentError> {
    space.validate()?;
    if budget == 0 {
        return Err(ExperimentError::Invalid("search budget must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(child_seed(space.seed, "search-space", 0));
    let archs: Vec<Architecture> = (0..space.n_architectures)
        .map(|_| {
            let depth = rng.random_range(1..=space.max_depth);
            (0..depth)
                .map(|_| space.widths[rng.random_range(0..space.widths.len())])
                .collect()
        })
        .collect();
    let (llo, lhi) = (space.lr_range.0.ln(), space.lr_range.1.ln());
    let hypers: Vec<HyperParams> = (0..space.n_hyper_vectors)
        .map(|_| {
            let u: f64 = rng.random();
            let learning_rate = (llo + u * (lhi - llo)).exp();
            let batch_size = space.batch_sizes[rng.random_range(0..space.batch_sizes.len())];
            // Uniform on (a, b]: 1 − U with U ∈ [0, 1).
            let v: f64 = 1.0 - rng.random::<f64>();
            let (a, b) = space.lambda_range;
            let lambda = kind.uses_lambda().then_some(a + v * (b - a));
            HyperParams {
                learning_rate,
                batch_size,
                lambda,
            }
        })
        .collect();
    let cells = space.n_architectures * space.n_hyper_vectors;
    let picked = sample(&mut rng, cells, budget.min(cells));
    Ok(picked
        .into_iter()
        .enumerate()
        .map(|(ordinal, cell)| Candidate {
            ordinal,
            hidden: archs[cell / space.n_hyper_vectors].clone(),
            hyper: hypers[cell % space.n_hyper_vectors],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResult {
    pub candidate: Candidate,
    /// Final validation loss per fold.
    pub fold_losses: Vec<f64>,
    /// `None` if training failed.
    pub index: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub kind: CouplingKind,
    pub results: Vec<CandidateResult>,
    /// Positions into `results`, best first; failed candidates last.
    pub ranking: Vec<usize>,
}

impl SearchResult {
    pub fn best(&self) -> &CandidateResult {
        &self.results[self.ranking[0]]
    }

    /// Ranked rows as CSV with columns
    /// `rank,architecture,lr,batch_size,lambda,index`.
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "architecture", "lr", "batch_size", "lambda", "index"])?;
        for (rank, &i) in self.ranking.iter().enumerate() {
            let r = &self.results[i];
            let c = &r.candidate;
            w.write_record([
                (rank + 1).to_string(),
                c.architecture_label(),
                format!("{:.16e}", c.hyper.learning_rate),
                c.hyper.batch_size.to_string(),
                c.hyper.lambda.map_or(String::new(), |l| format!("{l:.16e}")),
                r.index.map_or("failed".into(), |v| format!("{v:.16e}")),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn evaluate_one(
    kind: CouplingKind,
    sites: &[SiteDataset],
    plan: &SplitPlan,
    cv_folds: usize,
    settings: &TrainSettings,
    seed: u64,
    candidate: &Candidate,
) -> CandidateResult {
    let mut losses = Vec::with_capacity(cv_folds);
    for fold in 0..cv_folds {
        let data = plan.training_data(sites, fold);
        let s = child_seed(seed, "candidate", (candidate.ordinal * 1000 + fold) as u64);
        let outcome = fit_model(kind, &candidate.hidden, &candidate.hyper, settings, &data, s)
            .and_then(|(_, trace)| {
                trace.last_validation().ok_or_else(|| {
                    ExperimentError::Invalid("fold has no validation records".into())
                })
            });
        match outcome {
            Ok(l) => losses.push(l),
            Err(e) => {
                return CandidateResult {
                    candidate: candidate.clone(),
                    fold_losses: losses,
                    index: None,
                    error: Some(e.to_string()),
                }
            }
        }
    }
    match selection_index(&losses) {
        Ok(i) => CandidateResult {
            candidate: candidate.clone(),
            fold_losses: losses,
            index: Some(i),
            error: None,
        },
        Err(e) => CandidateResult {
            candidate: candidate.clone(),
            fold_losses: losses,
            index: None,
            error: Some(e.to_string()),
        },
    }
}

/// Cross-validates each candidate on the first `cv_folds` folds of `plan`
/// (in parallel) and ranks by selection index, ties to the lower ordinal.
/// A diverging candidate is marked failed.
pub fn evaluate_candidates(
    kind: CouplingKind,
    sites: &[SiteDataset],
    plan: &SplitPlan,
    cv_folds: usize,
    candidates: &[Candidate],
    settings: &TrainSettings,
    seed: u64,
) -> Result<SearchResult, ExperimentError> {
    if candidates.is_empty() {
        return Err(ExperimentError::Invalid("no candidates to evaluate".into()));
    }
    if cv_folds == 0 || cv_folds > plan.folds.len() {
        return Err(ExperimentError::Invalid(format!(
            "{cv_folds} cross-validation folds requested, plan has {}",
            plan.folds.len()
        )));
    }
    let results: Vec<CandidateResult> = candidates
        .par_iter()
        .map(|c| evaluate_one(kind, sites, plan, cv_folds, settings, seed, c))
        .collect();
    let mut ranking: Vec<usize> = (0..results.len()).collect();
    ranking.sort_by(|&a, &b| {
        let key = |i: usize| results[i].index.unwrap_or(f64::INFINITY);
        key(a)
            .total_cmp(&key(b))
            .then(results[a].candidate.ordinal.cmp(&results[b].candidate.ordinal))
    });
    if results[ranking[0]].index.is_none() {
        return Err(ExperimentError::AllFailed);
    }
    Ok(SearchResult {
        kind,
        results,
        ranking,
    })
}

/// Samples `budget` candidates and evaluates them.
pub fn random_search(
    kind: CouplingKind,
    sites: &[SiteDataset],
    plan: &SplitPlan,
    space: &SearchSpace,
    budget: usize,
    settings: &TrainSettings,
) -> Result<SearchResult, ExperimentError> {
    if kind == CouplingKind::ProcessOnly {
        return Err(ExperimentError::Invalid("process-only model has nothing to search".into()));
    }
    let candidates = sample_candidates(kind, space, budget)?;
    let cv = space.cv_folds.min(plan.folds.len());
    evaluate_candidates(kind, sites, plan, cv, &candidates, settings, space.seed)
}
