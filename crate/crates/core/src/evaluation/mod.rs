//! Held-out perplexity, link ranking, expert recommendation, and the
//! cold-start protocols built from them.

mod expert;
mod links;
mod metrics;
mod text;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::corpus::{AdjacencySet, ColdStartGroups, Document};
use crate::error::{JnetError, Result};
use crate::inference::EStepConfig;
use crate::model::TrainedModel;
use crate::scalar::Real;

pub use expert::{evaluate_experts, expert_score, ExpertQuery};
pub use links::{build_link_tasks, rank_candidates, ranked_relevance, score_link_tasks, RankingTask};
pub use metrics::{auc, average_precision, mean_average_precision, ndcg};
pub use text::{document_log_likelihood, fold_in_document, heldout_log_likelihood, perplexity, FOLD_IN_ROUNDS};

/// One metric value with the split it came from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub metric: String,
    /// `light`, `medium`, `heavy` or `all`
    pub group: String,
    /// the varied parameter (ratio, mix weight), empty when none
    pub param: String,
    pub value: f64,
    pub fold: Option<usize>,
    pub seed: u64,
}

impl EvalReport {
    pub fn new(metric: &str, group: &str, param: impl ToString, value: f64, fold: Option<usize>, seed: u64) -> Result<Self> {
        if !value.is_finite() {
            return Err(JnetError::NonFinite(format!("{metric} for group {group} is {value}")));
        }
        Ok(Self { metric: metric.into(), group: group.into(), param: param.to_string(), value, fold, seed })
    }
}

/// `metric,group,param,value,fold,seed`
pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric,group,param,value,fold,seed\n");
    for r in reports {
        let fold = r.fold.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{},{},{:.17e},{},{}", r.metric, r.group, r.param, r.value, fold, r.seed);
    }
    out
}

pub fn write_reports(path: &Path, reports: &[EvalReport]) -> Result<()> {
    fs::write(path, reports_csv(reports)).map_err(|e| JnetError::io(path, e))
}

/// One `plot_<metric>.csv` per metric with columns `group,param,value`,
/// values averaged over folds.
pub fn write_plot_data(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| JnetError::io(dir, e))?;
    let mut series: BTreeMap<&str, BTreeMap<(&str, &str), (f64, usize)>> = BTreeMap::new();
    for r in reports {
        let e = series.entry(&r.metric).or_default().entry((&r.group, &r.param)).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    for (metric, rows) in series {
        let mut out = String::from("group,param,value\n");
        for ((group, param), (sum, n)) in rows {
            let _ = writeln!(out, "{group},{param},{:.17e}", sum / n as f64);
        }
        let path = dir.join(format!("plot_{metric}.csv"));
        fs::write(&path, out).map_err(|e| JnetError::io(&path, e))?;
    }
    Ok(())
}

/// What a cold-start evaluation scores for each user group.
#[derive(Debug, Clone, Copy)]
pub enum ColdStartInput<'a> {
    /// held-out documents of users whose text was removed from training
    Text { documents: &'a [Document] },
    /// held-out edges of users whose edges were removed from training
    Links { train: &'a AdjacencySet, heldout: &'a [(usize, usize)], ratios: &'a [usize] },
}

/// Scores each group separately: perplexity of its members' held-out text,
/// or NDCG and MAP of ranking its members' held-out friends at each ratio.
/// Groups with nothing to score are skipped with a warning.
pub fn evaluate_cold_start<T: Real>(
    model: &TrainedModel<T>,
    groups: &ColdStartGroups,
    input: ColdStartInput<'_>,
    fold: Option<usize>,
    seed: u64,
    config: &EStepConfig<T>,
) -> Result<Vec<EvalReport>> {
    let mut reports = Vec::new();
    for (label, members) in groups.labeled() {
        let is_member = |u: usize| members.contains(&u);
        match input {
            ColdStartInput::Text { documents } => {
                let docs: Vec<Document> = documents.iter().filter(|d| is_member(d.owner)).cloned().collect();
                if docs.is_empty() {
                    log::warn!("cold-start group {label} has no held-out documents");
                    continue;
                }
                reports.push(EvalReport::new("perplexity", label, "", perplexity(model, &docs, config)?, fold, seed)?);
            }
            ColdStartInput::Links { train, heldout, ratios } => {
                let edges: Vec<(usize, usize)> = heldout.iter().copied().filter(|&(i, j)| is_member(i) || is_member(j)).collect();
                for &t in ratios {
                    let tasks: Vec<RankingTask> =
                        build_link_tasks(train, &edges, t, seed)?.into_iter().filter(|task| is_member(task.query)).collect();
                    if tasks.is_empty() {
                        log::warn!("cold-start group {label} has no held-out links");
                        break;
                    }
                    let (n, m) = score_link_tasks(model, &tasks)?;
                    reports.push(EvalReport::new("ndcg", label, t, n, fold, seed)?);
                    reports.push(EvalReport::new("map", label, t, m, fold, seed)?);
                }
            }
        }
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{group_cold_start_users, GroupMetric};
    use crate::learning::{train, TrainConfig};
    use crate::synth::{generate, CountDist, SynthSpec};

    #[test]
    fn csv_layout() {
        let r = vec![EvalReport::new("ndcg", "light", 2, 0.5, Some(1), 7).unwrap(), EvalReport::new("perplexity", "all", "", 12.0, None, 7).unwrap()];
        let text = reports_csv(&r);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "metric,group,param,value,fold,seed");
        assert!(lines[1].starts_with("ndcg,light,2,5.0") && lines[1].ends_with(",1,7"));
        assert!(lines[2].starts_with("perplexity,all,,1.2") && lines[2].ends_with(",,7"));
        assert!(EvalReport::new("x", "all", "", f64::NAN, None, 0).is_err());
    }

    #[test]
    fn plot_data_averages_folds() {
        let dir = tempfile::tempdir().unwrap();
        let r = vec![
            EvalReport::new("ndcg", "all", 2, 0.4, Some(0), 1).unwrap(),
            EvalReport::new("ndcg", "all", 2, 0.6, Some(1), 1).unwrap(),
            EvalReport::new("ndcg", "all", 4, 0.3, Some(0), 1).unwrap(),
        ];
        write_plot_data(dir.path(), &r).unwrap();
        let text = fs::read_to_string(dir.path().join("plot_ndcg.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("all,2,5.0"));
    }

    #[test]
    fn cold_start_protocols_emit_rows_per_group() {
        let spec = SynthSpec {
            num_users: 30,
            docs_per_user: CountDist::Fixed(4),
            words_per_doc: CountDist::Fixed(15),
            gamma: 0.5,
            xi: 0.3,
            seed: 2,
            ..SynthSpec::default()
        };
        let (corpus, _) = generate::<f64>(&spec).unwrap();
        let mut deg: Vec<usize> = (0..corpus.num_users()).map(|i| corpus.adjacency.degree(i)).collect();
        deg.sort_unstable();
        let (low, high) = (deg[deg.len() / 3], deg[2 * deg.len() / 3]);
        assert!(low > deg[1] && high > low && deg[deg.len() - 2] >= high, "{deg:?}");
        let groups = group_cold_start_users(&corpus, low, high, GroupMetric::Connections, 2, 1).unwrap();
        let all: Vec<usize> = groups.labeled().iter().flat_map(|(_, g)| g.to_vec()).collect();

        // text held out
        let train_corpus = corpus.filter_documents(|_, d| !all.contains(&d.owner));
        let held: Vec<Document> = corpus.documents().iter().filter(|d| all.contains(&d.owner)).cloned().collect();
        let cfg = TrainConfig::<f64> { em_iters: 3, ..TrainConfig::default() };
        let out = train(&train_corpus, &spec.hyper(), &cfg).unwrap();
        let rows = evaluate_cold_start(&out.model, &groups, ColdStartInput::Text { documents: &held }, None, 1, &cfg.estep).unwrap();
        assert_eq!(rows.len(), 3);
        assert!(rows.iter().all(|r| r.metric == "perplexity" && r.value.is_finite()));

        // edges held out
        let mut heldout: Vec<(usize, usize)> = Vec::new();
        for &u in &all {
            let mine = corpus.adjacency.edges().filter(|&(i, j)| (i == u || j == u) && !heldout.contains(&(i, j)));
            heldout.extend(mine.take(1).collect::<Vec<_>>());
        }
        let train_adj = corpus.adjacency.without(&heldout);
        let out = train(&corpus.with_adjacency(train_adj.clone()).unwrap(), &spec.hyper(), &cfg).unwrap();
        let input = ColdStartInput::Links { train: &train_adj, heldout: &heldout, ratios: &[2, 4, 6] };
        let rows = evaluate_cold_start(&out.model, &groups, input, Some(0), 1, &cfg.estep).unwrap();
        for (label, _) in groups.labeled() {
            let n = rows.iter().filter(|r| r.group == label && r.metric == "ndcg").count();
            assert!(n == 3 || n == 0, "{label}: {n}");
        }
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.value)));
    }
}
