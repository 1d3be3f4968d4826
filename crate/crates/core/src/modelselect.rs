//! Grouped k-fold cross-validation over the head's hyperparameter grid,
//! followed by a final fit on the whole training split.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    select_threshold_binary, select_threshold_multilabel, train, ClassifierHead, HeadConfig, Task,
    TrainingData,
};
use crate::error::{Error, Result};
use crate::evaluate::{multilabel_map, roc_auc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMetric {
    RocAuc,
    Map,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub hidden_layers: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
}

impl GridPoint {
    /// Simpler configurations sort first: fewer layers, then less dropout,
    /// then a smaller learning rate.
    fn simplicity_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.hidden_layers
            .cmp(&other.hidden_layers)
            .then(self.dropout_rate.total_cmp(&other.dropout_rate))
            .then(self.learning_rate.total_cmp(&other.learning_rate))
    }
}

/// 0-3 hidden layers x dropout {0, 0.25, 0.5} x learning rate
/// {1e-2, 1e-3, 1e-4}.
pub fn default_grid() -> Vec<GridPoint> {
    let mut grid = Vec::with_capacity(36);
    for hidden_layers in 0..=3 {
        for dropout_rate in [0.0, 0.25, 0.5] {
            for learning_rate in [0.01, 0.001, 0.0001] {
                grid.push(GridPoint {
                    hidden_layers,
                    dropout_rate,
                    learning_rate,
                });
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub grid: Vec<GridPoint>,
    pub selection_metric: SelectionMetric,
    pub cv_epochs: usize,
    pub final_epochs: usize,
    pub seed: u64,
    /// Fold draws tried before giving up on degenerate folds.
    pub max_fold_attempts: usize,
}

impl CvPlan {
    /// Three folds over the full grid, 10 epochs per fold. The final fit runs
    /// one epoch for binary heads and ten for multi-label heads.
    pub fn for_task(task: Task, seed: u64) -> Self {
        let (selection_metric, final_epochs) = match task {
            Task::Binary => (SelectionMetric::RocAuc, 1),
            Task::Multilabel => (SelectionMetric::Map, 10),
        };
        Self {
            folds: 3,
            grid: default_grid(),
            selection_metric,
            cv_epochs: 10,
            final_epochs,
            seed,
            max_fold_attempts: 5,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("need at least 2 folds, got {}", self.folds)));
        }
        if self.grid.is_empty() {
            return Err(Error::Config("hyperparameter grid is empty".into()));
        }
        if self.max_fold_attempts == 0 {
            return Err(Error::Config("max_fold_attempts must be positive".into()));
        }
        Ok(())
    }

    fn head_config(&self, data: &TrainingData, point: &GridPoint, epochs: usize, seed: u64) -> HeadConfig {
        let mut c = HeadConfig::new(data.input_dim(), data.n_outputs());
        c.hidden_layers = point.hidden_layers;
        c.dropout_rate = point.dropout_rate;
        c.learning_rate = point.learning_rate;
        c.epochs = epochs;
        c.seed = seed;
        c
    }
}

/// Assigns every sample a fold so that all samples of one group share a
/// fold. Groups are shuffled, ordered by positive count (largest first) and
/// placed greedily on the fold with the fewest groups, then the fewest
/// positives; group counts per fold differ by at most one.
pub fn make_folds(groups: &[String], positive: &[bool], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if groups.len() != positive.len() {
        return Err(Error::InvalidInput(format!(
            "{} groups for {} samples",
            groups.len(),
            positive.len()
        )));
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut names: Vec<&str> = Vec::new();
    let mut pos_count: Vec<usize> = Vec::new();
    for (g, &p) in groups.iter().zip(positive) {
        let i = *index.entry(g.as_str()).or_insert_with(|| {
            names.push(g.as_str());
            pos_count.push(0);
            names.len() - 1
        });
        pos_count[i] += p as usize;
    }
    if folds < 2 || names.len() < folds {
        return Err(Error::Fold(format!(
            "{} groups cannot fill {folds} folds",
            names.len()
        )));
    }
    // Sorting by name first makes the result independent of input order.
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(names[b]));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.sort_by(|&a, &b| pos_count[b].cmp(&pos_count[a]));

    let mut fold_groups = vec![0usize; folds];
    let mut fold_pos = vec![0usize; folds];
    let mut group_fold = vec![0usize; names.len()];
    for g in order {
        let f = (0..folds)
            .min_by_key(|&f| (fold_groups[f], fold_pos[f], f))
            .expect("folds >= 2");
        group_fold[g] = f;
        fold_groups[f] += 1;
        fold_pos[f] += pos_count[g];
    }
    Ok(groups.iter().map(|g| group_fold[index[g.as_str()]]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub point: GridPoint,
    pub fold_metrics: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub metric: SelectionMetric,
    pub rows: Vec<CvRow>,
    pub chosen: GridPoint,
    pub fold_assignment: Vec<usize>,
    /// Fold draws needed to obtain non-degenerate folds.
    pub fold_attempts: usize,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub head_path: Option<String>,
}

fn fold_is_usable(data: &TrainingData, assignment: &[usize], fold: usize) -> bool {
    let mut train_pos = vec![false; data.n_outputs()];
    let mut train_neg = false;
    let mut held_pos = false;
    let mut held_neg = false;
    for (i, &f) in assignment.iter().enumerate() {
        let any = data.y[i].iter().any(|&v| v > 0.5);
        if f == fold {
            held_pos |= any;
            held_neg |= !any;
        } else {
            data.y[i]
                .iter()
                .zip(&mut train_pos)
                .for_each(|(&v, p)| *p |= v > 0.5);
            train_neg |= !any;
        }
    }
    match data.task() {
        // Both classes must appear on both sides: weights need both in
        // training, AUC needs both when scoring.
        Task::Binary => train_pos[0] && train_neg && held_pos && held_neg,
        Task::Multilabel => train_pos.iter().any(|&p| p) && held_pos,
    }
}

fn held_out_metric(
    metric: SelectionMetric,
    head: &ClassifierHead,
    data: &TrainingData,
    held: &[usize],
) -> Result<f64> {
    let scores: Vec<Vec<f64>> = held
        .iter()
        .map(|&i| head.predict_proba(&data.x[i]))
        .collect::<Result<_>>()?;
    let labels: Vec<Vec<bool>> = held
        .iter()
        .map(|&i| data.y[i].iter().map(|&v| v > 0.5).collect())
        .collect();
    match metric {
        SelectionMetric::RocAuc => {
            let s: Vec<f64> = scores.iter().map(|r| r[0]).collect();
            let l: Vec<bool> = labels.iter().map(|r| r[0]).collect();
            Ok(roc_auc(&s, &l)?.auc)
        }
        SelectionMetric::Map => Ok(multilabel_map(&scores, &labels)?.map),
    }
}

/// Trains every grid point on every fold and picks the best mean held-out
/// metric. Ties go to the simplest configuration.
pub fn cross_validate(plan: &CvPlan, data: &TrainingData, groups: &[String]) -> Result<CvReport> {
    plan.validate()?;
    if data.len() != groups.len() {
        return Err(Error::InvalidInput(format!(
            "{} samples but {} group ids",
            data.len(),
            groups.len()
        )));
    }
    let positive: Vec<bool> = data.y.iter().map(|r| r.iter().any(|&v| v > 0.5)).collect();
    let mut found = None;
    for attempt in 0..plan.max_fold_attempts {
        let assignment = make_folds(
            groups,
            &positive,
            plan.folds,
            plan.seed.wrapping_add(attempt as u64),
        )?;
        if (0..plan.folds).all(|f| fold_is_usable(data, &assignment, f)) {
            found = Some((assignment, attempt + 1));
            break;
        }
        log::warn!("fold draw {attempt} left a fold without both classes; re-drawing");
    }
    let (assignment, fold_attempts) = found.ok_or_else(|| {
        Error::Stratification(format!(
            "every fold draw in {} attempts left a fold single-class",
            plan.max_fold_attempts
        ))
    })?;

    let splits: Vec<(TrainingData, Vec<usize>)> = (0..plan.folds)
        .map(|f| {
            let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] != f).collect();
            let held: Vec<usize> = (0..data.len()).filter(|&i| assignment[i] == f).collect();
            Ok((data.subset(&train_idx)?, held))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..plan.grid.len())
        .flat_map(|g| (0..plan.folds).map(move |f| (g, f)))
        .collect();
    let metrics: Vec<f64> = jobs
        .par_iter()
        .map(|&(g, f)| {
            let (train_data, held) = &splits[f];
            let config = plan.head_config(
                data,
                &plan.grid[g],
                plan.cv_epochs,
                plan.seed.wrapping_add(f as u64),
            );
            let head = train(&config, train_data)?;
            held_out_metric(plan.selection_metric, &head, data, held)
                .map_err(|e| e.context(format!("grid point {g}, fold {f}")))
        })
        .collect::<Result<_>>()?;

    let rows: Vec<CvRow> = plan
        .grid
        .iter()
        .enumerate()
        .map(|(g, point)| {
            let fold_metrics = metrics[g * plan.folds..(g + 1) * plan.folds].to_vec();
            let mean = fold_metrics.iter().sum::<f64>() / plan.folds as f64;
            CvRow {
                point: *point,
                fold_metrics,
                mean,
            }
        })
        .collect();
    let chosen = rows
        .iter()
        .min_by(|a, b| {
            b.mean
                .total_cmp(&a.mean)
                .then(a.point.simplicity_cmp(&b.point))
        })
        .map(|r| r.point)
        .expect("grid is non-empty");
    Ok(CvReport {
        metric: plan.selection_metric,
        rows,
        chosen,
        fold_assignment: assignment,
        fold_attempts,
        threshold: None,
        head_path: None,
    })
}

/// Fits the chosen configuration on all training data for
/// `plan.final_epochs`, then sets the decision threshold from the training
/// outputs.
pub fn finalize(plan: &CvPlan, data: &TrainingData, chosen: &GridPoint) -> Result<ClassifierHead> {
    let config = plan.head_config(data, chosen, plan.final_epochs, plan.seed);
    let mut head = train(&config, data)?;
    let scores = head.predict_proba_batch(&data.x)?;
    let threshold = match data.binary_labels() {
        Some(labels) => {
            let s: Vec<f64> = scores.iter().map(|r| r[0]).collect();
            select_threshold_binary(&s, labels)?
        }
        None => select_threshold_multilabel(&scores, &data.label_matrix())?,
    };
    head.set_threshold(threshold)?;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn groups(n_groups: usize, per: usize) -> Vec<String> {
        (0..n_groups)
            .flat_map(|g| std::iter::repeat_n(format!("src{g:02}"), per))
            .collect()
    }

    #[test]
    fn grid_has_36_points() {
        let g = default_grid();
        assert_eq!(g.len(), 36);
        assert_eq!(CvPlan::for_task(Task::Binary, 0).final_epochs, 1);
        assert_eq!(CvPlan::for_task(Task::Multilabel, 0).final_epochs, 10);
    }

    #[test]
    fn folds_keep_groups_together_and_balanced() {
        let g = groups(9, 5);
        let pos: Vec<bool> = (0..45).map(|i| i % 5 == 2).collect();
        let a = make_folds(&g, &pos, 3, 7).unwrap();
        for fold in 0..3 {
            let members: std::collections::BTreeSet<&String> = g
                .iter()
                .zip(&a)
                .filter(|(_, &f)| f == fold)
                .map(|(g, _)| g)
                .collect();
            assert_eq!(members.len(), 3);
        }
        for (i, gi) in g.iter().enumerate() {
            for (j, gj) in g.iter().enumerate() {
                if gi == gj {
                    assert_eq!(a[i], a[j]);
                }
            }
        }
        assert_eq!(a, make_folds(&g, &pos, 3, 7).unwrap());
    }

    #[test]
    fn too_few_groups() {
        let g = groups(2, 3);
        assert!(matches!(
            make_folds(&g, &[false; 6], 3, 0),
            Err(Error::Fold(_))
        ));
    }

    #[test]
    fn single_class_folds_fail_after_retries() {
        let g = groups(6, 2);
        let mut labels = vec![false; 12];
        labels[0] = true;
        let x = (0..12).map(|i| vec![i as f64]).collect();
        let data = TrainingData::binary(x, labels).unwrap();
        let mut plan = CvPlan::for_task(Task::Binary, 0);
        plan.grid.truncate(1);
        assert!(matches!(
            cross_validate(&plan, &data, &g),
            Err(Error::Stratification(_))
        ));
    }

    #[test]
    fn dominant_config_wins_and_ties_prefer_simple() {
        let rows = [
            (GridPoint { hidden_layers: 2, dropout_rate: 0.0, learning_rate: 0.01 }, 1.0),
            (GridPoint { hidden_layers: 1, dropout_rate: 0.5, learning_rate: 0.01 }, 1.0),
            (GridPoint { hidden_layers: 1, dropout_rate: 0.25, learning_rate: 0.01 }, 1.0),
            (GridPoint { hidden_layers: 0, dropout_rate: 0.0, learning_rate: 0.01 }, 0.9),
        ];
        let pick = |rows: &[(GridPoint, f64)]| {
            rows.iter()
                .min_by(|a, b| b.1.total_cmp(&a.1).then(a.0.simplicity_cmp(&b.0)))
                .unwrap()
                .0
        };
        let best = pick(&rows);
        assert_eq!((best.hidden_layers, best.dropout_rate), (1, 0.25));
        let mut reversed = rows.to_vec();
        reversed.reverse();
        assert_eq!(pick(&reversed), best);
    }
}
