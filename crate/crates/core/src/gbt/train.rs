use super::{goes_left, logloss, softmax, Tree, TreeEnsemble, TreeNode};
use crate::config::KvConfig;
use crate::dataset::SuperSample;
use crate::{Error, Label, Result, N_CLASSES};

/// Hessians are floored here so saturated probabilities keep `h > 0`.
const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    /// Boosting rounds; each adds one tree per class.
    pub n_rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum loss reduction required to split.
    pub gamma: f64,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    /// Recorded for reproducibility; training itself draws no randomness.
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            n_rounds: 90,
            max_depth: 4,
            learning_rate: 0.3,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds == 0 {
            return Err(Error::invalid("n_rounds must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(Error::invalid("max_depth must be at least 1"));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} = {v} must be non-negative")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate = {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut p = Self::default();
        cfg.update("n_rounds", &mut p.n_rounds)?;
        cfg.update("max_depth", &mut p.max_depth)?;
        cfg.update("learning_rate", &mut p.learning_rate)?;
        cfg.update("lambda", &mut p.lambda)?;
        cfg.update("gamma", &mut p.gamma)?;
        cfg.update("min_child_weight", &mut p.min_child_weight)?;
        cfg.update("seed", &mut p.seed)?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("n_rounds", self.n_rounds);
        cfg.set("max_depth", self.max_depth);
        cfg.set("learning_rate", self.learning_rate);
        cfg.set("lambda", self.lambda);
        cfg.set("gamma", self.gamma);
        cfg.set("min_child_weight", self.min_child_weight);
        cfg.set("seed", self.seed);
        cfg
    }
}

/// Mean training log-loss: entry 0 before any tree, entry `r` after round `r`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingHistory {
    pub logloss: Vec<f64>,
}

pub fn train(train_set: &[SuperSample], params: &TrainParams) -> Result<TreeEnsemble> {
    train_with_history(train_set, params).map(|(e, _)| e)
}

pub fn train_with_history(
    train_set: &[SuperSample],
    params: &TrainParams,
) -> Result<(TreeEnsemble, TrainingHistory)> {
    params.validate()?;
    let Some(first) = train_set.first() else {
        return Err(Error::invalid("empty training set"));
    };
    let n_features = first.features().len();
    let mut present = [false; N_CLASSES];
    for (i, s) in train_set.iter().enumerate() {
        if s.features().len() != n_features {
            return Err(Error::invalid(format!("sample {i} has {} features", s.features().len())));
        }
        if let Some(f) = s.features().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { sample: i, feature: f });
        }
        present[s.label.index()] = true;
    }
    if let Some(c) = present.iter().position(|p| !p) {
        return Err(Error::MissingClass(Label::ALL[c]));
    }

    let rows: Vec<&[f64]> = train_set.iter().map(SuperSample::features).collect();
    let columns = Columns::new(&rows, n_features);
    let labels: Vec<Label> = train_set.iter().map(|s| s.label).collect();
    let base_score = 0.0f32;
    let mut margins = vec![[f64::from(base_score); N_CLASSES]; rows.len()];
    let mean_loss = |margins: &[[f64; N_CLASSES]]| {
        margins.iter().zip(&labels).map(|(m, &y)| logloss(m, y)).sum::<f64>() / margins.len() as f64
    };

    let mut history = TrainingHistory {
        logloss: vec![mean_loss(&margins)],
    };
    let mut trees = Vec::with_capacity(params.n_rounds * N_CLASSES);
    let n = rows.len();
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    for _round in 0..params.n_rounds {
        let probs: Vec<[f64; N_CLASSES]> = margins.iter().map(softmax).collect();
        let mut round_trees = Vec::with_capacity(N_CLASSES);
        for class in 0..N_CLASSES {
            for i in 0..n {
                let p = probs[i][class];
                let y = if labels[i].index() == class { 1.0 } else { 0.0 };
                grad[i] = p - y;
                hess[i] = (p * (1.0 - p)).max(MIN_HESSIAN);
            }
            let root = Grower::new(&columns, &grad, &hess, params).grow();
            round_trees.push(Tree { class, root });
        }
        for tree in &round_trees {
            for (m, row) in margins.iter_mut().zip(&rows) {
                m[tree.class] += f64::from(tree.root.evaluate(row));
            }
        }
        trees.extend(round_trees);
        history.logloss.push(mean_loss(&margins));
    }
    let ensemble = TreeEnsemble::new(n_features, base_score, params.learning_rate, trees)?;
    Ok((ensemble, history))
}

/// Fits one regression tree to first/second-order statistics.
pub fn fit_tree(rows: &[&[f64]], grad: &[f64], hess: &[f64], params: &TrainParams) -> Result<TreeNode> {
    params.validate()?;
    if rows.is_empty() || rows.len() != grad.len() || grad.len() != hess.len() {
        return Err(Error::invalid("rows, gradients and hessians must be non-empty and equal length"));
    }
    let n_features = rows[0].len();
    if rows.iter().any(|r| r.len() != n_features) {
        return Err(Error::invalid("ragged rows"));
    }
    let columns = Columns::new(rows, n_features);
    Ok(Grower::new(&columns, grad, hess, params).grow())
}

/// Column-major features with each column's sample order pre-sorted.
struct Columns {
    values: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
}

impl Columns {
    fn new(rows: &[&[f64]], n_features: usize) -> Self {
        let values: Vec<Vec<f64>> = (0..n_features)
            .map(|f| rows.iter().map(|r| r[f]).collect())
            .collect();
        let order = values
            .iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { values, order }
    }

    fn n_samples(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy)]
enum Slot {
    Open { g: f64, h: f64 },
    Split { feature: usize, threshold: f32, left: usize, right: usize },
    Leaf { g: f64, h: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f32,
}

#[derive(Debug, Clone, Copy)]
struct ScanState {
    g_left: f64,
    h_left: f64,
    last: f64,
    seen: bool,
}

const FRESH: ScanState = ScanState {
    g_left: 0.0,
    h_left: 0.0,
    last: 0.0,
    seen: false,
};

struct Grower<'a> {
    columns: &'a Columns,
    grad: &'a [f64],
    hess: &'a [f64],
    params: &'a TrainParams,
}

impl<'a> Grower<'a> {
    fn new(columns: &'a Columns, grad: &'a [f64], hess: &'a [f64], params: &'a TrainParams) -> Self {
        Self { columns, grad, hess, params }
    }

    fn score(&self, g: f64, h: f64) -> f64 {
        g * g / (h + self.params.lambda)
    }

    fn grow(&self) -> TreeNode {
        let n = self.columns.n_samples();
        let mut position = vec![0usize; n];
        let g0: f64 = self.grad.iter().sum();
        let h0: f64 = self.hess.iter().sum();
        let mut nodes = vec![Slot::Open { g: g0, h: h0 }];
        let mut frontier = vec![0usize];

        for _depth in 0..self.params.max_depth {
            if frontier.is_empty() {
                break;
            }
            let best = self.best_splits(&position, &nodes, &frontier);
            let mut next = Vec::new();
            for (&id, cand) in frontier.iter().zip(best) {
                let Slot::Open { g, h } = nodes[id] else { unreachable!() };
                match cand {
                    Some(c) if c.gain > 0.0 => {
                        let left = nodes.len();
                        nodes.push(Slot::Open { g: 0.0, h: 0.0 });
                        nodes.push(Slot::Open { g: 0.0, h: 0.0 });
                        nodes[id] = Slot::Split {
                            feature: c.feature,
                            threshold: c.threshold,
                            left,
                            right: left + 1,
                        };
                        next.extend([left, left + 1]);
                    }
                    _ => nodes[id] = Slot::Leaf { g, h },
                }
            }
            for (i, pos) in position.iter_mut().enumerate() {
                if let Slot::Split { feature, threshold, left, right } = nodes[*pos] {
                    *pos = if goes_left(self.columns.values[feature][i], threshold) { left } else { right };
                    if let Slot::Open { g, h } = &mut nodes[*pos] {
                        *g += self.grad[i];
                        *h += self.hess[i];
                    }
                }
            }
            frontier = next;
        }
        for id in frontier {
            if let Slot::Open { g, h } = nodes[id] {
                nodes[id] = Slot::Leaf { g, h };
            }
        }
        self.assemble(&nodes, 0)
    }

    fn assemble(&self, nodes: &[Slot], id: usize) -> TreeNode {
        match nodes[id] {
            Slot::Leaf { g, h } | Slot::Open { g, h } => {
                let w = -g / (h + self.params.lambda) * self.params.learning_rate;
                TreeNode::leaf(w as f32)
            }
            Slot::Split { feature, threshold, left, right } => TreeNode::split(
                feature,
                threshold,
                self.assemble(nodes, left),
                self.assemble(nodes, right),
            ),
        }
    }

    /// Exact greedy scan of every feature for every frontier node at once.
    fn best_splits(&self, position: &[usize], nodes: &[Slot], frontier: &[usize]) -> Vec<Option<Candidate>> {
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &id) in frontier.iter().enumerate() {
            slot_of[id] = s;
        }
        let totals: Vec<(f64, f64)> = frontier
            .iter()
            .map(|&id| match nodes[id] {
                Slot::Open { g, h } => (g, h),
                _ => unreachable!(),
            })
            .collect();
        let parent_scores: Vec<f64> = totals.iter().map(|&(g, h)| self.score(g, h)).collect();
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        let mut state = vec![FRESH; frontier.len()];
        let p = self.params;

        for (feature, (col, order)) in self.columns.values.iter().zip(&self.columns.order).enumerate() {
            state.fill(FRESH);
            for &i in order {
                let i = i as usize;
                let s = slot_of[position[i]];
                if s == usize::MAX {
                    continue;
                }
                let x = col[i];
                let st = &mut state[s];
                if st.seen && x > st.last {
                    let (g, h) = totals[s];
                    let (gl, hl) = (st.g_left, st.h_left);
                    let (gr, hr) = (g - gl, h - hl);
                    let threshold = ((st.last + x) / 2.0) as f32;
                    let separates = f64::from(threshold) > st.last && f64::from(threshold) <= x;
                    if hl >= p.min_child_weight && hr >= p.min_child_weight && separates {
                        let gain = 0.5 * (self.score(gl, hl) + self.score(gr, hr) - parent_scores[s]) - p.gamma;
                        if best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate { gain, feature, threshold });
                        }
                    }
                }
                st.g_left += self.grad[i];
                st.h_left += self.hess[i];
                st.last = x;
                st.seen = true;
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbt::{predict_class, predict_margins};

    fn sample(x: f64, label: Label) -> SuperSample {
        SuperSample::new(vec![x, 0.0, 0.0], label).unwrap()
    }

    /// 30 samples, one informative feature, classes in disjoint ranges.
    fn separable() -> Vec<SuperSample> {
        (0..30)
            .map(|i| {
                let label = Label::ALL[i % 3];
                sample(label.index() as f64 * 100.0 + (i / 3) as f64, label)
            })
            .collect()
    }

    #[test]
    fn separable_set_fits_in_five_rounds() {
        let set = separable();
        let params = TrainParams { n_rounds: 5, ..TrainParams::default() };
        let e = train(&set, &params).unwrap();
        assert_eq!(e.trees().len(), 15);
        for s in &set {
            assert_eq!(predict_class(&e, s.features()).label, s.label);
        }
    }

    #[test]
    fn tree_count_and_class_order() {
        let e = train(&separable(), &TrainParams { n_rounds: 90, ..TrainParams::default() }).unwrap();
        assert_eq!(e.trees().len(), 270);
        for (i, t) in e.trees().iter().enumerate() {
            assert_eq!(t.class, i % 3);
            assert!(t.root.depth() <= 4);
        }
    }

    #[test]
    fn rejects_missing_class_and_bad_params() {
        let one_class: Vec<_> = (0..10).map(|i| sample(i as f64, Label::Neutral)).collect();
        assert!(matches!(
            train(&one_class, &TrainParams::default()),
            Err(Error::MissingClass(Label::Dorsal))
        ));
        assert!(train(&[], &TrainParams::default()).is_err());
        let bad = TrainParams { n_rounds: 0, ..TrainParams::default() };
        assert!(train(&separable(), &bad).is_err());
        let bad = TrainParams { max_depth: 0, ..TrainParams::default() };
        assert!(train(&separable(), &bad).is_err());
    }

    #[test]
    fn training_margins_match_prediction() {
        let set = separable();
        let (e, h) = train_with_history(&set, &TrainParams { n_rounds: 7, ..TrainParams::default() }).unwrap();
        let loss = set
            .iter()
            .map(|s| logloss(&predict_margins(&e, s.features()), s.label))
            .sum::<f64>()
            / set.len() as f64;
        assert_eq!(loss.to_bits(), h.logloss[7].to_bits());
    }

    #[test]
    fn stump_threshold_is_midpoint() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![5.0], vec![6.0]];
        let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let grad = [-1.0, -1.0, 1.0, 1.0];
        let hess = [1.0; 4];
        let params = TrainParams { max_depth: 1, ..TrainParams::default() };
        match fit_tree(&rows, &grad, &hess, &params).unwrap() {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert_eq!(threshold, 3.5);
            }
            leaf => panic!("expected split, got {leaf:?}"),
        }
    }

    #[test]
    fn min_child_weight_blocks_splits() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let rows: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        let params = TrainParams { min_child_weight: 3.0, ..TrainParams::default() };
        let t = fit_tree(&rows, &[-1.0, -1.0, 1.0, 1.0], &[1.0; 4], &params).unwrap();
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn config_round_trip() {
        let p = TrainParams { n_rounds: 12, lambda: 0.5, seed: 3, ..TrainParams::default() };
        assert_eq!(TrainParams::from_config(&p.to_config()).unwrap(), p);
    }
}
